#pragma once

// Analysis of learned intent vectors: k-means, PCA, cluster-center
// effectiveness experiments and recovery scoring against known archetypes.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dspn::intent {

using Point = std::vector<double>;
using Points = std::vector<Point>;

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Index of the closest center; ties go to the lowest index.
std::size_t nearest_center(const Points& centers, std::span<const double> x);

struct ClusterModel {
  Points centers;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;  // within-cluster sum of squares
  /// Objective after every assignment step; non-increasing.
  std::vector<double> objective_history;
  std::size_t iterations = 0;
};

/// k-means++ seeding, then Lloyd iterations until the assignments stop
/// changing or max_iter is reached. An empty cluster is re-seeded at the
/// point farthest from its current center.
ClusterModel kmeans(const Points& W, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

double kmeans_objective(const Points& W, const Points& centers, std::span<const std::size_t> assignments);

struct PcaModel {
  Point mean;
  std::array<Point, 2> axes;
  std::array<double, 2> eigenvalues{};
  std::array<double, 2> explained_ratio{};
  /// True when the second axis was picked arbitrarily from a null direction.
  bool degenerate = false;
};

/// Top-2 eigenvectors of the sample covariance by power iteration with deflation.
PcaModel pca_fit(const Points& W);
std::array<double, 2> pca_transform(const PcaModel& m, std::span<const double> w);

/// One analyzed sample: learned w, normalized daily reports (n_I each) and label.
struct HeadSample {
  Point w;
  std::vector<std::vector<double>> reports;
  int label = 0;
};

/// mean_i sigmoid(w . [report_i; 1]), the satisfaction head in plain doubles.
double head_probability(std::span<const double> w, const std::vector<std::vector<double>>& reports);

struct AccuracyByCluster {
  std::vector<double> per_cluster;
  double overall = 0.0;
};

/// ACC of predicting every sample with the center of its own cluster.
AccuracyByCluster in_cluster_accuracy(const Points& centers, std::span<const HeadSample> samples,
                                      std::span<const std::size_t> assignments);

struct CrossClusterAccuracy {
  /// (i, j): ACC on cluster-i samples using center j; the diagonal is the in-cluster ACC.
  std::vector<std::vector<double>> matrix;
  /// Mean over every sample and every foreign center.
  double overall = 0.0;
};

CrossClusterAccuracy cross_cluster_accuracy(const Points& centers, std::span<const HeadSample> samples,
                                            std::span<const std::size_t> assignments);

/// Per cluster: fraction of (up to max_per_cluster sampled) members whose
/// nearest point in any other cluster has the same label.
std::vector<double> nearest_cross_cluster_equal_ratio(const Points& W, std::span<const int> labels,
                                                      std::span<const std::size_t> assignments, std::size_t k,
                                                      std::size_t max_per_cluster = 5000, std::uint64_t seed = 0);

/// Adjusted Rand index from the contingency table. Two single-block
/// partitions score 1.
double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct RecoveryResult {
  ClusterModel clusters;
  double ari = 0.0;
  /// k differs from the number of distinct archetypes.
  bool k_mismatch = false;
};

RecoveryResult intent_recovery_score(const Points& W, std::span<const std::size_t> archetypes, std::size_t k,
                                     std::uint64_t seed);

/// Columns advertiser_id,pc1,pc2,cluster,label.
struct ScatterRow {
  int advertiser_id = 0;
  double pc1 = 0.0;
  double pc2 = 0.0;
  std::size_t cluster = 0;
  int label = 0;
};
void write_scatter_csv(std::ostream& out, std::span<const ScatterRow> rows);

}  // namespace dspn::intent
