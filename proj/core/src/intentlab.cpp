#include "dspn/intentlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include "dspn/rng.hpp"

namespace dspn::intent {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("squared_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest_center(const Points& centers, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(centers[c], x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double kmeans_objective(const Points& W, const Points& centers, std::span<const std::size_t> assignments) {
  double s = 0.0;
  for (std::size_t i = 0; i < W.size(); ++i) s += squared_distance(W[i], centers[assignments[i]]);
  return s;
}

namespace {

void check_points(const Points& W) {
  for (const Point& p : W)
    if (p.size() != W.front().size()) throw std::invalid_argument("intent: ragged point dimensions");
}

Points plus_plus_seed(const Points& W, std::size_t k, Rng& rng) {
  Points centers;
  centers.push_back(W[rng.below(W.size())]);
  std::vector<double> d2(W.size());
  for (std::size_t i = 0; i < W.size(); ++i) d2[i] = squared_distance(W[i], centers[0]);
  while (centers.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    // All remaining points coincide with a center: fall back to uniform picks.
    const std::size_t pick = total > 0.0 ? rng.categorical(d2) : rng.below(W.size());
    centers.push_back(W[pick]);
    for (std::size_t i = 0; i < W.size(); ++i) d2[i] = std::min(d2[i], squared_distance(W[i], centers.back()));
  }
  return centers;
}

}  // namespace

ClusterModel kmeans(const Points& W, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  if (k == 0) throw std::invalid_argument("kmeans: k must be >= 1");
  if (W.size() < k) throw std::invalid_argument("kmeans: fewer points (" + std::to_string(W.size()) + ") than k");
  check_points(W);
  const std::size_t dim = W.front().size();
  Rng rng(mix_seed(seed, 0x4EA5));

  ClusterModel m;
  m.centers = plus_plus_seed(W, k, rng);
  m.assignments.assign(W.size(), 0);
  bool first = true;
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < W.size(); ++i) {
      const std::size_t c = nearest_center(m.centers, W[i]);
      changed = changed || c != m.assignments[i];
      m.assignments[i] = c;
    }
    const double obj = kmeans_objective(W, m.centers, m.assignments);
    if (!m.objective_history.empty() && obj > m.objective_history.back() * (1.0 + 1e-12) + 1e-300)
      throw std::logic_error("kmeans: objective increased");
    m.objective_history.push_back(obj);
    m.iterations = iter + 1;
    if (!changed && !first) break;
    first = false;

    Points sums(k, Point(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < W.size(); ++i) {
      const std::size_t c = m.assignments[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += W[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < W.size(); ++i) {
          const double d = squared_distance(W[i], m.centers[m.assignments[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        m.centers[c] = W[far];
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) m.centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
  }
  m.inertia = kmeans_objective(W, m.centers, m.assignments);
  return m;
}

// ---------------------------------------------------------------------------
// PCA

namespace {

using Matrix = std::vector<std::vector<double>>;

Point mat_vec(const Matrix& C, const Point& v) {
  Point out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += C[i][j] * v[j];
  return out;
}

double dot(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Point& v) { return std::sqrt(dot(v, v)); }

void orthogonalize(Point& v, const Point& against) {
  const double d = dot(v, against);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * against[i];
}

// Dominant eigenpair of a symmetric PSD matrix, restricted to the complement
// of `ortho` when given. Returns false if the restricted matrix is ~zero.
bool power_iteration(const Matrix& C, const Point* ortho, Rng& rng, Point& v, double& lambda) {
  const std::size_t n = C.size();
  v.assign(n, 0.0);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  if (ortho) orthogonalize(v, *ortho);
  double nv = norm(v);
  if (nv == 0.0) return false;
  for (double& x : v) x /= nv;
  double scale = 0.0;
  for (const auto& row : C)
    for (double x : row) scale = std::max(scale, std::abs(x));
  lambda = 0.0;
  for (int iter = 0; iter < 200000; ++iter) {
    Point w = mat_vec(C, v);
    if (ortho) orthogonalize(w, *ortho);
    const double nw = norm(w);
    if (nw <= 1e-300 || nw <= 1e-14 * scale) {
      lambda = 0.0;
      return false;
    }
    for (double& x : w) x /= nw;
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
    v = std::move(w);
    lambda = dot(v, mat_vec(C, v));
    if (diff < 1e-15) break;
  }
  return true;
}

}  // namespace

PcaModel pca_fit(const Points& W) {
  if (W.size() < 3) throw std::invalid_argument("pca_fit: need at least 3 points");
  check_points(W);
  const std::size_t n = W.size(), dim = W.front().size();
  if (dim < 2) throw std::invalid_argument("pca_fit: need dimension >= 2");
  PcaModel m;
  m.mean.assign(dim, 0.0);
  for (const Point& p : W)
    for (std::size_t d = 0; d < dim; ++d) m.mean[d] += p[d];
  for (double& x : m.mean) x /= static_cast<double>(n);
  Matrix C(dim, Point(dim, 0.0));
  for (const Point& p : W)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) C[i][j] += (p[i] - m.mean[i]) * (p[j] - m.mean[j]);
  double trace = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) C[i][j] /= static_cast<double>(n - 1);
    trace += C[i][i];
  }

  Rng rng(0x9CA);
  Point v1;
  double l1 = 0.0;
  if (!power_iteration(C, nullptr, rng, v1, l1)) {
    v1.assign(dim, 0.0);
    v1[0] = 1.0;
    l1 = 0.0;
    m.degenerate = true;
  }
  // Deflate, and keep the second iterate orthogonal to the first axis.
  Matrix C2 = C;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) C2[i][j] -= l1 * v1[i] * v1[j];
  Point v2;
  double l2 = 0.0;
  if (!power_iteration(C2, &v1, rng, v2, l2) || l2 <= 1e-12 * std::max(trace, 1e-300)) {
    // Null second direction: any unit vector orthogonal to v1.
    m.degenerate = true;
    std::size_t e = 0;
    for (std::size_t i = 1; i < dim; ++i)
      if (std::abs(v1[i]) < std::abs(v1[e])) e = i;
    v2.assign(dim, 0.0);
    v2[e] = 1.0;
    orthogonalize(v2, v1);
    const double nv = norm(v2);
    for (double& x : v2) x /= nv;
    l2 = std::max(0.0, dot(v2, mat_vec(C, v2)));
  }
  orthogonalize(v2, v1);
  const double nv2 = norm(v2);
  for (double& x : v2) x /= nv2;

  m.axes = {v1, v2};
  m.eigenvalues = {l1, l2};
  m.explained_ratio = {trace > 0.0 ? l1 / trace : 0.0, trace > 0.0 ? l2 / trace : 0.0};
  return m;
}

std::array<double, 2> pca_transform(const PcaModel& m, std::span<const double> w) {
  if (w.size() != m.mean.size()) throw std::invalid_argument("pca_transform: dimension mismatch");
  std::array<double, 2> out{};
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t d = 0; d < w.size(); ++d) out[a] += (w[d] - m.mean[d]) * m.axes[a][d];
  return out;
}

// ---------------------------------------------------------------------------
// Cluster effectiveness

double head_probability(std::span<const double> w, const std::vector<std::vector<double>>& reports) {
  if (reports.empty()) throw std::invalid_argument("head_probability: no reports");
  double total = 0.0;
  for (const auto& r : reports) {
    if (r.size() + 1 != w.size()) throw std::invalid_argument("head_probability: w must have n_I + 1 entries");
    double z = w.back();
    for (std::size_t j = 0; j < r.size(); ++j) z += w[j] * r[j];
    z = std::clamp(z, -30.0, 30.0);
    total += z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return total / static_cast<double>(reports.size());
}

namespace {

bool correct(const Point& w, const HeadSample& s) { return (head_probability(w, s.reports) > 0.5 ? 1 : 0) == s.label; }

void check_assignments(const Points& centers, std::span<const HeadSample> samples,
                       std::span<const std::size_t> assignments) {
  if (samples.size() != assignments.size()) throw std::invalid_argument("intent: samples and assignments differ");
  for (std::size_t a : assignments)
    if (a >= centers.size()) throw std::invalid_argument("intent: assignment out of range");
}

}  // namespace

AccuracyByCluster in_cluster_accuracy(const Points& centers, std::span<const HeadSample> samples,
                                      std::span<const std::size_t> assignments) {
  check_assignments(centers, samples, assignments);
  const std::size_t k = centers.size();
  std::vector<std::size_t> hits(k, 0), counts(k, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t c = assignments[i];
    ++counts[c];
    hits[c] += correct(centers[c], samples[i]);
  }
  AccuracyByCluster r;
  std::size_t total_hits = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("in_cluster_accuracy: cluster " + std::to_string(c) + " is empty");
    r.per_cluster.push_back(static_cast<double>(hits[c]) / static_cast<double>(counts[c]));
    total_hits += hits[c];
  }
  r.overall = static_cast<double>(total_hits) / static_cast<double>(samples.size());
  return r;
}

CrossClusterAccuracy cross_cluster_accuracy(const Points& centers, std::span<const HeadSample> samples,
                                            std::span<const std::size_t> assignments) {
  check_assignments(centers, samples, assignments);
  const std::size_t k = centers.size();
  if (k < 2) throw std::invalid_argument("cross_cluster_accuracy: need at least 2 clusters");
  std::vector<std::vector<std::size_t>> hits(k, std::vector<std::size_t>(k, 0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t c = assignments[i];
    ++counts[c];
    for (std::size_t j = 0; j < k; ++j) hits[c][j] += correct(centers[j], samples[i]);
  }
  CrossClusterAccuracy r;
  r.matrix.assign(k, std::vector<double>(k, 0.0));
  std::size_t off_hits = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("cross_cluster_accuracy: cluster " + std::to_string(c) + " is empty");
    for (std::size_t j = 0; j < k; ++j) {
      r.matrix[c][j] = static_cast<double>(hits[c][j]) / static_cast<double>(counts[c]);
      if (j != c) off_hits += hits[c][j];
    }
  }
  r.overall = static_cast<double>(off_hits) / static_cast<double>(samples.size() * (k - 1));
  return r;
}

std::vector<double> nearest_cross_cluster_equal_ratio(const Points& W, std::span<const int> labels,
                                                      std::span<const std::size_t> assignments, std::size_t k,
                                                      std::size_t max_per_cluster, std::uint64_t seed) {
  if (W.size() != labels.size() || W.size() != assignments.size())
    throw std::invalid_argument("equal_ratio: input lengths differ");
  if (k < 2) throw std::invalid_argument("equal_ratio: need at least 2 clusters");
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < W.size(); ++i) {
    if (assignments[i] >= k) throw std::invalid_argument("equal_ratio: assignment out of range");
    members[assignments[i]].push_back(i);
  }
  Rng rng(mix_seed(seed, 0xE0A1));
  std::vector<double> out;
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c].empty()) throw std::invalid_argument("equal_ratio: cluster " + std::to_string(c) + " is empty");
    std::vector<std::size_t> chosen = members[c];
    if (chosen.size() > max_per_cluster) {
      rng.shuffle(chosen);
      chosen.resize(max_per_cluster);
      std::sort(chosen.begin(), chosen.end());
    }
    std::size_t equal = 0;
    for (std::size_t i : chosen) {
      std::size_t best = W.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < W.size(); ++j) {
        if (assignments[j] == c) continue;
        const double d = squared_distance(W[i], W[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (best == W.size()) throw std::invalid_argument("equal_ratio: no points outside cluster");
      equal += labels[best] == labels[i];
    }
    out.push_back(static_cast<double>(equal) / static_cast<double>(chosen.size()));
  }
  return out;
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("ari: labelings differ in length");
  if (a.size() < 2) throw std::invalid_argument("ari: need at least 2 items");
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto c2 = [](double n) { return n * (n - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, n] : table) index += c2(n);
  for (const auto& [key, n] : rows) sum_a += c2(n);
  for (const auto& [key, n] : cols) sum_b += c2(n);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

RecoveryResult intent_recovery_score(const Points& W, std::span<const std::size_t> archetypes, std::size_t k,
                                     std::uint64_t seed) {
  if (archetypes.size() != W.size()) throw std::invalid_argument("intent_recovery_score: one archetype per vector");
  RecoveryResult r;
  r.k_mismatch = std::set<std::size_t>(archetypes.begin(), archetypes.end()).size() != k;
  r.clusters = kmeans(W, k, seed);
  r.ari = adjusted_rand_index(r.clusters.assignments, archetypes);
  return r;
}

void write_scatter_csv(std::ostream& out, std::span<const ScatterRow> rows) {
  out << "advertiser_id,pc1,pc2,cluster,label\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%zu,%d\n", r.advertiser_id, r.pc1, r.pc2, r.cluster, r.label);
    out << buf;
  }
}

}  // namespace dspn::intent
