#pragma once
// End-to-end plumbing shared by the command line tool and the acceptance
// suite: run configuration, data preparation and intent analysis.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dspn/advsim.hpp"
#include "dspn/dataset.hpp"
#include "dspn/intentlab.hpp"
#include "dspn/model.hpp"
#include "dspn/trainer.hpp"

namespace dspn::pipeline {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

const char* version();

struct AnalyzeConfig {
  std::size_t clusters = 4;
  std::size_t max_per_cluster = 5000;
};

struct RunConfig {
  /// Drives the simulator, the split, model initialization, batch order and k-means.
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::string out_dir = "out";
  std::string dataset_dir;  // empty: <out_dir>/data
  std::string checkpoint;   // empty: <out_dir>/model.ckpt
  model::ModelKind model_kind = model::ModelKind::Dspn;

  sim::SimConfig sim = sim::SimConfig::defaults();
  data::DatasetConfig dataset;
  model::DspnConfig model;
  train::TrainConfig train;
  AnalyzeConfig analyze;

  std::string dataset_path() const;
  std::string checkpoint_path() const;
  void validate() const;
};

/// Missing sections keep their defaults; unknown top-level keys are rejected.
RunConfig run_config_from_json(const std::string& text);
/// Canonical form: every field written, keys sorted.
std::string run_config_to_json(const RunConfig& c);
/// FNV-1a 64 of the canonical form, as 16 hex digits.
std::string config_hash(const RunConfig& c);
std::string fnv1a_hex(const std::string& bytes);

data::DatasetConfig dataset_config_from_json(const std::string& text);
std::string dataset_config_to_json(const data::DatasetConfig& c);

sim::GeneratedMarket generate(const RunConfig& c);

struct Prepared {
  data::Split split;
  data::Normalizer normalizer;
  data::Vocabularies vocab;
  std::vector<model::EncodedSample> train;
  std::vector<model::EncodedSample> test;
};

/// Builds samples, splits them, and fits preprocessing on the training part.
Prepared prepare(std::span<const UnitTrace> traces, const RunConfig& c);
/// Same split, but encoded with preprocessing loaded from a training run.
Prepared prepare(std::span<const UnitTrace> traces, const RunConfig& c, const data::Normalizer& n,
                 const data::Vocabularies& v);

std::vector<model::EncodedSample> encode_all(std::span<const data::Sample> samples, const data::Normalizer& n,
                                             const data::Vocabularies& v);

/// The run's model section with window, slot count and vocabulary sizes filled in.
model::DspnConfig model_config(const RunConfig& c, const data::Vocabularies& v);
model::Model init_model(const RunConfig& c, const data::Vocabularies& v);

/// Throws ConfigError naming the first field where a checkpoint disagrees
/// with the configuration it is used under.
void check_compatible(const model::DspnConfig& checkpoint, const model::DspnConfig& expected);

struct IntentReport {
  std::vector<int> unit_ids;
  std::vector<int> advertiser_ids;
  std::vector<int> labels;
  std::vector<std::size_t> archetypes;
  intent::Points w;
  intent::ClusterModel clusters;
  double ari = 0.0;
  intent::AccuracyByCluster in_cluster;
  intent::CrossClusterAccuracy cross_cluster;
  std::vector<double> equal_ratio;
  /// Fitted on per-dimension z-scored w; used only for the scatter export.
  intent::PcaModel pca;
  std::vector<std::array<double, 2>> projected;
};

/// Extracts w for every sample, clusters with k-means and runs the three
/// effectiveness experiments. `archetype_of` maps advertiser id to archetype.
IntentReport analyze_intents(model::Model& m, std::span<const model::EncodedSample> encoded,
                             std::span<const data::Sample> raw, const std::map<int, int>& archetype_of,
                             const RunConfig& c);

std::string intent_report_to_json(const IntentReport& r, std::span<const std::string> archetype_names);
/// Scatter rows for samples with the given label.
std::vector<intent::ScatterRow> scatter_rows(const IntentReport& r, int label);

}  // namespace dspn::pipeline
