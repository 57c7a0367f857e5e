#include "dspn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"

#ifndef DSPN_VERSION
#define DSPN_VERSION "0.0.0"
#endif

namespace dspn::pipeline {

using json = nlohmann::json;

const char* version() { return DSPN_VERSION; }

namespace {

json parse_section(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j.at(key).is_object()) throw ConfigError(std::string("section '") + key + "' must be an object");
  return j.at(key);
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

json train_json(const train::TrainConfig& t) {
  return json{{"batch_size", t.batch_size}, {"learning_rate", t.learning_rate}, {"beta1", t.beta1},
              {"beta2", t.beta2},           {"eps", t.eps},                     {"epochs", t.epochs},
              {"clip_norm", t.clip_norm},   {"unit_dropout", t.unit_dropout},   {"adv_dropout", t.adv_dropout}};
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

std::string RunConfig::dataset_path() const { return dataset_dir.empty() ? join(out_dir, "data") : dataset_dir; }

std::string RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? join(out_dir, "model.ckpt") : checkpoint;
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir is empty");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (dataset.window == 0 || dataset.n_a == 0) throw ConfigError("dataset window and n_a must be positive");
  if (!(dataset.split_ratio > 0.0 && dataset.split_ratio < 1.0)) throw ConfigError("split_ratio must be in (0, 1)");
  if (2 * dataset.window > sim.n_days)
    throw ConfigError("n_days must cover the observation and follow-up windows");
  if (analyze.clusters < 1) throw ConfigError("analyze.clusters must be positive");
  if (analyze.max_per_cluster < 1) throw ConfigError("analyze.max_per_cluster must be positive");
  try {
    sim.validate();
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

data::DatasetConfig dataset_config_from_json(const std::string& text) {
  data::DatasetConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j, {"window", "cost_floor", "min_cost", "n_a", "split_ratio"}, "dataset");
    if (j.contains("window")) c.window = j.at("window").get<std::size_t>();
    if (j.contains("cost_floor")) c.cost_floor = j.at("cost_floor").get<double>();
    if (j.contains("min_cost")) c.min_cost = j.at("min_cost").get<double>();
    if (j.contains("n_a")) c.n_a = j.at("n_a").get<std::size_t>();
    if (j.contains("split_ratio")) c.split_ratio = j.at("split_ratio").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset config: ") + e.what());
  }
  return c;
}

std::string dataset_config_to_json(const data::DatasetConfig& c) {
  return json{{"window", c.window},
              {"cost_floor", c.cost_floor},
              {"min_cost", c.min_cost},
              {"n_a", c.n_a},
              {"split_ratio", c.split_ratio}}
      .dump();
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, {"seed", "threads", "out_dir", "paths", "model_kind", "sim", "dataset", "model", "train", "analyze"},
                 "config");

  RunConfig c;
  try {
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed must be an unsigned integer");
      c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    const json paths = parse_section(j, "paths");
    reject_unknown(paths, {"dataset", "checkpoint"}, "paths");
    if (paths.contains("dataset")) c.dataset_dir = paths.at("dataset").get<std::string>();
    if (paths.contains("checkpoint")) c.checkpoint = paths.at("checkpoint").get<std::string>();
    if (j.contains("model_kind")) {
      const auto kind = j.at("model_kind").get<std::string>();
      if (kind == "dspn")
        c.model_kind = model::ModelKind::Dspn;
      else if (kind == "mlp")
        c.model_kind = model::ModelKind::Mlp;
      else
        throw ConfigError("model_kind must be 'dspn' or 'mlp', got '" + kind + "'");
    }
    const json analyze = parse_section(j, "analyze");
    reject_unknown(analyze, {"clusters", "max_per_cluster"}, "analyze");
    if (analyze.contains("clusters")) c.analyze.clusters = analyze.at("clusters").get<std::size_t>();
    if (analyze.contains("max_per_cluster"))
      c.analyze.max_per_cluster = analyze.at("max_per_cluster").get<std::size_t>();

    c.sim = sim::sim_config_from_json(parse_section(j, "sim").dump());
    c.dataset = dataset_config_from_json(parse_section(j, "dataset").dump());
    const json tr = parse_section(j, "train");
    if (tr.contains("seed") || tr.contains("threads"))
      throw ConfigError("train.seed and train.threads are set by the top-level seed and threads");
    c.train = train::train_config_from_json(tr.dump());

    json mj = parse_section(j, "model");
    for (const char* k : {"n_unit", "n_adv", "n_cat", "n_tag", "n_pos"})
      if (mj.contains(k)) throw ConfigError(std::string("model.") + k + " is derived from the data");
    if (mj.contains("l") && mj.at("l").get<std::size_t>() != c.dataset.window)
      throw ConfigError("model.l must equal dataset.window");
    if (mj.contains("n_a") && mj.at("n_a").get<std::size_t>() != c.dataset.n_a)
      throw ConfigError("model.n_a must equal dataset.n_a");
    mj["l"] = c.dataset.window;
    mj["n_a"] = c.dataset.n_a;
    c.model = model::config_from_json(mj.dump());
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.train.seed = c.seed;
  c.train.threads = c.threads;
  c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json model = json::parse(model::config_to_json(c.model));
  for (const char* k : {"n_unit", "n_adv", "n_cat", "n_tag", "n_pos"}) model.erase(k);
  const json j{
      {"seed", c.seed},
      {"threads", c.threads},
      {"out_dir", c.out_dir},
      {"paths", {{"dataset", c.dataset_path()}, {"checkpoint", c.checkpoint_path()}}},
      {"model_kind", c.model_kind == model::ModelKind::Dspn ? "dspn" : "mlp"},
      {"sim", json::parse(sim::sim_config_to_json(c.sim))},
      {"dataset", json::parse(dataset_config_to_json(c.dataset))},
      {"model", model},
      {"train", train_json(c.train)},
      {"analyze", {{"clusters", c.analyze.clusters}, {"max_per_cluster", c.analyze.max_per_cluster}}},
  };
  return j.dump(2);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& c) { return fnv1a_hex(run_config_to_json(c)); }

sim::GeneratedMarket generate(const RunConfig& c) { return sim::generate_dataset(c.sim, c.seed, c.threads); }

std::vector<model::EncodedSample> encode_all(std::span<const data::Sample> samples, const data::Normalizer& n,
                                             const data::Vocabularies& v) {
  std::vector<model::EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model::encode(data::normalize_apply(n, s), v));
  return out;
}

Prepared prepare(std::span<const UnitTrace> traces, const RunConfig& c) {
  Prepared p;
  p.split = data::split(data::build_samples(traces, c.dataset), c.dataset.split_ratio, c.seed);
  if (p.split.train.empty() || p.split.test.empty())
    throw data::DataError("split leaves an empty train or test set (" + std::to_string(p.split.train.size()) + "/" +
                          std::to_string(p.split.test.size()) + ")");
  p.normalizer = data::normalize_fit(p.split.train);
  p.vocab = data::build_vocab(std::span<const data::Sample>(p.split.train));
  p.train = encode_all(p.split.train, p.normalizer, p.vocab);
  p.test = encode_all(p.split.test, p.normalizer, p.vocab);
  return p;
}

Prepared prepare(std::span<const UnitTrace> traces, const RunConfig& c, const data::Normalizer& n,
                 const data::Vocabularies& v) {
  Prepared p;
  p.split = data::split(data::build_samples(traces, c.dataset), c.dataset.split_ratio, c.seed);
  if (n.indicator_mean.size() != kIndicatorCount)
    throw data::DataError("preprocessing has " + std::to_string(n.indicator_mean.size()) + " indicators");
  p.normalizer = n;
  p.vocab = v;
  p.train = encode_all(p.split.train, n, v);
  p.test = encode_all(p.split.test, n, v);
  return p;
}

model::DspnConfig model_config(const RunConfig& c, const data::Vocabularies& v) {
  model::DspnConfig m = c.model;
  m.l = c.dataset.window;
  m.n_a = c.dataset.n_a;
  m.set_vocab_sizes(v);
  return m;
}

model::Model init_model(const RunConfig& c, const data::Vocabularies& v) {
  const auto mc = model_config(c, v);
  return c.model_kind == model::ModelKind::Dspn ? model::make_dspn(mc, c.seed) : model::make_mlp(mc, c.seed);
}

void check_compatible(const model::DspnConfig& checkpoint, const model::DspnConfig& expected) {
  const json a = json::parse(model::config_to_json(checkpoint));
  const json b = json::parse(model::config_to_json(expected));
  for (const auto& [k, v] : b.items()) {
    if (!a.contains(k) || a.at(k) != v)
      throw ConfigError("checkpoint/config mismatch on " + k + ": checkpoint has " +
                        (a.contains(k) ? a.at(k).dump() : std::string("nothing")) + ", config expects " + v.dump());
  }
}

IntentReport analyze_intents(model::Model& m, std::span<const model::EncodedSample> encoded,
                             std::span<const data::Sample> raw, const std::map<int, int>& archetype_of,
                             const RunConfig& c) {
  if (m.kind != model::ModelKind::Dspn) throw ConfigError("intent analysis needs a DSPN checkpoint");
  if (encoded.size() != raw.size()) throw std::invalid_argument("analyze_intents: sample count mismatch");
  const std::size_t k = c.analyze.clusters;
  if (encoded.size() < std::max<std::size_t>(k, 3))
    throw data::DataError("too few samples to analyze: " + std::to_string(encoded.size()));

  IntentReport r;
  std::vector<intent::HeadSample> heads;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    nd::Tape tape;
    const auto w = model::intent_vector(tape, m, encoded[i]).value();
    intent::HeadSample h;
    h.w.assign(w.data().begin(), w.data().end());
    for (const auto& d : encoded[i].days) h.reports.push_back(d.report);
    h.label = encoded[i].label;
    const auto arch = archetype_of.find(raw[i].advertiser_id);
    if (arch == archetype_of.end())
      throw data::DataError("advertiser " + std::to_string(raw[i].advertiser_id) + " has no ground truth");
    r.unit_ids.push_back(raw[i].unit_id);
    r.advertiser_ids.push_back(raw[i].advertiser_id);
    r.labels.push_back(h.label);
    r.archetypes.push_back(static_cast<std::size_t>(arch->second));
    r.w.push_back(h.w);
    heads.push_back(std::move(h));
  }

  const auto rec = intent::intent_recovery_score(r.w, r.archetypes, k, c.seed);
  r.clusters = rec.clusters;
  r.ari = rec.ari;
  r.in_cluster = intent::in_cluster_accuracy(r.clusters.centers, heads, r.clusters.assignments);
  if (k > 1) r.cross_cluster = intent::cross_cluster_accuracy(r.clusters.centers, heads, r.clusters.assignments);
  r.equal_ratio = intent::nearest_cross_cluster_equal_ratio(r.w, r.labels, r.clusters.assignments, k,
                                                            c.analyze.max_per_cluster, c.seed);

  const std::size_t dim = r.w.front().size();
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (const auto& w : r.w)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += w[d];
  for (double& v : mean) v /= static_cast<double>(r.w.size());
  for (const auto& w : r.w)
    for (std::size_t d = 0; d < dim; ++d) sd[d] += (w[d] - mean[d]) * (w[d] - mean[d]);
  for (double& v : sd) v = std::max(std::sqrt(v / static_cast<double>(r.w.size())), data::kStdFloor);
  intent::Points z = r.w;
  for (auto& w : z)
    for (std::size_t d = 0; d < dim; ++d) w[d] = (w[d] - mean[d]) / sd[d];
  r.pca = intent::pca_fit(z);
  for (const auto& w : z) r.projected.push_back(intent::pca_transform(r.pca, w));
  return r;
}

std::string intent_report_to_json(const IntentReport& r, std::span<const std::string> archetype_names) {
  const std::size_t k = r.clusters.centers.size();
  std::vector<std::size_t> sizes(k, 0);
  std::size_t n_arch = archetype_names.size();
  for (std::size_t a : r.archetypes) n_arch = std::max(n_arch, a + 1);
  std::vector<std::vector<std::size_t>> contingency(k, std::vector<std::size_t>(n_arch, 0));
  std::vector<std::array<std::size_t, 2>> by_label(k, {0, 0});
  for (std::size_t i = 0; i < r.w.size(); ++i) {
    const std::size_t a = r.clusters.assignments[i];
    ++sizes[a];
    ++contingency[a][r.archetypes[i]];
    ++by_label[a][r.labels[i] == 1 ? 1 : 0];
  }
  json clusters = json::array();
  for (std::size_t c = 0; c < k; ++c) {
    clusters.push_back({{"id", c},
                        {"size", sizes[c]},
                        {"center", r.clusters.centers[c]},
                        {"unsatisfied", by_label[c][0]},
                        {"satisfied", by_label[c][1]},
                        {"archetype_counts", contingency[c]}});
  }
  std::vector<std::string> names(archetype_names.begin(), archetype_names.end());
  const json j{
      {"n_samples", r.w.size()},
      {"k", k},
      {"archetypes", names},
      {"ari", r.ari},
      {"inertia", r.clusters.inertia},
      {"kmeans_iterations", r.clusters.iterations},
      {"clusters", clusters},
      {"in_cluster_acc", {{"per_cluster", r.in_cluster.per_cluster}, {"overall", r.in_cluster.overall}}},
      {"cross_cluster_acc", {{"matrix", r.cross_cluster.matrix}, {"overall", r.cross_cluster.overall}}},
      {"nearest_cross_cluster_equal_ratio", r.equal_ratio},
      {"pca",
       {{"explained_ratio", r.pca.explained_ratio}, {"degenerate", r.pca.degenerate}, {"standardized", true}}},
  };
  return j.dump(2);
}

std::vector<intent::ScatterRow> scatter_rows(const IntentReport& r, int label) {
  std::vector<intent::ScatterRow> rows;
  for (std::size_t i = 0; i < r.w.size(); ++i) {
    if (r.labels[i] != label) continue;
    rows.push_back({r.advertiser_ids[i], r.projected[i][0], r.projected[i][1], r.clusters.assignments[i], label});
  }
  return rows;
}

}  // namespace dspn::pipeline
