#include "cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dspn/pipeline.hpp"
#include "json.hpp"

namespace dspn::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using pipeline::ConfigError;
using pipeline::RunConfig;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string sample;
};

/// A required input that does not exist or cannot be read.
class MissingInput : public data::DataError {
 public:
  explicit MissingInput(const std::string& path) : data::DataError("cannot read " + path) {}
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw data::DataError("cannot write " + path);
}

void require(const std::string& path) {
  if (!fs::exists(path)) throw MissingInput(path);
}

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || end != text.data() + text.size())
    throw ConfigError(source + " is not an unsigned integer: '" + text + "'");
  return v;
}

/// Config file, then DSPN_SEED, then --seed; --out replaces out_dir.
RunConfig load_config(const Options& o) {
  std::string text = "{}";
  if (!o.config.empty()) {
    std::ifstream in(o.config, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + o.config);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (const char* env = std::getenv("DSPN_SEED")) j["seed"] = parse_seed(env, "DSPN_SEED");
  if (o.seed) j["seed"] = *o.seed;
  if (!o.out.empty()) j["out_dir"] = o.out;
  return pipeline::run_config_from_json(j.dump());
}

std::string dataset_file(const RunConfig& c, const char* name) { return (fs::path(c.dataset_path()) / name).string(); }
std::string out_file(const RunConfig& c, const char* name) { return (fs::path(c.out_dir) / name).string(); }
std::string preprocessing_path(const RunConfig& c) { return c.checkpoint_path() + ".preprocessing.json"; }

std::vector<UnitTrace> load_traces(const RunConfig& c) {
  const std::string path = dataset_file(c, "traces.jsonl");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path);
  return data::read_traces(in);
}

std::map<int, int> load_archetypes(const RunConfig& c) {
  const std::string path = dataset_file(c, "advertisers.jsonl");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path);
  std::map<int, int> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto a = sim::advertiser_from_json(line);
      out[a.advertiser_id] = a.archetype_id;
    } catch (const json::exception& e) {
      throw data::DataError(path + ": " + e.what(), line_no);
    }
  }
  return out;
}

struct Loaded {
  model::Model model;
  data::Normalizer normalizer;
  data::Vocabularies vocab;
};

Loaded load_model(const RunConfig& c) {
  const std::string ckpt = c.checkpoint_path();
  std::ifstream in(ckpt, std::ios::binary);
  if (!in) throw MissingInput(ckpt);
  Loaded l{model::load_checkpoint(in), {}, {}};
  try {
    std::tie(l.normalizer, l.vocab) = data::preprocessing_from_json(read_file(preprocessing_path(c)));
  } catch (const json::exception& e) {
    throw data::DataError(preprocessing_path(c) + ": " + e.what());
  }
  if (l.model.kind != c.model_kind)
    throw ConfigError(std::string("checkpoint/config mismatch on model_kind: checkpoint is ") +
                      (l.model.kind == model::ModelKind::Dspn ? "dspn" : "mlp"));
  pipeline::check_compatible(l.model.config, pipeline::model_config(c, l.vocab));
  return l;
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& c) : command_(std::move(command)), config_(c) {}

  void input(const std::string& path) { inputs_.push_back(entry(path)); }
  void output(const std::string& path) { outputs_.push_back(entry(path)); }

  std::string write() const {
    const json j{
        {"command", command_},
        {"config_hash", pipeline::config_hash(config_)},
        {"seed", config_.seed},
        {"versions",
         {{"dspn", pipeline::version()}, {"checkpoint_format", model::kCheckpointVersion}, {"compiler", __VERSION__}}},
        {"config", json::parse(pipeline::run_config_to_json(config_))},
        {"inputs", inputs_},
        {"outputs", outputs_},
    };
    const std::string path = (fs::path(config_.out_dir) / ("manifest-" + command_ + ".json")).string();
    write_file(path, j.dump(2) + "\n");
    return path;
  }

 private:
  static json entry(const std::string& path) { return {{"path", path}, {"fnv1a", pipeline::fnv1a_hex(read_file(path))}}; }

  std::string command_;
  RunConfig config_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

void log(std::ostream& err, const std::string& line) { err << "[dspn] " << line << "\n"; }

int cmd_gen(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto market = pipeline::generate(c);
  std::ostringstream traces, advertisers, samples;
  data::write_traces(traces, market.traces);
  for (const auto& a : market.advertisers) advertisers << sim::advertiser_to_json(a) << "\n";
  const auto built = data::build_samples(market.traces, c.dataset);
  data::write_samples(samples, built);

  Manifest m("gen", c);
  for (const auto& [name, body] : {std::pair{"traces.jsonl", &traces}, std::pair{"advertisers.jsonl", &advertisers},
                                   std::pair{"samples.jsonl", &samples}}) {
    write_file(dataset_file(c, name), body->str());
    m.output(dataset_file(c, name));
  }
  std::size_t positive = 0;
  for (const auto& s : built) positive += s.label == 1;
  log(err, "generated " + std::to_string(market.traces.size()) + " units, " + std::to_string(built.size()) +
               " samples, " + std::to_string(positive) + " satisfied");
  out << m.write() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto traces = load_traces(c);
  auto prepared = pipeline::prepare(traces, c);
  auto model = pipeline::init_model(c, prepared.vocab);
  log(err, "training " + std::string(c.model_kind == model::ModelKind::Dspn ? "dspn" : "mlp") + " on " +
               std::to_string(prepared.train.size()) + " samples, testing on " + std::to_string(prepared.test.size()));
  const auto result = train::train(model, prepared.train, prepared.test, c.train, [&](const train::EpochRecord& e) {
    std::ostringstream line;
    line << "epoch " << e.epoch << " loss " << e.train_loss << " test_auc " << e.test_auc << " test_acc "
         << e.test_acc;
    log(err, line.str());
  });

  std::ostringstream ckpt, csv;
  model::save_checkpoint(ckpt, model);
  train::write_metrics_csv(csv, result.history);
  write_file(c.checkpoint_path(), ckpt.str());
  write_file(preprocessing_path(c), data::preprocessing_to_json(prepared.normalizer, prepared.vocab));
  write_file(out_file(c, "metrics.csv"), csv.str());

  Manifest m("train", c);
  m.input(dataset_file(c, "traces.jsonl"));
  m.output(c.checkpoint_path());
  m.output(preprocessing_path(c));
  m.output(out_file(c, "metrics.csv"));
  out << m.write() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out, std::ostream&) {
  require(dataset_file(c, "traces.jsonl"));
  auto loaded = load_model(c);
  const auto traces = load_traces(c);
  const auto prepared = pipeline::prepare(traces, c, loaded.normalizer, loaded.vocab);
  const auto report = train::evaluate(loaded.model, prepared.test, c.threads);
  const std::string body = train::metrics_to_json(report);
  write_file(out_file(c, "metrics.json"), body + "\n");

  Manifest m("eval", c);
  m.input(dataset_file(c, "traces.jsonl"));
  m.input(c.checkpoint_path());
  m.output(out_file(c, "metrics.json"));
  m.write();
  out << body << "\n";
  return kOk;
}

int cmd_analyze(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require(dataset_file(c, "traces.jsonl"));
  require(dataset_file(c, "advertisers.jsonl"));
  auto loaded = load_model(c);
  const auto traces = load_traces(c);
  const auto archetypes = load_archetypes(c);
  const auto prepared = pipeline::prepare(traces, c, loaded.normalizer, loaded.vocab);

  std::vector<model::EncodedSample> encoded = prepared.train;
  encoded.insert(encoded.end(), prepared.test.begin(), prepared.test.end());
  std::vector<data::Sample> raw = prepared.split.train;
  raw.insert(raw.end(), prepared.split.test.begin(), prepared.split.test.end());
  const auto report = pipeline::analyze_intents(loaded.model, encoded, raw, archetypes, c);

  std::vector<std::string> names;
  for (const auto& a : c.sim.archetypes) names.push_back(a.name);
  const std::string body = pipeline::intent_report_to_json(report, names);
  write_file(out_file(c, "cluster_report.json"), body + "\n");
  for (const auto& [name, label] : {std::pair{"scatter_positive.csv", 1}, std::pair{"scatter_negative.csv", 0}}) {
    std::ostringstream csv;
    intent::write_scatter_csv(csv, pipeline::scatter_rows(report, label));
    write_file(out_file(c, name), csv.str());
  }

  std::ostringstream summary;
  summary << "ari " << report.ari << " in_cluster_acc " << report.in_cluster.overall << " cross_cluster_acc "
          << report.cross_cluster.overall;
  log(err, summary.str());

  Manifest m("analyze", c);
  m.input(dataset_file(c, "traces.jsonl"));
  m.input(dataset_file(c, "advertisers.jsonl"));
  m.input(c.checkpoint_path());
  for (const char* name : {"cluster_report.json", "scatter_positive.csv", "scatter_negative.csv"})
    m.output(out_file(c, name));
  out << m.write() << "\n";
  return kOk;
}

int cmd_predict(const RunConfig& c, const std::string& sample_path, std::ostream& out) {
  if (sample_path.empty()) throw ConfigError("predict needs --sample PATH");
  require(sample_path);
  auto loaded = load_model(c);
  std::ifstream in(sample_path, std::ios::binary);
  const auto samples = data::read_samples(in, c.dataset.n_a);
  if (samples.empty()) throw data::DataError(sample_path + " holds no samples");
  for (const auto& s : samples) data::validate_sample(s, c.dataset.window, c.dataset.n_a);
  const auto encoded = pipeline::encode_all(samples, loaded.normalizer, loaded.vocab);

  std::ostringstream lines;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    nd::Tape tape;
    json row{{"unit_id", samples[i].unit_id}};
    if (loaded.model.kind == model::ModelKind::Dspn) {
      const auto o = model::dspn_forward(tape, loaded.model, encoded[i]);
      row["p"] = o.p.value().item();
      const auto& w = o.w.value().data();
      row["w"] = std::vector<double>(w.begin(), w.end());
    } else {
      row["p"] = model::forward(tape, loaded.model, encoded[i]).value().item();
    }
    lines << row.dump() << "\n";
  }
  write_file(out_file(c, "predictions.jsonl"), lines.str());

  Manifest m("predict", c);
  m.input(sample_path);
  m.input(c.checkpoint_path());
  m.output(out_file(c, "predictions.jsonl"));
  m.write();
  out << lines.str();
  return kOk;
}

int fail(std::ostream& err, ExitCode code, const char* kind, const std::string& message) {
  err << json{{"error", kind}, {"code", static_cast<int>(code)}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DSPN churn prediction and intent analysis on a simulated advertiser market", "dspn"};
  app.require_subcommand(1);
  Options o;
  const std::map<std::string, std::string> help{
      {"gen", "simulate the market and write traces, ground truth and samples"},
      {"train", "train a model and write the checkpoint and metrics CSV"},
      {"eval", "evaluate a checkpoint on the held-out split"},
      {"analyze", "cluster learned intent vectors and export the report and scatter files"},
      {"predict", "predict satisfaction and intent for samples in a JSON Lines file"}};
  for (const auto& [name, text] : help) {
    CLI::App* sub = app.add_subcommand(name, text);
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "global seed; overrides DSPN_SEED and the config");
    sub->add_option("--out", o.out, "output directory");
    if (name == "predict") sub->add_option("--sample", o.sample, "JSON Lines file of samples")->required();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kConfig, "config", e.what());
  }

  try {
    const RunConfig c = load_config(o);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen") return cmd_gen(c, out, err);
    if (cmd == "train") return cmd_train(c, out, err);
    if (cmd == "eval") return cmd_eval(c, out, err);
    if (cmd == "analyze") return cmd_analyze(c, out, err);
    return cmd_predict(c, o.sample, out);
  } catch (const train::NumericError& e) {
    return fail(err, kNumeric, "numeric", e.what());
  } catch (const train::MetricError& e) {
    return fail(err, kData, "data", e.what());
  } catch (const data::DataError& e) {
    return fail(err, kData, "data", e.what());
  } catch (const model::CheckpointError& e) {
    return fail(err, kData, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, kData, "data", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(err, kConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(err, kInternal, "internal", e.what());
  }
}

}  // namespace dspn::cli
