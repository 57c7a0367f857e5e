#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "dspn/model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result dspn_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dspn::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("dspn_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string small_config(const fs::path& out, int seed = 7) {
  return json{{"seed", seed},
              {"out_dir", out.string()},
              {"sim", {{"n_advertisers", 40}}},
              {"train", {{"epochs", 1}}}}
      .dump();
}

json error_line(const std::string& err) {
  CHECK(err.find('\n') == err.size() - 1);
  return json::parse(err);
}

}  // namespace

TEST_CASE("gen, train, eval, analyze and predict") {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "run.json";
  spit(cfg, small_config(tmp.path() / "a"));
  const std::string c = cfg.string();

  for (const char* cmd : {"gen", "train", "eval", "analyze"}) {
    const auto r = dspn_run({cmd, "--config", c});
    CAPTURE(cmd);
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(tmp.path() / "a" / (std::string("manifest-") + cmd + ".json")));
  }
  const fs::path a = tmp.path() / "a";
  for (const char* f : {"data/traces.jsonl", "data/advertisers.jsonl", "data/samples.jsonl", "model.ckpt",
                        "model.ckpt.preprocessing.json", "metrics.csv", "metrics.json", "cluster_report.json",
                        "scatter_positive.csv", "scatter_negative.csv"})
    CHECK_MESSAGE(fs::exists(a / f), f);

  SUBCASE("metrics and checkpoint are reproducible") {
    spit(cfg, small_config(tmp.path() / "b"));
    for (const char* cmd : {"gen", "train", "eval"}) REQUIRE(dspn_run({cmd, "--config", c}).code == 0);
    const fs::path b = tmp.path() / "b";
    CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
    CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));
    CHECK(slurp(a / "data/traces.jsonl") == slurp(b / "data/traces.jsonl"));
  }

  SUBCASE("manifest config reproduces the dataset") {
    const json manifest = json::parse(slurp(a / "manifest-gen.json"));
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("versions").contains("dspn"));
    json replay = manifest.at("config");
    replay["out_dir"] = (tmp.path() / "replay").string();
    replay["paths"]["dataset"] = (tmp.path() / "replay" / "data").string();
    replay["paths"]["checkpoint"] = (tmp.path() / "replay" / "model.ckpt").string();
    spit(tmp.path() / "replay.json", replay.dump());
    REQUIRE(dspn_run({"gen", "--config", (tmp.path() / "replay.json").string()}).code == 0);
    CHECK(slurp(tmp.path() / "replay/data/traces.jsonl") == slurp(a / "data/traces.jsonl"));
    CHECK(manifest.at("outputs").at(0).at("fnv1a") ==
          json::parse(slurp(tmp.path() / "replay/manifest-gen.json")).at("outputs").at(0).at("fnv1a"));
  }

  SUBCASE("commands leave their inputs untouched") {
    const std::string traces = slurp(a / "data/traces.jsonl");
    const std::string ckpt = slurp(a / "model.ckpt");
    for (const char* cmd : {"eval", "analyze"}) REQUIRE(dspn_run({cmd, "--config", c}).code == 0);
    CHECK(slurp(a / "data/traces.jsonl") == traces);
    CHECK(slurp(a / "model.ckpt") == ckpt);
  }

  SUBCASE("predict") {
    std::ifstream in(a / "data/samples.jsonl");
    std::string first;
    std::getline(in, first);
    spit(tmp.path() / "one.jsonl", first + "\n");
    const auto r = dspn_run({"predict", "--config", c, "--sample", (tmp.path() / "one.jsonl").string()});
    REQUIRE(r.code == 0);
    const json p = json::parse(r.out);
    CHECK(p.at("p").get<double>() > 0.0);
    CHECK(p.at("p").get<double>() < 1.0);
    CHECK(p.at("w").size() == dspn::kIndicatorCount + 1);
    CHECK(slurp(a / "predictions.jsonl") == r.out);
  }

  SUBCASE("checkpoint trained under a different n_I") {
    const auto m = dspn::model::make_dspn(dspn::model::DspnConfig::tiny(), 1);
    std::ofstream out(a / "model.ckpt", std::ios::binary | std::ios::trunc);
    dspn::model::save_checkpoint(out, m);
    out.close();
    const auto r = dspn_run({"eval", "--config", c});
    CHECK(r.code == 2);
    const json e = error_line(r.err);
    CHECK(e.at("error") == "config");
    CHECK(e.at("message").get<std::string>().find("mismatch") != std::string::npos);
  }

  SUBCASE("corrupt checkpoint") {
    spit(a / "model.ckpt", "DSPNgarbage");
    const auto r = dspn_run({"eval", "--config", c});
    CHECK(r.code == 3);
    CHECK(error_line(r.err).at("error") == "data");
  }

  SUBCASE("model kind mismatch") {
    const auto r = dspn_run({"eval", "--config", c, "--out", a.string()});
    CHECK(r.code == 0);
    json mlp = json::parse(small_config(a));
    mlp["model_kind"] = "mlp";
    spit(tmp.path() / "mlp.json", mlp.dump());
    CHECK(dspn_run({"eval", "--config", (tmp.path() / "mlp.json").string()}).code == 2);
  }
}

TEST_CASE("seed precedence") {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "run.json";
  spit(cfg, small_config(tmp.path() / "s", 5));
  auto seed_of_run = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"gen", "--config", cfg.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(dspn_run(args).code == 0);
    return json::parse(slurp(tmp.path() / "s" / "manifest-gen.json")).at("seed").get<int>();
  };
  ::unsetenv("DSPN_SEED");
  CHECK(seed_of_run({}) == 5);
  ::setenv("DSPN_SEED", "6", 1);
  CHECK(seed_of_run({}) == 6);
  CHECK(seed_of_run({"--seed", "8"}) == 8);
  ::setenv("DSPN_SEED", "6x", 1);
  CHECK(dspn_run({"gen", "--config", cfg.string()}).code == 2);
  ::unsetenv("DSPN_SEED");
}

TEST_CASE("usage and error codes") {
  TempDir tmp;
  CHECK(dspn_run({"--help"}).code == 0);
  CHECK(dspn_run({}).code == 2);
  CHECK(dspn_run({"fly"}).code == 2);
  CHECK(dspn_run({"gen", "--seed", "abc"}).code == 2);
  CHECK(dspn_run({"predict", "--out", tmp.path().string()}).code == 2);

  spit(tmp.path() / "bad.json", "{\"seed\": ");
  auto r = dspn_run({"gen", "--config", (tmp.path() / "bad.json").string()});
  CHECK(r.code == 2);
  CHECK(error_line(r.err).at("code") == 2);

  spit(tmp.path() / "unknown.json", R"({"epochs": 3})");
  CHECK(dspn_run({"gen", "--config", (tmp.path() / "unknown.json").string()}).code == 2);
  CHECK(dspn_run({"gen", "--config", (tmp.path() / "absent.json").string()}).code == 2);

  r = dspn_run({"train", "--out", (tmp.path() / "empty").string()});
  CHECK(r.code == 3);
  CHECK(error_line(r.err).at("error") == "data");

  spit(tmp.path() / "d/data/traces.jsonl", "{\"unit_id\": 1}\nnot json\n");
  r = dspn_run({"train", "--out", (tmp.path() / "d").string()});
  CHECK(r.code == 3);
  CHECK(error_line(r.err).at("message").get<std::string>().find("line") != std::string::npos);
}
