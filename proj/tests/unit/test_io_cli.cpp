#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "liitr/cli.hpp"
#include "liitr/io.hpp"
#include "liitr/pipeline.hpp"

using namespace liitr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("liitr_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "liitr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// A small, fast configuration written into `dir`.
fs::path small_config(const fs::path& dir, const std::vector<std::string>& methods) {
  RunConfig c;
  c.seed = 5;
  c.paths.output_dir = dir.string();
  c.sim.n = 300;
  c.blackbox.max_epochs = 20;
  c.vae.max_epochs = 20;
  c.perturb.m = 600;
  c.lime.m = 600;
  c.moe.warmup_epochs = 5;
  c.moe.max_epochs = 15;
  c.eval.n_test = 4;
  c.eval.methods = methods;
  c.eval.grid = {CellSpec{300, 600, false}};
  const fs::path p = dir / "config.json";
  write_file(p, dump_json(config_to_json(c), 2));
  return p;
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("dataset CSV round trip is value exact") {
  Dataset d;
  d.x = Matrix::from_rows({{0.1, 1.0 / 3.0}, {-2.5e-300, std::nextafter(1.0, 2.0)}});
  d.t = {1, 0};
  d.y = {std::sqrt(2.0), -0.0};
  const std::string csv = dataset_to_csv(d);
  CHECK(csv.rfind("x1,x2,t,y\n", 0) == 0);
  const Dataset back = dataset_from_csv(csv);
  CHECK(back.x == d.x);
  CHECK(back.t == d.t);
  CHECK(back.y == d.y);
  CHECK(dataset_to_csv(back) == csv);
  CHECK_THROWS(dataset_from_csv("a,b,c\n1,2,3\n"));
  CHECK_THROWS(dataset_from_csv("x1,t,y\n1,0\n"));
}

TEST_CASE("ground truth sidecar round trip") {
  SimConfig s;
  s.n = 50;
  const SimResult r = generate(s);
  const json j = json::parse(dump_json(truth_to_json(r.truth, 7, json::object(), 40)));
  CHECK(j["region"][0].get<int>() == r.truth.region[0] + 1);
  const GroundTruth g = truth_from_json(j);
  CHECK(g.region == r.truth.region);
  CHECK(g.optimal_t == r.truth.optimal_t);
  CHECK(g.beta_k2 == r.truth.beta_k2);
  CHECK(g.x1_med == r.truth.x1_med);
}

TEST_CASE("explanations JSON-lines round trip") {
  Explanation a, b;
  a.subject_id = 3;
  a.beta_k1 = {0.1, 0.2, 0.3, 0.4};
  a.beta_k2 = {1.0, 2.0, 3.0};
  b = a;
  b.subject_id = 4;
  b.method = "lime";
  const std::vector<Explanation> v{a, b};
  const std::string text = explanations_to_jsonl(v);
  CHECK(line_count(text) == 2);
  const auto back = explanations_from_jsonl(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].method == "lime");
  CHECK(back[1].beta_k2 == b.beta_k2);
}

TEST_CASE("sha256 and number formatting") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(std::stod(format_double(0.1)) == 0.1);
  CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("config parsing is strict") {
  const json good = config_to_json(RunConfig{});
  CHECK(config_to_json(config_from_json(good)) == good);
  json bad = good;
  bad["moe"]["lambada"] = 0.1;
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  bad = good;
  bad["seed"] = "seven";
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  bad = good;
  bad["moe"]["K"] = 0;
  CHECK_THROWS_AS(config_from_json(bad).validate(), ConfigError);
}

TEST_CASE("simulate writes deterministic data and a manifest") {
  TempDir a("sim_a"), b("sim_b");
  REQUIRE(cli({"simulate", "--out", a.path.string(), "--seed", "3", "--n-train", "250", "--n-test", "7"}).code == 0);
  REQUIRE(cli({"simulate", "--out", b.path.string(), "--seed", "3", "--n-train", "250", "--n-test", "7"}).code == 0);
  const std::string da = read_file(a.path / "dataset.csv");
  CHECK(da == read_file(b.path / "dataset.csv"));
  CHECK(line_count(da) == 251);
  CHECK(line_count(read_file(a.path / "test.csv")) == 8);

  const json m = read_json_file(a.path / "manifest.json");
  CHECK(m["stages"]["simulate"]["outputs"]["dataset.csv"].get<std::string>() == sha256_hex(da));
  CHECK(m["stages"]["simulate"].contains("config_hash"));
}

TEST_CASE("misspecified with zero quadratic coefficient reproduces the outcome") {
  TempDir a("mis_a"), b("mis_b");
  RunConfig c;
  c.sim.quad_coef = 0.0;
  write_file(b.path / "config.json", dump_json(config_to_json(c)));
  REQUIRE(cli({"simulate", "--out", a.path.string(), "--n-train", "100"}).code == 0);
  REQUIRE(cli({"simulate", "--config", (b.path / "config.json").string(), "--out", b.path.string(),
               "--n-train", "100", "--misspecified"})
              .code == 0);
  const Dataset da = dataset_from_csv(read_file(a.path / "dataset.csv"));
  const Dataset db = dataset_from_csv(read_file(b.path / "dataset.csv"));
  CHECK(da.y == db.y);
}

TEST_CASE("LIITR_SEED sits between the config file and flags") {
  TempDir a("seed_a"), b("seed_b"), c("seed_c");
  setenv("LIITR_SEED", "11", 1);
  REQUIRE(cli({"simulate", "--out", a.path.string(), "--n-train", "60"}).code == 0);
  REQUIRE(cli({"simulate", "--out", c.path.string(), "--n-train", "60", "--seed", "12"}).code == 0);
  setenv("LIITR_SEED", "eleven", 1);
  CHECK(cli({"simulate", "--out", b.path.string()}).code == kExitConfig);
  unsetenv("LIITR_SEED");
  REQUIRE(cli({"simulate", "--out", b.path.string(), "--n-train", "60", "--seed", "11"}).code == 0);
  CHECK(read_file(a.path / "dataset.csv") == read_file(b.path / "dataset.csv"));
  CHECK(read_file(a.path / "dataset.csv") != read_file(c.path / "dataset.csv"));
}

TEST_CASE("explain dependencies and exit codes") {
  TempDir d("explain");
  const fs::path cfg = small_config(d.path, {"blackbox", "qlearn"});
  const std::string c = cfg.string();
  CHECK(cli({"fit-blackbox", "--config", c}).code == kExitMissingArtifact);
  REQUIRE(cli({"simulate", "--config", c}).code == 0);
  REQUIRE(cli({"fit-blackbox", "--config", c}).code == 0);

  // No VAE on disk: the black-box rule still runs, LI-ITR cannot.
  CHECK(cli({"explain", "--config", c, "--method", "blackbox"}).code == 0);
  CHECK(line_count(read_file(d.path / "explanations_blackbox.jsonl")) == 4);
  CHECK(cli({"explain", "--config", c, "--method", "li-itr"}).code == kExitMissingArtifact);
  CHECK(cli({"explain", "--config", c, "--method", "oracle"}).code == kExitUsage);
  CHECK(cli({"explain", "--config", c, "--method", "qlearn"}).code == 0);

  // A model file of the wrong kind is a usage error.
  write_file(d.path / "vae.json", read_file(d.path / "blackbox.json"));
  CHECK(cli({"explain", "--config", c, "--method", "li-itr"}).code == kExitUsage);

  CHECK(cli({"evaluate", "--config", c}).code == 0);
  CHECK(fs::exists(d.path / "policy.csv"));

  json bad = read_json_file(cfg);
  bad["bogus"] = 1;
  write_file(d.path / "bad.json", dump_json(bad));
  CHECK(cli({"simulate", "--config", (d.path / "bad.json").string()}).code == kExitConfig);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"simulate", "--no-such-flag"}).code == kExitUsage);
}

TEST_CASE("one-cell benchmark with one method gives a one-row table") {
  TempDir d("bench");
  const fs::path cfg = small_config(d.path, {"qlearn"});
  REQUIRE(cli({"benchmark", "--config", cfg.string()}).code == 0);
  const std::string policy = read_file(d.path / "benchmark_policy.csv");
  CHECK(line_count(policy) == 2);  // header + one row
  const json report = read_json_file(d.path / "benchmark.json");
  for (const auto& cell : report["cells"])
    for (const auto& p : cell["policy"]) {
      CHECK(p["pcot"].get<double>() >= 0.0);
      CHECK(p["pcot"].get<double>() <= 1.0);
    }
}
