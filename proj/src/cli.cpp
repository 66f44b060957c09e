#include "liitr/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "liitr/io.hpp"
#include "liitr/pipeline.hpp"

namespace fs = std::filesystem;

namespace liitr {

namespace {

constexpr const char* kVersion = "0.1.0";

struct Overrides {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_train, m_synth, k_experts, n_test;
  std::optional<double> lambda, alpha;
  std::string method = "li-itr";
  bool misspecified = false;
};

RunConfig load_config(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    json j;
    try {
      j = json::parse(read_file(o.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
    cfg = config_from_json(j);
  }
  if (const char* env = std::getenv("LIITR_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError("LIITR_SEED must be an unsigned integer");
    cfg.seed = v;
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.paths.output_dir = o.out_dir;
  if (o.n_train) {
    cfg.sim.n = *o.n_train;
    for (auto& c : cfg.eval.grid) c.n_train = *o.n_train;
  }
  if (o.m_synth) {
    cfg.perturb.m = *o.m_synth;
    for (auto& c : cfg.eval.grid) c.m = *o.m_synth;
  }
  cfg.lime.m = cfg.perturb.m;
  if (o.k_experts) cfg.moe.K = *o.k_experts;
  if (o.lambda) cfg.moe.lambda = *o.lambda;
  if (o.alpha) cfg.perturb.alpha = *o.alpha;
  if (o.n_test) cfg.eval.n_test = *o.n_test;
  if (o.misspecified) cfg.sim.misspecified = true;
  cfg.propagate_seed();
  cfg.validate();
  return cfg;
}

fs::path resolve(const RunConfig& cfg, const std::string& configured, const char* fallback) {
  return configured.empty() ? fs::path(cfg.paths.output_dir) / fallback : fs::path(configured);
}

fs::path dataset_path(const RunConfig& c) { return resolve(c, c.paths.dataset, "dataset.csv"); }
fs::path test_path(const RunConfig& c) { return resolve(c, c.paths.test_dataset, "test.csv"); }
fs::path truth_path(const RunConfig& c) { return resolve(c, c.paths.truth, "truth.json"); }
fs::path blackbox_path(const RunConfig& c) { return resolve(c, c.paths.blackbox, "blackbox.json"); }
fs::path vae_path(const RunConfig& c) { return resolve(c, c.paths.vae, "vae.json"); }
fs::path explanations_path(const RunConfig& c, const std::string& method) {
  return fs::path(c.paths.output_dir) / ("explanations_" + method + ".jsonl");
}

fs::path require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ArtifactError(what + " not found: " + p.string());
  return p;
}

Dataset load_dataset(const fs::path& p, const std::string& what) {
  return dataset_from_csv(read_file(require_file(p, what)));
}

// Writes files and records their checksums under one manifest stage.
class StageWriter {
 public:
  StageWriter(const RunConfig& cfg, std::string stage)
      : cfg_(cfg), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}

  void write(const fs::path& path, const std::string& contents) {
    write_file(path, contents);
    outputs_[path.lexically_relative(cfg_.paths.output_dir).generic_string()] = sha256_hex(contents);
  }

  void timing(const std::string& name, double seconds) { timings_[name] = seconds; }

  void finish() {
    timings_["total"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const fs::path mpath = fs::path(cfg_.paths.output_dir) / "manifest.json";
    json manifest = json::object();
    if (fs::exists(mpath)) {
      try {
        manifest = json::parse(read_file(mpath));
      } catch (const json::exception&) {
        manifest = json::object();
      }
    }
    manifest["versions"] = {{"liitr", kVersion},
                            {"compiler", __VERSION__},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                          std::to_string(EIGEN_MINOR_VERSION)},
                            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    manifest["stages"][stage_] = {{"config_hash", config_hash(cfg_)},
                                  {"config", config_to_json(cfg_)},
                                  {"timings_s", timings_},
                                  {"outputs", outputs_}};
    write_file(mpath, manifest.dump(2) + "\n");
  }

 private:
  const RunConfig& cfg_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
  json outputs_ = json::object();
  json timings_ = json::object();
};

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  StageWriter w(cfg, "simulate");
  const SimulatedStudy study = simulate_study(cfg.sim, cfg.sim.n, cfg.eval.n_test);
  w.write(dataset_path(cfg), dataset_to_csv(study.train));
  w.write(test_path(cfg), dataset_to_csv(study.test));
  w.write(truth_path(cfg), dump_json(truth_to_json(study.truth, cfg.seed, config_to_json(cfg).at("sim"),
                                                   cfg.sim.n), 2) + "\n");
  w.finish();
  out << "simulated " << study.train.n() << " training and " << study.test.n()
      << " test rows into " << cfg.paths.output_dir << "\n";
  return kExitOk;
}

int cmd_fit_blackbox(const RunConfig& cfg, std::ostream& out) {
  StageWriter w(cfg, "fit-blackbox");
  const Dataset train = load_dataset(dataset_path(cfg), "training dataset");
  const BlackboxModel bb = fit_blackbox(train, cfg.blackbox);
  w.write(blackbox_path(cfg), dump_json(blackbox_to_json(bb, config_to_json(cfg).at("blackbox"))) + "\n");
  w.finish();
  out << "black-box fitted: train R2 " << bb.train_r2 << ", validation R2 " << bb.val_r2
      << ", " << bb.log.epochs_run << " epochs\n";
  return kExitOk;
}

int cmd_fit_vae(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  StageWriter w(cfg, "fit-vae");
  const Dataset train = load_dataset(dataset_path(cfg), "training dataset");
  const VaeModel vae = fit_vae(train, cfg.vae);
  w.write(vae_path(cfg), dump_json(vae_to_json(vae, config_to_json(cfg).at("vae"))) + "\n");
  w.finish();
  for (const auto& warning : vae.warnings) err << "warning: " << warning << "\n";
  out << "VAE fitted: held-out relative MSE";
  for (double v : vae.heldout_relative_mse) out << " " << v;
  out << "\n";
  return kExitOk;
}

int cmd_explain(const RunConfig& cfg, const std::string& method, std::ostream& out,
                std::ostream& err) {
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end())
    throw UsageError("unknown method '" + method + "' (li-itr, lime, qlearn, blackbox)");
  StageWriter w(cfg, "explain:" + method);
  const Dataset test = load_dataset(test_path(cfg), "test dataset");
  const json truth_json = read_json_file(require_file(truth_path(cfg), "ground truth"));
  const std::size_t first_id = truth_json.value("n_train", std::size_t{0});

  std::optional<BlackboxModel> bb;
  std::optional<VaeModel> vae;
  std::optional<QLearningModel> q;
  std::optional<SupportBox> box;
  if (method != "qlearn")
    bb = blackbox_from_json(read_json_file(require_file(blackbox_path(cfg), "black-box model")));
  if (method == "li-itr" || method == "qlearn") {
    const Dataset train = load_dataset(dataset_path(cfg), "training dataset");
    if (method == "qlearn") q = q_learning_fit(train, cfg.moe.h0, cfg.moe.h1);
    else box = SupportBox::fit(train.x);
  }
  if (method == "li-itr") vae = vae_from_json(read_json_file(require_file(vae_path(cfg), "VAE model")));
  if (bb && bb->p() != test.p()) throw UsageError("black-box width does not match the test data");
  if (vae && vae->scaler.dim() != test.p()) throw UsageError("VAE width does not match the test data");

  ExplainContext ctx{&cfg, bb ? &*bb : nullptr, vae ? &*vae : nullptr, q ? &*q : nullptr,
                     box ? &*box : nullptr};
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = explain_many(ctx, test, first_id, {method});
  w.timing("explain", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  std::vector<Explanation> ex;
  json skipped = json::array();
  for (const auto& r : results) {
    for (const auto& warning : r.warnings) err << "warning: " << warning << "\n";
    if (r.skipped) {
      err << "skipped subject " << r.subject_id << ": " << r.skip_reason << "\n";
      skipped.push_back({{"subject_id", r.subject_id}, {"reason", r.skip_reason}});
      continue;
    }
    ex.push_back(r.explanations.at(method));
  }
  w.write(explanations_path(cfg, method), explanations_to_jsonl(ex));
  w.write(fs::path(cfg.paths.output_dir) / ("skipped_" + method + ".json"), skipped.dump(2) + "\n");
  w.finish();
  out << method << ": " << ex.size() << " explanations, " << skipped.size() << " skipped\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  StageWriter w(cfg, "evaluate");
  const GroundTruth truth = truth_from_json(read_json_file(require_file(truth_path(cfg), "ground truth")));
  const Dataset train = load_dataset(dataset_path(cfg), "training dataset");
  const Dataset test = load_dataset(test_path(cfg), "test dataset");
  const std::size_t first_id = train.n();
  const PropensityModel prop = fit_propensity(train);

  std::vector<BiasReport> bias;
  std::vector<PolicyReport> policy;
  for (const auto& method : kMethods) {
    const fs::path p = explanations_path(cfg, method);
    if (!fs::exists(p)) continue;
    const auto ex = explanations_from_jsonl(read_file(p));
    if (ex.empty()) continue;
    std::vector<int> rec, opt;
    std::vector<std::size_t> rows;
    for (const auto& e : ex) {
      if (e.subject_id < first_id || e.subject_id >= first_id + test.n() ||
          e.subject_id >= truth.optimal_t.size())
        throw UsageError(p.string() + ": subject " + std::to_string(e.subject_id) +
                         " is not in the test dataset");
      rec.push_back(e.recommended_t);
      opt.push_back(truth.optimal_t[e.subject_id]);
      rows.push_back(e.subject_id - first_id);
    }
    if (method != "blackbox") bias.push_back(bias_table(ex, truth, method, train.n(), cfg.perturb.m));
    PolicyReport pr = policy_report(method, "n" + std::to_string(train.n()), rec, opt);
    pr.value = value_function(test.select(rows), rec, prop);
    policy.push_back(pr);
  }
  if (policy.empty())
    throw ArtifactError("no explanations_<method>.jsonl files in " + cfg.paths.output_dir);
  json report{{"bias", json::array()}, {"policy", json::array()},
              {"propensity", {{"coef", prop.coef}, {"converged", prop.converged},
                              {"clipped_any", prop.clipped_any}}}};
  for (const auto& b : bias) report["bias"].push_back(bias_report_to_json(b));
  for (const auto& p : policy) report["policy"].push_back(policy_report_to_json(p));
  const fs::path dir(cfg.paths.output_dir);
  w.write(dir / "bias.csv", bias_reports_to_csv(bias));
  w.write(dir / "policy.csv", policy_reports_to_csv(policy));
  w.write(dir / "evaluation.json", dump_json(report, 2) + "\n");
  w.finish();
  out << policy_reports_to_csv(policy);
  return kExitOk;
}

int cmd_benchmark(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  StageWriter w(cfg, "benchmark");
  std::vector<CellResult> cells;
  for (const auto& cell : cfg.eval.grid)
    for (std::size_t r = 0; r < cfg.eval.replicates; ++r) {
      cells.push_back(run_cell(cfg, cell, r));
      const auto& c = cells.back();
      for (const auto& [stage, s] : c.timings) w.timing(cell.label() + "/" + std::to_string(r) + "/" + stage, s);
      if (c.failed) err << "cell " << cell.label() << " replicate " << r << " failed: " << c.error << "\n";
    }

  std::vector<BiasReport> bias;
  std::vector<PolicyReport> policy;
  json report{{"cells", json::array()}};
  bool any_failed = false;
  for (const auto& c : cells) {
    any_failed |= c.failed;
    report["cells"].push_back(cell_to_json(c));
    for (auto b : c.bias) {
      if (cfg.eval.replicates > 1) b.method += "/rep" + std::to_string(c.replicate);
      bias.push_back(b);
    }
    for (auto p : c.policy) {
      if (cfg.eval.replicates > 1) p.setting += "/rep" + std::to_string(c.replicate);
      policy.push_back(p);
    }
  }
  if (cfg.eval.replicates > 1) {
    // Replicate averages per (cell, method).
    json averages = json::array();
    for (const auto& cell : cfg.eval.grid)
      for (const auto& method : kMethods) {
        double pc = 0.0, tb = 0.0;
        std::size_t n = 0, nb = 0;
        for (const auto& c : cells) {
          if (c.failed || c.cell.label() != cell.label()) continue;
          if (const auto* p = c.policy_for(method)) pc += p->pcot, ++n;
          if (const auto* b = c.bias_for(method)) tb += b->group_mean_abs("treatment"), ++nb;
        }
        if (n == 0) continue;
        averages.push_back({{"cell", cell.label()},
                            {"method", method},
                            {"pcot", pc / static_cast<double>(n)},
                            {"treatment_mean_abs_bias", nb ? json(tb / static_cast<double>(nb)) : json(nullptr)},
                            {"replicates", n}});
      }
    report["replicate_averages"] = averages;
  }
  const fs::path dir(cfg.paths.output_dir);
  w.write(dir / "benchmark_bias.csv", bias_reports_to_csv(bias));
  w.write(dir / "benchmark_policy.csv", policy_reports_to_csv(policy));
  w.write(dir / "benchmark_fidelity.csv", fidelity_to_csv(cells));
  w.write(dir / "benchmark.json", dump_json(report, 2) + "\n");
  w.finish();
  out << policy_reports_to_csv(policy);
  return any_failed ? kExitPartialFailure : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Locally interpretable individualized treatment rules"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Overrides o;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--seed", o.seed, "Master seed (overrides LIITR_SEED and the config)");
    sub->add_option("--n-train", o.n_train, "Training sample size");
    sub->add_option("--m-synth", o.m_synth, "Perturbations per subject");
    sub->add_option("--k-experts", o.k_experts, "Number of experts");
    sub->add_option("--lambda", o.lambda, "Entropy penalty weight");
    sub->add_option("--alpha", o.alpha, "Latent perturbation scale");
    sub->add_option("--n-test", o.n_test, "Number of test subjects");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "Generate training/test data and ground truth");
  add_common(simulate);
  simulate->add_flag("--misspecified", o.misspecified, "Add the quadratic term to the contrast");
  CLI::App* fit_bb = app.add_subcommand("fit-blackbox", "Train the black-box outcome model");
  add_common(fit_bb);
  CLI::App* fit_v = app.add_subcommand("fit-vae", "Train the beta-VAE on the covariates");
  add_common(fit_v);
  CLI::App* explain = app.add_subcommand("explain", "Explain every test subject");
  add_common(explain);
  explain->add_option("--method", o.method, "li-itr, lime, qlearn or blackbox");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Bias, PCOT and value reports");
  add_common(evaluate);
  CLI::App* bench = app.add_subcommand("benchmark", "Run the full pipeline over the configured grid");
  add_common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig cfg = load_config(o);
    if (*simulate) return cmd_simulate(cfg, out);
    if (*fit_bb) return cmd_fit_blackbox(cfg, out);
    if (*fit_v) return cmd_fit_vae(cfg, out, err);
    if (*explain) return cmd_explain(cfg, o.method, out, err);
    if (*evaluate) return cmd_evaluate(cfg, out);
    if (*bench) return cmd_benchmark(cfg, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArtifactError& e) {
    err << "missing artifact: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartialFailure;
  }
  return kExitUsage;
}

}  // namespace liitr
