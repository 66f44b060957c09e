#include "liitr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include "liitr/io.hpp"
#include "liitr/numkit/linalg.hpp"

namespace liitr {

std::string CellSpec::label() const {
  return "n" + std::to_string(n_train) + "_m" + std::to_string(m) + (misspecified ? "_misspec" : "");
}

void RunConfig::propagate_seed() {
  sim.seed = seed;
  blackbox.seed = seed;
  vae.seed = seed;
}

void RunConfig::validate() const {
  sim.validate();
  blackbox.validate();
  vae.validate();
  perturb.validate();
  moe.validate();
  lime.validate(lime.perturb_sd.size());
  if (eval.n_test == 0) throw ConfigError("eval.n_test must be > 0");
  if (eval.replicates == 0) throw ConfigError("eval.replicates must be > 0");
  if (eval.grid.empty()) throw ConfigError("eval.grid must list at least one cell");
  if (eval.methods.empty()) throw ConfigError("eval.methods must not be empty");
  for (const auto& m : eval.methods)
    if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end())
      throw ConfigError("unknown method '" + m + "'");
  for (const auto& c : eval.grid) {
    if (c.n_train < 50) throw ConfigError("grid n_train must be >= 50");
    if (c.m < 100) throw ConfigError("grid m must be >= 100");
  }
}

namespace {

// Reads the known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown config key '" + (name_.empty() ? "" : name_ + ".") + it.key() + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_optimizer(Section& s, AdamWConfig& o) {
  s.get("lr", o.learning_rate);
  s.get("weight_decay", o.weight_decay);
}

void read_spec(const json* j, const std::string& name, FeatureSpec& spec) {
  if (!j) return;
  Section s(*j, name);
  s.get("columns", spec.columns);
  s.get("intercept", spec.intercept);
  s.finish();
}

json spec_json(const FeatureSpec& f) { return json{{"columns", f.columns}, {"intercept", f.intercept}}; }

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section top(j, "");
  top.get("seed", c.seed);
  if (const json* p = top.sub("paths")) {
    Section s(*p, "paths");
    s.get("output_dir", c.paths.output_dir);
    s.get("dataset", c.paths.dataset);
    s.get("test_dataset", c.paths.test_dataset);
    s.get("truth", c.paths.truth);
    s.get("blackbox", c.paths.blackbox);
    s.get("vae", c.paths.vae);
    s.finish();
  }
  if (const json* p = top.sub("sim")) {
    Section s(*p, "sim");
    s.get("n", c.sim.n);
    s.get("noise_sd", c.sim.noise_sd);
    s.get("misspecified", c.sim.misspecified);
    s.get("quad_coef", c.sim.quad_coef);
    s.get("beta1", c.sim.beta1);
    s.get("beta_k2", c.sim.beta_k2);
    s.finish();
  }
  if (const json* p = top.sub("blackbox")) {
    Section s(*p, "blackbox");
    s.get("hidden", c.blackbox.hidden);
    s.get("max_epochs", c.blackbox.max_epochs);
    s.get("patience", c.blackbox.patience);
    s.get("batch_size", c.blackbox.batch_size);
    s.get("val_fraction", c.blackbox.val_fraction);
    read_optimizer(s, c.blackbox.optimizer);
    s.finish();
  }
  if (const json* p = top.sub("vae")) {
    Section s(*p, "vae");
    s.get("latent_dim", c.vae.latent_dim);
    s.get("beta", c.vae.beta);
    s.get("recon_sd", c.vae.recon_sd);
    s.get("hidden", c.vae.hidden);
    s.get("max_epochs", c.vae.max_epochs);
    s.get("patience", c.vae.patience);
    s.get("batch_size", c.vae.batch_size);
    s.get("val_fraction", c.vae.val_fraction);
    s.get("lr_final_fraction", c.vae.lr_final_fraction);
    read_optimizer(s, c.vae.optimizer);
    s.finish();
  }
  if (const json* p = top.sub("perturb")) {
    Section s(*p, "perturb");
    s.get("alpha", c.perturb.alpha);
    s.get("m", c.perturb.m);
    std::string sched = to_string(c.perturb.alpha_schedule);
    s.get("schedule", sched);
    try {
      c.perturb.alpha_schedule = alpha_schedule_from_string(sched);
    } catch (const std::exception&) {
      throw ConfigError("perturb.schedule must be 'fixed' or 'linear_ramp'");
    }
    s.finish();
  }
  if (const json* p = top.sub("moe")) {
    Section s(*p, "moe");
    s.get("K", c.moe.K);
    s.get("lambda", c.moe.lambda);
    s.get("warmup_epochs", c.moe.warmup_epochs);
    s.get("max_epochs", c.moe.max_epochs);
    s.get("batch_size", c.moe.batch_size);
    s.get("gate_hidden", c.moe.gate_hidden);
    s.get("lr_experts", c.moe.lr_experts);
    s.get("lr_gate", c.moe.lr_gate);
    s.get("lr_final_fraction", c.moe.lr_final_fraction);
    s.get("weight_decay", c.moe.weight_decay);
    s.get("init_jitter", c.moe.init_jitter);
    s.get("min_sigma", c.moe.min_sigma);
    s.get("rel_tol", c.moe.rel_tol);
    s.get("patience", c.moe.patience);
    read_spec(s.sub("h0"), "moe.h0", c.moe.h0);
    read_spec(s.sub("h1"), "moe.h1", c.moe.h1);
    s.finish();
  }
  c.lime.h0 = c.moe.h0;
  c.lime.h1 = c.moe.h1;
  if (const json* p = top.sub("lime")) {
    Section s(*p, "lime");
    s.get("kernel_width", c.lime.kernel_width);
    s.get("perturb_sd", c.lime.perturb_sd);
    s.finish();
  }
  if (const json* p = top.sub("eval")) {
    Section s(*p, "eval");
    s.get("n_test", c.eval.n_test);
    s.get("replicates", c.eval.replicates);
    s.get("methods", c.eval.methods);
    if (const json* g = s.sub("grid")) {
      if (!g->is_array()) throw ConfigError("eval.grid must be an array");
      c.eval.grid.clear();
      for (const auto& cell : *g) {
        Section cs(cell, "eval.grid[]");
        CellSpec spec;
        cs.get("n_train", spec.n_train);
        cs.get("m", spec.m);
        cs.get("misspecified", spec.misspecified);
        cs.finish();
        c.eval.grid.push_back(spec);
      }
    }
    s.finish();
  }
  top.finish();
  c.lime.m = c.perturb.m;
  c.propagate_seed();
  return c;
}

json config_to_json(const RunConfig& c) {
  json grid = json::array();
  for (const auto& g : c.eval.grid)
    grid.push_back({{"n_train", g.n_train}, {"m", g.m}, {"misspecified", g.misspecified}});
  return json{
      {"seed", c.seed},
      {"paths",
       {{"output_dir", c.paths.output_dir},
        {"dataset", c.paths.dataset},
        {"test_dataset", c.paths.test_dataset},
        {"truth", c.paths.truth},
        {"blackbox", c.paths.blackbox},
        {"vae", c.paths.vae}}},
      {"sim",
       {{"n", c.sim.n},
        {"noise_sd", c.sim.noise_sd},
        {"misspecified", c.sim.misspecified},
        {"quad_coef", c.sim.quad_coef},
        {"beta1", c.sim.beta1},
        {"beta_k2", c.sim.beta_k2}}},
      {"blackbox",
       {{"hidden", c.blackbox.hidden},
        {"max_epochs", c.blackbox.max_epochs},
        {"patience", c.blackbox.patience},
        {"batch_size", c.blackbox.batch_size},
        {"val_fraction", c.blackbox.val_fraction},
        {"lr", c.blackbox.optimizer.learning_rate},
        {"weight_decay", c.blackbox.optimizer.weight_decay}}},
      {"vae",
       {{"latent_dim", c.vae.latent_dim},
        {"beta", c.vae.beta},
        {"recon_sd", c.vae.recon_sd},
        {"hidden", c.vae.hidden},
        {"max_epochs", c.vae.max_epochs},
        {"patience", c.vae.patience},
        {"batch_size", c.vae.batch_size},
        {"val_fraction", c.vae.val_fraction},
        {"lr_final_fraction", c.vae.lr_final_fraction},
        {"lr", c.vae.optimizer.learning_rate},
        {"weight_decay", c.vae.optimizer.weight_decay}}},
      {"perturb",
       {{"alpha", c.perturb.alpha},
        {"m", c.perturb.m},
        {"schedule", to_string(c.perturb.alpha_schedule)}}},
      {"moe",
       {{"K", c.moe.K},
        {"lambda", c.moe.lambda},
        {"warmup_epochs", c.moe.warmup_epochs},
        {"max_epochs", c.moe.max_epochs},
        {"batch_size", c.moe.batch_size},
        {"gate_hidden", c.moe.gate_hidden},
        {"lr_experts", c.moe.lr_experts},
        {"lr_gate", c.moe.lr_gate},
        {"lr_final_fraction", c.moe.lr_final_fraction},
        {"weight_decay", c.moe.weight_decay},
        {"init_jitter", c.moe.init_jitter},
        {"min_sigma", c.moe.min_sigma},
        {"rel_tol", c.moe.rel_tol},
        {"patience", c.moe.patience},
        {"h0", spec_json(c.moe.h0)},
        {"h1", spec_json(c.moe.h1)}}},
      {"lime", {{"kernel_width", c.lime.kernel_width}, {"perturb_sd", c.lime.perturb_sd}}},
      {"eval",
       {{"n_test", c.eval.n_test},
        {"replicates", c.eval.replicates},
        {"methods", c.eval.methods},
        {"grid", grid}}}};
}

std::string config_hash(const RunConfig& c) { return sha256_hex(dump_json(config_to_json(c))); }

SimulatedStudy simulate_study(const SimConfig& sim, std::size_t n_train, std::size_t n_test) {
  SimConfig sc = sim;
  sc.n = n_train + n_test;
  SimResult r = generate(sc);
  return SimulatedStudy{r.data.slice(0, n_train), r.data.slice(n_train, n_train + n_test),
                        std::move(r.truth)};
}

SubjectResult explain_one(const ExplainContext& ctx, std::span<const double> x_subject,
                          std::size_t subject_id, const std::vector<std::string>& methods) {
  const RunConfig& cfg = *ctx.config;
  const Rng root(cfg.seed);
  const auto wants = [&](const char* m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  };
  SubjectResult res;
  res.subject_id = subject_id;

  std::optional<PerturbationSet> pset;
  if (wants("li-itr")) {
    if (!ctx.blackbox || !ctx.vae) throw UsageError("li-itr needs a black-box and a VAE");
    Rng prng = root.child("perturb:" + std::to_string(subject_id));
    pset = perturb_latent(*ctx.vae, x_subject, cfg.perturb, prng, subject_id);
    if (ctx.support) {
      const double inside = ctx.support->fraction_inside(pset->x_prime());
      if (inside < 0.99) {
        res.skipped = true;
        std::ostringstream os;
        os << "only " << inside * 100.0 << "% of perturbed rows inside the training support box";
        res.skip_reason = os.str();
        return res;
      }
    }
    attach_predictions(*pset, *ctx.blackbox);
    Rng mrng = root.child("moe:" + std::to_string(subject_id));
    const SurrogateFit fit = fit_surrogate(*pset, cfg.moe, mrng);
    Explanation e = explain_subject(x_subject, fit.experts, fit.gate, cfg.moe.h0, cfg.moe.h1, &*pset);
    e.subject_id = subject_id;
    for (const auto& w : fit.diagnostics.warnings)
      res.warnings.push_back("subject " + std::to_string(subject_id) + ": " + w);
    const auto rows = gated_rows(fit.gate, *pset, e.selected_expert);
    res.li_itr_fidelity = local_fidelity(e, *pset, rows, cfg.moe.h0, cfg.moe.h1);
    res.explanations["li-itr"] = std::move(e);
    if (wants("lime")) {
      Rng lrng = root.child("lime:" + std::to_string(subject_id));
      Explanation le = lime_explain(x_subject, *ctx.blackbox, cfg.lime, lrng, subject_id);
      res.lime_fidelity = local_fidelity(le, *pset, rows, cfg.lime.h0, cfg.lime.h1);
      res.explanations["lime"] = std::move(le);
    }
  } else if (wants("lime")) {
    if (!ctx.blackbox) throw UsageError("lime needs a black-box model");
    Rng lrng = root.child("lime:" + std::to_string(subject_id));
    res.explanations["lime"] = lime_explain(x_subject, *ctx.blackbox, cfg.lime, lrng, subject_id);
  }
  if (wants("qlearn")) {
    if (!ctx.qlearn) throw UsageError("qlearn needs a fitted Q-learning model");
    res.explanations["qlearn"] = qlearn_explain(*ctx.qlearn, x_subject, subject_id);
  }
  if (wants("blackbox")) {
    if (!ctx.blackbox) throw UsageError("blackbox ITR needs a black-box model");
    Explanation e;
    e.method = "blackbox";
    e.subject_id = subject_id;
    e.recommended_t = blackbox_itr(*ctx.blackbox, x_subject);
    e.gate_distribution = {1.0};
    res.explanations["blackbox"] = std::move(e);
  }
  return res;
}

std::vector<SubjectResult> explain_many(const ExplainContext& ctx, const Dataset& subjects,
                                        std::size_t first_subject_id,
                                        const std::vector<std::string>& methods) {
  const std::size_t n = subjects.n();
  std::vector<SubjectResult> out(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t s = 0; s < n; ++s) {
    try {
      out[s] = explain_one(ctx, subjects.x.row(s), first_subject_id + s, methods);
    } catch (const std::exception& e) {
      errors[s] = e.what();
    }
  }
  for (std::size_t s = 0; s < n; ++s)
    if (!errors[s].empty())
      throw TrainingError("subject " + std::to_string(first_subject_id + s) + ": " + errors[s]);
  return out;
}

std::vector<Explanation> CellResult::explanations(const std::string& method) const {
  std::vector<Explanation> out;
  for (const auto& s : subjects) {
    const auto it = s.explanations.find(method);
    if (!s.skipped && it != s.explanations.end()) out.push_back(it->second);
  }
  return out;
}

const BiasReport* CellResult::bias_for(const std::string& method) const {
  for (const auto& b : bias)
    if (b.method == method) return &b;
  return nullptr;
}

const PolicyReport* CellResult::policy_for(const std::string& method) const {
  for (const auto& p : policy)
    if (p.method == method) return &p;
  return nullptr;
}

double CellResult::median_li_itr_r2() const {
  std::vector<double> r2;
  for (const auto& s : subjects)
    if (s.li_itr_fidelity && s.li_itr_fidelity->r2) r2.push_back(*s.li_itr_fidelity->r2);
  if (r2.empty()) return 0.0;
  return median(r2);
}

double CellResult::mean_abs_diff(const std::string& method) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : subjects) {
    if (!s.li_itr_fidelity || !s.lime_fidelity || s.li_itr_fidelity->rows == 0) continue;
    sum += (method == "lime" ? s.lime_fidelity : s.li_itr_fidelity)->mean_abs_diff;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

CellResult run_cell(const RunConfig& base, const CellSpec& cell, std::size_t replicate) {
  CellResult res;
  res.cell = cell;
  res.replicate = replicate;
  try {
    RunConfig cfg = base;
    if (replicate > 0) cfg.seed = mix_seed(base.seed, "replicate:" + std::to_string(replicate));
    cfg.propagate_seed();
    cfg.sim.misspecified = cell.misspecified;
    cfg.perturb.m = cell.m;
    cfg.lime.m = cell.m;
    const auto& methods = cfg.eval.methods;
    const auto wants = [&](const char* m) {
      return std::find(methods.begin(), methods.end(), m) != methods.end();
    };
    const bool needs_bb = wants("li-itr") || wants("lime") || wants("blackbox");

    auto t0 = std::chrono::steady_clock::now();
    const SimulatedStudy study = simulate_study(cfg.sim, cell.n_train, cfg.eval.n_test);
    res.timings["simulate"] = seconds_since(t0);

    std::optional<BlackboxModel> bb;
    std::optional<VaeModel> vae;
    std::optional<QLearningModel> q;
    std::optional<SupportBox> box;
    if (needs_bb) {
      t0 = std::chrono::steady_clock::now();
      bb = fit_blackbox(study.train, cfg.blackbox);
      res.blackbox_val_r2 = bb->val_r2;
      res.timings["fit_blackbox"] = seconds_since(t0);
    }
    if (wants("li-itr")) {
      t0 = std::chrono::steady_clock::now();
      vae = fit_vae(study.train, cfg.vae);
      res.vae_heldout_relative_mse = vae->heldout_relative_mse;
      box = SupportBox::fit(study.train.x);
      res.timings["fit_vae"] = seconds_since(t0);
    }
    if (wants("qlearn")) q = q_learning_fit(study.train, cfg.moe.h0, cfg.moe.h1);

    ExplainContext ctx{&cfg, bb ? &*bb : nullptr, vae ? &*vae : nullptr, q ? &*q : nullptr,
                       box ? &*box : nullptr};
    t0 = std::chrono::steady_clock::now();
    res.subjects = explain_many(ctx, study.test, cell.n_train, methods);
    res.timings["explain"] = seconds_since(t0);

    std::vector<std::size_t> kept;
    for (std::size_t s = 0; s < res.subjects.size(); ++s)
      if (res.subjects[s].skipped) ++res.skipped;
      else kept.push_back(s);

    std::optional<PropensityModel> prop;
    try {
      prop = fit_propensity(study.train);
    } catch (const UsageError&) {
      // single-arm training data: no value estimate
    }
    const Dataset kept_test = study.test.select(kept);
    for (const auto& method : kMethods) {
      if (!wants(method.c_str())) continue;
      const auto ex = res.explanations(method);
      std::vector<int> rec, opt;
      for (const auto& e : ex) {
        rec.push_back(e.recommended_t);
        opt.push_back(study.truth.optimal_t[e.subject_id]);
      }
      if (method != "blackbox")
        res.bias.push_back(bias_table(ex, study.truth, method, cell.n_train, cell.m));
      if (ex.empty()) continue;
      PolicyReport pr = policy_report(method, cell.label(), rec, opt);
      if (prop) pr.value = value_function(kept_test, rec, *prop);
      res.policy.push_back(pr);
    }
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

json cell_to_json(const CellResult& r) {
  json bias = json::array(), policy = json::array(), subjects = json::array();
  for (const auto& b : r.bias) bias.push_back(bias_report_to_json(b));
  for (const auto& p : r.policy) policy.push_back(policy_report_to_json(p));
  for (const auto& s : r.subjects) {
    json js{{"subject_id", s.subject_id}, {"skipped", s.skipped}};
    if (s.skipped) js["skip_reason"] = s.skip_reason;
    if (s.li_itr_fidelity) {
      js["li_itr_local_r2"] = s.li_itr_fidelity->r2 ? json(*s.li_itr_fidelity->r2) : json(nullptr);
      js["li_itr_mean_abs_diff"] = s.li_itr_fidelity->mean_abs_diff;
      js["gated_rows"] = s.li_itr_fidelity->rows;
    }
    if (s.lime_fidelity) js["lime_mean_abs_diff"] = s.lime_fidelity->mean_abs_diff;
    json ex = json::object();
    for (const auto& [m, e] : s.explanations) ex[m] = explanation_to_json(e);
    js["explanations"] = ex;
    if (!s.warnings.empty()) js["warnings"] = s.warnings;
    subjects.push_back(js);
  }
  return json{{"cell", {{"n_train", r.cell.n_train}, {"m", r.cell.m}, {"misspecified", r.cell.misspecified}}},
              {"replicate", r.replicate},
              {"failed", r.failed},
              {"error", r.error},
              {"blackbox_val_r2", r.blackbox_val_r2},
              {"vae_heldout_relative_mse", r.vae_heldout_relative_mse},
              {"skipped", r.skipped},
              {"median_li_itr_local_r2", r.median_li_itr_r2()},
              {"li_itr_mean_abs_diff", r.mean_abs_diff("li-itr")},
              {"lime_mean_abs_diff", r.mean_abs_diff("lime")},
              {"bias", bias},
              {"policy", policy},
              {"subjects", subjects}};
}

std::string fidelity_to_csv(std::span<const CellResult> cells) {
  std::ostringstream os;
  os << "cell,replicate,subject_id,li_itr_local_r2,li_itr_mean_abs_diff,lime_mean_abs_diff,gated_rows\n";
  for (const auto& c : cells)
    for (const auto& s : c.subjects) {
      if (!s.li_itr_fidelity) continue;
      os << c.cell.label() << ',' << c.replicate << ',' << s.subject_id << ','
         << (s.li_itr_fidelity->r2 ? format_double(*s.li_itr_fidelity->r2) : "") << ','
         << format_double(s.li_itr_fidelity->mean_abs_diff) << ','
         << (s.lime_fidelity ? format_double(s.lime_fidelity->mean_abs_diff) : "") << ','
         << s.li_itr_fidelity->rows << '\n';
    }
  return os.str();
}

}  // namespace liitr
