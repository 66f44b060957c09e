#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "liitr/baselines.hpp"
#include "liitr/blackbox.hpp"
#include "liitr/eval.hpp"
#include "liitr/moe.hpp"
#include "liitr/simgen.hpp"
#include "liitr/vaegen.hpp"

namespace liitr {

struct CellSpec {
  std::size_t n_train = 2000;
  std::size_t m = 20000;
  bool misspecified = false;

  std::string label() const;
};

struct EvalSettings {
  std::size_t n_test = 200;
  std::size_t replicates = 1;
  std::vector<std::string> methods{"li-itr", "lime", "qlearn", "blackbox"};
  std::vector<CellSpec> grid{CellSpec{}};
};

struct PathConfig {
  std::string output_dir = "liitr_out";
  std::string dataset;       // defaults below are relative to output_dir
  std::string test_dataset;
  std::string truth;
  std::string blackbox;
  std::string vae;
};

struct RunConfig {
  std::uint64_t seed = 1;
  PathConfig paths;
  SimConfig sim;
  BlackboxConfig blackbox;
  VaeConfig vae;
  PerturbConfig perturb;
  MoEConfig moe;
  LimeConfig lime;
  EvalSettings eval;

  // Pushes the top-level seed into every stage config.
  void propagate_seed();
  void validate() const;
};

inline const std::vector<std::string> kMethods{"li-itr", "lime", "qlearn", "blackbox"};

// Unknown keys and wrong types raise ConfigError.
RunConfig config_from_json(const json& j);
json config_to_json(const RunConfig& c);
// SHA-256 of the compact canonical dump.
std::string config_hash(const RunConfig& c);

// Training rows followed by n_test test rows drawn from one simulation
// (medians and region labels are shared).
struct SimulatedStudy {
  Dataset train;
  Dataset test;
  GroundTruth truth;  // indexed by global row: train rows, then test rows
};

SimulatedStudy simulate_study(const SimConfig& sim, std::size_t n_train, std::size_t n_test);

// Everything needed to explain subjects; pointers may be null when a method does not need them.
struct ExplainContext {
  const RunConfig* config = nullptr;
  const BlackboxModel* blackbox = nullptr;
  const VaeModel* vae = nullptr;
  const QLearningModel* qlearn = nullptr;
  const SupportBox* support = nullptr;
};

struct SubjectResult {
  std::size_t subject_id = 0;
  bool skipped = false;
  std::string skip_reason;
  std::map<std::string, Explanation> explanations;
  // Fidelity on the rows of the LI-ITR neighborhood gated to the selected expert.
  std::optional<FidelityResult> li_itr_fidelity;
  std::optional<FidelityResult> lime_fidelity;
  std::vector<std::string> warnings;
};

// Subjects whose VAE neighborhood leaves the training support box (under 99%
// of rows inside) are skipped for every method.
SubjectResult explain_one(const ExplainContext& ctx, std::span<const double> x_subject,
                          std::size_t subject_id, const std::vector<std::string>& methods);

// Subject-level OpenMP fan-out; results in subject order.
std::vector<SubjectResult> explain_many(const ExplainContext& ctx, const Dataset& subjects,
                                        std::size_t first_subject_id,
                                        const std::vector<std::string>& methods);

struct CellResult {
  CellSpec cell;
  std::size_t replicate = 0;
  bool failed = false;
  std::string error;
  std::vector<BiasReport> bias;
  std::vector<PolicyReport> policy;
  std::vector<SubjectResult> subjects;
  std::size_t skipped = 0;
  double blackbox_val_r2 = 0.0;
  Vector vae_heldout_relative_mse;
  std::map<std::string, double> timings;  // seconds per stage; not part of the report

  std::vector<Explanation> explanations(const std::string& method) const;
  const BiasReport* bias_for(const std::string& method) const;
  const PolicyReport* policy_for(const std::string& method) const;
  double median_li_itr_r2() const;
  double mean_abs_diff(const std::string& method) const;  // over subjects with both fidelities
};

// Full pipeline for one (n, m) cell. Exceptions are captured into failed/error.
CellResult run_cell(const RunConfig& config, const CellSpec& cell, std::size_t replicate = 0);

// Report content without timings so reruns compare byte for byte.
json cell_to_json(const CellResult& r);
std::string fidelity_to_csv(std::span<const CellResult> cells);

}  // namespace liitr
