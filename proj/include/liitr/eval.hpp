#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "liitr/moe.hpp"
#include "liitr/simgen.hpp"

namespace liitr {

struct CoefficientBias {
  std::string name;
  std::string group;  // "main" or "treatment"
  double mean_abs_bias = 0.0;
  double sd_bias = 0.0;  // sample SD (n-1) of signed biases; 0 for one subject
  double mean_bias = 0.0;
};

struct BiasReport {
  std::string method;
  std::size_t n_train = 0;
  std::size_t m = 0;
  std::size_t subjects_used = 0;
  std::size_t subjects_skipped = 0;
  bool single_subject = false;
  std::vector<CoefficientBias> coefficients;

  // Mean of mean_abs_bias over the coefficients of one group.
  double group_mean_abs(const std::string& group) const;
  double max_mean_abs(const std::string& group) const;
  const CoefficientBias& at(const std::string& name) const;
};

// Compares each explanation against the true coefficients of its subject's own
// region. Explanations lacking 4 main-effect or 3 treatment coefficients are skipped.
BiasReport bias_table(std::span<const Explanation> explanations, const GroundTruth& truth,
                      const std::string& method = "", std::size_t n_train = 0, std::size_t m = 0);

double pcot(std::span<const int> recommended, std::span<const int> optimal);

struct PropensityModel {
  Vector coef;  // intercept, x_1..x_p
  bool converged = false;
  bool clipped_any = false;
  std::size_t iterations = 0;
  double ridge = 1e-6;

  double raw_probability(std::span<const double> x_row) const;
  // Clipped to [0.01, 0.99].
  double probability(std::span<const double> x_row) const;
};

inline constexpr double kPropensityFloor = 0.01;
inline constexpr double kPropensityCeil = 0.99;

// Ridge-penalized logistic regression of T on (1, X) by Newton-Raphson.
PropensityModel fit_propensity(const Dataset& data, double ridge = 1e-6, std::size_t max_iter = 50);

// (1/n) sum 1(T_i = d_i) Y_i / (e_i T_i + (1 - e_i)(1 - T_i)).
double value_function(const Dataset& data, std::span<const int> recommended,
                      std::span<const double> propensity);
double value_function(const Dataset& data, std::span<const int> recommended,
                      const PropensityModel& prop);

struct FidelityResult {
  std::optional<double> r2;  // empty with fewer than 10 rows
  double mean_abs_diff = 0.0;
  std::size_t rows = 0;
};

// R^2 and mean |mu - y_hat| of the explanation's linear model over `rows` of pset.
FidelityResult local_fidelity(const Explanation& e, const PerturbationSet& pset,
                              std::span<const std::size_t> rows, const FeatureSpec& h0,
                              const FeatureSpec& h1);

// Rows of pset hard-gated to `expert`.
std::vector<std::size_t> gated_rows(const GatingModel& gate, const PerturbationSet& pset,
                                    std::size_t expert);

struct PolicyReport {
  std::string method;
  std::string setting;
  double pcot = 0.0;
  std::size_t n_treat = 0;
  std::size_t n_control = 0;
  std::optional<double> value;
};

PolicyReport policy_report(const std::string& method, const std::string& setting,
                           std::span<const int> recommended, std::span<const int> optimal);

std::string bias_reports_to_csv(std::span<const BiasReport> reports);
std::string policy_reports_to_csv(std::span<const PolicyReport> reports);
json bias_report_to_json(const BiasReport& r);
json policy_report_to_json(const PolicyReport& r);

}  // namespace liitr
