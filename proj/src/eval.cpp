#include "liitr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "liitr/numkit/linalg.hpp"

namespace liitr {

namespace {

const char* const kMainNames[4] = {"beta1_x1", "beta1_x2", "beta1_x3", "beta1_x4"};
const char* const kTreatNames[3] = {"beta2_intercept", "beta2_x1", "beta2_x2"};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

double BiasReport::group_mean_abs(const std::string& group) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : coefficients)
    if (c.group == group) {
      s += c.mean_abs_bias;
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

double BiasReport::max_mean_abs(const std::string& group) const {
  double best = 0.0;
  for (const auto& c : coefficients)
    if (c.group == group) best = std::max(best, c.mean_abs_bias);
  return best;
}

const CoefficientBias& BiasReport::at(const std::string& name) const {
  for (const auto& c : coefficients)
    if (c.name == name) return c;
  throw UsageError("bias report has no coefficient " + name);
}

BiasReport bias_table(std::span<const Explanation> explanations, const GroundTruth& truth,
                      const std::string& method, std::size_t n_train, std::size_t m) {
  BiasReport rep;
  rep.method = method;
  rep.n_train = n_train;
  rep.m = m;
  std::vector<Vector> bias(7);
  for (const auto& e : explanations) {
    if (e.beta_k1.size() != 4 || e.beta_k2.size() != 3 || e.subject_id >= truth.region.size()) {
      ++rep.subjects_skipped;
      continue;
    }
    const auto& b2 = truth.beta_k2[static_cast<std::size_t>(truth.region[e.subject_id])];
    for (std::size_t c = 0; c < 4; ++c) bias[c].push_back(e.beta_k1[c] - truth.beta1[c]);
    for (std::size_t c = 0; c < 3; ++c) bias[4 + c].push_back(e.beta_k2[c] - b2[c]);
    ++rep.subjects_used;
  }
  rep.single_subject = rep.subjects_used == 1;
  if (rep.subjects_used == 0) return rep;
  for (std::size_t c = 0; c < 7; ++c) {
    CoefficientBias cb;
    cb.name = c < 4 ? kMainNames[c] : kTreatNames[c - 4];
    cb.group = c < 4 ? "main" : "treatment";
    const Vector& v = bias[c];
    double abs_sum = 0.0;
    for (double b : v) abs_sum += std::abs(b);
    cb.mean_abs_bias = abs_sum / static_cast<double>(v.size());
    cb.mean_bias = mean(v);
    if (v.size() > 1) {
      const double n = static_cast<double>(v.size());
      cb.sd_bias = std::sqrt(variance(v) * n / (n - 1.0));
    }
    rep.coefficients.push_back(cb);
  }
  return rep;
}

double pcot(std::span<const int> recommended, std::span<const int> optimal) {
  require_shape(recommended.size() == optimal.size(), "pcot: length mismatch");
  if (recommended.empty()) throw UsageError("pcot of an empty subject list");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < recommended.size(); ++i) hit += recommended[i] == optimal[i];
  return static_cast<double>(hit) / static_cast<double>(recommended.size());
}

double PropensityModel::raw_probability(std::span<const double> x_row) const {
  require_shape(x_row.size() + 1 == coef.size(), "propensity: covariate width mismatch");
  double eta = coef[0];
  for (std::size_t c = 0; c < x_row.size(); ++c) eta += coef[c + 1] * x_row[c];
  return expit(eta);
}

double PropensityModel::probability(std::span<const double> x_row) const {
  return std::clamp(raw_probability(x_row), kPropensityFloor, kPropensityCeil);
}

PropensityModel fit_propensity(const Dataset& data, double ridge, std::size_t max_iter) {
  data.validate();
  const std::size_t n = data.n(), p = data.p(), d = p + 1;
  std::size_t treated = 0;
  for (int t : data.t) treated += t == 1;
  if (treated == 0 || treated == n) throw UsageError("fit_propensity needs both treatment arms");

  PropensityModel model;
  model.ridge = ridge;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::VectorXd t(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    X(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t c = 0; c < p; ++c)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c + 1)) = data.x(i, c);
    t(static_cast<Eigen::Index>(i)) = data.t[i];
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), ridge);
  penalty(0) = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    model.iterations = it + 1;
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu(i) = expit(eta(i));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (t - mu) - penalty.cwiseProduct(beta);
    Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X;
    hess.diagonal() += penalty;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) break;
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10 * (1.0 + beta.cwiseAbs().maxCoeff())) {
      model.converged = true;
      break;
    }
  }
  model.coef.assign(beta.data(), beta.data() + beta.size());
  for (std::size_t i = 0; i < n && !model.clipped_any; ++i) {
    const double e = model.raw_probability(data.x.row(i));
    model.clipped_any = e < kPropensityFloor || e > kPropensityCeil;
  }
  return model;
}

double value_function(const Dataset& data, std::span<const int> recommended,
                      std::span<const double> propensity) {
  require_shape(recommended.size() == data.n() && propensity.size() == data.n(),
                "value_function: length mismatch");
  if (data.n() == 0) throw UsageError("value_function of an empty dataset");
  double s = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.t[i] != recommended[i]) continue;
    const double e = propensity[i];
    s += data.y[i] / (data.t[i] == 1 ? e : 1.0 - e);
  }
  return s / static_cast<double>(data.n());
}

double value_function(const Dataset& data, std::span<const int> recommended,
                      const PropensityModel& prop) {
  Vector e(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) e[i] = prop.probability(data.x.row(i));
  return value_function(data, recommended, e);
}

FidelityResult local_fidelity(const Explanation& e, const PerturbationSet& pset,
                              std::span<const std::size_t> rows, const FeatureSpec& h0,
                              const FeatureSpec& h1) {
  if (!pset.has_predictions()) throw UsageError("local_fidelity: predictions not attached");
  ExpertModel expert{e.beta_k1, e.beta_k2, 0.0};
  FidelityResult f;
  f.rows = rows.size();
  if (rows.empty()) return f;
  Vector truth, pred, x(pset.p());
  for (std::size_t j : rows) {
    for (std::size_t c = 0; c < pset.p(); ++c) x[c] = pset.d_prime(j, c + 1);
    pred.push_back(expert.mean(h0.build(x), h1.build(x), pset.t_prime(j)));
    truth.push_back(pset.y_hat[j]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
  f.mean_abs_diff = s / static_cast<double>(truth.size());
  if (rows.size() >= 10) f.r2 = r_squared(truth, pred);
  return f;
}

std::vector<std::size_t> gated_rows(const GatingModel& gate, const PerturbationSet& pset,
                                    std::size_t expert) {
  const auto assign = hard_assignments(gate, pset.x_prime());
  std::vector<std::size_t> rows;
  for (std::size_t j = 0; j < assign.size(); ++j)
    if (assign[j] == expert) rows.push_back(j);
  return rows;
}

PolicyReport policy_report(const std::string& method, const std::string& setting,
                           std::span<const int> recommended, std::span<const int> optimal) {
  PolicyReport r;
  r.method = method;
  r.setting = setting;
  r.pcot = pcot(recommended, optimal);
  for (int d : recommended) (d == 1 ? r.n_treat : r.n_control)++;
  return r;
}

std::string bias_reports_to_csv(std::span<const BiasReport> reports) {
  std::ostringstream os;
  os << "method,n_train,m,group,coefficient,mean_abs_bias,sd_bias,mean_bias,subjects\n";
  for (const auto& r : reports)
    for (const auto& c : r.coefficients)
      os << r.method << ',' << r.n_train << ',' << r.m << ',' << c.group << ',' << c.name << ','
         << fmt(c.mean_abs_bias) << ',' << fmt(c.sd_bias) << ',' << fmt(c.mean_bias) << ','
         << r.subjects_used << '\n';
  return os.str();
}

std::string policy_reports_to_csv(std::span<const PolicyReport> reports) {
  std::ostringstream os;
  os << "method,setting,pcot,n_treat,n_control,value\n";
  for (const auto& r : reports)
    os << r.method << ',' << r.setting << ',' << fmt(r.pcot) << ',' << r.n_treat << ','
       << r.n_control << ',' << (r.value ? fmt(*r.value) : "") << '\n';
  return os.str();
}

json bias_report_to_json(const BiasReport& r) {
  json coefs = json::array();
  for (const auto& c : r.coefficients)
    coefs.push_back({{"name", c.name},
                     {"group", c.group},
                     {"mean_abs_bias", c.mean_abs_bias},
                     {"sd_bias", c.sd_bias},
                     {"mean_bias", c.mean_bias}});
  return json{{"method", r.method},
              {"n_train", r.n_train},
              {"m", r.m},
              {"subjects_used", r.subjects_used},
              {"subjects_skipped", r.subjects_skipped},
              {"single_subject", r.single_subject},
              {"main_mean_abs_bias", r.group_mean_abs("main")},
              {"treatment_mean_abs_bias", r.group_mean_abs("treatment")},
              {"coefficients", coefs}};
}

json policy_report_to_json(const PolicyReport& r) {
  return json{{"method", r.method},
              {"setting", r.setting},
              {"pcot", r.pcot},
              {"n_treat", r.n_treat},
              {"n_control", r.n_control},
              {"value", r.value ? json(*r.value) : json(nullptr)}};
}

}  // namespace liitr
