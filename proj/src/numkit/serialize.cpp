#include "liitr/numkit/serialize.hpp"

namespace liitr {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row_vector(r));
  return rows;
}

Matrix matrix_from_json(const json& j) {
  std::vector<Vector> rows;
  for (const auto& r : j) rows.push_back(r.get<Vector>());
  return Matrix::from_rows(rows);
}

json mlp_to_json(const MlpModel& model) {
  json j;
  j["layer_sizes"] = model.layer_sizes;
  json acts = json::array();
  for (auto a : model.activations) acts.push_back(to_string(a));
  j["activations"] = acts;
  json ws = json::array();
  for (const auto& w : model.weights) ws.push_back(matrix_to_json(w));
  j["weights"] = ws;
  j["biases"] = model.biases;
  return j;
}

MlpModel mlp_from_json(const json& j) {
  MlpModel m;
  m.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) m.activations.push_back(activation_from_string(a));
  for (const auto& w : j.at("weights")) {
    Matrix mat = matrix_from_json(w);
    m.weights.push_back(std::move(mat));
  }
  m.biases = j.at("biases").get<std::vector<Vector>>();
  // from_rows() cannot express 0-row matrices; restore shapes for degenerate layers.
  for (std::size_t i = 0; i < m.weights.size() && i + 1 < m.layer_sizes.size(); ++i)
    if (m.weights[i].empty()) m.weights[i] = Matrix(m.layer_sizes[i + 1], m.layer_sizes[i]);
  m.validate();
  return m;
}

json scaler_to_json(const Scaler& s) {
  return json{{"mean", s.mean}, {"sd", s.sd}, {"clamped", s.clamped}};
}

Scaler scaler_from_json(const json& j) {
  Scaler s;
  s.mean = j.at("mean").get<Vector>();
  s.sd = j.at("sd").get<Vector>();
  s.clamped = j.value("clamped", std::vector<bool>(s.mean.size(), false));
  require_shape(s.mean.size() == s.sd.size() && s.clamped.size() == s.sd.size(),
                "scaler fields have inconsistent lengths");
  return s;
}

std::string dump_json(const json& j, int indent) { return j.dump(indent); }

}  // namespace liitr
