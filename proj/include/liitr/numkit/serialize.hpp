#pragma once

#include <json.hpp>

#include "liitr/numkit/mlp.hpp"
#include "liitr/numkit/scaler.hpp"

namespace liitr {

using json = nlohmann::json;

// {layer_sizes, activations, weights (nested row-major), biases}
json mlp_to_json(const MlpModel& model);
MlpModel mlp_from_json(const json& j);

json scaler_to_json(const Scaler& s);
Scaler scaler_from_json(const json& j);

json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

// Compact dump; doubles are written with 17 significant digits.
std::string dump_json(const json& j, int indent = -1);

}  // namespace liitr
