#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "bsd/tensorcore.hpp"

namespace bsd {

using json = nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m);  // row-major nested arrays
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

// Checkpoint: {"layers": [{"weights": [[...]], "bias": [...], "activation": "relu"|"linear"}]}
json mlp_to_json(const MlpParams& net);
MlpParams mlp_from_json(const json& j);

json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline. Doubles round-trip exactly.
void write_json(const json& j, const std::filesystem::path& path);

}  // namespace bsd
