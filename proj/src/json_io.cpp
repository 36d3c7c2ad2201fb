#include "bsd/json_io.hpp"

#include <fstream>

#include "bsd/error.hpp"

namespace bsd {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw DataError("matrix must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DataError("ragged matrix at row " + std::to_string(i));
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const json& j) {
  if (!j.is_array()) throw DataError("vector must be an array");
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json mlp_to_json(const MlpParams& net) {
  json layers = json::array();
  for (const auto& layer : net.layers) {
    layers.push_back({{"weights", matrix_to_json(layer.weights)},
                      {"bias", vector_to_json(layer.bias)},
                      {"activation", layer.activation == Activation::relu ? "relu" : "linear"}});
  }
  return json{{"layers", std::move(layers)}};
}

MlpParams mlp_from_json(const json& j) {
  if (!j.contains("layers")) throw DataError("checkpoint missing \"layers\"");
  MlpParams net;
  for (const auto& lj : j.at("layers")) {
    DenseLayer<double> layer;
    layer.weights = matrix_from_json(lj.at("weights"));
    layer.bias = vector_from_json(lj.at("bias"));
    const auto act = lj.at("activation").get<std::string>();
    if (act == "relu")
      layer.activation = Activation::relu;
    else if (act == "linear")
      layer.activation = Activation::linear;
    else
      throw DataError("unknown activation: " + act);
    net.layers.push_back(std::move(layer));
  }
  try {
    net.validate();
  } catch (const ShapeError& e) {
    throw DataError(std::string("invalid checkpoint: ") + e.what());
  }
  return net;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace bsd
