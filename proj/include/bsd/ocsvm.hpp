#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>

#include "bsd/json_io.hpp"

namespace bsd {

double rbf(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
           double gamma);

// nu-one-class SVM with an RBF kernel. Dual coefficients are normalised so
// that sum(alpha) = 1 and 0 <= alpha_i <= 1 / (nu * n).
struct OcSvmModel {
  Eigen::MatrixXd support;  // d x n_sv, one support vector per column
  Eigen::VectorXd alpha;
  double rho = 0.0;
  double gamma = 1.0;
  double nu = 0.1;

  Eigen::Index dims() const { return support.rows(); }
};

struct OcSvmOptions {
  double nu = 0.1;
  std::optional<double> gamma;  // default 1 / (d * var(training entries))
  double tolerance = 1e-4;      // KKT violation gap
  std::int64_t max_iterations = 1'000'000;
  Eigen::Index max_train = 5000;  // larger sets are subsampled with the seed
  std::uint64_t seed = 0;
};

double default_gamma(const Eigen::Ref<const Eigen::MatrixXd>& windows);

// windows: d x n, one training vector per column, n >= 10.
OcSvmModel fit_ocsvm(const Eigen::Ref<const Eigen::MatrixXd>& windows, const OcSvmOptions& opts);

// sum_i alpha_i k(sv_i, x) - rho; lower means more anomalous.
double score(const OcSvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd score_all(const OcSvmModel& model, const Eigen::Ref<const Eigen::MatrixXd>& xs);

// {"sv": [[...]], "alpha": [...], "rho", "gamma", "nu"}; sv rows are vectors.
json ocsvm_to_json(const OcSvmModel& m);
OcSvmModel ocsvm_from_json(const json& j);

}  // namespace bsd
