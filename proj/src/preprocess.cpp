#include "bsd/preprocess.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "bsd/error.hpp"

namespace bsd {

namespace {
constexpr double kRidge = 1e-8;
}

Whitener Whitener::identity(int order) {
  Whitener w;
  w.order = order;
  w.coeffs = Eigen::VectorXd::Zero(order);
  return w;
}

Whitener fit_whitener(const Eigen::Ref<const Eigen::VectorXd>& series, int order) {
  if (order < 1) throw ShapeError("predictor order must be >= 1");
  const Eigen::Index T = series.size();
  if (T <= 10 * static_cast<Eigen::Index>(order))
    throw DataError("whitener fit needs more than " + std::to_string(10 * order) +
                    " samples, got " + std::to_string(T));

  const Eigen::Index rows = T - order;
  Eigen::MatrixXd lags(rows, order);
  for (int i = 1; i <= order; ++i) lags.col(i - 1) = series.segment(order - i, rows);
  const Eigen::VectorXd target = series.tail(rows);

  // Centred regression; a constant series gives an all-zero Gram matrix and
  // therefore zero coefficients with the mean as intercept.
  const Eigen::RowVectorXd lag_mean = lags.colwise().mean();
  const double target_mean = target.mean();
  const Eigen::MatrixXd centred = lags.rowwise() - lag_mean;
  Eigen::MatrixXd gram = centred.transpose() * centred;
  gram.diagonal().array() += kRidge;
  const Eigen::VectorXd rhs = centred.transpose() * (target.array() - target_mean).matrix();

  Whitener w;
  w.order = order;
  w.coeffs = gram.ldlt().solve(rhs);
  if (!w.coeffs.allFinite()) throw NumericalError("whitener normal equations are singular");
  w.intercept = target_mean - lag_mean.dot(w.coeffs);

  const Eigen::VectorXd resid = whiten(w, series);
  const double mean = resid.mean();
  const double var = (resid.array() - mean).square().sum() / static_cast<double>(resid.size());
  w.scale = var > 0.0 ? std::sqrt(var) : 1.0;
  return w;
}

Eigen::VectorXd whiten(const Whitener& w, const Eigen::Ref<const Eigen::VectorXd>& series) {
  if (w.coeffs.size() != w.order) throw ShapeError("whitener coefficient count != order");
  const Eigen::Index T = series.size();
  if (T <= w.order)
    throw ShapeError("series of length " + std::to_string(T) + " is too short for order " +
                     std::to_string(w.order));
  const Eigen::Index rows = T - w.order;
  Eigen::VectorXd resid = series.tail(rows).array() - w.intercept;
  for (int i = 1; i <= w.order; ++i) resid -= w.coeffs(i - 1) * series.segment(w.order - i, rows);
  return resid;
}

Eigen::VectorXd normalized_residuals(const Whitener& w,
                                     const Eigen::Ref<const Eigen::VectorXd>& series) {
  return whiten(w, series) / w.scale;
}

EmpiricalCdf::EmpiricalCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
  if (sorted_.empty()) throw ShapeError("empirical CDF needs reference samples");
  if (sorted_.size() < 2) throw ShapeError("empirical CDF needs at least 2 reference samples");
  for (double s : sorted_)
    if (!std::isfinite(s)) throw DataError("non-finite reference sample");
  std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalCdf::operator()(double v) const {
  if (sorted_.empty()) throw ShapeError("empirical CDF has no reference samples");
  const double n1 = static_cast<double>(sorted_.size() + 1);
  const auto rank = static_cast<double>(std::upper_bound(sorted_.begin(), sorted_.end(), v) -
                                        sorted_.begin());
  return std::clamp(rank / n1, 1.0 / n1, static_cast<double>(sorted_.size()) / n1);
}

EmpiricalCdf fit_ecdf(std::vector<double> samples) { return EmpiricalCdf(std::move(samples)); }

double apply_ecdf(const EmpiricalCdf& m, double v) { return m(v); }

EcdfModel EcdfModel::fit(const Eigen::Ref<const Eigen::MatrixXd>& outputs) {
  EcdfModel model;
  model.components.reserve(static_cast<std::size_t>(outputs.rows()));
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(outputs.cols()));
    for (Eigen::Index j = 0; j < outputs.cols(); ++j) row[static_cast<std::size_t>(j)] = outputs(i, j);
    model.components.emplace_back(std::move(row));
  }
  return model;
}

Eigen::VectorXd EcdfModel::apply(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (v.size() != dims())
    throw ShapeError("ECDF model has " + std::to_string(dims()) + " components, got " +
                     std::to_string(v.size()));
  Eigen::VectorXd u(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) u(i) = components[static_cast<std::size_t>(i)](v(i));
  return u;
}

json whitener_to_json(const Whitener& w) {
  return json{{"order", w.order},
              {"coeffs", vector_to_json(w.coeffs)},
              {"intercept", w.intercept},
              {"scale", w.scale}};
}

Whitener whitener_from_json(const json& j) {
  Whitener w;
  w.order = j.at("order").get<int>();
  w.coeffs = vector_from_json(j.at("coeffs"));
  w.intercept = j.at("intercept").get<double>();
  w.scale = j.value("scale", 1.0);
  if (w.order < 1 || w.coeffs.size() != w.order)
    throw DataError("whitener: coefficient count does not match order");
  if (!w.coeffs.allFinite() || !std::isfinite(w.intercept) || !(w.scale > 0.0))
    throw DataError("whitener: non-finite or non-positive parameters");
  return w;
}

json ecdf_to_json(const EcdfModel& m) {
  json sorted = json::array();
  for (const auto& c : m.components) sorted.push_back(c.sorted());
  return json{{"sorted", std::move(sorted)}};
}

EcdfModel ecdf_from_json(const json& j) {
  EcdfModel m;
  for (const auto& c : j.at("sorted")) {
    try {
      m.components.emplace_back(c.get<std::vector<double>>());
    } catch (const ShapeError& e) {
      throw DataError(std::string("ecdf: ") + e.what());
    }
  }
  if (m.components.empty()) throw DataError("ecdf: no components");
  return m;
}

}  // namespace bsd
