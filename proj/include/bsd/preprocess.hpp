#pragma once

#include <Eigen/Core>
#include <vector>

#include "bsd/json_io.hpp"

namespace bsd {

// One-step linear least-squares predictor
//   zhat_t = intercept + sum_i coeffs(i-1) * z_{t-i},  i = 1..order
// fitted on anomaly-free data. `scale` is the residual standard deviation on
// the fitting data; the generator consumes residuals divided by it.
struct Whitener {
  int order = 4;
  Eigen::VectorXd coeffs;
  double intercept = 0.0;
  double scale = 1.0;

  static Whitener identity(int order);
};

Whitener fit_whitener(const Eigen::Ref<const Eigen::VectorXd>& series, int order = 4);

// residual_t = z_t - zhat_t for t = order..T-1 (length T - order).
Eigen::VectorXd whiten(const Whitener& w, const Eigen::Ref<const Eigen::VectorXd>& series);

// whiten() divided by w.scale.
Eigen::VectorXd normalized_residuals(const Whitener& w,
                                     const Eigen::Ref<const Eigen::VectorXd>& series);

// Empirical CDF over a sorted reference sample of size n >= 2, reported as
// rank / (n + 1) and clamped to [1/(n+1), n/(n+1)] so values are interior.
class EmpiricalCdf {
 public:
  EmpiricalCdf() = default;
  explicit EmpiricalCdf(std::vector<double> samples);

  double operator()(double v) const;
  const std::vector<double>& sorted() const { return sorted_; }
  std::size_t size() const { return sorted_.size(); }

 private:
  std::vector<double> sorted_;
};

EmpiricalCdf fit_ecdf(std::vector<double> samples);
double apply_ecdf(const EmpiricalCdf& m, double v);

// One EmpiricalCdf per generator output component.
struct EcdfModel {
  std::vector<EmpiricalCdf> components;

  // outputs: N x n, one column per anomaly-free generator output.
  static EcdfModel fit(const Eigen::Ref<const Eigen::MatrixXd>& outputs);
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  Eigen::Index dims() const { return static_cast<Eigen::Index>(components.size()); }
};

// whitener.json {"order", "coeffs", "intercept", "scale"}; ecdf.json {"sorted": [[...], ...]}
json whitener_to_json(const Whitener& w);
Whitener whitener_from_json(const json& j);
json ecdf_to_json(const EcdfModel& m);
EcdfModel ecdf_from_json(const json& j);

}  // namespace bsd
