#include "bsd/ocsvm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "bsd/error.hpp"

namespace bsd {

double rbf(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
           double gamma) {
  if (x.size() != y.size())
    throw ShapeError("rbf: dimension mismatch " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  if (!(gamma > 0.0)) throw ShapeError("rbf: gamma must be positive");
  return std::exp(-gamma * (x - y).squaredNorm());
}

double default_gamma(const Eigen::Ref<const Eigen::MatrixXd>& windows) {
  // Mean per-dimension variance, so constant offsets between dimensions do
  // not inflate the kernel width.
  const Eigen::VectorXd mean = windows.rowwise().mean();
  const double var =
      (windows.colwise() - mean).array().square().sum() / static_cast<double>(windows.size());
  const double d = static_cast<double>(windows.rows());
  return var > 0.0 ? 1.0 / (d * var) : 1.0 / d;
}

namespace {

double decision_sum(const OcSvmModel& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < m.support.cols(); ++i)
    s += m.alpha(i) * std::exp(-m.gamma * (m.support.col(i) - x).squaredNorm());
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

OcSvmModel fit_ocsvm(const Eigen::Ref<const Eigen::MatrixXd>& all_windows, const OcSvmOptions& opts) {
  if (!(opts.nu > 0.0 && opts.nu <= 1.0)) throw ShapeError("nu must lie in (0, 1]");
  if (all_windows.cols() < 10)
    throw DataError("OC-SVM needs at least 10 training vectors, got " +
                    std::to_string(all_windows.cols()));
  if (!all_windows.allFinite()) throw DataError("OC-SVM training data contains non-finite values");

  Eigen::MatrixXd windows;
  if (all_windows.cols() > opts.max_train) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(all_windows.cols()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(opts.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(opts.max_train));
    std::sort(idx.begin(), idx.end());
    windows.resize(all_windows.rows(), opts.max_train);
    for (Eigen::Index c = 0; c < opts.max_train; ++c)
      windows.col(c) = all_windows.col(idx[static_cast<std::size_t>(c)]);
  } else {
    windows = all_windows;
  }

  const Eigen::Index n = windows.cols();
  const double gamma = opts.gamma.value_or(default_gamma(windows));
  if (!(gamma > 0.0)) throw ShapeError("gamma must be positive");

  // Kernel matrix.
  const Eigen::VectorXd sq = windows.colwise().squaredNorm().transpose();
  Eigen::MatrixXd Q = windows.transpose() * windows;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      Q(i, j) = std::exp(-gamma * std::max(0.0, sq(i) + sq(j) - 2.0 * Q(i, j)));
  Q.diagonal().setOnes();

  // Scaled dual: 0 <= a_i <= 1, sum a = nu * n, minimise a'Qa / 2.
  const double total = opts.nu * static_cast<double>(n);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  const auto whole = static_cast<Eigen::Index>(std::floor(total));
  for (Eigen::Index i = 0; i < std::min(whole, n); ++i) a(i) = 1.0;
  if (whole < n) a(whole) = total - static_cast<double>(whole);
  Eigen::VectorXd G = Q * a;

  constexpr double kTau = 1e-12;
  std::int64_t iter = 0;
  double gap = 0.0;
  for (; iter < opts.max_iterations; ++iter) {
    // Maximal-violating pair with second-order choice of the second index.
    Eigen::Index i = -1;
    double up_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t)
      if (a(t) < 1.0 && -G(t) >= up_max) {
        up_max = -G(t);
        i = t;
      }
    Eigen::Index j = -1;
    double low_min = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (a(t) <= 0.0) continue;
      low_min = std::min(low_min, -G(t));
      if (i < 0) continue;
      const double b = up_max + G(t);
      if (b > 0.0) {
        double curv = Q(i, i) + Q(t, t) - 2.0 * Q(i, t);
        if (curv <= 0.0) curv = kTau;
        const double obj = -(b * b) / curv;
        if (obj <= best) {
          best = obj;
          j = t;
        }
      }
    }
    gap = up_max - low_min;
    if (i < 0 || j < 0 || gap < opts.tolerance) break;

    double curv = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
    if (curv <= 0.0) curv = kTau;
    double delta = (G(j) - G(i)) / curv;
    delta = std::min({delta, 1.0 - a(i), a(j)});
    a(i) += delta;
    a(j) -= delta;
    G += delta * (Q.col(i) - Q.col(j));
  }
  if (iter >= opts.max_iterations)
    throw NumericalError("OC-SVM did not converge in " + std::to_string(opts.max_iterations) +
                         " iterations; KKT gap " + std::to_string(gap) + " > tolerance " +
                         std::to_string(opts.tolerance));

  OcSvmModel model;
  model.gamma = gamma;
  model.nu = opts.nu;
  std::vector<Eigen::Index> sv;
  for (Eigen::Index t = 0; t < n; ++t)
    if (a(t) > 0.0) sv.push_back(t);
  model.support.resize(windows.rows(), static_cast<Eigen::Index>(sv.size()));
  model.alpha.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    model.support.col(static_cast<Eigen::Index>(k)) = windows.col(sv[k]);
    model.alpha(static_cast<Eigen::Index>(k)) = a(sv[k]) / total;
  }

  // Offset from the decision sums of free vectors (median), falling back to
  // the midpoint of the bound-vector range when none is free.
  std::vector<double> free_sums;
  double lb = -std::numeric_limits<double>::infinity();
  double ub = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    const double s = decision_sum(model, windows.col(t));
    if (a(t) > 0.0 && a(t) < 1.0)
      free_sums.push_back(s);
    else if (a(t) >= 1.0)
      lb = std::max(lb, s);
    else
      ub = std::min(ub, s);
  }
  if (!free_sums.empty())
    model.rho = median(std::move(free_sums));
  else if (std::isfinite(lb) && std::isfinite(ub))
    model.rho = 0.5 * (lb + ub);
  else
    model.rho = std::isfinite(lb) ? lb : ub;
  return model;
}

double score(const OcSvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.dims())
    throw ShapeError("OC-SVM input has " + std::to_string(x.size()) + " dims, model expects " +
                     std::to_string(model.dims()));
  return decision_sum(model, x) - model.rho;
}

Eigen::VectorXd score_all(const OcSvmModel& model, const Eigen::Ref<const Eigen::MatrixXd>& xs) {
  Eigen::VectorXd out(xs.cols());
  for (Eigen::Index c = 0; c < xs.cols(); ++c) out(c) = score(model, xs.col(c));
  return out;
}

json ocsvm_to_json(const OcSvmModel& m) {
  return json{{"sv", matrix_to_json(m.support.transpose())},
              {"alpha", vector_to_json(m.alpha)},
              {"rho", m.rho},
              {"gamma", m.gamma},
              {"nu", m.nu}};
}

OcSvmModel ocsvm_from_json(const json& j) {
  OcSvmModel m;
  m.support = matrix_from_json(j.at("sv")).transpose();
  m.alpha = vector_from_json(j.at("alpha"));
  m.rho = j.at("rho").get<double>();
  m.gamma = j.at("gamma").get<double>();
  m.nu = j.at("nu").get<double>();
  if (m.alpha.size() != m.support.cols()) throw DataError("OC-SVM: alpha/sv count mismatch");
  return m;
}

}  // namespace bsd
