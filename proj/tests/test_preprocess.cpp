#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "bsd/error.hpp"
#include "bsd/preprocess.hpp"

using namespace bsd;

namespace {

Eigen::VectorXd ar1(double phi, Eigen::Index T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(T);
  z(0) = n(rng);
  for (Eigen::Index t = 1; t < T; ++t) z(t) = phi * z(t - 1) + n(rng);
  return z;
}

double lag1_autocorr(const Eigen::VectorXd& x) {
  const Eigen::VectorXd c = x.array() - x.mean();
  return c.head(c.size() - 1).dot(c.tail(c.size() - 1)) / c.squaredNorm();
}

}  // namespace

TEST_CASE("fit_whitener recovers an AR(1) coefficient") {
  const Whitener w = fit_whitener(ar1(0.9, 10000, 1), 1);
  CHECK(w.coeffs(0) >= 0.87);
  CHECK(w.coeffs(0) <= 0.93);
}

TEST_CASE("fit_whitener on white noise gives near-zero coefficients") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(10000);
  for (auto& v : z) v = n(rng);
  const Whitener w = fit_whitener(z, 4);
  CHECK(w.coeffs.cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("a ramp is perfectly predictable") {
  const Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(200, 0.0, 199.0);
  const Eigen::VectorXd r = whiten(fit_whitener(ramp, 1), ramp);
  const Eigen::VectorXd centred = r.array() - r.mean();
  CHECK(centred.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("constant series fits without error") {
  const Whitener w = fit_whitener(Eigen::VectorXd::Constant(100, 3.0), 4);
  CHECK(w.scale == 1.0);
  CHECK(whiten(w, Eigen::VectorXd::Constant(100, 3.0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("whiten with zero coefficients returns the shifted input") {
  const Whitener w = Whitener::identity(3);
  const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(10, 1.0, 10.0);
  CHECK(whiten(w, z) == z.tail(7));
}

TEST_CASE("whitened AR(1) residuals are uncorrelated and centred") {
  const Eigen::VectorXd z = ar1(0.9, 20000, 3);
  const Whitener w = fit_whitener(z, 1);
  const Eigen::VectorXd r = whiten(w, z);
  CHECK(std::abs(lag1_autocorr(r)) < 0.05);
  const double stderr_mean = std::sqrt((r.array() - r.mean()).square().sum() / (r.size() - 1)) /
                             std::sqrt(static_cast<double>(r.size()));
  CHECK(std::abs(r.mean()) <= 3 * stderr_mean);
  CHECK(normalized_residuals(w, z).isApprox(r / w.scale));
}

TEST_CASE("whitener preconditions") {
  const Whitener w = Whitener::identity(4);
  CHECK_THROWS_AS(whiten(w, Eigen::VectorXd::Ones(4)), ShapeError);
  CHECK_THROWS(fit_whitener(Eigen::VectorXd::Ones(20), 4));
}

TEST_CASE("ecdf rank convention") {
  const EmpiricalCdf F = fit_ecdf({4.0, 1.0, 3.0, 2.0});
  CHECK(apply_ecdf(F, 2.0) == doctest::Approx(0.4));
  CHECK(apply_ecdf(F, -10.0) == doctest::Approx(0.2));
  CHECK(apply_ecdf(F, 10.0) == doctest::Approx(0.8));
  CHECK_THROWS(fit_ecdf({1.0}));
}

TEST_CASE("ecdf is monotone and strictly interior") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> ref(500);
  for (auto& v : ref) v = n(rng);
  const EmpiricalCdf F = fit_ecdf(ref);
  double prev = 0.0;
  for (double v = -5.0; v <= 5.0; v += 0.01) {
    const double u = F(v);
    CHECK(u >= prev);
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    prev = u;
  }
}

TEST_CASE("ecdf of a fresh draw is close to uniform") {
  std::mt19937_64 rng(5);
  std::gamma_distribution<double> g(2.0, 1.0);
  std::vector<double> ref(10000), fresh(10000);
  for (auto& v : ref) v = g(rng);
  for (auto& v : fresh) v = g(rng);
  const EmpiricalCdf F = fit_ecdf(ref);
  std::vector<double> u;
  for (double v : fresh) u.push_back(F(v));
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  const auto n = static_cast<double>(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    ks = std::max({ks, std::abs(u[i] - static_cast<double>(i) / n), std::abs(u[i] - static_cast<double>(i + 1) / n)});
  CHECK(ks < 0.03);
}

TEST_CASE("ecdf model per component and json round trip") {
  Eigen::MatrixXd outputs(2, 5);
  outputs << 1, 2, 3, 4, 5,  //
      50, 40, 30, 20, 10;
  const EcdfModel m = EcdfModel::fit(outputs);
  REQUIRE(m.dims() == 2);
  const Eigen::VectorXd u = m.apply(Eigen::Vector2d(3.0, 35.0));
  CHECK(u(0) == doctest::Approx(3.0 / 6.0));
  CHECK(u(1) == doctest::Approx(3.0 / 6.0));
  CHECK_THROWS_AS(m.apply(Eigen::Vector3d(1, 2, 3)), ShapeError);

  const EcdfModel back = ecdf_from_json(json::parse(ecdf_to_json(m).dump()));
  CHECK(back.components[1].sorted() == m.components[1].sorted());

  Whitener w = fit_whitener(ar1(0.5, 500, 9), 4);
  const Whitener wb = whitener_from_json(json::parse(whitener_to_json(w).dump()));
  CHECK(wb.coeffs == w.coeffs);
  CHECK(wb.intercept == w.intercept);
  CHECK(wb.scale == w.scale);
}
