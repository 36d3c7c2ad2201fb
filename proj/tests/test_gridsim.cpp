#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "bsd/error.hpp"
#include "bsd/gridsim.hpp"

using namespace bsd;

namespace {

GridModel two_sensor() {
  GridModel g;
  g.H = Eigen::MatrixXd::Ones(2, 1);
  g.sigma = Eigen::VectorXd::Ones(2);
  g.channels = default_channel_names(2);
  return g;
}

GridModel random_model(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nd(1, 6);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> s(0.1, 2.0);
  const int n = nd(rng);
  const int m = n + nd(rng);
  GridModel model;
  model.H.resize(m, n);
  for (Eigen::Index i = 0; i < model.H.size(); ++i) model.H(i) = g(rng);
  model.sigma.resize(m);
  for (auto& v : model.sigma) v = s(rng);
  model.channels = default_channel_names(m);
  return model;
}

}  // namespace

TEST_CASE("wls hand cases") {
  const GridModel g = two_sensor();
  CHECK(wls(g, Eigen::Vector2d(1, 1))(0) == doctest::Approx(1.0));
  CHECK(wls(g, Eigen::Vector2d(1, 2))(0) == doctest::Approx(1.5));
  std::mt19937_64 rng(1);
  const GridModel r = random_model(rng);
  const Eigen::VectorXd x0 = Eigen::VectorXd::Random(r.states());
  CHECK(wls(r, r.H * x0).isApprox(x0, 1e-10));
}

TEST_CASE("wls is linear") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const GridModel g = random_model(rng);
    const Eigen::VectorXd z = Eigen::VectorXd::Random(g.measurements());
    const Eigen::VectorXd d = Eigen::VectorXd::Random(g.measurements());
    CHECK((wls(g, z + d) - wls(g, z) - wls(g, d)).norm() < 1e-10);
  }
}

TEST_CASE("grid validation") {
  GridModel g = two_sensor();
  g.sigma(1) = 0.0;
  CHECK_THROWS_AS(g.validate(), DataError);
  GridModel rank_def;
  rank_def.H = Eigen::MatrixXd::Ones(3, 2);
  rank_def.sigma = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(rank_def.validate(), DataError);
  GridModel wide;
  wide.H = Eigen::MatrixXd::Identity(2, 3);
  wide.sigma = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(wide.validate(), DataError);
}

TEST_CASE("noiseless constant state reproduces H s") {
  GridModel g = synthetic_grid(5, 2, 1e-300, 3);
  g.sigma.setConstant(1e-300);
  StateDynamics dyn;
  dyn.frozen = true;
  dyn.innovation = 0.0;
  dyn.mean = Eigen::VectorXd::LinSpaced(g.states(), 0.1, 0.4);
  const MeasurementSeries s = simulate(g, 50, dyn, 4);
  for (Eigen::Index t = 0; t < 50; ++t)
    CHECK((s.values.row(t).transpose() - g.H * dyn.mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("simulated channels are strongly autocorrelated and deterministic") {
  const GridModel g = synthetic_grid(4, 1, 0.01, 5);
  const StateDynamics dyn;
  const MeasurementSeries s = simulate(g, 20000, dyn, 6);
  for (Eigen::Index c = 0; c < s.num_channels(); ++c) {
    const Eigen::VectorXd x = s.values.col(c).array() - s.values.col(c).mean();
    CHECK(x.head(x.size() - 1).dot(x.tail(x.size() - 1)) / x.squaredNorm() > 0.9);
  }
  CHECK(simulate(g, 100, dyn, 6).values == simulate(g, 100, dyn, 6).values);
}

TEST_CASE("inject_bad") {
  const GridModel g = synthetic_grid(4, 1, 1.0, 7);
  StateDynamics dyn;
  const MeasurementSeries clean = simulate(g, 40000, dyn, 8);

  SUBCASE("degenerate mixture leaves the series unchanged") {
    Gmm zero{{{1.0, 0.0, 1e-300}}};
    const auto out = inject_bad(clean, {0, 2}, zero, 0, 100, 1);
    CHECK((out.values - clean.values).cwiseAbs().maxCoeff() < 1e-200);
  }
  SUBCASE("untouched channels and samples are bit-identical") {
    const auto out = inject_bad(clean, {1}, Gmm::symmetric(5, 1), 100, 50, 2);
    for (Eigen::Index c = 0; c < clean.num_channels(); ++c)
      if (c != 1) CHECK(out.values.col(c) == clean.values.col(c));
    CHECK(out.values.col(1).head(100) == clean.values.col(1).head(100));
    CHECK(out.values.col(1).tail(clean.length() - 150) == clean.values.col(1).tail(clean.length() - 150));
  }
  SUBCASE("mixture moments") {
    const auto out = inject_bad(clean, {0}, Gmm::symmetric(5, 1), 0, 40000, 3);
    const Eigen::VectorXd added = out.values.col(0) - clean.values.col(0);
    const double mean = added.mean();
    const double var = (added.array() - mean).square().sum() / (added.size() - 1);
    CHECK(std::abs(mean) < 0.1);
    CHECK(var == doctest::Approx(26.0).epsilon(0.03));
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS(inject_bad(clean, {}, Gmm::symmetric(5, 1), 0, 10, 1));
    CHECK_THROWS(inject_bad(clean, {0, 0}, Gmm::symmetric(5, 1), 0, 10, 1));
    CHECK_THROWS(inject_bad(clean, {99}, Gmm::symmetric(5, 1), 0, 10, 1));
    CHECK_THROWS(inject_bad(clean, {0}, Gmm::symmetric(5, 1), 39995, 10, 1));
    CHECK_THROWS(Gmm({{{0.5, 0, 1}}}).validate());
  }
}

TEST_CASE("unobservable attack invariants") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const GridModel g = random_model(rng);
    const MeasurementSeries clean = simulate(g, 30, StateDynamics{}, t);
    AttackPlan plan{Eigen::VectorXd::Random(g.states()), Gmm::symmetric(5, 1)};
    const auto attacked = unobservable_attack(g, plan, clean, {5, 20}, t + 1);
    const WlsEstimator est(g);
    for (Eigen::Index k = 0; k < 30; ++k) {
      const Eigen::VectorXd z = clean.values.row(k).transpose();
      const Eigen::VectorXd za = attacked.values.row(k).transpose();
      const double j0 = jx(g, z, wls(g, z));
      const double j1 = jx(g, za, wls(g, za));
      CHECK(std::abs(j1 - j0) / std::max(j0, 1.0) <= 1e-9);
      const Eigen::VectorXd shift = est.estimate(za) - est.estimate(z);
      if (k < 5 || k >= 25) {
        CHECK(za == z);
      } else {
        // shift is w_t * delta for some scalar w_t
        const double w = shift.dot(plan.delta) / plan.delta.squaredNorm();
        CHECK((shift - w * plan.delta).norm() <= 1e-9 * std::max(1.0, std::abs(w) * plan.delta.norm()));
        CHECK((za - z - w * (g.H * plan.delta)).norm() <= 1e-9 * std::max(1.0, (za - z).norm()));
      }
    }
  }
  const GridModel g = two_sensor();
  const MeasurementSeries s = simulate(g, 10, StateDynamics{}, 1);
  CHECK_THROWS(unobservable_attack(g, {Eigen::VectorXd::Zero(1), Gmm::symmetric(5, 1)}, s, {0, 5}, 1));
  const auto none = unobservable_attack(g, {Eigen::VectorXd::Ones(1), Gmm{{{1.0, 0.0, 1e-300}}}}, s, {0, 10}, 1);
  CHECK((none.values - s.values).cwiseAbs().maxCoeff() < 1e-200);
}

TEST_CASE("jx detector") {
  const GridModel g = synthetic_grid(6, 3, 0.02, 10);
  StateDynamics dyn;
  dyn.frozen = true;
  dyn.innovation = 0.0;

  SUBCASE("noiseless consistent block") {
    GridModel quiet = g;
    quiet.sigma.setConstant(1e-300);
    const MeasurementSeries s = simulate(quiet, 10, dyn, 1);
    const JxResult r = jx_detect(g, s.values, 0.05);
    CHECK(r.statistic == doctest::Approx(0.0));
    CHECK_FALSE(r.anomaly);
    CHECK(r.removed.empty());
  }
  SUBCASE("a large offset channel is removed first") {
    MeasurementSeries s = simulate(g, 10, dyn, 2);
    s.values.col(3).array() += 100 * g.sigma(3);
    const JxResult r = jx_detect(g, s.values, 0.05);
    CHECK(r.anomaly);
    REQUIRE_FALSE(r.removed.empty());
    CHECK(r.removed.front() == 3);
  }
  SUBCASE("block J has mean equal to its degrees of freedom under H0") {
    const int L = 5;
    const auto df = static_cast<double>((g.measurements() - g.states()) * L);
    double total = 0.0;
    const int trials = 10000;
    const MeasurementSeries s = simulate(g, trials * L, StateDynamics{}, 3);
    for (int t = 0; t < trials; ++t) total += block_j(g, s.values.middleRows(t * L, L));
    CHECK(total / trials == doctest::Approx(df).epsilon(0.03));
  }
  SUBCASE("unobservable attacks are detected at chance") {
    std::mt19937_64 rng(4);
    int hits = 0;
    const int trials = 1000;
    const MeasurementSeries s = simulate(g, trials * 10, StateDynamics{}, 5);
    for (int t = 0; t < trials; ++t) {
      AttackPlan plan{Eigen::VectorXd::Random(g.states()), Gmm::symmetric(5, 1)};
      MeasurementSeries block;
      block.values = s.values.middleRows(t * 10, 10);
      block.channels = s.channels;
      const auto attacked = unobservable_attack(g, plan, block, {0, 10}, t);
      hits += jx_detect(g, attacked.values, 0.05).anomaly;
    }
    CHECK(std::abs(hits / double(trials) - 0.05) <= 0.05);
  }
}

TEST_CASE("synthetic grids and json") {
  const GridModel g = synthetic_grid(30, 11, 0.01, 11);
  CHECK(g.states() == 29);
  CHECK(g.measurements() == 41 + 30);
  CHECK_NOTHROW(g.validate());
  const GridModel back = grid_from_json(json::parse(grid_to_json(g).dump()));
  CHECK(back.H == g.H);
  CHECK(back.sigma == g.sigma);
  CHECK(back.channels == g.channels);
  CHECK(observable(g, [&] {
    std::vector<int> all(static_cast<std::size_t>(g.measurements()));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }()));
  CHECK_FALSE(observable(g, {0}));

  const Gmm mix = Gmm::symmetric(5, 2);
  const Gmm mb = gmm_from_json(gmm_to_json(mix));
  CHECK(mb.components.size() == 2);
  CHECK(mb.components[0].mean == mix.components[0].mean);
}

TEST_CASE("shipped fixtures") {
  const GridModel bus30 = load_grid(std::string(BSD_SOURCE_DIR) + "/fixtures/bus30.json");
  const GridModel regen = synthetic_grid(30, 11, 0.01, 30);
  CHECK(bus30.H == regen.H);
  CHECK(bus30.sigma == regen.sigma);
  CHECK(bus30.channels == regen.channels);
  const GridModel bus4 = load_grid(std::string(BSD_SOURCE_DIR) + "/fixtures/bus4.json");
  CHECK(bus4.measurements() == 10);
  CHECK(bus4.states() == 3);
  CHECK_NOTHROW(bus4.validate());
}
