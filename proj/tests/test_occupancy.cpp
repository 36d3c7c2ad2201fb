#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "bsd/error.hpp"
#include "bsd/occupancy.hpp"
#include "test_util.hpp"

using namespace bsd;

namespace {

std::vector<double> uniform_block(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) {
    do v = u(rng);
    while (v == 0.0);
  }
  return out;
}

double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i)
    d += std::abs((i < a.size() ? a[i] : 0.0) - (i < b.size() ? b[i] : 0.0));
  return d / 2;
}

}  // namespace

TEST_CASE("stratify hand case") {
  const std::vector<double> u{0.1, 0.6, 0.65};
  const auto p = stratify(u, 2);
  CHECK(p.counts == std::vector<int>{1, 2});
  CHECK(p.k(0) == 0);
  CHECK(p.k(1) == 1);
  CHECK(p.k(2) == 1);
}

TEST_CASE("stratify degenerate block") {
  const std::vector<double> u(7, 0.333);
  const auto p = stratify(u, 10);
  CHECK(p.k(1) == 0);
  CHECK(p.k(0) == 9);
  CHECK(p.k(7) == 1);
}

TEST_CASE("stratify rejects values outside the open unit interval") {
  CHECK_THROWS_AS(stratify(std::vector<double>{0.5, 1.0}, 4), ShapeError);
  CHECK_THROWS_AS(stratify(std::vector<double>{0.0}, 4), ShapeError);
  CHECK_THROWS_AS(stratify(std::vector<double>{0.5}, 1), ShapeError);
}

TEST_CASE("occupancy identities on random blocks") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> nd(1, 60), kd(2, 300), rd(1, 20);
  for (int trial = 0; trial < 20000; ++trial) {
    const int N = nd(rng), K = kd(rng), r = rd(rng);
    const auto u = uniform_block(N, rng);
    const auto p = stratify(u, K, r);
    int sum_counts = 0, sum_k = p.remainder, weighted = 0, max_count = 0;
    for (int c : p.counts) {
      sum_counts += c;
      max_count = std::max(max_count, c);
    }
    for (int i = 0; i <= p.max_order(); ++i) {
      sum_k += p.k(i);
      weighted += i * p.k(i);
    }
    CHECK(sum_counts == N);
    CHECK(sum_k == K);
    if (r >= max_count) CHECK(weighted == N);

    auto fast = coincidence_counts(u, K, r);
    CHECK(fast.back() == p.remainder);
    fast.pop_back();
    CHECK(fast == p.coincidences);
  }
}

TEST_CASE("mean K1 for N=50, K=2500") {
  std::mt19937_64 rng(2);
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) total += stratify(uniform_block(50, rng), 2500).k(1);
  // E[K1] = N (1 - 1/K)^(N-1)
  const double expected = 50 * std::pow(1.0 - 1.0 / 2500, 49);
  CHECK(expected == doctest::Approx(49.02).epsilon(1e-3));
  CHECK(std::abs(total / trials - expected) < 0.1);
}

TEST_CASE("exact K1 pmf small cases") {
  CHECK(vonmises_pk_exact(2, 2, 0) == BigRational(1, 2));
  CHECK(vonmises_pk_exact(2, 2, 1) == 0);
  CHECK(vonmises_pk_exact(2, 2, 2) == BigRational(1, 2));
  for (int K = 2; K < 50; ++K) {
    CHECK(vonmises_pk_exact(1, K, 1) == 1);
    CHECK(vonmises_pk_exact(1, K, 0) == 0);
  }
  CHECK_THROWS_AS(vonmises_pk_exact(3, 4, 4), ShapeError);
  CHECK_THROWS_AS(vonmises_pk_exact(0, 4, 0), ShapeError);
}

TEST_CASE("exact K1 pmf agrees with brute-force enumeration") {
  for (int N = 1; N <= 14; ++N) {
    for (int K = 2;; ++K) {
      const double space = std::pow(static_cast<double>(K), N);
      if (space > 2e4) break;
      const auto counts = bsd::testing::k1_counts_brute(N, K);
      const auto pmf = k1_null_pmf_exact(N, K);
      const boost::multiprecision::cpp_int denom = boost::multiprecision::pow(boost::multiprecision::cpp_int(K), static_cast<unsigned>(N));
      for (int k = 0; k <= N; ++k) {
        const BigRational brute(boost::multiprecision::cpp_int(counts[static_cast<std::size_t>(k)]), denom);
        const BigRational exact = k < static_cast<int>(pmf.size()) ? pmf[static_cast<std::size_t>(k)] : 0;
        CHECK_MESSAGE(exact == brute, "N=" << N << " K=" << K << " k=" << k);
      }
    }
  }
}

TEST_CASE("exact K1 pmf normalises and its cdf reaches one") {
  for (auto [N, K] : std::vector<std::pair<int, int>>{{5, 10}, {10, 7}, {50, 2500}}) {
    const auto pmf = k1_null_pmf_exact(N, K);
    BigRational total = 0;
    for (const auto& p : pmf) {
      CHECK(p >= 0);
      total += p;
    }
    CHECK(total == 1);
    double dsum = 0.0;
    for (double p : k1_null_pmf(N, K)) dsum += p;
    CHECK(std::abs(dsum - 1.0) < 1e-12);
    CHECK(static_cast<int>(pmf.size()) == std::min(N, K) + 1);
  }
}

TEST_CASE("K1 thresholds") {
  CHECK_FALSE(k1_threshold(2, 2, 0.05).has_value());
  REQUIRE(k1_threshold(2, 2, 0.6).has_value());
  CHECK(*k1_threshold(2, 2, 0.6) == 0);

  std::optional<int> prev;
  for (double a = 0.01; a < 0.99; a += 0.01) {
    const auto t = k1_threshold(50, 2500, a);
    if (prev) {
      REQUIRE(t.has_value());
      CHECK(*t >= *prev);
    }
    prev = t;
  }

  // Exact size of the test never exceeds alpha.
  const auto pmf = k1_null_pmf_exact(50, 2500);
  for (double a : {0.01, 0.05, 0.1}) {
    const auto t = k1_threshold(50, 2500, a);
    REQUIRE(t.has_value());
    BigRational size = 0;
    for (int k = 0; k <= *t; ++k) size += pmf[static_cast<std::size_t>(k)];
    CHECK(size <= BigRational(a));
    CHECK(size + pmf[static_cast<std::size_t>(*t + 1)] > BigRational(a));
  }
}

TEST_CASE("k1 and k0 test verdicts") {
  const TestSpec k1 = make_k1_spec(5, 100, 0.05);
  REQUIRE(k1.threshold.has_value());
  std::vector<double> spread{0.005, 0.205, 0.405, 0.605, 0.805};
  CHECK_FALSE(k1_test(stratify(spread, 100), k1).anomaly);
  const std::vector<double> clumped(5, 0.5);
  CHECK(k1_test(stratify(clumped, 100), k1).anomaly);
  CHECK(k1_test(stratify(clumped, 100), k1).label() == std::string("anomaly"));

  TestSpec k0 = calibrate_k0(5, 100, 0.05, 20000, 3);
  REQUIRE(k0.threshold.has_value());
  CHECK(k0_test(stratify(clumped, 100), k0).anomaly);

  // N >= K with every bin occupied gives K0 = 0.
  TestSpec k0small = calibrate_k0(8, 4, 0.05, 20000, 3);
  std::vector<double> all_bins{0.1, 0.1, 0.3, 0.3, 0.6, 0.6, 0.9, 0.9};
  CHECK_FALSE(k0_test(stratify(all_bins, 4), k0small).anomaly);

  CHECK_THROWS_AS(k0_test(stratify(clumped, 100), k1), ShapeError);
  CHECK_THROWS_AS(k1_test(stratify(clumped, 50), k1), ShapeError);
}

TEST_CASE("vc with basis coefficients reproduces K0 and K1") {
  std::mt19937_64 rng(4);
  std::vector<double> e0(16, 0.0), e1(16, 0.0);
  e0[0] = 1.0;
  e1[1] = 1.0;
  TestSpec vc0;
  vc0.variant = Variant::vc;
  vc0.samples = 20;
  vc0.bins = 50;
  vc0.coeffs = e0;
  TestSpec vc1 = vc0;
  vc1.coeffs = e1;
  TestSpec k0 = vc0;
  k0.variant = Variant::k0;
  k0.coeffs.clear();
  TestSpec k1 = make_k1_spec(20, 50, 0.05);
  vc1.tail = Tail::lower;
  vc1.threshold = k1.threshold;
  vc0.tail = Tail::upper;
  vc0.threshold = 44.0;
  k0.tail = Tail::upper;
  k0.threshold = 44.0;
  for (int t = 0; t < 2000; ++t) {
    const auto p = stratify(uniform_block(20, rng), 50);
    CHECK(vc_test(p, vc0).score == k0_test(p, k0).score);
    CHECK(vc_test(p, vc0).anomaly == k0_test(p, k0).anomaly);
    CHECK(vc_test(p, vc1).anomaly == k1_test(p, k1).anomaly);
  }
}

TEST_CASE("vc coefficients: determinism, orientation, scale freedom") {
  const auto c = fit_vc_coefficients(20, 400, 15, 7, 4000);
  CHECK(c == fit_vc_coefficients(20, 400, 15, 7, 4000));
  CHECK(c.size() == 16);

  const auto c1 = fit_vc_coefficients(20, 400, 1, 7, 4000);
  REQUIRE(c1.size() == 2);
  CHECK(c1[1] <= 0.0);
  CHECK(c1[0] >= c1[1]);

  std::vector<double> doubled = c;
  for (double& v : doubled) v *= 2;
  const TestSpec a = calibrate_vc(20, 400, 0.05, c, Tail::upper, 5000, 9);
  const TestSpec b = calibrate_vc(20, 400, 0.05, doubled, Tail::upper, 5000, 9);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    auto block = uniform_block(20, rng);
    if (t % 2) std::fill(block.begin(), block.begin() + 8, 0.5);
    const auto p = stratify(block, 400);
    CHECK(vc_test(p, a).anomaly == vc_test(p, b).anomaly);
  }
}

TEST_CASE("vc coefficients are stable across seeds and score pile-ups as anomalous") {
  std::vector<Eigen::VectorXd> fits;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto c = fit_vc_coefficients(50, 2500, 15, seed, 20000);
    fits.emplace_back(Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())));
  }
  for (std::size_t i = 1; i < fits.size(); ++i) CHECK(fits[0].dot(fits[i]) > 0.95);

  // Twenty singletons collapsing into one overflowing bin must raise the score.
  for (const auto& c : fits) CHECK(19 * c(0) - 20 * c(1) > 0.0);
}

TEST_CASE("calibrated upper-tail tests control size on held-out uniform blocks") {
  const int N = 20, K = 400, trials = 20000;
  const auto coeffs = fit_vc_coefficients(N, K, 15, 11, 5000);
  const TestSpec k0 = calibrate_k0(N, K, 0.05, trials, 12);
  const TestSpec vc = calibrate_vc(N, K, 0.05, coeffs, Tail::upper, trials, 13);
  std::mt19937_64 rng(99);
  int k0_rej = 0, vc_rej = 0;
  const int held = 10000;
  for (int t = 0; t < held; ++t) {
    const auto p = stratify(uniform_block(N, rng), K);
    k0_rej += k0_test(p, k0).anomaly;
    vc_rej += vc_test(p, vc).anomaly;
  }
  const double limit = 0.05 + 3 * std::sqrt(0.05 * 0.95 / held);
  CHECK(k0_rej / double(held) <= limit);
  CHECK(vc_rej / double(held) <= limit);
}

TEST_CASE("ocsvm combiner over coincidence vectors") {
  const int N = 20, K = 400;
  OcSvmOptions opts;
  opts.nu = 0.1;
  opts.seed = 1;
  SUBCASE("memorised vector scores inside") {
    std::mt19937_64 rng(3);
    const auto p = stratify(uniform_block(N, rng), K);
    Eigen::MatrixXd same = p.features().replicate(1, 20);
    const OcSvmModel m = fit_ocsvm(same, opts);
    TestSpec spec;
    spec.variant = Variant::ocsvm;
    spec.samples = N;
    spec.bins = K;
    spec.tail = Tail::lower;
    spec.threshold = -1e-9;
    spec.combiner = m;
    CHECK_FALSE(ocsvm_coincidence_test(p, spec).anomaly);
  }
  SUBCASE("all-coincident block scores below the null median and calibration holds") {
    const OcSvmModel m = fit_ocsvm(null_features(N, K, 15, 1000, 5), opts);
    const TestSpec spec = calibrate_ocsvm(N, K, 0.05, m, 15, 10000, 6);
    std::vector<double> clumped(N, 0.5);
    const double s = test_statistic(stratify(clumped, K), spec);
    const auto null = null_mc(N, K, [&](const OccupancyProfile& p) { return test_statistic(p, spec); }, 5000, 7);
    CHECK(s < null.quantile(0.5));
    CHECK(ocsvm_coincidence_test(stratify(clumped, K), spec).anomaly);

    std::mt19937_64 rng(8);
    int rej = 0;
    for (int t = 0; t < 5000; ++t) rej += ocsvm_coincidence_test(stratify(uniform_block(N, rng), K), spec).anomaly;
    CHECK(rej / 5000.0 <= 0.05 + 3 * std::sqrt(0.05 * 0.95 / 5000));
  }
}

TEST_CASE("null_mc cross-checks") {
  SUBCASE("K1 against the exact pmf, N=10, K=20") {
    const auto null = null_mc(10, 20, [](const OccupancyProfile& p) { return double(p.k(1)); }, 100000, 1);
    CHECK(tv_distance(null.integer_pmf(10), k1_null_pmf(10, 20)) < 0.02);
  }
  SUBCASE("K0 for N=2, K=2") {
    const auto null = null_mc(2, 2, [](const OccupancyProfile& p) { return double(p.k(0)); }, 20000, 2);
    const auto pmf = null.integer_pmf(2);
    CHECK(std::abs(pmf[0] - 0.5) < 0.02);
    CHECK(std::abs(pmf[1] - 0.5) < 0.02);
  }
  SUBCASE("quantiles are monotone") {
    const auto null = null_mc(30, 900, [](const OccupancyProfile& p) { return double(p.k(1)); }, 5000, 3);
    double prev = -1;
    for (double q = 0.0; q <= 1.0; q += 0.01) {
      CHECK(null.quantile(q) >= prev);
      prev = null.quantile(q);
    }
  }
  SUBCASE("too few trials rejected") {
    CHECK_THROWS_AS(null_mc(2, 2, [](const OccupancyProfile& p) { return double(p.k(0)); }, 10, 2), ShapeError);
  }
  SUBCASE("same seed, same null") {
    auto stat = [](const OccupancyProfile& p) { return double(p.k(1)); };
    CHECK(null_mc(10, 20, stat, 2000, 4).sorted() == null_mc(10, 20, stat, 2000, 4).sorted());
  }
}

TEST_CASE("empirical null thresholds") {
  const EmpiricalNull null({1, 2, 2, 3, 3, 3, 4, 4, 4, 4});
  CHECK(null.cdf(2) == doctest::Approx(0.3));
  CHECK(null.upper_tail(4) == doctest::Approx(0.4));
  CHECK(*null.threshold(Tail::lower, 0.1) == 1);
  CHECK_FALSE(null.threshold(Tail::lower, 0.05).has_value());
  CHECK(*null.threshold(Tail::upper, 0.4) == 4);
  CHECK_FALSE(null.threshold(Tail::upper, 0.3).has_value());
}

TEST_CASE("test spec json round trip") {
  TestSpec spec = calibrate_vc(10, 100, 0.05, std::vector<double>(16, 0.25), Tail::upper, 2000, 1);
  const TestSpec back = test_spec_from_json(json::parse(test_spec_to_json(spec).dump()));
  CHECK(back.variant == spec.variant);
  CHECK(back.threshold == spec.threshold);
  CHECK(back.coeffs == spec.coeffs);
  CHECK(back.tail == spec.tail);

  TestSpec never = make_k1_spec(2, 2, 0.05);
  CHECK_FALSE(test_spec_from_json(test_spec_to_json(never)).threshold.has_value());
}
