#include "bsd/occupancy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "bsd/error.hpp"

namespace bsd {

using boost::multiprecision::cpp_int;

Eigen::VectorXd OccupancyProfile::features() const {
  Eigen::VectorXd f(static_cast<Eigen::Index>(coincidences.size()));
  for (std::size_t i = 0; i < coincidences.size(); ++i)
    f(static_cast<Eigen::Index>(i)) = coincidences[i];
  return f;
}

namespace {

int bin_of(double u, int bins) {
  const auto b = static_cast<int>(std::floor(u * bins));
  return std::min(b, bins - 1);
}

void check_dims(int samples, int bins) {
  if (samples < 1) throw ShapeError("N must be >= 1");
  if (bins < 2) throw ShapeError("K must be >= 2");
}

}  // namespace

OccupancyProfile stratify(std::span<const double> u, int bins, int max_order) {
  if (bins < 2) throw ShapeError("K must be >= 2");
  if (max_order < 1) throw ShapeError("max coincidence order must be >= 1");
  OccupancyProfile p;
  p.bins = bins;
  p.samples = static_cast<int>(u.size());
  p.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : u) {
    if (!(v > 0.0 && v < 1.0)) throw ShapeError("stratify: value outside (0,1): " + std::to_string(v));
    ++p.counts[static_cast<std::size_t>(bin_of(v, bins))];
  }
  p.coincidences.assign(static_cast<std::size_t>(max_order + 1), 0);
  for (int c : p.counts) {
    if (c <= max_order)
      ++p.coincidences[static_cast<std::size_t>(c)];
    else
      ++p.remainder;
  }
  return p;
}

std::vector<int> coincidence_counts(std::span<const double> u, int bins, int max_order) {
  std::vector<int> idx(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) idx[i] = bin_of(u[i], bins);
  std::sort(idx.begin(), idx.end());
  // Last slot holds the remainder (bins with more than max_order values).
  std::vector<int> k(static_cast<std::size_t>(max_order + 2), 0);
  int occupied = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    const auto run = static_cast<int>(j - i);
    ++occupied;
    if (run <= max_order)
      ++k[static_cast<std::size_t>(run)];
    else
      ++k.back();
    i = j;
  }
  k[0] = bins - occupied;
  return k;
}

namespace {

// T_j = C(K, j) * N!/(N-j)! * (K-j)^(N-j) for j = 0..min(N, K).
std::vector<cpp_int> vonmises_terms(int samples, int bins) {
  const int top = std::min(samples, bins);
  std::vector<cpp_int> terms;
  terms.reserve(static_cast<std::size_t>(top + 1));
  cpp_int binom = 1;    // C(K, j)
  cpp_int falling = 1;  // N!/(N-j)!
  for (int j = 0; j <= top; ++j) {
    if (j > 0) {
      binom = binom * (bins - j + 1) / j;
      falling *= (samples - j + 1);
    }
    // 0^0 = 1 covers j = K = N.
    cpp_int power = boost::multiprecision::pow(cpp_int(bins - j), static_cast<unsigned>(samples - j));
    terms.push_back(binom * falling * power);
  }
  return terms;
}

std::vector<BigRational> pmf_from_terms(int samples, int bins, const std::vector<cpp_int>& terms) {
  const int top = static_cast<int>(terms.size()) - 1;
  const cpp_int denom = boost::multiprecision::pow(cpp_int(bins), static_cast<unsigned>(samples));
  std::vector<BigRational> pmf;
  pmf.reserve(static_cast<std::size_t>(top + 1));
  for (int k = 0; k <= top; ++k) {
    cpp_int num = 0;
    cpp_int choose = 1;  // C(j, k), starting at j = k
    for (int j = k; j <= top; ++j) {
      if (j > k) choose = choose * j / (j - k);
      if ((j + k) % 2 == 0)
        num += choose * terms[static_cast<std::size_t>(j)];
      else
        num -= choose * terms[static_cast<std::size_t>(j)];
    }
    pmf.emplace_back(num, denom);
  }
  return pmf;
}

}  // namespace

std::vector<BigRational> k1_null_pmf_exact(int samples, int bins) {
  check_dims(samples, bins);
  return pmf_from_terms(samples, bins, vonmises_terms(samples, bins));
}

BigRational vonmises_pk_exact(int samples, int bins, int k) {
  check_dims(samples, bins);
  if (k < 0 || k > std::min(samples, bins))
    throw ShapeError("k must lie in [0, min(N, K)], got " + std::to_string(k));
  return k1_null_pmf_exact(samples, bins)[static_cast<std::size_t>(k)];
}

double vonmises_pk(int samples, int bins, int k) {
  return vonmises_pk_exact(samples, bins, k).convert_to<double>();
}

std::vector<double> k1_null_pmf(int samples, int bins) {
  const auto exact = k1_null_pmf_exact(samples, bins);
  std::vector<double> out;
  out.reserve(exact.size());
  for (const auto& p : exact) out.push_back(p.convert_to<double>());
  return out;
}

std::optional<int> k1_threshold(int samples, int bins, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ShapeError("alpha must lie in (0,1)");
  const auto pmf = k1_null_pmf_exact(samples, bins);
  const BigRational level(alpha);
  std::optional<int> best;
  BigRational cdf = 0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    cdf += pmf[k];
    if (cdf > level) break;
    if (pmf[k] > 0) best = static_cast<int>(k);
  }
  return best;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::k0: return "k0";
    case Variant::k1: return "k1";
    case Variant::vc: return "vc";
    case Variant::ocsvm: return "ocsvm";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "k0") return Variant::k0;
  if (s == "k1") return Variant::k1;
  if (s == "vc") return Variant::vc;
  if (s == "ocsvm") return Variant::ocsvm;
  throw ShapeError("unknown test variant: " + s);
}

Tail natural_tail(Variant v) {
  switch (v) {
    case Variant::k1:
    case Variant::ocsvm: return Tail::lower;
    case Variant::k0:
    case Variant::vc: return Tail::upper;
  }
  return Tail::lower;
}

void TestSpec::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ShapeError("alpha must lie in (0,1)");
  if (bins < 2) throw ShapeError("K must be >= 2");
  if (samples < 1) throw ShapeError("N must be >= 1");
  if (variant == Variant::vc && coeffs.empty()) throw ShapeError("vc test needs coefficients");
  if (variant == Variant::ocsvm && !combiner) throw ShapeError("ocsvm test needs a trained combiner");
}

double test_statistic(const OccupancyProfile& profile, const TestSpec& spec) {
  switch (spec.variant) {
    case Variant::k1: return profile.k(1);
    case Variant::k0: return profile.k(0);
    case Variant::vc: {
      if (spec.coeffs.empty()) throw ShapeError("vc test needs coefficients");
      if (static_cast<int>(spec.coeffs.size()) - 1 > profile.max_order())
        throw ShapeError("vc coefficients exceed the profile's coincidence order");
      double s = 0.0;
      for (std::size_t i = 0; i < spec.coeffs.size(); ++i)
        s += spec.coeffs[i] * profile.k(static_cast<int>(i));
      return s;
    }
    case Variant::ocsvm: {
      if (!spec.combiner) throw ShapeError("ocsvm test needs a trained combiner");
      const auto d = spec.combiner->dims();
      if (d - 1 > profile.max_order())
        throw ShapeError("combiner dimension exceeds the profile's coincidence order");
      return score(*spec.combiner, profile.features().head(d));
    }
  }
  return 0.0;
}

namespace {

Verdict decide(double score, const TestSpec& spec) {
  Verdict v;
  v.score = score;
  v.threshold = spec.threshold;
  if (spec.threshold)
    v.anomaly = spec.tail == Tail::lower ? score <= *spec.threshold : score >= *spec.threshold;
  return v;
}

void check_profile(const OccupancyProfile& profile, const TestSpec& spec, Variant expected) {
  if (spec.variant != expected)
    throw ShapeError("test spec variant " + to_string(spec.variant) + " used for " +
                     to_string(expected) + " test");
  if (profile.samples != spec.samples)
    throw ShapeError("profile has N=" + std::to_string(profile.samples) + ", spec expects N=" +
                     std::to_string(spec.samples));
  if (profile.bins != spec.bins)
    throw ShapeError("profile has K=" + std::to_string(profile.bins) + ", spec expects K=" +
                     std::to_string(spec.bins));
}

}  // namespace

Verdict k1_test(const OccupancyProfile& profile, const TestSpec& spec) {
  check_profile(profile, spec, Variant::k1);
  return decide(test_statistic(profile, spec), spec);
}

Verdict k0_test(const OccupancyProfile& profile, const TestSpec& spec) {
  check_profile(profile, spec, Variant::k0);
  return decide(test_statistic(profile, spec), spec);
}

Verdict vc_test(const OccupancyProfile& profile, const TestSpec& spec) {
  check_profile(profile, spec, Variant::vc);
  return decide(test_statistic(profile, spec), spec);
}

Verdict ocsvm_coincidence_test(const OccupancyProfile& profile, const TestSpec& spec) {
  check_profile(profile, spec, Variant::ocsvm);
  return decide(test_statistic(profile, spec), spec);
}

Verdict run_test(const OccupancyProfile& profile, const TestSpec& spec) {
  switch (spec.variant) {
    case Variant::k0: return k0_test(profile, spec);
    case Variant::k1: return k1_test(profile, spec);
    case Variant::vc: return vc_test(profile, spec);
    case Variant::ocsvm: return ocsvm_coincidence_test(profile, spec);
  }
  return {};
}

EmpiricalNull::EmpiricalNull(std::vector<double> samples) : sorted_(std::move(samples)) {
  if (sorted_.empty()) throw ShapeError("empirical null needs samples");
  std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalNull::cdf(double x) const {
  const auto n = std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin();
  return static_cast<double>(n) / static_cast<double>(sorted_.size());
}

double EmpiricalNull::upper_tail(double x) const {
  const auto n = sorted_.end() - std::lower_bound(sorted_.begin(), sorted_.end(), x);
  return static_cast<double>(n) / static_cast<double>(sorted_.size());
}

double EmpiricalNull::quantile(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) throw ShapeError("quantile level must lie in [0,1]");
  const auto n = static_cast<double>(sorted_.size());
  auto idx = static_cast<std::size_t>(std::ceil(p * n));
  idx = idx == 0 ? 0 : idx - 1;
  return sorted_[std::min(idx, sorted_.size() - 1)];
}

std::vector<double> EmpiricalNull::integer_pmf(int max_value) const {
  std::vector<double> pmf(static_cast<std::size_t>(max_value + 1), 0.0);
  for (double s : sorted_) {
    const auto k = static_cast<long>(std::lround(s));
    if (k >= 0 && k <= max_value) pmf[static_cast<std::size_t>(k)] += 1.0;
  }
  for (double& p : pmf) p /= static_cast<double>(sorted_.size());
  return pmf;
}

std::optional<double> EmpiricalNull::threshold(Tail tail, double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ShapeError("alpha must lie in (0,1)");
  const auto n = static_cast<double>(sorted_.size());
  std::optional<double> best;
  if (tail == Tail::lower) {
    for (std::size_t i = 0; i < sorted_.size();) {
      std::size_t j = i;
      while (j < sorted_.size() && sorted_[j] == sorted_[i]) ++j;
      if (static_cast<double>(j) / n > alpha) break;
      best = sorted_[i];
      i = j;
    }
  } else {
    for (std::size_t j = sorted_.size(); j > 0;) {
      std::size_t i = j - 1;
      while (i > 0 && sorted_[i - 1] == sorted_[j - 1]) --i;
      if (static_cast<double>(sorted_.size() - i) / n > alpha) break;
      best = sorted_[i];
      j = i;
    }
  }
  return best;
}

namespace {

OccupancyProfile light_profile(std::span<const double> u, int bins, int max_order) {
  auto k = coincidence_counts(u, bins, max_order);
  OccupancyProfile p;
  p.bins = bins;
  p.samples = static_cast<int>(u.size());
  p.remainder = k.back();
  k.pop_back();
  p.coincidences = std::move(k);
  return p;
}

double open_uniform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  return u;
}

}  // namespace

EmpiricalNull null_mc(int samples, int bins, const ProfileStatistic& statistic, std::int64_t trials,
                      std::uint64_t seed, int max_order) {
  check_dims(samples, bins);
  if (trials < 1000) throw ShapeError("null_mc needs at least 1000 trials");
  std::mt19937_64 rng(seed);
  std::vector<double> block(static_cast<std::size_t>(samples));
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(trials));
  for (std::int64_t t = 0; t < trials; ++t) {
    for (double& u : block) u = open_uniform(rng);
    stats.push_back(statistic(light_profile(block, bins, max_order)));
  }
  return EmpiricalNull(std::move(stats));
}

Eigen::MatrixXd null_features(int samples, int bins, int max_order, std::int64_t trials,
                              std::uint64_t seed) {
  check_dims(samples, bins);
  std::mt19937_64 rng(seed);
  std::vector<double> block(static_cast<std::size_t>(samples));
  Eigen::MatrixXd out(max_order + 1, trials);
  for (std::int64_t t = 0; t < trials; ++t) {
    for (double& u : block) u = open_uniform(rng);
    out.col(t) = light_profile(block, bins, max_order).features();
  }
  return out;
}

std::vector<double> fit_vc_coefficients(int samples, int bins, int max_order, std::uint64_t seed,
                                        std::int64_t trials_per_class) {
  check_dims(samples, bins);
  if (max_order < 1 || max_order > samples) throw ShapeError("need 1 <= r <= N");
  if (trials_per_class < 100) throw ShapeError("need at least 100 trials per class");

  std::mt19937_64 rng(seed);
  const Eigen::Index d = max_order + 1;
  Eigen::MatrixXd h0 = null_features(samples, bins, max_order, trials_per_class, rng());

  // Alternative: 30% of each block from an equal-weight Gaussian mixture
  // (means 0.3 and 0.7, sd 0.01) restricted to (0,1).
  Eigen::MatrixXd h1(d, trials_per_class);
  std::bernoulli_distribution contaminated(0.3);
  std::bernoulli_distribution which(0.5);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<double> block(static_cast<std::size_t>(samples));
  for (std::int64_t t = 0; t < trials_per_class; ++t) {
    for (double& u : block) {
      if (contaminated(rng)) {
        const double centre = which(rng) ? 0.7 : 0.3;
        do {
          u = centre + noise(rng);
        } while (!(u > 0.0 && u < 1.0));
      } else {
        u = open_uniform(rng);
      }
    }
    h1.col(t) = light_profile(block, bins, max_order).features();
  }

  const Eigen::VectorXd mu0 = h0.rowwise().mean();
  const Eigen::VectorXd mu1 = h1.rowwise().mean();
  const Eigen::MatrixXd c0 = h0.colwise() - mu0;
  const Eigen::MatrixXd c1 = h1.colwise() - mu1;
  const auto n = static_cast<double>(trials_per_class);
  Eigen::MatrixXd pooled = (c0 * c0.transpose() + c1 * c1.transpose()) / (2.0 * (n - 1.0));
  // High-order counts are rare, so their variances are tiny and noisy; shrink
  // toward a scaled identity to keep the direction stable across seeds.
  const double shrink = 0.1;
  const double scale = pooled.trace() / static_cast<double>(d);
  pooled *= 1.0 - shrink;
  pooled.diagonal().array() += shrink * scale + 1e-6;
  Eigen::VectorXd w = pooled.ldlt().solve(mu1 - mu0);
  if (!w.allFinite() || w.norm() == 0.0) throw NumericalError("Fisher discriminant is degenerate");
  w /= w.norm();
  return {w.data(), w.data() + w.size()};
}

TestSpec make_k1_spec(int samples, int bins, double alpha) {
  TestSpec spec;
  spec.variant = Variant::k1;
  spec.samples = samples;
  spec.bins = bins;
  spec.alpha = alpha;
  spec.tail = Tail::lower;
  if (auto t = k1_threshold(samples, bins, alpha)) spec.threshold = *t;
  return spec;
}

TestSpec calibrate_k0(int samples, int bins, double alpha, std::int64_t trials,
                      std::uint64_t seed) {
  TestSpec spec;
  spec.variant = Variant::k0;
  spec.samples = samples;
  spec.bins = bins;
  spec.alpha = alpha;
  spec.tail = Tail::upper;
  const auto null = null_mc(
      samples, bins, [](const OccupancyProfile& p) { return double(p.k(0)); }, trials, seed, 1);
  spec.threshold = null.threshold(Tail::upper, alpha);
  return spec;
}

TestSpec calibrate_vc(int samples, int bins, double alpha, std::vector<double> coeffs, Tail tail,
                      std::int64_t trials, std::uint64_t seed) {
  TestSpec spec;
  spec.variant = Variant::vc;
  spec.samples = samples;
  spec.bins = bins;
  spec.alpha = alpha;
  spec.tail = tail;
  spec.max_order = std::max(1, static_cast<int>(coeffs.size()) - 1);
  spec.coeffs = std::move(coeffs);
  spec.validate();
  const auto null = null_mc(
      samples, bins, [&spec](const OccupancyProfile& p) { return test_statistic(p, spec); },
      trials, seed, spec.max_order);
  spec.threshold = null.threshold(tail, alpha);
  return spec;
}

TestSpec calibrate_ocsvm(int samples, int bins, double alpha, OcSvmModel combiner, int max_order,
                         std::int64_t trials, std::uint64_t seed) {
  TestSpec spec;
  spec.variant = Variant::ocsvm;
  spec.samples = samples;
  spec.bins = bins;
  spec.alpha = alpha;
  spec.tail = Tail::lower;
  spec.max_order = max_order;
  spec.combiner = std::move(combiner);
  spec.validate();
  const auto null = null_mc(
      samples, bins, [&spec](const OccupancyProfile& p) { return test_statistic(p, spec); },
      trials, seed, max_order);
  spec.threshold = null.threshold(Tail::lower, alpha);
  return spec;
}

json test_spec_to_json(const TestSpec& spec) {
  json j{{"variant", to_string(spec.variant)},
         {"N", spec.samples},
         {"K", spec.bins},
         {"alpha", spec.alpha},
         {"r", spec.max_order},
         {"tail", spec.tail == Tail::lower ? "lower" : "upper"},
         {"threshold", spec.threshold ? json(*spec.threshold) : json(nullptr)}};
  if (!spec.coeffs.empty()) j["coeffs"] = spec.coeffs;
  if (spec.combiner) j["combiner"] = ocsvm_to_json(*spec.combiner);
  return j;
}

TestSpec test_spec_from_json(const json& j) {
  TestSpec spec;
  try {
    spec.variant = variant_from_string(j.at("variant").get<std::string>());
  } catch (const ShapeError& e) {
    throw DataError(e.what());
  }
  spec.samples = j.at("N").get<int>();
  spec.bins = j.at("K").get<int>();
  spec.alpha = j.at("alpha").get<double>();
  spec.max_order = j.value("r", kDefaultMaxOrder);
  const auto tail = j.value("tail", std::string());
  spec.tail = tail.empty() ? natural_tail(spec.variant)
                           : (tail == "lower" ? Tail::lower : Tail::upper);
  if (j.contains("threshold") && !j.at("threshold").is_null())
    spec.threshold = j.at("threshold").get<double>();
  if (j.contains("coeffs")) spec.coeffs = j.at("coeffs").get<std::vector<double>>();
  if (j.contains("combiner")) spec.combiner = ocsvm_from_json(j.at("combiner"));
  try {
    spec.validate();
  } catch (const ShapeError& e) {
    throw DataError(std::string("test spec: ") + e.what());
  }
  return spec;
}

}  // namespace bsd
