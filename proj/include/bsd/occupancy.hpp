#pragma once

// Occupancy (coincidence) uniformity tests on values in (0, 1).
//
// A block of N values is quantised into K equal bins. K_i is the number of
// bins holding exactly i values. Under the uniform null K_1 is large and K_0
// small; the tests below reject on the corresponding tails.

#include <Eigen/Core>
#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsd/json_io.hpp"
#include "bsd/ocsvm.hpp"

namespace bsd {

using BigRational = boost::multiprecision::cpp_rational;

inline constexpr int kDefaultMaxOrder = 15;

struct OccupancyProfile {
  int bins = 0;
  int samples = 0;
  std::vector<int> counts;        // per bin
  std::vector<int> coincidences;  // K_0..K_r
  int remainder = 0;              // bins holding more than r values

  int max_order() const { return static_cast<int>(coincidences.size()) - 1; }
  int k(int i) const {
    return i >= 0 && i < static_cast<int>(coincidences.size()) ? coincidences[i] : 0;
  }
  // (K_0, ..., K_r) as reals.
  Eigen::VectorXd features() const;
};

OccupancyProfile stratify(std::span<const double> u, int bins, int max_order = kDefaultMaxOrder);

// Coincidence counts only, without materialising per-bin counts. Used by the
// Monte Carlo paths where K is large and N small.
std::vector<int> coincidence_counts(std::span<const double> u, int bins, int max_order);

// Pr(K_1 = k) under N i.i.d. uniform draws into K bins, exact.
BigRational vonmises_pk_exact(int samples, int bins, int k);
std::vector<BigRational> k1_null_pmf_exact(int samples, int bins);
double vonmises_pk(int samples, int bins, int k);
std::vector<double> k1_null_pmf(int samples, int bins);

// Largest attainable k with Pr(K_1 <= k; H0) <= alpha. nullopt means no
// attainable value qualifies and the test never rejects.
std::optional<int> k1_threshold(int samples, int bins, double alpha);

enum class Variant { k0, k1, vc, ocsvm };
enum class Tail { lower, upper };  // side of the threshold that is anomalous

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
Tail natural_tail(Variant v);

struct TestSpec {
  Variant variant = Variant::k1;
  int samples = 50;
  int bins = 2500;
  double alpha = 0.05;
  int max_order = kDefaultMaxOrder;
  Tail tail = Tail::lower;
  std::optional<double> threshold;  // nullopt: never reject
  std::vector<double> coeffs;       // vc only, c_0..c_r
  std::optional<OcSvmModel> combiner;  // ocsvm only

  void validate() const;
};

struct Verdict {
  bool anomaly = false;
  double score = 0.0;
  std::optional<double> threshold;

  const char* label() const { return anomaly ? "anomaly" : "anomaly_free"; }
};

// Statistic of the variant (K_1, K_0, sum c_i K_i, or combiner decision value).
double test_statistic(const OccupancyProfile& profile, const TestSpec& spec);

Verdict k1_test(const OccupancyProfile& profile, const TestSpec& spec);
Verdict k0_test(const OccupancyProfile& profile, const TestSpec& spec);
Verdict vc_test(const OccupancyProfile& profile, const TestSpec& spec);
Verdict ocsvm_coincidence_test(const OccupancyProfile& profile, const TestSpec& spec);
Verdict run_test(const OccupancyProfile& profile, const TestSpec& spec);

// Empirical null distribution of a statistic from i.i.d. uniform blocks.
class EmpiricalNull {
 public:
  explicit EmpiricalNull(std::vector<double> samples);

  std::size_t trials() const { return sorted_.size(); }
  const std::vector<double>& sorted() const { return sorted_; }
  double cdf(double x) const;       // Pr(S <= x)
  double upper_tail(double x) const;  // Pr(S >= x)
  double quantile(double p) const;  // smallest observed x with cdf(x) >= p
  // Probability mass per integer value in [0, max_value].
  std::vector<double> integer_pmf(int max_value) const;

  // lower: largest observed t with Pr(S <= t) <= alpha (reject S <= t).
  // upper: smallest observed t with Pr(S >= t) <= alpha (reject S >= t).
  std::optional<double> threshold(Tail tail, double alpha) const;

 private:
  std::vector<double> sorted_;
};

using ProfileStatistic = std::function<double(const OccupancyProfile&)>;

EmpiricalNull null_mc(int samples, int bins, const ProfileStatistic& statistic,
                      std::int64_t trials, std::uint64_t seed, int max_order = kDefaultMaxOrder);

// Coincidence feature vectors (K_0..K_r) of uniform blocks, one per column.
Eigen::MatrixXd null_features(int samples, int bins, int max_order, std::int64_t trials,
                              std::uint64_t seed);

// Fisher discriminant weights separating uniform blocks from blocks with a
// 30% fraction drawn from a two-component Gaussian mixture on (0, 1).
// Oriented so that larger sum c_i K_i means more anomalous.
std::vector<double> fit_vc_coefficients(int samples, int bins, int max_order, std::uint64_t seed,
                                        std::int64_t trials_per_class = 20000);

TestSpec make_k1_spec(int samples, int bins, double alpha);
TestSpec calibrate_k0(int samples, int bins, double alpha, std::int64_t trials, std::uint64_t seed);
TestSpec calibrate_vc(int samples, int bins, double alpha, std::vector<double> coeffs, Tail tail,
                      std::int64_t trials, std::uint64_t seed);
TestSpec calibrate_ocsvm(int samples, int bins, double alpha, OcSvmModel combiner,
                         int max_order, std::int64_t trials, std::uint64_t seed);

// {"variant", "N", "K", "alpha", "threshold", "tail", "r", "coeffs"?, "combiner"?}
json test_spec_to_json(const TestSpec& spec);
TestSpec test_spec_from_json(const json& j);

}  // namespace bsd
