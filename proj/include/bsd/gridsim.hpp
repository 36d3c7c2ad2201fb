#pragma once

// Linearised grid measurement model z_t = H s_t + w_t, corruption injectors
// and the weighted least-squares residual (J(x)) detector.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bsd/json_io.hpp"
#include "bsd/series.hpp"

namespace bsd {

struct GridModel {
  Eigen::MatrixXd H;      // m x n
  Eigen::VectorXd sigma;  // per-measurement noise std
  std::vector<std::string> channels;

  Eigen::Index measurements() const { return H.rows(); }
  Eigen::Index states() const { return H.cols(); }
  void validate() const;  // m >= n, rank n, sigma > 0
};

// {"H": [[...]], "sigma": [...], "channels": [...]}
GridModel grid_from_json(const json& j);
json grid_to_json(const GridModel& g);
GridModel load_grid(const std::filesystem::path& path);

struct GmmComponent {
  double weight;
  double mean;
  double stddev;
};

struct Gmm {
  std::vector<GmmComponent> components;

  void validate() const;
  double sample(std::mt19937_64& rng) const;
  // Two equal-weight components at +-separation * scale with sd scale.
  static Gmm symmetric(double separation, double scale);
};

json gmm_to_json(const Gmm& g);
Gmm gmm_from_json(const json& j);

struct StateDynamics {
  double phi = 0.999;        // AR(1) coefficient per state
  double innovation = 0.005;  // innovation std
  Eigen::VectorXd mean;      // stationary mean; zeros when empty
  bool frozen = false;       // hold the initial state for all t
};

MeasurementSeries simulate(const GridModel& model, Eigen::Index T, const StateDynamics& dynamics,
                           std::uint64_t seed);

// Adds i.i.d. GMM draws to `channels` over [t_start, t_start + t_len).
MeasurementSeries inject_bad(const MeasurementSeries& series, const std::vector<int>& channels,
                             const Gmm& gmm, Eigen::Index t_start, Eigen::Index t_len,
                             std::uint64_t seed);

struct AttackPlan {
  Eigen::VectorXd delta;  // state-space direction
  Gmm magnitude;          // distribution of the per-sample scalar w_t
};

struct TimeWindow {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
};

// z'_t = z_t + w_t * (H delta) on the window.
MeasurementSeries unobservable_attack(const GridModel& model, const AttackPlan& plan,
                                      const MeasurementSeries& series, TimeWindow window,
                                      std::uint64_t seed);

// Weighted least-squares estimator restricted to a channel subset.
class WlsEstimator {
 public:
  WlsEstimator(const GridModel& model, std::vector<int> active);
  explicit WlsEstimator(const GridModel& model);

  Eigen::VectorXd estimate(const Eigen::Ref<const Eigen::VectorXd>& z) const;
  // Weighted residual r_i / sigma_i over active channels, for each column of Z (m x L).
  Eigen::MatrixXd weighted_residuals(const Eigen::Ref<const Eigen::MatrixXd>& Z) const;
  const std::vector<int>& active() const { return active_; }

 private:
  const GridModel* model_;
  std::vector<int> active_;
  Eigen::MatrixXd gain_;      // n x |active|, includes the 1/sigma^2 weights
  Eigen::MatrixXd residual_;  // |active| x |active| map from z to weighted residual
};

bool observable(const GridModel& model, const std::vector<int>& active);

Eigen::VectorXd wls(const GridModel& model, const Eigen::Ref<const Eigen::VectorXd>& z);
double jx(const GridModel& model, const Eigen::Ref<const Eigen::VectorXd>& z,
          const Eigen::Ref<const Eigen::VectorXd>& xhat);

struct JxResult {
  bool anomaly = false;
  bool unobservable = false;
  double statistic = 0.0;  // block J of the full channel set
  double threshold = 0.0;  // chi-square quantile used for the first test
  std::vector<int> removed;
};

// z_block is L x m (time by channel). Residues are summed over the block and
// compared to the chi-square (1 - alpha) quantile with (m_active - n) * L
// degrees of freedom; the largest-residue channel is removed and the test
// repeated until it passes or the remaining set is unobservable.
JxResult jx_detect(const GridModel& model, const Eigen::Ref<const Eigen::MatrixXd>& z_block,
                   double alpha = 0.05);

double block_j(const GridModel& model, const Eigen::Ref<const Eigen::MatrixXd>& z_block);

// Ring-plus-chords DC grid with n_bus buses (reference bus excluded from the
// state), measuring every line flow and every bus injection.
GridModel synthetic_grid(int n_bus, int extra_lines, double sigma, std::uint64_t seed);

}  // namespace bsd
