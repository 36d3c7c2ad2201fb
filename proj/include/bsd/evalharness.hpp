#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsd/gan.hpp"
#include "bsd/gridsim.hpp"
#include "bsd/occupancy.hpp"
#include "bsd/ocsvm.hpp"
#include "bsd/series.hpp"

namespace bsd {

// Blocks of `block` samples, each preceded by `history` samples of context
// owned by the block (so corrupting one block never touches another's
// context). The training split is one contiguous region at the start.
struct SplitSpec {
  int block = 80;
  int history = 0;
  int train = 600;
  int val = 400;
  int test_clean = 500;
  int test_anomaly = 500;

  Eigen::Index stride() const { return block + history; }
  Eigen::Index required_length() const;
};

struct Split {
  TimeWindow train_region;
  // Start index of each block's segment (history first, then the block).
  std::vector<Eigen::Index> val, test_clean, test_anomaly;
  SplitSpec spec;

  TimeWindow block_window(Eigen::Index start) const {  // excludes history
    return {start + spec.history, spec.block};
  }
};

Split split(const MeasurementSeries& series, const SplitSpec& spec, std::uint64_t seed);

struct RocPoint {
  double threshold;  // predict anomaly when score >= threshold
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by FPR, from (0,0) to (1,1)
  double auc = 0.0;
};

// Higher scores mean more anomalous.
RocCurve roc(std::span<const double> clean_scores, std::span<const double> anomaly_scores);
// Best TPR among curve points with FPR <= fpr (no interpolation).
double tpr_at_fpr(const RocCurve& curve, double fpr);
double threshold_at_fpr(const RocCurve& curve, double fpr);
void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);

struct ExperimentConfig {
  std::filesystem::path grid_path;
  std::optional<GridModel> grid;  // loaded from grid_path when empty
  int corruption_case = 1;        // 1: GMM bad data, 2: unobservable attack
  std::uint64_t seed = 1;
  SplitSpec split{80, 4, 250, 100, 200, 200};
  std::vector<std::string> detectors{"icagan_k1", "icagan_vc", "jx"};
  TrainConfig train;
  int whitener_order = 4;
  double alpha = 0.05;
  std::optional<int> bins;  // default N^2
  int max_order = kDefaultMaxOrder;
  std::int64_t vc_trials = 20000;
  StateDynamics dynamics;
  std::vector<int> bad_channels;  // default: 4 of every 10 channels
  double bad_separation = 5.0;    // GMM means at +-separation * sigma_i, sd sigma_i
  int attack_state = 0;
  double attack_scale = 1.0;      // max_i |(H delta)_i| / sigma_i
  double attack_separation = 5.0;
  double ocsvm_nu = 0.1;
  double combiner_nu = 0.1;

  int resolved_bins() const { return bins.value_or(train.components * train.components); }
  void validate() const;
};

ExperimentConfig experiment_config_from_json(const json& j,
                                             const std::filesystem::path& base_dir = {});
json experiment_config_to_json(const ExperimentConfig& c);

std::vector<std::string> known_detectors();

struct ExperimentData {
  MeasurementSeries clean;
  MeasurementSeries corrupted;  // anomaly blocks corrupted, everything else identical
  Split split;
};

ExperimentData prepare_data(const ExperimentConfig& config);
// Applies the configured corruption case to the test_anomaly blocks of `clean`.
MeasurementSeries corrupt(const ExperimentConfig& config, const GridModel& grid,
                          const MeasurementSeries& clean, const Split& split);

struct TrainedModels {
  std::vector<ChannelBundle> channels;  // ICA pipeline per channel
  std::vector<Whitener> whiteners;      // per channel (shared by all detectors)
  std::vector<OcSvmModel> raw_ocsvm;    // per channel
  std::vector<double> vc_coeffs;
  std::optional<OcSvmModel> combiner;
  std::vector<TrainReport> reports;
};

TrainedModels train_models(const ExperimentConfig& config, const ExperimentData& data);

struct DetectorResult {
  std::vector<double> clean_scores;
  std::vector<double> anomaly_scores;
  RocCurve curve;
  double auc = 0.0;
  double tpr_at_005 = 0.0;
  double threshold = 0.0;
};

struct ExperimentReport {
  std::map<std::string, DetectorResult> detectors;
  json effective_config;
};

ExperimentReport evaluate(const ExperimentConfig& config, const ExperimentData& data,
                          const TrainedModels& models);
ExperimentReport run_experiment(const ExperimentConfig& config);

// summary.json, roc_<detector>.csv and config.json under dir.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

// Per-channel ICA profiles for one block segment (history + block) of a
// single channel.
OccupancyProfile channel_profile(const ChannelBundle& bundle, const Eigen::Ref<const Eigen::VectorXd>& segment,
                                 int bins, int max_order);

}  // namespace bsd
