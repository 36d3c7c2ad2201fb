#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

namespace bsd {

// Multichannel sensor record. values is T x m; column i is channel i.
struct MeasurementSeries {
  Eigen::MatrixXd values;
  std::vector<std::string> channels;
  double rate_hz = 50.0;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index num_channels() const { return values.cols(); }
  auto channel(Eigen::Index i) const { return values.col(i); }
  auto channel(Eigen::Index i) { return values.col(i); }
};

std::vector<std::string> default_channel_names(Eigen::Index m);

// CSV layout: header `t,ch_0,...,ch_{m-1}`, one row per sample, t is the
// sample index. Values are written with 17 significant digits.
void write_csv(const MeasurementSeries& series, const std::filesystem::path& path);
MeasurementSeries read_csv(const std::filesystem::path& path);

}  // namespace bsd
