#include "bsd/series.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "bsd/error.hpp"

namespace bsd {

std::vector<std::string> default_channel_names(Eigen::Index m) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) names.push_back("ch_" + std::to_string(i));
  return names;
}

void write_csv(const MeasurementSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "t";
  for (Eigen::Index c = 0; c < series.num_channels(); ++c) out << ",ch_" << c;
  out << '\n';
  char buf[64];
  for (Eigen::Index t = 0; t < series.length(); ++t) {
    out << t;
    for (Eigen::Index c = 0; c < series.num_channels(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", series.values(t, c));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

MeasurementSeries read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: " + path.string());

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.front() != "t")
    throw DataError("CSV header must start with `t` and name at least one channel: " +
                    path.string());
  const auto m = static_cast<Eigen::Index>(header.size() - 1);

  std::vector<double> flat;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col > 0) {
        try {
          std::size_t used = 0;
          flat.push_back(std::stod(cell, &used));
        } catch (const std::exception&) {
          throw DataError("bad number '" + cell + "' at data row " + std::to_string(rows + 1));
        }
      }
      ++col;
    }
    if (col != m + 1)
      throw DataError("row " + std::to_string(rows + 1) + " has " + std::to_string(col) +
                      " cells, expected " + std::to_string(m + 1));
    ++rows;
  }

  MeasurementSeries series;
  series.values.resize(rows, m);
  for (Eigen::Index t = 0; t < rows; ++t)
    for (Eigen::Index c = 0; c < m; ++c)
      series.values(t, c) = flat[static_cast<std::size_t>(t * m + c)];
  series.channels.assign(header.begin() + 1, header.end());
  return series;
}

}  // namespace bsd
