#include "bsd/gridsim.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>
#include <set>

#include "bsd/error.hpp"

namespace bsd {

void GridModel::validate() const {
  const auto m = H.rows();
  const auto n = H.cols();
  if (n < 1 || m < n)
    throw DataError("grid: need m >= n >= 1, got m=" + std::to_string(m) + " n=" + std::to_string(n));
  if (sigma.size() != m) throw DataError("grid: sigma length does not match H rows");
  if (!(sigma.array() > 0.0).all()) throw DataError("grid: every sigma must be positive");
  if (!H.allFinite()) throw DataError("grid: H contains non-finite values");
  if (!channels.empty() && static_cast<Eigen::Index>(channels.size()) != m)
    throw DataError("grid: channel label count does not match H rows");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
  if (qr.rank() < n) throw DataError("grid: H is rank deficient (system unobservable)");
}

GridModel grid_from_json(const json& j) {
  GridModel g;
  g.H = matrix_from_json(j.at("H"));
  g.sigma = vector_from_json(j.at("sigma"));
  if (j.contains("channels")) g.channels = j.at("channels").get<std::vector<std::string>>();
  if (g.channels.empty()) g.channels = default_channel_names(g.H.rows());
  g.validate();
  return g;
}

json grid_to_json(const GridModel& g) {
  return json{{"H", matrix_to_json(g.H)}, {"sigma", vector_to_json(g.sigma)}, {"channels", g.channels}};
}

GridModel load_grid(const std::filesystem::path& path) {
  try {
    return grid_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw DataError("grid fixture " + path.string() + ": " + e.what());
  }
}

void Gmm::validate() const {
  if (components.empty()) throw ShapeError("GMM has no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight >= 0.0)) throw ShapeError("GMM weights must be nonnegative");
    if (!(c.stddev > 0.0)) throw ShapeError("GMM component std must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ShapeError("GMM weights must sum to 1");
}

double Gmm::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  const GmmComponent* chosen = &components.back();
  for (const auto& c : components) {
    acc += c.weight;
    if (u < acc) {
      chosen = &c;
      break;
    }
  }
  return chosen->mean + chosen->stddev * normal(rng);
}

Gmm Gmm::symmetric(double separation, double scale) {
  return Gmm{{{0.5, -separation * scale, scale}, {0.5, separation * scale, scale}}};
}

json gmm_to_json(const Gmm& g) {
  json comps = json::array();
  for (const auto& c : g.components)
    comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"std", c.stddev}});
  return comps;
}

Gmm gmm_from_json(const json& j) {
  Gmm g;
  for (const auto& c : j)
    g.components.push_back({c.at("weight").get<double>(), c.at("mean").get<double>(),
                            c.at("std").get<double>()});
  try {
    g.validate();
  } catch (const ShapeError& e) {
    throw DataError(e.what());
  }
  return g;
}

MeasurementSeries simulate(const GridModel& model, Eigen::Index T, const StateDynamics& dyn,
                           std::uint64_t seed) {
  if (T < 1) throw ShapeError("simulate: T must be >= 1");
  const auto m = model.measurements();
  const auto n = model.states();
  const Eigen::VectorXd mean = dyn.mean.size() == n ? dyn.mean : Eigen::VectorXd::Zero(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Start from the stationary distribution of the AR(1) state process.
  const double stationary =
      dyn.frozen || dyn.phi * dyn.phi >= 1.0 ? 0.0 : dyn.innovation / std::sqrt(1.0 - dyn.phi * dyn.phi);
  Eigen::VectorXd dev(n);
  for (Eigen::Index i = 0; i < n; ++i) dev(i) = stationary * normal(rng);

  MeasurementSeries out;
  out.values.resize(T, m);
  out.channels = default_channel_names(m);
  Eigen::VectorXd noise(m);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0 && !dyn.frozen)
      for (Eigen::Index i = 0; i < n; ++i) dev(i) = dyn.phi * dev(i) + dyn.innovation * normal(rng);
    for (Eigen::Index i = 0; i < m; ++i) noise(i) = model.sigma(i) * normal(rng);
    out.values.row(t) = (model.H * (mean + dev) + noise).transpose();
  }
  return out;
}

MeasurementSeries inject_bad(const MeasurementSeries& series, const std::vector<int>& channels,
                             const Gmm& gmm, Eigen::Index t_start, Eigen::Index t_len,
                             std::uint64_t seed) {
  if (channels.empty()) throw ShapeError("inject_bad: empty channel list");
  std::set<int> seen;
  for (int c : channels) {
    if (c < 0 || c >= series.num_channels())
      throw ShapeError("inject_bad: channel " + std::to_string(c) + " out of range");
    if (!seen.insert(c).second) throw ShapeError("inject_bad: duplicate channel " + std::to_string(c));
  }
  if (t_start < 0 || t_len < 0 || t_start + t_len > series.length())
    throw ShapeError("inject_bad: window outside the series");
  gmm.validate();

  MeasurementSeries out = series;
  std::mt19937_64 rng(seed);
  for (Eigen::Index t = t_start; t < t_start + t_len; ++t)
    for (int c : channels) out.values(t, c) += gmm.sample(rng);
  return out;
}

MeasurementSeries unobservable_attack(const GridModel& model, const AttackPlan& plan,
                                      const MeasurementSeries& series, TimeWindow window,
                                      std::uint64_t seed) {
  if (plan.delta.size() != model.states()) throw ShapeError("attack: delta has wrong dimension");
  if (plan.delta.isZero(0.0)) throw ShapeError("attack: delta = 0 is vacuous");
  if (series.num_channels() != model.measurements())
    throw ShapeError("attack: series channel count does not match the grid");
  if (window.start < 0 || window.length < 0 || window.start + window.length > series.length())
    throw ShapeError("attack: window outside the series");
  plan.magnitude.validate();

  const Eigen::RowVectorXd direction = (model.H * plan.delta).transpose();
  MeasurementSeries out = series;
  std::mt19937_64 rng(seed);
  for (Eigen::Index t = window.start; t < window.start + window.length; ++t)
    out.values.row(t) += plan.magnitude.sample(rng) * direction;
  return out;
}

namespace {

Eigen::MatrixXd active_rows(const GridModel& model, const std::vector<int>& active) {
  Eigen::MatrixXd Hs(static_cast<Eigen::Index>(active.size()), model.states());
  for (std::size_t k = 0; k < active.size(); ++k) Hs.row(static_cast<Eigen::Index>(k)) = model.H.row(active[k]);
  return Hs;
}

std::vector<int> all_channels(const GridModel& model) {
  std::vector<int> a(static_cast<std::size_t>(model.measurements()));
  std::iota(a.begin(), a.end(), 0);
  return a;
}

}  // namespace

bool observable(const GridModel& model, const std::vector<int>& active) {
  if (static_cast<Eigen::Index>(active.size()) < model.states()) return false;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(active_rows(model, active));
  return qr.rank() == model.states();
}

WlsEstimator::WlsEstimator(const GridModel& model) : WlsEstimator(model, all_channels(model)) {}

WlsEstimator::WlsEstimator(const GridModel& model, std::vector<int> active)
    : model_(&model), active_(std::move(active)) {
  if (!observable(model, active_)) throw DataError("WLS: channel set is unobservable (rank deficient)");
  const auto k = static_cast<Eigen::Index>(active_.size());
  const Eigen::MatrixXd Hs = active_rows(model, active_);
  Eigen::VectorXd inv_sigma(k);
  for (Eigen::Index i = 0; i < k; ++i) inv_sigma(i) = 1.0 / model.sigma(active_[static_cast<std::size_t>(i)]);
  // Whitened system A = W^{1/2} H; solve via QR for conditioning.
  const Eigen::MatrixXd A = inv_sigma.asDiagonal() * Hs;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  const Eigen::MatrixXd pinv = qr.solve(Eigen::MatrixXd::Identity(k, k));  // n x k
  gain_ = pinv * inv_sigma.asDiagonal();
  residual_ = inv_sigma.asDiagonal().toDenseMatrix() - A * gain_;
}

Eigen::VectorXd WlsEstimator::estimate(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  if (z.size() != model_->measurements()) throw ShapeError("WLS: measurement vector has wrong length");
  Eigen::VectorXd zs(static_cast<Eigen::Index>(active_.size()));
  for (std::size_t k = 0; k < active_.size(); ++k) zs(static_cast<Eigen::Index>(k)) = z(active_[k]);
  return gain_ * zs;
}

Eigen::MatrixXd WlsEstimator::weighted_residuals(const Eigen::Ref<const Eigen::MatrixXd>& Z) const {
  if (Z.rows() != model_->measurements()) throw ShapeError("WLS: measurement block has wrong height");
  Eigen::MatrixXd Zs(static_cast<Eigen::Index>(active_.size()), Z.cols());
  for (std::size_t k = 0; k < active_.size(); ++k) Zs.row(static_cast<Eigen::Index>(k)) = Z.row(active_[k]);
  return residual_ * Zs;
}

Eigen::VectorXd wls(const GridModel& model, const Eigen::Ref<const Eigen::VectorXd>& z) {
  return WlsEstimator(model).estimate(z);
}

double jx(const GridModel& model, const Eigen::Ref<const Eigen::VectorXd>& z,
          const Eigen::Ref<const Eigen::VectorXd>& xhat) {
  if (z.size() != model.measurements() || xhat.size() != model.states())
    throw ShapeError("jx: dimension mismatch");
  return ((z - model.H * xhat).array() / model.sigma.array()).square().sum();
}

double block_j(const GridModel& model, const Eigen::Ref<const Eigen::MatrixXd>& z_block) {
  return WlsEstimator(model).weighted_residuals(z_block.transpose()).squaredNorm();
}

JxResult jx_detect(const GridModel& model, const Eigen::Ref<const Eigen::MatrixXd>& z_block,
                   double alpha) {
  if (z_block.cols() != model.measurements()) throw ShapeError("jx_detect: block has wrong channel count");
  if (z_block.rows() < 1) throw ShapeError("jx_detect: empty block");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ShapeError("alpha must lie in (0,1)");
  const Eigen::MatrixXd Z = z_block.transpose();  // m x L
  const auto L = static_cast<double>(z_block.rows());
  const auto n = model.states();

  JxResult result;
  std::vector<int> active = all_channels(model);
  bool first = true;
  while (true) {
    const WlsEstimator est(model, active);
    const Eigen::MatrixXd r = est.weighted_residuals(Z);
    const double J = r.squaredNorm();
    const double df = static_cast<double>(static_cast<Eigen::Index>(active.size()) - n) * L;
    double threshold = 0.0;
    bool pass = true;
    if (df > 0.0) {
      threshold = boost::math::quantile(boost::math::chi_squared(df), 1.0 - alpha);
      pass = J <= threshold;
    }
    if (first) {
      result.statistic = J;
      result.threshold = threshold;
      first = false;
    }
    if (pass) break;

    Eigen::Index worst = 0;
    r.rowwise().squaredNorm().maxCoeff(&worst);
    result.removed.push_back(active[static_cast<std::size_t>(worst)]);
    active.erase(active.begin() + worst);
    if (!observable(model, active)) {
      result.unobservable = true;
      break;
    }
  }
  result.anomaly = !result.removed.empty();
  return result;
}

GridModel synthetic_grid(int n_bus, int extra_lines, double sigma, std::uint64_t seed) {
  if (n_bus < 3) throw ShapeError("synthetic grid needs at least 3 buses");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> susceptance(5.0, 20.0);
  std::uniform_int_distribution<int> pick(0, n_bus - 1);

  std::vector<std::pair<int, int>> lines;
  for (int b = 0; b < n_bus; ++b) lines.emplace_back(b, (b + 1) % n_bus);
  std::set<std::pair<int, int>> used;
  for (auto [a, b] : lines) used.insert({std::min(a, b), std::max(a, b)});
  while (static_cast<int>(lines.size()) < n_bus + extra_lines) {
    const int a = pick(rng);
    const int b = pick(rng);
    if (a == b || used.count({std::min(a, b), std::max(a, b)})) continue;
    used.insert({std::min(a, b), std::max(a, b)});
    lines.emplace_back(a, b);
  }

  // Bus 0 is the angle reference; states are angles of buses 1..n_bus-1.
  const int n = n_bus - 1;
  const auto col = [](int bus) { return bus - 1; };
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<std::string> names;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n_bus, n_bus);
  for (auto [a, b] : lines) {
    const double s = susceptance(rng);
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
    if (a != 0) row(col(a)) += s;
    if (b != 0) row(col(b)) -= s;
    rows.push_back(row);
    names.push_back("P_" + std::to_string(a) + "_" + std::to_string(b));
    B(a, a) += s;
    B(b, b) += s;
    B(a, b) -= s;
    B(b, a) -= s;
  }
  for (int bus = 0; bus < n_bus; ++bus) {
    rows.push_back(B.row(bus).tail(n));
    names.push_back("P_" + std::to_string(bus));
  }

  GridModel g;
  g.H.resize(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t i = 0; i < rows.size(); ++i) g.H.row(static_cast<Eigen::Index>(i)) = rows[i];
  g.sigma = Eigen::VectorXd::Constant(g.H.rows(), sigma);
  g.channels = std::move(names);
  g.validate();
  return g;
}

}  // namespace bsd
