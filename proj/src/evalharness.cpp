#include "bsd/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "bsd/error.hpp"

namespace bsd {

namespace {

// splitmix64 finaliser; derives independent stream seeds from one base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedTag : std::uint64_t {
  kSimulate = 1,
  kSplit,
  kCorrupt,
  kTrain,
  kVc,
  kOcsvm,
  kCombiner,
};

}  // namespace

Eigen::Index SplitSpec::required_length() const {
  return stride() * static_cast<Eigen::Index>(train + val + test_clean + test_anomaly);
}

Split split(const MeasurementSeries& series, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.block < 1 || spec.history < 0 || spec.train < 0 || spec.val < 0 || spec.test_clean < 0 ||
      spec.test_anomaly < 0)
    throw ShapeError("split: counts must be nonnegative and block >= 1");
  const Eigen::Index need = spec.required_length();
  if (series.length() < need)
    throw DataError("split: series has " + std::to_string(series.length()) +
                    " samples per channel; the requested split requires at least " + std::to_string(need));

  Split s;
  s.spec = spec;
  s.train_region = {0, spec.stride() * spec.train};
  const int slots = spec.val + spec.test_clean + spec.test_anomaly;
  std::vector<Eigen::Index> starts(static_cast<std::size_t>(slots));
  for (int k = 0; k < slots; ++k) starts[static_cast<std::size_t>(k)] = s.train_region.length + k * spec.stride();
  std::mt19937_64 rng(seed);
  std::shuffle(starts.begin(), starts.end(), rng);
  auto take = [&](std::size_t from, int count) {
    std::vector<Eigen::Index> out(starts.begin() + static_cast<std::ptrdiff_t>(from),
                                  starts.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(out.begin(), out.end());
    return out;
  };
  s.val = take(0, spec.val);
  s.test_clean = take(static_cast<std::size_t>(spec.val), spec.test_clean);
  s.test_anomaly = take(static_cast<std::size_t>(spec.val + spec.test_clean), spec.test_anomaly);
  return s;
}

RocCurve roc(std::span<const double> clean, std::span<const double> anomaly) {
  if (clean.empty() || anomaly.empty()) throw ShapeError("roc: need at least one score per class");
  std::vector<std::pair<double, bool>> all;
  all.reserve(clean.size() + anomaly.size());
  for (double s : clean) all.emplace_back(s, false);
  for (double s : anomaly) all.emplace_back(s, true);
  for (const auto& [s, label] : all)
    if (std::isnan(s)) throw ShapeError("roc: NaN score");
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const auto nc = static_cast<double>(clean.size());
  const auto na = static_cast<double>(anomaly.size());
  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double v = all[i].first;
    while (i < all.size() && all[i].first == v) {
      (all[i].second ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({v, static_cast<double>(fp) / nc, static_cast<double>(tp) / na});
  }
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& a = curve.points[k - 1];
    const auto& b = curve.points[k];
    curve.auc += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return curve;
}

namespace {

const RocPoint& operating_point(const RocCurve& curve, double fpr) {
  if (curve.points.empty()) throw ShapeError("empty ROC curve");
  const RocPoint* best = &curve.points.front();
  for (const auto& p : curve.points)
    if (p.fpr <= fpr + 1e-12 && p.tpr > best->tpr) best = &p;
  return *best;
}

}  // namespace

double tpr_at_fpr(const RocCurve& curve, double fpr) { return operating_point(curve, fpr).tpr; }

double threshold_at_fpr(const RocCurve& curve, double fpr) {
  return operating_point(curve, fpr).threshold;
}

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "threshold,fpr,tpr\n";
  char buf[128];
  for (const auto& p : curve.points) {
    if (std::isinf(p.threshold))
      std::snprintf(buf, sizeof buf, "inf,%.17g,%.17g\n", p.fpr, p.tpr);
    else
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
    out << buf;
  }
}

std::vector<std::string> known_detectors() {
  return {"icagan_k1", "icagan_k0", "icagan_vc", "icagan_ocsvm", "jx", "ocsvm"};
}

void ExperimentConfig::validate() const {
  if (detectors.empty()) throw ShapeError("experiment: detector list is empty");
  const auto known = known_detectors();
  for (const auto& d : detectors)
    if (std::find(known.begin(), known.end(), d) == known.end())
      throw ShapeError("experiment: unknown detector '" + d + "'");
  if (corruption_case != 1 && corruption_case != 2) throw ShapeError("experiment: case must be 1 or 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ShapeError("experiment: alpha must lie in (0,1)");
  train.validate();
  if (split.block != train.window)
    throw ShapeError("experiment: block length must equal the generator window M");
  if (split.history != whitener_order)
    throw ShapeError("experiment: block history must equal the whitener order");
  if (resolved_bins() < 2) throw ShapeError("experiment: K must be >= 2");
  if (max_order < 1 || max_order > train.components)
    throw ShapeError("experiment: r must lie in [1, N]");
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    if (j.contains("grid")) {
      std::filesystem::path g = j.at("grid").get<std::string>();
      if (g.is_relative() && !std::filesystem::exists(g) && !base_dir.empty() &&
          std::filesystem::exists(base_dir / g))
        g = base_dir / g;
      c.grid_path = g;
    }
    c.corruption_case = j.value("case", c.corruption_case);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.block = s.value("block", c.split.block);
      c.split.history = s.value("history", c.split.history);
      c.split.train = s.value("train", c.split.train);
      c.split.val = s.value("val", c.split.val);
      c.split.test_clean = s.value("test_clean", c.split.test_clean);
      c.split.test_anomaly = s.value("test_anomaly", c.split.test_anomaly);
    }
    c.detectors = j.value("detectors", c.detectors);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    c.whitener_order = j.value("whitener_order", c.whitener_order);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("K") && !j.at("K").is_null()) c.bins = j.at("K").get<int>();
    c.max_order = j.value("r", c.max_order);
    c.vc_trials = j.value("vc_trials", c.vc_trials);
    if (j.contains("dynamics")) {
      c.dynamics.phi = j.at("dynamics").value("phi", c.dynamics.phi);
      c.dynamics.innovation = j.at("dynamics").value("innovation", c.dynamics.innovation);
    }
    c.bad_channels = j.value("bad_channels", c.bad_channels);
    c.bad_separation = j.value("bad_separation", c.bad_separation);
    c.attack_state = j.value("attack_state", c.attack_state);
    c.attack_scale = j.value("attack_scale", c.attack_scale);
    c.attack_separation = j.value("attack_separation", c.attack_separation);
    c.ocsvm_nu = j.value("ocsvm_nu", c.ocsvm_nu);
    c.combiner_nu = j.value("combiner_nu", c.combiner_nu);
  } catch (const json::exception& e) {
    throw DataError(std::string("experiment config: ") + e.what());
  }
  return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
  return json{{"grid", c.grid_path.string()},
              {"case", c.corruption_case},
              {"seed", c.seed},
              {"split",
               {{"block", c.split.block},
                {"history", c.split.history},
                {"train", c.split.train},
                {"val", c.split.val},
                {"test_clean", c.split.test_clean},
                {"test_anomaly", c.split.test_anomaly}}},
              {"detectors", c.detectors},
              {"train", train_config_to_json(c.train)},
              {"whitener_order", c.whitener_order},
              {"alpha", c.alpha},
              {"K", c.resolved_bins()},
              {"r", c.max_order},
              {"vc_trials", c.vc_trials},
              {"dynamics", {{"phi", c.dynamics.phi}, {"innovation", c.dynamics.innovation}}},
              {"bad_channels", c.bad_channels},
              {"bad_separation", c.bad_separation},
              {"attack_state", c.attack_state},
              {"attack_scale", c.attack_scale},
              {"attack_separation", c.attack_separation},
              {"ocsvm_nu", c.ocsvm_nu},
              {"combiner_nu", c.combiner_nu}};
}

namespace {

GridModel resolve_grid(const ExperimentConfig& config) {
  if (config.grid) return *config.grid;
  if (config.grid_path.empty()) throw DataError("experiment: no grid fixture given");
  return load_grid(config.grid_path);
}

std::vector<int> resolve_bad_channels(const ExperimentConfig& config, Eigen::Index m) {
  if (!config.bad_channels.empty()) return config.bad_channels;
  const auto mm = static_cast<int>(m);
  const int k = mm <= 20 ? std::max(1, static_cast<int>(std::lround(0.4 * mm))) : 6;
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(i * mm / k);
  return out;
}

// Segment rows [start, start + len) copied into a standalone series.
MeasurementSeries rows_of(const MeasurementSeries& s, TimeWindow w) {
  MeasurementSeries out;
  out.values = s.values.middleRows(w.start, w.length);
  out.channels = s.channels;
  out.rate_hz = s.rate_hz;
  return out;
}

}  // namespace

MeasurementSeries corrupt(const ExperimentConfig& config, const GridModel& grid,
                          const MeasurementSeries& clean, const Split& split) {
  MeasurementSeries out = clean;
  const std::uint64_t base = derive_seed(config.seed, kCorrupt);
  if (config.corruption_case == 1) {
    const auto channels = resolve_bad_channels(config, clean.num_channels());
    for (std::size_t b = 0; b < split.test_anomaly.size(); ++b) {
      const TimeWindow w = split.block_window(split.test_anomaly[b]);
      MeasurementSeries seg = rows_of(out, w);
      for (std::size_t k = 0; k < channels.size(); ++k) {
        const int c = channels[k];
        if (c < 0 || c >= clean.num_channels()) throw ShapeError("bad channel index out of range");
        seg = inject_bad(seg, {c}, Gmm::symmetric(config.bad_separation, grid.sigma(c)), 0, w.length,
                         derive_seed(base, b * 1000 + k));
      }
      out.values.middleRows(w.start, w.length) = seg.values;
    }
  } else {
    if (config.attack_state < 0 || config.attack_state >= grid.states())
      throw ShapeError("attack_state out of range");
    AttackPlan plan;
    plan.delta = Eigen::VectorXd::Unit(grid.states(), config.attack_state);
    const double peak = ((grid.H * plan.delta).array().abs() / grid.sigma.array()).maxCoeff();
    if (peak == 0.0) throw ShapeError("attack direction is not measured by any channel");
    plan.delta *= config.attack_scale / peak;
    plan.magnitude = Gmm::symmetric(config.attack_separation, 1.0);
    for (std::size_t b = 0; b < split.test_anomaly.size(); ++b) {
      const TimeWindow w = split.block_window(split.test_anomaly[b]);
      MeasurementSeries seg = rows_of(out, w);
      seg = unobservable_attack(grid, plan, seg, {0, w.length}, derive_seed(base, b));
      out.values.middleRows(w.start, w.length) = seg.values;
    }
  }
  return out;
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  config.validate();
  const GridModel grid = resolve_grid(config);
  ExperimentData data;
  data.clean = simulate(grid, config.split.required_length(), config.dynamics,
                        derive_seed(config.seed, kSimulate));
  data.split = split(data.clean, config.split, derive_seed(config.seed, kSplit));
  data.corrupted = corrupt(config, grid, data.clean, data.split);
  return data;
}

OccupancyProfile channel_profile(const ChannelBundle& bundle, const Eigen::Ref<const Eigen::VectorXd>& segment,
                                 int bins, int max_order) {
  const Eigen::VectorXd u = bundle.ecdf.apply(transform_raw(bundle.models.generator, segment));
  return stratify({u.data(), static_cast<std::size_t>(u.size())}, bins, max_order);
}

namespace {

bool wants(const ExperimentConfig& c, const std::string& prefix) {
  return std::any_of(c.detectors.begin(), c.detectors.end(),
                     [&](const std::string& d) { return d.rfind(prefix, 0) == 0; });
}

Eigen::VectorXd segment_of(const MeasurementSeries& s, Eigen::Index start, Eigen::Index len, Eigen::Index c) {
  return s.values.col(c).segment(start, len);
}

}  // namespace

TrainedModels train_models(const ExperimentConfig& config, const ExperimentData& data) {
  config.validate();
  TrainedModels models;
  const auto m = data.clean.num_channels();
  const int M = config.train.window;
  const int bins = config.resolved_bins();
  const Eigen::Index stride = config.split.stride();

  for (Eigen::Index c = 0; c < m; ++c) {
    const Eigen::VectorXd train_raw =
        segment_of(data.clean, data.split.train_region.start, data.split.train_region.length, c);
    models.whiteners.push_back(fit_whitener(train_raw, config.whitener_order));
  }

  if (wants(config, "icagan")) {
    for (Eigen::Index c = 0; c < m; ++c) {
      const Whitener& w = models.whiteners[static_cast<std::size_t>(c)];
      const Eigen::VectorXd train_raw =
          segment_of(data.clean, data.split.train_region.start, data.split.train_region.length, c);
      const Eigen::VectorXd resid = normalized_residuals(w, train_raw);

      ValidationData val;
      val.reference = windows_of(resid, M, 2);
      val.windows.resize(M, static_cast<Eigen::Index>(data.split.val.size()));
      for (std::size_t k = 0; k < data.split.val.size(); ++k) {
        const Eigen::VectorXd r = normalized_residuals(w, segment_of(data.clean, data.split.val[k], stride, c));
        val.windows.col(static_cast<Eigen::Index>(k)) = window_at(r, r.size() - 1, M);
      }

      TrainConfig tc = config.train;
      tc.seed = derive_seed(config.seed, kTrain * 1000 + static_cast<std::uint64_t>(c));
      TrainReport report = train(resid, tc, val);
      ChannelBundle bundle;
      bundle.models = report.final_models;
      bundle.models.generator.whitener = w;
      bundle.config = tc;
      bundle.ecdf = EcdfModel::fit(transform_batch(bundle.models.generator, val.reference));
      models.channels.push_back(std::move(bundle));
      report.final_models = {};
      models.reports.push_back(std::move(report));
    }
    if (wants(config, "icagan_vc"))
      models.vc_coeffs = fit_vc_coefficients(config.train.components, bins, config.max_order,
                                             derive_seed(config.seed, kVc), config.vc_trials);
    if (wants(config, "icagan_ocsvm")) {
      Eigen::MatrixXd feats(config.max_order + 1,
                            static_cast<Eigen::Index>(data.split.val.size()) * m);
      Eigen::Index col = 0;
      for (Eigen::Index c = 0; c < m; ++c)
        for (Eigen::Index start : data.split.val)
          feats.col(col++) = channel_profile(models.channels[static_cast<std::size_t>(c)],
                                             segment_of(data.clean, start, stride, c), bins, config.max_order)
                                 .features();
      OcSvmOptions opts;
      opts.nu = config.combiner_nu;
      opts.seed = derive_seed(config.seed, kCombiner);
      models.combiner = fit_ocsvm(feats, opts);
    }
  }

  if (wants(config, "ocsvm")) {
    for (Eigen::Index c = 0; c < m; ++c) {
      const Whitener& w = models.whiteners[static_cast<std::size_t>(c)];
      const Eigen::VectorXd resid = normalized_residuals(
          w, segment_of(data.clean, data.split.train_region.start, data.split.train_region.length, c));
      OcSvmOptions opts;
      opts.nu = config.ocsvm_nu;
      opts.seed = derive_seed(config.seed, kOcsvm * 1000 + static_cast<std::uint64_t>(c));
      models.raw_ocsvm.push_back(fit_ocsvm(windows_of(resid, M, M), opts));
    }
  }
  return models;
}

namespace {

// System score of one block: the maximum of the per-channel anomaly scores,
// which matches raising an alarm when any channel alarms.
double block_score(const std::string& detector, const ExperimentConfig& config, const GridModel& grid,
                   const MeasurementSeries& series, const Split& split, Eigen::Index start,
                   const TrainedModels& models) {
  const Eigen::Index stride = split.spec.stride();
  const auto m = series.num_channels();
  const int bins = config.resolved_bins();

  if (detector == "jx") {
    const TimeWindow w = split.block_window(start);
    return block_j(grid, series.values.middleRows(w.start, w.length));
  }

  double worst = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < m; ++c) {
    const Eigen::VectorXd seg = segment_of(series, start, stride, c);
    double s = 0.0;
    if (detector == "ocsvm") {
      const Eigen::VectorXd r = normalized_residuals(models.whiteners[static_cast<std::size_t>(c)], seg);
      s = -score(models.raw_ocsvm[static_cast<std::size_t>(c)], window_at(r, r.size() - 1, config.train.window));
    } else {
      const auto profile =
          channel_profile(models.channels[static_cast<std::size_t>(c)], seg, bins, config.max_order);
      if (detector == "icagan_k1") {
        s = -profile.k(1);
      } else if (detector == "icagan_k0") {
        s = profile.k(0);
      } else if (detector == "icagan_vc") {
        for (std::size_t i = 0; i < models.vc_coeffs.size(); ++i)
          s += models.vc_coeffs[i] * profile.k(static_cast<int>(i));
      } else if (detector == "icagan_ocsvm") {
        s = -score(*models.combiner, profile.features());
      } else {
        throw ShapeError("unknown detector " + detector);
      }
    }
    worst = std::max(worst, s);
  }
  return worst;
}

}  // namespace

ExperimentReport evaluate(const ExperimentConfig& config, const ExperimentData& data,
                          const TrainedModels& models) {
  config.validate();
  const GridModel grid = resolve_grid(config);
  ExperimentReport report;
  report.effective_config = experiment_config_to_json(config);
  for (const auto& det : config.detectors) {
    DetectorResult r;
    for (Eigen::Index s : data.split.test_clean)
      r.clean_scores.push_back(block_score(det, config, grid, data.clean, data.split, s, models));
    for (Eigen::Index s : data.split.test_anomaly)
      r.anomaly_scores.push_back(block_score(det, config, grid, data.corrupted, data.split, s, models));
    r.curve = roc(r.clean_scores, r.anomaly_scores);
    r.auc = r.curve.auc;
    r.tpr_at_005 = tpr_at_fpr(r.curve, 0.05);
    r.threshold = threshold_at_fpr(r.curve, 0.05);
    report.detectors.emplace(det, std::move(r));
  }
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  std::string stage = "prepare";
  try {
    const ExperimentData data = prepare_data(config);
    stage = "train";
    const TrainedModels models = train_models(config, data);
    stage = "evaluate";
    return evaluate(config, data, models);
  } catch (const NumericalError& e) {
    throw NumericalError("experiment stage '" + stage + "' failed (seed " + std::to_string(config.seed) +
                         "): " + e.what());
  } catch (const DataError& e) {
    throw DataError("experiment stage '" + stage + "' failed (seed " + std::to_string(config.seed) +
                    "): " + e.what());
  }
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json summary = json::object();
  for (const auto& [name, r] : report.detectors) {
    summary[name] = {{"auc", r.auc},
                     {"tpr_at_005", r.tpr_at_005},
                     {"threshold", std::isinf(r.threshold) ? json("inf") : json(r.threshold)}};
    write_roc_csv(r.curve, dir / ("roc_" + name + ".csv"));
  }
  write_json(summary, dir / "summary.json");
  write_json(report.effective_config, dir / "config.json");
}

}  // namespace bsd
