// bsd: simulate grid data, train per-channel ICA models, detect, calibrate
// and run experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bsd/error.hpp"
#include "bsd/evalharness.hpp"
#include "bsd/gan.hpp"
#include "bsd/gridsim.hpp"
#include "bsd/json_io.hpp"
#include "bsd/occupancy.hpp"
#include "bsd/ocsvm.hpp"
#include "bsd/series.hpp"

namespace fs = std::filesystem;
using namespace bsd;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

Variant parse_variant(const std::string& s) {
  if (s == "k0") return Variant::k0;
  if (s == "k1") return Variant::k1;
  if (s == "vc") return Variant::vc;
  if (s == "ocsvm") return Variant::ocsvm;
  throw UsageError("unknown variant '" + s + "' (expected k0, k1, vc or ocsvm)");
}

// ---- simulate ----

struct SimulateArgs {
  fs::path grid, out;
  Eigen::Index T = 0;
  std::uint64_t seed = 0;
  double phi = StateDynamics{}.phi;
  double innovation = StateDynamics{}.innovation;
};

int run_simulate(const SimulateArgs& a) {
  require_file(a.grid, "grid fixture");
  if (a.T < 1) throw UsageError("--T must be positive");
  const GridModel grid = load_grid(a.grid);
  StateDynamics dyn;
  dyn.phi = a.phi;
  dyn.innovation = a.innovation;
  write_csv(simulate(grid, a.T, dyn, a.seed), a.out);
  write_json(json{{"grid", a.grid.string()},
                  {"T", a.T},
                  {"seed", a.seed},
                  {"phi", a.phi},
                  {"innovation", a.innovation}},
             fs::path(a.out.string() + ".config.json"));
  return 0;
}

// ---- train ----

struct TrainArgs {
  fs::path data, out, config;
  std::optional<int> N, M, iters;
  std::optional<std::uint64_t> seed;
  std::vector<int> hidden;
  int order = 4;
  double val_fraction = 0.2;
  int ecdf_stride = 2;
};

int run_train(const TrainArgs& a) {
  require_file(a.data, "data CSV");
  if (!a.config.empty()) require_file(a.config, "train config");
  if (!(a.val_fraction > 0.0 && a.val_fraction < 1.0)) throw UsageError("--val-fraction must lie in (0,1)");
  if (a.ecdf_stride < 1) throw UsageError("--ecdf-stride must be >= 1");

  TrainConfig tc;
  if (!a.config.empty()) tc = train_config_from_json(read_json(a.config));
  if (a.N) tc.components = *a.N;
  if (a.M) tc.window = *a.M;
  if (a.iters) tc.iters = *a.iters;
  if (a.seed) tc.seed = *a.seed;
  if (!a.hidden.empty()) tc.hidden = a.hidden;
  tc.validate();

  const MeasurementSeries series = read_csv(a.data);
  const Eigen::Index T = series.length();
  const auto n_val = static_cast<Eigen::Index>(static_cast<double>(T) * a.val_fraction);
  const Eigen::Index n_train = T - n_val;
  const int M = tc.window;

  fs::create_directories(a.out);
  json manifest{{"channels", series.channels},
                {"train_config", train_config_to_json(tc)},
                {"seed", tc.seed},
                {"whitener_order", a.order},
                {"val_fraction", a.val_fraction},
                {"ecdf_stride", a.ecdf_stride},
                {"data", a.data.string()}};

  for (Eigen::Index c = 0; c < series.num_channels(); ++c) {
    const Eigen::VectorXd train_raw = series.values.col(c).head(n_train);
    const Whitener w = fit_whitener(train_raw, a.order);
    const Eigen::VectorXd resid = normalized_residuals(w, train_raw);

    ValidationData val;
    val.reference = windows_of(resid, M, a.ecdf_stride);
    if (n_val >= M + a.order) {
      const Eigen::VectorXd val_resid = normalized_residuals(w, series.values.col(c).tail(n_val));
      val.windows = windows_of(val_resid, M, M);
    }
    TrainConfig ctc = tc;
    ctc.seed = tc.seed + static_cast<std::uint64_t>(c);
    TrainReport report = train(resid, ctc, val.windows.cols() > 0 ? std::optional(val) : std::nullopt);

    ChannelBundle bundle;
    bundle.models = std::move(report.final_models);
    bundle.models.generator.whitener = w;
    bundle.config = ctc;
    bundle.ecdf = EcdfModel::fit(transform_batch(bundle.models.generator, val.reference));
    save_bundle(bundle, a.out / ("ch_" + std::to_string(c)));
    std::fprintf(stderr, "channel %ld: %d iterations, best %d\n", static_cast<long>(c), report.iterations_run,
                 report.best_iteration);
  }
  write_json(manifest, a.out / "manifest.json");
  return 0;
}

// ---- shared bundle helpers ----

struct Bundle {
  json manifest;
  std::vector<ChannelBundle> channels;
};

Bundle load_model_dir(const fs::path& dir) {
  require_dir(dir, "model bundle");
  require_file(dir / "manifest.json", "bundle manifest");
  Bundle b;
  b.manifest = read_json(dir / "manifest.json");
  std::size_t m = 0;
  try {
    m = b.manifest.at("channels").size();
  } catch (const json::exception& e) {
    throw DataError("bundle manifest: " + std::string(e.what()));
  }
  for (std::size_t c = 0; c < m; ++c) b.channels.push_back(load_bundle(dir / ("ch_" + std::to_string(c))));
  if (b.channels.empty()) throw DataError("model bundle has no channels");
  return b;
}

struct CalibrationArgs {
  Variant variant = Variant::k1;
  double alpha = 0.05;
  std::optional<int> K;
  int r = kDefaultMaxOrder;
  std::int64_t trials = 20000;
  std::uint64_t seed = 0;
  double nu = 0.1;
};

TestSpec calibrate(int N, const CalibrationArgs& a) {
  const int K = a.K.value_or(N * N);
  switch (a.variant) {
    case Variant::k1:
      return make_k1_spec(N, K, a.alpha);
    case Variant::k0:
      return calibrate_k0(N, K, a.alpha, a.trials, a.seed);
    case Variant::vc: {
      auto coeffs = fit_vc_coefficients(N, K, a.r, a.seed, a.trials);
      return calibrate_vc(N, K, a.alpha, std::move(coeffs), Tail::upper, a.trials, a.seed + 1);
    }
    case Variant::ocsvm: {
      OcSvmOptions opts;
      opts.nu = a.nu;
      opts.seed = a.seed;
      OcSvmModel combiner = fit_ocsvm(null_features(N, K, a.r, std::min<std::int64_t>(a.trials, 2000), a.seed), opts);
      return calibrate_ocsvm(N, K, a.alpha, std::move(combiner), a.r, a.trials, a.seed + 1);
    }
  }
  throw UsageError("unknown variant");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::k0: return "k0";
    case Variant::k1: return "k1";
    case Variant::vc: return "vc";
    case Variant::ocsvm: return "ocsvm";
  }
  return "?";
}

// ---- calibrate ----

int run_calibrate(const fs::path& model, const fs::path& out_override, const CalibrationArgs& a) {
  const Bundle b = load_model_dir(model);
  const int N = b.channels.front().models.generator.components();
  const TestSpec spec = calibrate(N, a);
  const fs::path out =
      out_override.empty() ? model / ("test_" + std::string(variant_name(a.variant)) + ".json") : out_override;
  json j = test_spec_to_json(spec);
  j["seed"] = a.seed;
  j["trials"] = a.trials;
  write_json(j, out);
  return 0;
}

// ---- detect ----

int run_detect(const fs::path& model, const fs::path& in, const CalibrationArgs& a) {
  require_file(in, "input block CSV");
  const Bundle b = load_model_dir(model);
  const MeasurementSeries block = read_csv(in);
  if (block.num_channels() != static_cast<Eigen::Index>(b.channels.size()))
    throw DataError("input has " + std::to_string(block.num_channels()) + " channels, model expects " +
                    std::to_string(b.channels.size()));
  const int N = b.channels.front().models.generator.components();
  const int K = a.K.value_or(N * N);

  TestSpec spec;
  const fs::path stored = model / ("test_" + std::string(variant_name(a.variant)) + ".json");
  bool loaded = false;
  if (fs::exists(stored)) {
    spec = test_spec_from_json(read_json(stored));
    loaded = spec.alpha == a.alpha && spec.bins == K && spec.samples == N;
  }
  if (!loaded) spec = calibrate(N, a);

  // Any channel alarming raises the system alarm; the reported score is the
  // statistic of the channel that is furthest into its rejection region.
  bool anomaly = false;
  double score = 0.0;
  std::optional<double> worst;
  for (std::size_t c = 0; c < b.channels.size(); ++c) {
    const ChannelBundle& ch = b.channels[c];
    const Eigen::Index need = ch.models.generator.window() + ch.models.generator.whitener.order;
    if (block.length() < need)
      throw DataError("input block has " + std::to_string(block.length()) + " rows; need at least " +
                      std::to_string(need));
    const Eigen::VectorXd seg = block.values.col(static_cast<Eigen::Index>(c)).tail(need);
    const Verdict v = run_test(channel_profile(ch, seg, K, spec.max_order), spec);
    const double oriented = spec.tail == Tail::lower ? -v.score : v.score;
    if (!worst || oriented > *worst) {
      worst = oriented;
      score = v.score;
    }
    anomaly = anomaly || v.anomaly;
  }
  std::printf("%s %.17g\n", anomaly ? "anomaly" : "anomaly_free", score);
  return 0;
}

// ---- eval ----

struct EvalArgs {
  fs::path config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> corruption_case, K, N, M;
  std::optional<double> alpha;
  std::vector<std::string> detectors;
};

int run_eval(const EvalArgs& a) {
  require_file(a.config, "experiment config");
  ExperimentConfig cfg = experiment_config_from_json(read_json(a.config), a.config.parent_path());
  if (a.seed) cfg.seed = *a.seed;
  if (a.corruption_case) cfg.corruption_case = *a.corruption_case;
  if (a.K) cfg.bins = *a.K;
  if (a.N) cfg.train.components = *a.N;
  if (a.M) {
    cfg.train.window = *a.M;
    cfg.split.block = *a.M;
  }
  if (a.alpha) cfg.alpha = *a.alpha;
  if (!a.detectors.empty()) cfg.detectors = a.detectors;
  if (cfg.grid_path.empty()) throw UsageError("experiment config names no grid fixture");
  require_file(cfg.grid_path, "grid fixture");
  cfg.validate();

  const fs::path out = a.out.empty() ? fs::path("report") : a.out;
  const ExperimentReport report = run_experiment(cfg);
  write_report(report, out);
  for (const auto& [name, r] : report.detectors)
    std::printf("%-14s auc %.4f  tpr@0.05 %.4f\n", name.c_str(), r.auc, r.tpr_at_005);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bad-data and attack detection on grid measurement streams"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a measurement series from a grid fixture");
  s->add_option("--grid", sim.grid, "Grid fixture JSON")->required();
  s->add_option("--T", sim.T, "Samples per channel")->required();
  s->add_option("--seed", sim.seed, "RNG seed");
  s->add_option("--out", sim.out, "Output CSV")->required();
  s->add_option("--phi", sim.phi, "State AR(1) coefficient");
  s->add_option("--innovation", sim.innovation, "State innovation std");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one ICA model per channel");
  t->add_option("--data", tr.data, "Anomaly-free training CSV")->required();
  t->add_option("--out", tr.out, "Bundle directory")->required();
  t->add_option("--config", tr.config, "Training config JSON");
  t->add_option("--N", tr.N, "Generator output components");
  t->add_option("--M", tr.M, "Window length");
  t->add_option("--iters", tr.iters, "Outer training iterations");
  t->add_option("--seed", tr.seed, "RNG seed");
  t->add_option("--hidden", tr.hidden, "Hidden layer widths");
  t->add_option("--order", tr.order, "Whitening AR order");
  t->add_option("--val-fraction", tr.val_fraction, "Trailing fraction held out for early stopping");
  t->add_option("--ecdf-stride", tr.ecdf_stride, "Window stride for the ECDF reference set");

  CalibrationArgs cal;
  std::string cal_variant = "k1";
  fs::path cal_model, cal_out;
  auto* c = app.add_subcommand("calibrate", "Calibrate a coincidence test threshold");
  c->add_option("--model", cal_model, "Bundle directory")->required();
  c->add_option("--variant", cal_variant, "k0, k1, vc or ocsvm");
  c->add_option("--alpha", cal.alpha, "False-alarm level");
  c->add_option("--K", cal.K, "Number of bins (default N^2)");
  c->add_option("--r", cal.r, "Highest coincidence order");
  c->add_option("--trials", cal.trials, "Monte Carlo trials");
  c->add_option("--seed", cal.seed, "RNG seed");
  c->add_option("--nu", cal.nu, "Combiner nu (ocsvm variant)");
  c->add_option("--out", cal_out, "Output JSON (default <model>/test_<variant>.json)");

  CalibrationArgs det;
  std::string det_variant = "k1";
  fs::path det_model, det_in;
  auto* d = app.add_subcommand("detect", "Test one block; prints the verdict and score");
  d->add_option("--model", det_model, "Bundle directory")->required();
  d->add_option("--in", det_in, "Block CSV (at least M + order rows)")->required();
  d->add_option("--variant", det_variant, "k0, k1, vc or ocsvm");
  d->add_option("--alpha", det.alpha, "False-alarm level");
  d->add_option("--K", det.K, "Number of bins (default N^2)");
  d->add_option("--r", det.r, "Highest coincidence order");
  d->add_option("--trials", det.trials, "Monte Carlo trials when calibrating in memory");
  d->add_option("--seed", det.seed, "RNG seed for in-memory calibration");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Run an experiment and write a report");
  e->add_option("--config", ev.config, "Experiment config JSON")->required();
  e->add_option("--out", ev.out, "Report directory (default ./report)");
  e->add_option("--seed", ev.seed, "RNG seed");
  e->add_option("--case", ev.corruption_case, "Corruption case (1 or 2)");
  e->add_option("--alpha", ev.alpha, "False-alarm level");
  e->add_option("--K", ev.K, "Number of bins");
  e->add_option("--N", ev.N, "Generator output components");
  e->add_option("--M", ev.M, "Window and block length");
  e->add_option("--detectors", ev.detectors, "Detectors to evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  try {
    if (*s) return run_simulate(sim);
    if (*t) return run_train(tr);
    if (*c) {
      cal.variant = parse_variant(cal_variant);
      return run_calibrate(cal_model, cal_out, cal);
    }
    if (*d) {
      det.variant = parse_variant(det_variant);
      return run_detect(det_model, det_in, det);
    }
    if (*e) return run_eval(ev);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical error: " << ex.what() << "\n";
    return 3;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return 2;
  } catch (const ShapeError& ex) {
    std::cerr << "invalid input: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}
