#include "bsd/gan.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "bsd/error.hpp"
#include "bsd/occupancy.hpp"

namespace bsd {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ShapeError("learning rate must be > 0");
  if (!(penalty >= 0.0)) throw ShapeError("penalty coefficient must be >= 0");
  if (batch < 1) throw ShapeError("batch size must be >= 1");
  if (critic_iters < 1) throw ShapeError("critic iterations must be >= 1");
  if (window < 1) throw ShapeError("window length M must be >= 1");
  if (components < 1 || components > window)
    throw ShapeError("component count N must satisfy 1 <= N <= M (N=" + std::to_string(components) +
                     ", M=" + std::to_string(window) + ")");
  if (iters < 0) throw ShapeError("iteration count must be >= 0");
  for (int h : hidden)
    if (h < 1) throw ShapeError("hidden widths must be positive");
  if (eval_every < 0 || patience < 1) throw ShapeError("bad early-stopping settings");
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"alpha", c.learning_rate}, {"lambda", c.penalty},   {"b", c.batch},
              {"c", c.critic_iters},      {"M", c.window},         {"N", c.components},
              {"iters", c.iters},         {"hidden", c.hidden},    {"seed", c.seed},
              {"eval_every", c.eval_every}, {"patience", c.patience}, {"eval_alpha", c.eval_alpha}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  c.learning_rate = j.value("alpha", c.learning_rate);
  c.penalty = j.value("lambda", c.penalty);
  c.batch = j.value("b", c.batch);
  c.critic_iters = j.value("c", c.critic_iters);
  c.window = j.value("M", c.window);
  c.components = j.value("N", c.components);
  c.iters = j.value("iters", c.iters);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  c.eval_alpha = j.value("eval_alpha", c.eval_alpha);
  return c;
}

GanModels init_gan(const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<int> gen_widths{config.window};
  gen_widths.insert(gen_widths.end(), config.hidden.begin(), config.hidden.end());
  gen_widths.push_back(config.components);
  std::vector<int> disc_widths{config.components};
  disc_widths.insert(disc_widths.end(), config.hidden.begin(), config.hidden.end());
  disc_widths.push_back(1);

  GanModels models;
  models.generator.whitener = Whitener::identity(4);
  models.generator.net = make_mlp<double>(gen_widths, rng);
  models.discriminator = make_mlp<double>(disc_widths, rng);
  return models;
}

LossAndGrads disc_loss(const IcaGenerator& gen, const MlpParams& disc,
                       const Eigen::Ref<const Eigen::MatrixXd>& Z,
                       const Eigen::Ref<const Eigen::MatrixXd>& U,
                       const Eigen::Ref<const Eigen::VectorXd>& mix, double lambda) {
  const Eigen::Index b = Z.cols();
  if (b == 0) throw ShapeError("disc_loss: empty batch");
  if (U.cols() != b || mix.size() != b) throw ShapeError("disc_loss: batch sizes disagree");
  if (U.rows() != disc.input_width()) throw ShapeError("disc_loss: U width != discriminator input");
  if ((mix.array() < 0.0).any() || (mix.array() > 1.0).any())
    throw ShapeError("disc_loss: mixing weights must lie in [0,1]");

  const Eigen::MatrixXd fake = forward(gen.net, Eigen::MatrixXd(Z));
  if (fake.rows() != disc.input_width()) throw ShapeError("disc_loss: generator/discriminator widths disagree");
  const Eigen::MatrixXd real = U;
  const Eigen::MatrixXd blend =
      real * mix.asDiagonal() + fake * (Eigen::VectorXd::Ones(b) - mix).asDiagonal();

  const double inv_b = 1.0 / static_cast<double>(b);
  ForwardCache<double> fake_cache, real_cache;
  const Eigen::MatrixXd f_fake = forward(disc, fake, &fake_cache);
  const Eigen::MatrixXd f_real = forward(disc, real, &real_cache);
  auto penalty = gradient_penalty(disc, blend, lambda);

  LossAndGrads out;
  out.loss = (f_fake.sum() - f_real.sum() + penalty.penalties.sum()) * inv_b;
  out.grads = backward(disc, fake_cache, Eigen::MatrixXd(Eigen::MatrixXd::Constant(1, b, inv_b)));
  out.grads += backward(disc, real_cache, Eigen::MatrixXd(Eigen::MatrixXd::Constant(1, b, -inv_b)));
  penalty.grads *= inv_b;
  out.grads += penalty.grads;
  out.grads.input.resize(0, 0);
  return out;
}

LossAndGrads gen_loss(const IcaGenerator& gen, const MlpParams& disc,
                      const Eigen::Ref<const Eigen::MatrixXd>& Z) {
  const Eigen::Index b = Z.cols();
  if (b == 0) throw ShapeError("gen_loss: empty batch");
  ForwardCache<double> gen_cache, disc_cache;
  const Eigen::MatrixXd fake = forward(gen.net, Eigen::MatrixXd(Z), &gen_cache);
  const Eigen::MatrixXd scores = forward(disc, fake, &disc_cache);
  const double inv_b = 1.0 / static_cast<double>(b);

  const auto disc_grads = backward(disc, disc_cache, Eigen::MatrixXd(Eigen::MatrixXd::Constant(1, b, -inv_b)));
  LossAndGrads out;
  out.loss = -scores.sum() * inv_b;
  out.grads = backward(gen.net, gen_cache, disc_grads.input);
  out.grads.input.resize(0, 0);
  return out;
}

Eigen::VectorXd window_at(const Eigen::Ref<const Eigen::VectorXd>& residuals, Eigen::Index t, int M) {
  if (t < M - 1 || t >= residuals.size()) throw ShapeError("window_at: window outside the series");
  return residuals.segment(t - M + 1, M).reverse();
}

Eigen::MatrixXd windows_of(const Eigen::Ref<const Eigen::VectorXd>& residuals, int M, int stride) {
  if (stride < 1) throw ShapeError("stride must be >= 1");
  if (residuals.size() < M) return Eigen::MatrixXd(M, 0);
  const Eigen::Index count = (residuals.size() - M) / stride + 1;
  Eigen::MatrixXd out(M, count);
  for (Eigen::Index k = 0; k < count; ++k) out.col(k) = window_at(residuals, M - 1 + k * stride, M);
  return out;
}

Eigen::VectorXd transform(const IcaGenerator& gen, const Eigen::Ref<const Eigen::VectorXd>& window) {
  if (window.size() != gen.window())
    throw ShapeError("transform: window length " + std::to_string(window.size()) + " != M=" +
                     std::to_string(gen.window()));
  return forward(gen.net, Eigen::VectorXd(window));
}

Eigen::MatrixXd transform_batch(const IcaGenerator& gen, const Eigen::Ref<const Eigen::MatrixXd>& windows) {
  if (windows.rows() != gen.window()) throw ShapeError("transform: window length != M");
  return forward(gen.net, Eigen::MatrixXd(windows));
}

Eigen::VectorXd transform_raw(const IcaGenerator& gen, const Eigen::Ref<const Eigen::VectorXd>& raw) {
  const Eigen::Index need = gen.window() + gen.whitener.order;
  if (raw.size() != need)
    throw ShapeError("transform_raw: segment length " + std::to_string(raw.size()) + " != M + order = " +
                     std::to_string(need));
  const Eigen::VectorXd r = normalized_residuals(gen.whitener, raw);
  return transform(gen, window_at(r, r.size() - 1, gen.window()));
}

double k1_pass_rate(const IcaGenerator& gen, const EcdfModel& ecdf,
                    const Eigen::Ref<const Eigen::MatrixXd>& windows, double alpha, int bins) {
  if (windows.cols() == 0) return 0.0;
  const int N = gen.components();
  const TestSpec spec = make_k1_spec(N, bins, alpha);
  const Eigen::MatrixXd out = transform_batch(gen, windows);
  int pass = 0;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const Eigen::VectorXd u = ecdf.apply(out.col(c));
    if (!k1_test(stratify({u.data(), static_cast<std::size_t>(u.size())}, bins, 1), spec).anomaly) ++pass;
  }
  return static_cast<double>(pass) / static_cast<double>(out.cols());
}

TrainReport train(const Eigen::Ref<const Eigen::VectorXd>& residuals, const TrainConfig& config,
                  const std::optional<ValidationData>& validation, std::optional<GanModels> start) {
  config.validate();
  const int M = config.window;
  const Eigen::Index T = residuals.size();
  if (T < M + config.batch)
    throw DataError("training series too short: need at least M + b = " + std::to_string(M + config.batch) +
                    " samples, got " + std::to_string(T));
  if (!residuals.allFinite()) throw DataError("training series contains non-finite values");

  TrainReport report;
  GanModels models = start ? std::move(*start) : init_gan(config, config.seed);
  if (models.generator.net.input_width() != M || models.generator.net.output_width() != config.components)
    throw ShapeError("initial generator does not match the configured M and N");
  report.final_models = models;
  if (config.iters == 0) return report;

  auto gen_state = AdamState<double>::for_params(models.generator.net);
  auto disc_state = AdamState<double>::for_params(models.discriminator);

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<Eigen::Index> pick_t(M - 1, T - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int b = config.batch;
  const int N = config.components;
  Eigen::MatrixXd Z(M, b);
  Eigen::MatrixXd U(N, b);
  Eigen::VectorXd mix(b);
  auto sample_windows = [&] {
    for (int l = 0; l < b; ++l) Z.col(l) = residuals.segment(pick_t(rng) - M + 1, M).reverse();
  };

  const bool early_stop = validation && config.eval_every > 0 && validation->windows.cols() > 0 &&
                          validation->reference.cols() >= 2;
  const int bins = N * N;
  double best_rate = -1.0;
  int stale = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int it = 0; it < config.iters; ++it) {
    double critic_sum = 0.0;
    for (int k = 0; k < config.critic_iters; ++k) {
      sample_windows();
      for (Eigen::Index i = 0; i < U.size(); ++i) U.data()[i] = unif(rng);
      for (int l = 0; l < b; ++l) mix(l) = unif(rng);
      auto d = disc_loss(models.generator, models.discriminator, Z, U, mix, config.penalty);
      if (!std::isfinite(d.loss))
        throw NumericalError("non-finite discriminator loss at iteration " + std::to_string(it) +
                             " (seed " + std::to_string(config.seed) + ")");
      adam_step(models.discriminator, d.grads, disc_state, config.learning_rate);
      critic_sum += d.loss;
    }
    sample_windows();
    auto g = gen_loss(models.generator, models.discriminator, Z);
    if (!std::isfinite(g.loss))
      throw NumericalError("non-finite generator loss at iteration " + std::to_string(it) + " (seed " +
                           std::to_string(config.seed) + ")");
    adam_step(models.generator.net, g.grads, gen_state, config.learning_rate);

    report.disc_loss.push_back(critic_sum / config.critic_iters);
    report.gen_loss.push_back(g.loss);
    report.wall_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    report.iterations_run = it + 1;

    if (early_stop && (it + 1) % config.eval_every == 0) {
      const EcdfModel ecdf = EcdfModel::fit(transform_batch(models.generator, validation->reference));
      const double rate =
          k1_pass_rate(models.generator, ecdf, validation->windows, config.eval_alpha, bins);
      report.val_pass_rate.push_back(rate);
      if (rate > best_rate) {
        best_rate = rate;
        stale = 0;
        report.final_models = models;
        report.best_iteration = it + 1;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  if (!early_stop) {
    report.final_models = models;
    report.best_iteration = report.iterations_run;
  }
  return report;
}

void save_bundle(const ChannelBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(mlp_to_json(bundle.models.generator.net), dir / "generator.json");
  write_json(mlp_to_json(bundle.models.discriminator), dir / "discriminator.json");
  write_json(whitener_to_json(bundle.models.generator.whitener), dir / "whitener.json");
  write_json(ecdf_to_json(bundle.ecdf), dir / "ecdf.json");
  write_json(json{{"train_config", train_config_to_json(bundle.config)}, {"seed", bundle.config.seed}},
             dir / "manifest.json");
}

ChannelBundle load_bundle(const std::filesystem::path& dir) {
  for (const char* f : {"generator.json", "discriminator.json", "whitener.json", "ecdf.json", "manifest.json"})
    if (!std::filesystem::exists(dir / f)) throw DataError("model bundle " + dir.string() + " lacks " + f);
  ChannelBundle b;
  try {
    b.models.generator.net = mlp_from_json(read_json(dir / "generator.json"));
    b.models.discriminator = mlp_from_json(read_json(dir / "discriminator.json"));
    b.models.generator.whitener = whitener_from_json(read_json(dir / "whitener.json"));
    b.ecdf = ecdf_from_json(read_json(dir / "ecdf.json"));
    b.config = train_config_from_json(read_json(dir / "manifest.json").at("train_config"));
  } catch (const json::exception& e) {
    throw DataError("model bundle " + dir.string() + ": " + e.what());
  }
  if (b.ecdf.dims() != b.models.generator.components())
    throw DataError("model bundle " + dir.string() + ": ECDF dimension does not match generator output");
  return b;
}

}  // namespace bsd
