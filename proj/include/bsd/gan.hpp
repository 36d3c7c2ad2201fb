#pragma once

// ICA generator (M-sample residual window -> N components) trained against
// a critic with the Wasserstein objective and an input-gradient penalty.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "bsd/json_io.hpp"
#include "bsd/preprocess.hpp"
#include "bsd/tensorcore.hpp"

namespace bsd {

struct TrainConfig {
  double learning_rate = 1e-4;
  double penalty = 0.1;  // lambda
  int batch = 100;
  int critic_iters = 10;
  int window = 80;       // M
  int components = 50;   // N
  int iters = 5000;
  std::vector<int> hidden{100, 100, 100};
  std::uint64_t seed = 0;
  // Validation-driven early stopping; disabled when eval_every == 0 or no
  // validation windows are supplied.
  int eval_every = 100;
  int patience = 10;
  double eval_alpha = 0.05;

  void validate() const;
};

json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j, TrainConfig defaults = {});

struct IcaGenerator {
  Whitener whitener;
  MlpParams net;  // M -> N

  int window() const { return static_cast<int>(net.input_width()); }
  int components() const { return static_cast<int>(net.output_width()); }
};

struct GanModels {
  IcaGenerator generator;
  MlpParams discriminator;  // N -> 1
};

GanModels init_gan(const TrainConfig& config, std::uint64_t seed);

struct LossAndGrads {
  double loss = 0.0;
  Gradients<double> grads;
};

// Batches are column-wise: Z is M x b, U is N x b, mix has b entries in [0,1].
// Mean over the batch of f(g(Z)) - f(U) + lambda (||grad f(mix U + (1-mix) g(Z))|| - 1)^2;
// gradients are with respect to the discriminator only.
LossAndGrads disc_loss(const IcaGenerator& gen, const MlpParams& disc,
                       const Eigen::Ref<const Eigen::MatrixXd>& Z,
                       const Eigen::Ref<const Eigen::MatrixXd>& U,
                       const Eigen::Ref<const Eigen::VectorXd>& mix, double lambda);

// -mean f(g(Z)); gradients with respect to the generator only.
LossAndGrads gen_loss(const IcaGenerator& gen, const MlpParams& disc,
                      const Eigen::Ref<const Eigen::MatrixXd>& Z);

// Window ending at index t, most recent first: (r_t, r_{t-1}, ..., r_{t-M+1}).
Eigen::VectorXd window_at(const Eigen::Ref<const Eigen::VectorXd>& residuals, Eigen::Index t, int M);

// All windows ending at t = M-1, M-1+stride, ... as columns.
Eigen::MatrixXd windows_of(const Eigen::Ref<const Eigen::VectorXd>& residuals, int M, int stride = 1);

struct TrainReport {
  std::vector<double> disc_loss;  // mean over the critic batches of each iteration
  std::vector<double> gen_loss;
  std::vector<double> wall_seconds;  // cumulative; not part of any written output
  std::vector<double> val_pass_rate;  // one per evaluation
  int iterations_run = 0;
  int best_iteration = 0;
  GanModels final_models;
};

struct ValidationData {
  Eigen::MatrixXd windows;    // M x n_val normalised-residual windows
  Eigen::MatrixXd reference;  // M x n_ref training windows for the ECDF fit
};

// residuals: normalised whitened anomaly-free series. Runs `iters` outer
// iterations, each with `critic_iters` critic batches then one generator batch.
TrainReport train(const Eigen::Ref<const Eigen::VectorXd>& residuals, const TrainConfig& config,
                  const std::optional<ValidationData>& validation = std::nullopt,
                  std::optional<GanModels> start = std::nullopt);

// Generator output for one normalised-residual window of length M.
Eigen::VectorXd transform(const IcaGenerator& gen, const Eigen::Ref<const Eigen::VectorXd>& window);
Eigen::MatrixXd transform_batch(const IcaGenerator& gen, const Eigen::Ref<const Eigen::MatrixXd>& windows);

// Raw segment of length M + order: whiten, normalise, then transform.
Eigen::VectorXd transform_raw(const IcaGenerator& gen, const Eigen::Ref<const Eigen::VectorXd>& raw);

// Fraction of windows whose ECDF-mapped components pass the K1 test.
double k1_pass_rate(const IcaGenerator& gen, const EcdfModel& ecdf,
                    const Eigen::Ref<const Eigen::MatrixXd>& windows, double alpha, int bins);

// Bundle for one channel: generator.json, discriminator.json, whitener.json,
// ecdf.json, manifest.json.
struct ChannelBundle {
  GanModels models;
  EcdfModel ecdf;
  TrainConfig config;
};

void save_bundle(const ChannelBundle& bundle, const std::filesystem::path& dir);
ChannelBundle load_bundle(const std::filesystem::path& dir);

}  // namespace bsd
