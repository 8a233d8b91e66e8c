#pragma once

// Variational training of the latent ODE model.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lode/data.hpp"
#include "lode/latent_ode.hpp"

namespace lode::training {

enum class GradientPath {
  Adjoint,     // dopri5 forward, adjoint backward (default)
  DirectRk4,   // fixed-step RK4 recorded on the tape
};

struct TrainConfig {
  model::Architecture arch;  // feature_count is taken from the data
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 5e-3;
  /// Multiplicative per-epoch learning-rate factor; 1 keeps it constant.
  double lr_decay = 1.0;
  std::size_t kl_warmup_epochs = 10;
  double classifier_loss_weight = 1.0;
  double obs_noise = 0.3;
  std::uint64_t seed = 0;
  double rtol = ode::kTrainingTolerances.rtol;
  double atol = ode::kTrainingTolerances.atol;
  std::size_t patience = 20;
  double validation_fraction = 0.2;
  double grad_clip = 10.0;
  GradientPath gradient_path = GradientPath::Adjoint;
  double rk4_step = 0.01;

  ode::Tolerances tolerances() const;
  /// Throws ValidationError naming the first invalid field.
  void validate() const;
};

/// Linear 0 -> 1 over the warmup epochs (epochs counted from 0), then 1.
double kl_weight(const TrainConfig& config, std::size_t epoch);

struct ElboOptions {
  double fraction = 1.0;
  double kl_weight = 1.0;
  double classifier_loss_weight = 1.0;
  std::uint64_t seed = 0;
  ode::Tolerances tolerances = ode::kTrainingTolerances;
  GradientPath gradient_path = GradientPath::Adjoint;
  double rk4_step = 0.01;
};

/// Loss = recon_nll + kl_weight * kl + classifier_loss_weight * class_loss.
struct ElboParts {
  double loss = 0.0;
  double recon_nll = 0.0;  // -log N(x | x̂, σ_x²) summed over observed entries
  double kl = 0.0;         // KL(q(z0) || N(0, I))
  double class_loss = 0.0; // binary cross-entropy; 0 without a label
  std::size_t observed = 0;
  double squared_error = 0.0;  // Σ (x - x̂)² over observed entries
};

/// The encoder reads observations with time <= fraction; the decoder is scored
/// on every observation in the window. One posterior sample and one noise draw,
/// both derived from `seed`.
ElboParts elbo(const IrregularSeries& series, const model::ModelParams& params,
               const ElboOptions& options);

struct ElboGradient {
  ElboParts parts;
  std::vector<std::vector<double>> grads;  // indexed by Param, flattened
};

ElboGradient elbo_gradient(const IrregularSeries& series, const model::ModelParams& params,
                           const ElboOptions& options);

/// Elbo evaluated with a user-supplied posterior in place of the encoder output.
/// Used to check the KL identity.
ElboParts elbo_with_posterior(const IrregularSeries& series, const model::ModelParams& params,
                              const model::LatentPosterior& posterior, const ElboOptions& options);

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;

  void step(model::ModelParams& params, const std::vector<std::vector<double>>& grads, double lr);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double kl_weight = 0.0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_mse = 0.0;
  double validation_auc = 0.5;
  std::size_t aborted_batches = 0;
  std::size_t batches = 0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;
  std::string checkpoint;  // path of the saved checkpoint, when one was written

  /// One JSON object per line. Wall-clock fields are omitted when
  /// `include_wall_clock` is false so runs can be compared byte for byte.
  std::string to_jsonl(bool include_wall_clock = true) const;
};

struct TrainResult {
  model::ModelParams params;  // best validation checkpoint
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// `dataset` must be normalized; its statistics travel into the checkpoint.
/// Splits off config.validation_fraction by seed for model selection.
TrainResult train(const data::Collection& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Runs train() starting from the given parameters instead of a fresh initialization.
TrainResult train_from(const data::Collection& dataset, const TrainConfig& config,
                       model::ModelParams init, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::vector<double> fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
  ode::Tolerances tolerances = ode::kInferenceTolerances;
  double threshold = 0.5;
};

struct FractionMetrics {
  double fraction = 1.0;
  double mse = 0.0;             // all observed entries in the window
  double final_fifth_mse = 0.0; // observed entries with time > 0.8
  double auc = 0.5;
  double accuracy = 0.0;
};

struct EvalMetrics {
  std::vector<FractionMetrics> per_fraction;
  std::size_t series = 0;
  std::size_t skipped = 0;  // series with no observation inside a fraction

  const FractionMetrics& at(double fraction) const;
  nlohmann::json to_json() const;
};

/// Deterministic point predictions: posterior mean z0 and a zero noise channel.
EvalMetrics evaluate(const data::Collection& series, const model::ModelParams& params,
                     const EvalOptions& options = {});

/// Reconstruction of a series at its observation times from the posterior mean.
model::Reconstruction point_reconstruction(const IrregularSeries& series,
                                           const model::ModelParams& params, double fraction,
                                           std::span<const double> times,
                                           const ode::Tolerances& tol = ode::kInferenceTolerances);

nlohmann::json to_json(const TrainConfig& config);
/// Inverse of to_json; missing keys keep their defaults, unknown keys raise ValidationError.
TrainConfig train_config_from_json(const nlohmann::json& doc);

}  // namespace lode::training
