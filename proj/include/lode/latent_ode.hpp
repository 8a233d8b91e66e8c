#pragma once

// Latent ODE model: a backwards-in-time GRU encodes an irregular series into a
// Gaussian posterior over the initial latent state z0; z evolves under a learned
// autonomous vector field f(z, noise); an MLP decodes each latent to feature means,
// and a second MLP reads the latent at the last observed time as an outcome logit.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lode/autodiff.hpp"
#include "lode/odeint.hpp"
#include "lode/series.hpp"

namespace lode::model {

struct Architecture {
  std::size_t feature_count = 0;
  std::size_t latent_dim = 16;
  std::size_t encoder_hidden = 32;
  std::size_t dynamics_hidden = 64;
  std::size_t decoder_hidden = 64;
  std::size_t classifier_hidden = 32;
  /// Width of the constant per-trajectory noise input to the dynamics.
  std::size_t noise_dim = 2;

  std::size_t encoder_input() const { return 2 * feature_count + 1; }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

enum class Param : std::size_t {
  EncWz, EncUz, EncBz,
  EncWr, EncUr, EncBr,
  EncWh, EncUh, EncBh,
  PostW, PostB,
  DynW1, DynB1, DynW2, DynB2, DynW3, DynB3,
  DecW1, DecB1, DecW2, DecB2,
  ClsW1, ClsB1, ClsW2, ClsB2,
  Count,
};
inline constexpr std::size_t kParamCount = static_cast<std::size_t>(Param::Count);
inline constexpr std::size_t index(Param p) { return static_cast<std::size_t>(p); }

/// First and one-past-last dynamics parameter.
inline constexpr Param kDynamicsBegin = Param::DynW1;
inline constexpr Param kDynamicsEnd = Param::DecW1;

struct ParamSpec {
  std::string name;
  ad::Shape shape;
};

/// Names and shapes of every weight array, fully determined by the architecture.
std::vector<ParamSpec> parameter_layout(const Architecture& arch);

struct ModelParams {
  Architecture arch;
  std::vector<ad::Tensor> weights;  // indexed by Param
  /// Observation noise σ_x per feature, normalized units.
  std::vector<double> obs_noise;
  NormStats norm;
  std::vector<std::string> feature_names;
  double window = 1.0;

  const ad::Tensor& operator[](Param p) const { return weights[index(p)]; }
  ad::Tensor& operator[](Param p) { return weights[index(p)]; }

  /// Scaled-normal weights, zero biases, small last dynamics layer.
  static ModelParams initialize(const Architecture& arch, std::uint64_t seed, double obs_noise);
  /// Throws ContractViolation if shapes disagree with the architecture or σ_x <= 0.
  void validate() const;
  std::size_t parameter_count() const;
};

struct LatentPosterior {
  std::vector<double> mean;
  std::vector<double> std;
};

struct LatentPath {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
};

struct Reconstruction {
  std::vector<double> times;
  std::vector<std::vector<double>> means;
  /// True within the observed span, false for extrapolation.
  std::vector<bool> observed_flag;
};

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 3.0;

/// Runs the encoder over observations with time <= fraction, newest first.
/// Throws EmptyWindowError if no entry is observed there.
LatentPosterior encode(const IrregularSeries& series, const ModelParams& params, double fraction);

std::vector<double> sample_z0(const LatentPosterior& posterior, std::uint64_t seed);
std::vector<double> sample_noise(const Architecture& arch, std::uint64_t seed);

/// Integrates the latent dynamics from t = 0 and reports the state at each of `times`.
LatentPath evolve(std::span<const double> z0, std::span<const double> noise,
                  std::span<const double> times, const ModelParams& params,
                  const ode::Tolerances& tol = ode::kInferenceTolerances);

/// Same dynamics, integrated from `from_time` to each (earlier or later) time.
LatentPath evolve_from(std::span<const double> z, double from_time,
                       std::span<const double> noise, std::span<const double> times,
                       const ModelParams& params,
                       const ode::Tolerances& tol = ode::kInferenceTolerances);

Reconstruction decode(const LatentPath& path, const ModelParams& params, double observed_end);

/// Outcome probability from the latent at the last path time <= observed_end
/// (the first path time if none qualifies).
double classify(const LatentPath& path, const ModelParams& params, double observed_end);
double classify_latent(std::span<const double> z, const ModelParams& params);
std::vector<double> decode_latent(std::span<const double> z, const ModelParams& params);

/// Time of the last observed row with time <= fraction; throws EmptyWindowError if none.
double last_observed_time(const IrregularSeries& series, double fraction);

// ---------------------------------------------------------------------------
// Tape-level building blocks shared with training.

/// Parameters recorded on a tape, indexed by Param.
struct ParamVars {
  std::vector<ad::Var> vars;
  ad::Var operator[](Param p) const { return vars[index(p)]; }
};

ParamVars record_params(ad::Tape& tape, const ModelParams& params, bool differentiable);

struct EncoderOutput {
  ad::Var mean;
  ad::Var log_std;  // clamped to [kLogStdMin, kLogStdMax]
};

EncoderOutput encoder_on_tape(ad::Tape& tape, const ParamVars& p, const IrregularSeries& series,
                              double fraction, const Architecture& arch);
ad::Var dynamics_on_tape(const ParamVars& p, ad::Var z, ad::Var noise);
ad::Var decoder_on_tape(const ParamVars& p, ad::Var z);
ad::Var classifier_logit_on_tape(const ParamVars& p, ad::Var z);

/// Latent vector field with a direct evaluation and a hand-written
/// vector–Jacobian product over the dynamics parameters only.
ode::VjpDynamics latent_dynamics(const ModelParams& params, std::span<const double> noise);

}  // namespace lode::model
