#include "lode/latent_ode.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "lode/error.hpp"

namespace lode::model {

namespace {

using ad::Shape;
using ad::Tensor;
using ad::Var;

// y = W x + b, plain arithmetic.
void dense(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.shape()[0], cols = w.shape()[1];
  const double* W = w.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    const double* row = W + i * cols;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
    y[i] = s + b[i];
  }
}

void tanh_inplace(std::span<double> v) {
  for (double& x : v) x = std::tanh(x);
}

Var affine(Var w, Var b, Var x) { return ad::add(ad::matmul(w, x), b); }

void check_dim(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n)
    throw ContractViolation(std::string(what) + " has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(n));
}

}  // namespace

std::vector<ParamSpec> parameter_layout(const Architecture& a) {
  const std::size_t F = a.feature_count, L = a.latent_dim, H = a.encoder_hidden,
                    D = a.encoder_input(), Hd = a.dynamics_hidden, Hx = a.decoder_hidden,
                    Hc = a.classifier_hidden, N = a.noise_dim;
  return {
      {"encoder.w_update", Shape(H, D)},  {"encoder.u_update", Shape(H, H)},
      {"encoder.b_update", Shape(H)},     {"encoder.w_reset", Shape(H, D)},
      {"encoder.u_reset", Shape(H, H)},   {"encoder.b_reset", Shape(H)},
      {"encoder.w_cand", Shape(H, D)},    {"encoder.u_cand", Shape(H, H)},
      {"encoder.b_cand", Shape(H)},       {"posterior.w", Shape(2 * L, H)},
      {"posterior.b", Shape(2 * L)},      {"dynamics.w1", Shape(Hd, L + N)},
      {"dynamics.b1", Shape(Hd)},         {"dynamics.w2", Shape(Hd, Hd)},
      {"dynamics.b2", Shape(Hd)},         {"dynamics.w3", Shape(L, Hd)},
      {"dynamics.b3", Shape(L)},          {"decoder.w1", Shape(Hx, L)},
      {"decoder.b1", Shape(Hx)},          {"decoder.w2", Shape(F, Hx)},
      {"decoder.b2", Shape(F)},           {"classifier.w1", Shape(Hc, L)},
      {"classifier.b1", Shape(Hc)},       {"classifier.w2", Shape(1, Hc)},
      {"classifier.b2", Shape(1)},
  };
}

ModelParams ModelParams::initialize(const Architecture& arch, std::uint64_t seed,
                                    double obs_noise) {
  if (arch.feature_count == 0 || arch.latent_dim == 0)
    throw ContractViolation("architecture needs features and a latent dimension");
  if (!(obs_noise > 0.0)) throw ContractViolation("observation noise must be positive");
  ModelParams p;
  p.arch = arch;
  p.obs_noise.assign(arch.feature_count, obs_noise);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto layout = parameter_layout(arch);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Shape& s = layout[i].shape;
    std::vector<double> v(s.size(), 0.0);
    if (s.rank() == 2) {
      double gain = 1.0 / std::sqrt(static_cast<double>(s[1]));
      if (static_cast<Param>(i) == Param::DynW3) gain *= 0.1;
      for (double& x : v) x = gain * normal(rng);
    }
    p.weights.emplace_back(s, std::move(v));
  }
  // Start with a moderately concentrated posterior.
  std::vector<double> post_b(2 * arch.latent_dim, 0.0);
  std::fill(post_b.begin() + static_cast<std::ptrdiff_t>(arch.latent_dim), post_b.end(), -1.0);
  p[Param::PostB] = Tensor::vector(std::move(post_b));
  for (std::size_t k = 0; k < arch.feature_count; ++k)
    p.feature_names.push_back("x" + std::to_string(k));
  return p;
}

void ModelParams::validate() const {
  const auto layout = parameter_layout(arch);
  if (weights.size() != layout.size())
    throw ContractViolation("model has " + std::to_string(weights.size()) +
                            " weight arrays, expected " + std::to_string(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i)
    if (!(weights[i].shape() == layout[i].shape))
      throw ContractViolation("weight " + layout[i].name + " has shape " +
                              weights[i].shape().str() + ", expected " + layout[i].shape.str());
  if (obs_noise.size() != arch.feature_count)
    throw ContractViolation("obs_noise must have one entry per feature");
  for (double s : obs_noise)
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractViolation("obs_noise must be positive");
  if (!norm.empty() && (norm.mean.size() != arch.feature_count ||
                        norm.std.size() != arch.feature_count))
    throw ContractViolation("norm_stats must have one entry per feature");
  if (!feature_names.empty() && feature_names.size() != arch.feature_count)
    throw ContractViolation("feature_names must have one entry per feature");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  return n;
}

ParamVars record_params(ad::Tape& tape, const ModelParams& params, bool differentiable) {
  ParamVars p;
  p.vars.reserve(kParamCount);
  for (const Tensor& w : params.weights)
    p.vars.push_back(differentiable ? tape.variable(w) : tape.constant(w));
  return p;
}

EncoderOutput encoder_on_tape(ad::Tape& tape, const ParamVars& p, const IrregularSeries& series,
                              double fraction, const Architecture& arch) {
  const std::size_t F = arch.feature_count;
  if (series.feature_count() != F)
    throw ContractViolation("series has " + std::to_string(series.feature_count()) +
                            " features, model expects " + std::to_string(F));
  const std::size_t end = series.rows_until(fraction);

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < end; ++i)
    if (std::find(series.mask[i].begin(), series.mask[i].end(), 1) != series.mask[i].end())
      rows.push_back(i);
  if (rows.empty())
    throw EmptyWindowError("no observations within the first " + std::to_string(fraction) +
                           " of the window");

  Var h = tape.constant(Tensor::zeros(Shape(arch.encoder_hidden)));
  for (std::size_t r = rows.size(); r-- > 0;) {
    const std::size_t i = rows[r];
    std::vector<double> x(2 * F + 1, 0.0);
    for (std::size_t k = 0; k < F; ++k) {
      if (series.mask[i][k] == 1) {
        x[k] = series.values[i][k];
        x[F + k] = 1.0;
      }
    }
    x[2 * F] = series.times[i] - (r > 0 ? series.times[rows[r - 1]] : 0.0);
    const Var xv = tape.constant(Tensor::vector(std::move(x)));

    const Var update =
        ad::sigmoid(ad::add(ad::add(ad::matmul(p[Param::EncWz], xv), ad::matmul(p[Param::EncUz], h)),
                            p[Param::EncBz]));
    const Var reset =
        ad::sigmoid(ad::add(ad::add(ad::matmul(p[Param::EncWr], xv), ad::matmul(p[Param::EncUr], h)),
                            p[Param::EncBr]));
    const Var cand = ad::tanh(ad::add(
        ad::add(ad::matmul(p[Param::EncWh], xv), ad::matmul(p[Param::EncUh], ad::mul(reset, h))),
        p[Param::EncBh]));
    h = ad::add(h, ad::mul(update, ad::sub(cand, h)));
  }

  const Var out = affine(p[Param::PostW], p[Param::PostB], h);
  const std::size_t L = arch.latent_dim;
  return {ad::slice(out, 0, L), ad::clamp(ad::slice(out, L, 2 * L), kLogStdMin, kLogStdMax)};
}

Var dynamics_on_tape(const ParamVars& p, Var z, Var noise) {
  const Var u = ad::concat({z, noise});
  const Var h1 = ad::tanh(affine(p[Param::DynW1], p[Param::DynB1], u));
  const Var h2 = ad::tanh(affine(p[Param::DynW2], p[Param::DynB2], h1));
  return affine(p[Param::DynW3], p[Param::DynB3], h2);
}

Var decoder_on_tape(const ParamVars& p, Var z) {
  const Var h = ad::tanh(affine(p[Param::DecW1], p[Param::DecB1], z));
  return affine(p[Param::DecW2], p[Param::DecB2], h);
}

Var classifier_logit_on_tape(const ParamVars& p, Var z) {
  const Var h = ad::tanh(affine(p[Param::ClsW1], p[Param::ClsB1], z));
  return ad::sum(affine(p[Param::ClsW2], p[Param::ClsB2], h));
}

LatentPosterior encode(const IrregularSeries& series, const ModelParams& params, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ContractViolation("fraction must lie in (0, 1]");
  ad::Tape tape;
  const ParamVars p = record_params(tape, params, false);
  const EncoderOutput enc = encoder_on_tape(tape, p, series, fraction, params.arch);
  LatentPosterior post;
  post.mean = enc.mean.value().to_vector();
  for (double ls : enc.log_std.value().data()) post.std.push_back(std::exp(ls));
  return post;
}

std::vector<double> sample_z0(const LatentPosterior& posterior, std::uint64_t seed) {
  if (posterior.mean.size() != posterior.std.size())
    throw ContractViolation("posterior mean and std differ in size");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(posterior.mean.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double e = normal(rng);
    z[i] = posterior.std[i] == 0.0 ? posterior.mean[i] : posterior.mean[i] + posterior.std[i] * e;
  }
  return z;
}

std::vector<double> sample_noise(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> e(arch.noise_dim);
  for (double& x : e) x = normal(rng);
  return e;
}

ode::VjpDynamics latent_dynamics(const ModelParams& params, std::span<const double> noise) {
  const Architecture& a = params.arch;
  check_dim(noise, a.noise_dim, "noise channel");

  struct Captured {
    std::vector<Tensor> w;  // dynamics tensors, in Param order
    std::vector<double> noise;
    std::size_t latent, hidden;
  };
  auto cap = std::make_shared<Captured>();
  for (std::size_t i = index(kDynamicsBegin); i < index(kDynamicsEnd); ++i)
    cap->w.push_back(params.weights[i]);
  cap->noise.assign(noise.begin(), noise.end());
  cap->latent = a.latent_dim;
  cap->hidden = a.dynamics_hidden;

  ode::VjpDynamics d;
  d.state_dim = a.latent_dim;
  for (const Tensor& t : cap->w) d.param_dim += t.size();

  d.eval = [cap](double, std::span<const double> z, std::span<double> dz) {
    thread_local std::vector<double> u, h1, h2;
    u.assign(z.begin(), z.end());
    u.insert(u.end(), cap->noise.begin(), cap->noise.end());
    h1.resize(cap->hidden);
    h2.resize(cap->hidden);
    dense(cap->w[0], cap->w[1], u, h1);
    tanh_inplace(h1);
    dense(cap->w[2], cap->w[3], h1, h2);
    tanh_inplace(h2);
    dense(cap->w[4], cap->w[5], h2, dz);
  };

  // Hand-written reverse pass of the three-layer MLP; the tape version of the
  // same network (dynamics_on_tape) is the reference in the tests.
  d.vjp = [cap](double, std::span<const double> z, std::span<const double> c,
                std::span<double> f, std::span<double> a_dfdz, std::span<double> a_dfdtheta) {
    const std::size_t L = cap->latent, H = cap->hidden, U = L + cap->noise.size();
    thread_local std::vector<double> u, h1, h2, g1, g2, gu;
    u.assign(z.begin(), z.end());
    u.insert(u.end(), cap->noise.begin(), cap->noise.end());
    h1.resize(H);
    h2.resize(H);
    dense(cap->w[0], cap->w[1], u, h1);
    tanh_inplace(h1);
    dense(cap->w[2], cap->w[3], h1, h2);
    tanh_inplace(h2);
    dense(cap->w[4], cap->w[5], h2, f);

    const double* W1 = cap->w[0].data().data();
    const double* W2 = cap->w[2].data().data();
    const double* W3 = cap->w[4].data().data();
    double* gW1 = a_dfdtheta.data();
    double* gb1 = gW1 + H * U;
    double* gW2 = gb1 + H;
    double* gb2 = gW2 + H * H;
    double* gW3 = gb2 + H;
    double* gb3 = gW3 + L * H;

    g2.assign(H, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
      gb3[i] = c[i];
      for (std::size_t j = 0; j < H; ++j) {
        gW3[i * H + j] = c[i] * h2[j];
        g2[j] += W3[i * H + j] * c[i];
      }
    }
    for (std::size_t j = 0; j < H; ++j) g2[j] *= 1.0 - h2[j] * h2[j];
    g1.assign(H, 0.0);
    for (std::size_t i = 0; i < H; ++i) {
      gb2[i] = g2[i];
      for (std::size_t j = 0; j < H; ++j) {
        gW2[i * H + j] = g2[i] * h1[j];
        g1[j] += W2[i * H + j] * g2[i];
      }
    }
    for (std::size_t j = 0; j < H; ++j) g1[j] *= 1.0 - h1[j] * h1[j];
    gu.assign(U, 0.0);
    for (std::size_t i = 0; i < H; ++i) {
      gb1[i] = g1[i];
      for (std::size_t j = 0; j < U; ++j) {
        gW1[i * U + j] = g1[i] * u[j];
        gu[j] += W1[i * U + j] * g1[i];
      }
    }
    std::copy(gu.begin(), gu.begin() + static_cast<std::ptrdiff_t>(L), a_dfdz.begin());
  };
  return d;
}

LatentPath evolve_from(std::span<const double> z, double from_time, std::span<const double> noise,
                       std::span<const double> times, const ModelParams& params,
                       const ode::Tolerances& tol) {
  check_dim(z, params.arch.latent_dim, "latent state");
  LatentPath path;
  path.times.assign(times.begin(), times.end());
  if (times.empty()) return path;
  const bool backward = times.back() < from_time;
  const double t_end = backward ? times.back() : std::max(times.back(), from_time);
  const ode::VjpDynamics dyn = latent_dynamics(params, noise);
  ode::OdeProblem problem{dyn.eval, {z.begin(), z.end()}, from_time, t_end, path.times};
  path.states = ode::dopri5_integrate(problem, tol).states;
  return path;
}

LatentPath evolve(std::span<const double> z0, std::span<const double> noise,
                  std::span<const double> times, const ModelParams& params,
                  const ode::Tolerances& tol) {
  if (!times.empty() && times.front() < 0.0)
    throw ContractViolation("evolve times must start at or after t = 0");
  if (!std::is_sorted(times.begin(), times.end()))
    throw ContractViolation("evolve times must be sorted");
  return evolve_from(z0, 0.0, noise, times, params, tol);
}

std::vector<double> decode_latent(std::span<const double> z, const ModelParams& params) {
  check_dim(z, params.arch.latent_dim, "latent state");
  std::vector<double> h(params.arch.decoder_hidden), x(params.arch.feature_count);
  dense(params[Param::DecW1], params[Param::DecB1], z, h);
  tanh_inplace(h);
  dense(params[Param::DecW2], params[Param::DecB2], h, x);
  return x;
}

double classify_latent(std::span<const double> z, const ModelParams& params) {
  check_dim(z, params.arch.latent_dim, "latent state");
  std::vector<double> h(params.arch.classifier_hidden), logit(1);
  dense(params[Param::ClsW1], params[Param::ClsB1], z, h);
  tanh_inplace(h);
  dense(params[Param::ClsW2], params[Param::ClsB2], h, logit);
  const double x = logit[0];
  // Stable logistic; stays strictly inside (0, 1) for |x| < ~36.
  const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(p, 1e-15, 1.0 - 1e-15);
}

Reconstruction decode(const LatentPath& path, const ModelParams& params, double observed_end) {
  Reconstruction rec;
  rec.times = path.times;
  for (std::size_t i = 0; i < path.states.size(); ++i) {
    rec.means.push_back(decode_latent(path.states[i], params));
    rec.observed_flag.push_back(path.times[i] <= observed_end);
  }
  return rec;
}

double classify(const LatentPath& path, const ModelParams& params, double observed_end) {
  if (path.states.empty()) throw ContractViolation("classify needs a non-empty path");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < path.times.size(); ++i)
    if (path.times[i] <= observed_end) idx = i;
  return classify_latent(path.states[idx], params);
}

double last_observed_time(const IrregularSeries& series, double fraction) {
  const std::size_t end = series.rows_until(fraction);
  for (std::size_t i = end; i-- > 0;)
    if (std::find(series.mask[i].begin(), series.mask[i].end(), 1) != series.mask[i].end())
      return series.times[i];
  throw EmptyWindowError("no observations within the first " + std::to_string(fraction) +
                         " of the window");
}

}  // namespace lode::model
