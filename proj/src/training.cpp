#include "lode/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "lode/error.hpp"
#include "lode/metrics.hpp"
#include "lode/seed.hpp"

namespace lode::training {

using ad::Tensor;
using ad::Var;
using model::Param;
using nlohmann::json;

namespace {

bool row_observed(const IrregularSeries& s, std::size_t i) {
  return std::find(s.mask[i].begin(), s.mask[i].end(), 1) != s.mask[i].end();
}

bool has_observation(const IrregularSeries& s, double fraction) {
  const std::size_t end = s.rows_until(fraction);
  for (std::size_t i = 0; i < end; ++i)
    if (row_observed(s, i)) return true;
  return false;
}

/// Rows that carry at least one observation, and the position of the
/// classifier's reading time among them.
struct Schedule {
  std::vector<double> times;
  std::vector<std::size_t> rows;
  std::size_t class_index = 0;
};

Schedule schedule_for(const IrregularSeries& s, double fraction) {
  Schedule sc;
  const double tc = model::last_observed_time(s, fraction);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!row_observed(s, i)) continue;
    if (s.times[i] == tc) sc.class_index = sc.times.size();
    sc.times.push_back(s.times[i]);
    sc.rows.push_back(i);
  }
  return sc;
}

struct DecoderTerms {
  Var loss;                 // differentiable part: 0.5 Σ r² + w_c · bce
  double constant = 0.0;    // Σ log σ + 0.5 log 2π over observed entries
  double half_sq = 0.0;     // 0.5 Σ r² value
  double bce = 0.0;
  std::size_t observed = 0;
  double squared_error = 0.0;
};

DecoderTerms decoder_terms(ad::Tape& tape, const model::ParamVars& p,
                           std::span<const Var> z, const IrregularSeries& s, const Schedule& sc,
                           const model::ModelParams& params, double classifier_weight) {
  const std::size_t F = s.feature_count();
  DecoderTerms out;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  std::vector<Var> sq_terms;
  sq_terms.reserve(sc.rows.size());
  for (std::size_t j = 0; j < sc.rows.size(); ++j) {
    const std::size_t i = sc.rows[j];
    std::vector<double> target(F, 0.0), weight(F, 0.0);
    for (std::size_t k = 0; k < F; ++k) {
      if (!s.mask[i][k]) continue;
      target[k] = s.values[i][k];
      weight[k] = 1.0 / params.obs_noise[k];
      out.constant += std::log(params.obs_noise[k]) + half_log_2pi;
      ++out.observed;
    }
    const Var xhat = model::decoder_on_tape(p, z[j]);
    const Var r = ad::mul(ad::sub(xhat, tape.constant(Tensor::vector(std::move(target)))),
                          tape.constant(Tensor::vector(std::move(weight))));
    sq_terms.push_back(ad::sum(ad::mul(r, r)));
    const auto xv = xhat.value().data();
    for (std::size_t k = 0; k < F; ++k)
      if (s.mask[i][k]) {
        const double d = xv[k] - s.values[i][k];
        out.squared_error += d * d;
      }
  }
  Var loss = ad::scale(ad::sum(ad::concat(std::span<const Var>(sq_terms))), 0.5);
  out.half_sq = loss.value().item();
  if (s.label) {
    const Var logit = model::classifier_logit_on_tape(p, z[sc.class_index]);
    const Var bce = ad::sub(ad::softplus(logit), ad::scale(logit, double(*s.label)));
    out.bce = bce.value().item();
    loss = ad::add(loss, ad::scale(bce, classifier_weight));
  }
  out.loss = loss;
  return out;
}

Var kl_on_tape(ad::Tape& tape, Var mean, Var log_std) {
  const std::size_t L = mean.value().size();
  const Var second = ad::add(ad::mul(mean, mean), ad::exp(ad::scale(log_std, 2.0)));
  const Var terms = ad::sub(ad::scale(ad::add(second, tape.constant(Tensor::vector(std::vector<double>(L, -1.0)))), 0.5),
                            log_std);
  return ad::sum(terms);
}

std::vector<double> standard_normal(std::size_t n, std::uint64_t seed) {
  model::LatentPosterior unit{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)};
  return model::sample_z0(unit, seed);
}

void add_into(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

struct Posterior {
  Var mean, log_std;
};

/// Shared implementation of the value and gradient computations.
ElboGradient run_elbo(const IrregularSeries& s, const model::ModelParams& params,
                      const ElboOptions& o, bool want_grad,
                      const model::LatentPosterior* fixed_posterior) {
  const model::Architecture& arch = params.arch;
  if (s.feature_count() != arch.feature_count)
    throw ContractViolation("series has " + std::to_string(s.feature_count()) +
                            " features, model expects " + std::to_string(arch.feature_count));
  const Schedule sc = schedule_for(s, o.fraction);
  const std::vector<double> eps = standard_normal(arch.latent_dim, o.seed);
  const std::vector<double> noise = model::sample_noise(arch, o.seed);

  ElboGradient result;
  if (want_grad) {
    result.grads.resize(model::kParamCount);
    for (std::size_t i = 0; i < model::kParamCount; ++i)
      result.grads[i].assign(params.weights[i].size(), 0.0);
  }

  auto posterior_on = [&](ad::Tape& tape, const model::ParamVars& p) -> Posterior {
    if (fixed_posterior) {
      std::vector<double> ls;
      for (double sd : fixed_posterior->std) ls.push_back(std::log(sd));
      return {tape.constant(Tensor::vector(fixed_posterior->mean)),
              tape.constant(Tensor::vector(std::move(ls)))};
    }
    const model::EncoderOutput enc = model::encoder_on_tape(tape, p, s, o.fraction, arch);
    return {enc.mean, enc.log_std};
  };
  auto finish = [&](const DecoderTerms& d, double kl) {
    ElboParts& parts = result.parts;
    parts.recon_nll = d.half_sq + d.constant;
    parts.kl = kl;
    parts.class_loss = d.bce;
    parts.observed = d.observed;
    parts.squared_error = d.squared_error;
    parts.loss = parts.recon_nll + o.kl_weight * kl + o.classifier_loss_weight * d.bce;
  };
  auto collect = [&](const ad::Gradients& g, const model::ParamVars& p, Param begin, Param end) {
    for (std::size_t i = model::index(begin); i < model::index(end); ++i)
      add_into(result.grads[i], g.raw(p.vars[i]));
  };

  if (o.gradient_path == GradientPath::DirectRk4) {
    ad::Tape tape;
    const model::ParamVars p = model::record_params(tape, params, want_grad);
    const Posterior post = posterior_on(tape, p);
    const Var z0 = ad::add(post.mean, ad::mul(ad::exp(post.log_std), tape.constant(Tensor::vector(eps))));
    const Var kl = kl_on_tape(tape, post.mean, post.log_std);
    const Var nv = tape.constant(Tensor::vector(noise));
    const auto z = ode::rk4_on_tape([&](double, Var y) { return model::dynamics_on_tape(p, y, nv); },
                                    z0, 0.0, sc.times, o.rk4_step);
    const DecoderTerms d = decoder_terms(tape, p, z, s, sc, params, o.classifier_loss_weight);
    finish(d, kl.value().item());
    if (want_grad) {
      const Var total = ad::add(d.loss, ad::scale(kl, o.kl_weight));
      const ad::Gradients g = tape.backward(total);
      collect(g, p, Param::EncWz, Param::Count);
    }
    return result;
  }

  // Adjoint path: encoder tape, plain forward solve, decoder tape, adjoint, encoder backward.
  ad::Tape enc_tape;
  const model::ParamVars pe = model::record_params(enc_tape, params, want_grad);
  const Posterior post = posterior_on(enc_tape, pe);
  const Var z0 = ad::add(post.mean, ad::mul(ad::exp(post.log_std), enc_tape.constant(Tensor::vector(eps))));
  const Var kl = kl_on_tape(enc_tape, post.mean, post.log_std);
  const std::vector<double> z0v = z0.value().to_vector();

  const ode::VjpDynamics dyn = model::latent_dynamics(params, noise);
  const ode::OdeProblem problem{dyn.eval, z0v, 0.0, sc.times.back(), sc.times};
  const ode::OdeSolution fwd = ode::dopri5_integrate(problem, o.tolerances);

  ad::Tape dec_tape;
  const model::ParamVars pd = model::record_params(dec_tape, params, want_grad);
  std::vector<Var> z;
  for (const auto& st : fwd.states) z.push_back(dec_tape.variable(Tensor::vector(st)));
  const DecoderTerms d = decoder_terms(dec_tape, pd, z, s, sc, params, o.classifier_loss_weight);
  finish(d, kl.value().item());
  if (!want_grad) return result;

  const ad::Gradients gd = dec_tape.backward(d.loss);
  collect(gd, pd, Param::DecW1, Param::Count);
  std::vector<ode::State> loss_grads;
  for (const Var& zi : z) loss_grads.push_back(gd[zi].to_vector());

  const ode::AdjointResult adj =
      ode::adjoint_gradients(dyn, z0v, 0.0, sc.times, loss_grads, o.tolerances, &fwd.states);
  std::size_t offset = 0;
  for (std::size_t i = model::index(model::kDynamicsBegin); i < model::index(model::kDynamicsEnd); ++i) {
    const std::size_t n = result.grads[i].size();
    add_into(result.grads[i], std::span<const double>(adj.grad_params).subspan(offset, n));
    offset += n;
  }

  if (!fixed_posterior) {
    const Var surrogate = ad::add(ad::scale(kl, o.kl_weight),
                                  ad::sum(ad::mul(z0, enc_tape.constant(Tensor::vector(adj.grad_y0)))));
    const ad::Gradients ge = enc_tape.backward(surrogate);
    collect(ge, pe, Param::EncWz, model::kDynamicsBegin);
  }
  return result;
}

bool all_finite(const std::vector<std::vector<double>>& g) {
  for (const auto& v : g)
    for (double x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

double pick_fraction(const IrregularSeries& s, int k) {
  for (; k < 5; ++k)
    if (has_observation(s, k / 5.0)) return k / 5.0;
  return 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------

ode::Tolerances TrainConfig::tolerances() const {
  ode::Tolerances t;
  t.rtol = rtol;
  t.atol = atol;
  return t;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* msg) {
    if (!ok) throw ValidationError(field, msg);
  };
  require(epochs >= 1, "epochs", "epochs must be positive");
  require(batch_size >= 1, "batch_size", "batch_size must be positive");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate",
          "learning_rate must be non-negative");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay", "lr_decay must lie in (0, 1]");
  require(classifier_loss_weight >= 0.0, "classifier_loss_weight",
          "classifier_loss_weight must be non-negative");
  require(obs_noise > 0.0, "obs_noise", "obs_noise must be positive");
  require(rtol > 0.0 && atol > 0.0, "tolerances", "rtol and atol must be positive");
  require(patience >= 1, "patience", "patience must be positive");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0, "validation_fraction",
          "validation_fraction must lie in [0, 1)");
  require(grad_clip > 0.0, "grad_clip", "grad_clip must be positive");
  require(rk4_step > 0.0, "rk4_step", "rk4_step must be positive");
  require(arch.latent_dim > 0 && arch.encoder_hidden > 0 && arch.dynamics_hidden > 0 &&
              arch.decoder_hidden > 0 && arch.classifier_hidden > 0,
          "arch", "hidden sizes must be positive");
}

double kl_weight(const TrainConfig& c, std::size_t epoch) {
  if (c.kl_warmup_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(c.kl_warmup_epochs));
}

ElboParts elbo(const IrregularSeries& s, const model::ModelParams& p, const ElboOptions& o) {
  return run_elbo(s, p, o, false, nullptr).parts;
}

ElboGradient elbo_gradient(const IrregularSeries& s, const model::ModelParams& p,
                           const ElboOptions& o) {
  return run_elbo(s, p, o, true, nullptr);
}

ElboParts elbo_with_posterior(const IrregularSeries& s, const model::ModelParams& p,
                              const model::LatentPosterior& posterior, const ElboOptions& o) {
  return run_elbo(s, p, o, false, &posterior).parts;
}

void Adam::step(model::ModelParams& params, const std::vector<std::vector<double>>& grads,
                double lr) {
  if (m.empty()) {
    for (const auto& g : grads) {
      m.emplace_back(g.size(), 0.0);
      v.emplace_back(g.size(), 0.0);
    }
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    std::vector<double> w = params.weights[i].to_vector();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
      w[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
    }
    params.weights[i] = Tensor(params.weights[i].shape(), std::move(w));
  }
}

std::string TrainReport::to_jsonl(bool include_wall_clock) const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    json j = {{"epoch", e.epoch},
              {"kl_weight", e.kl_weight},
              {"train_loss", e.train_loss},
              {"validation_loss", e.validation_loss},
              {"validation_mse", e.validation_mse},
              {"validation_auc", e.validation_auc},
              {"aborted_batches", e.aborted_batches},
              {"batches", e.batches}};
    if (include_wall_clock) j["wall_seconds"] = e.wall_seconds;
    out << j.dump() << '\n';
  }
  json summary = {{"best_epoch", best_epoch}, {"epochs_completed", epochs.size()}};
  if (!checkpoint.empty()) summary["checkpoint"] = checkpoint;
  if (include_wall_clock) summary["wall_seconds"] = wall_seconds;
  out << json{{"summary", summary}}.dump() << '\n';
  return out.str();
}

TrainResult train(const data::Collection& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (dataset.empty()) throw ValidationError("dataset", "training needs at least one series");
  model::Architecture arch = config.arch;
  arch.feature_count = dataset.front().feature_count();
  model::ModelParams init = model::ModelParams::initialize(arch, mix_seed(config.seed, 1), config.obs_noise);
  return train_from(dataset, config, std::move(init), on_epoch);
}

TrainResult train_from(const data::Collection& dataset, const TrainConfig& config,
                       model::ModelParams params, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw ValidationError("dataset", "training needs at least one series");
  for (const auto& s : dataset) {
    validate(s);
    if (s.norm.empty()) throw ValidationError("norm_stats", "training data must be normalized");
    if (s.feature_count() != params.arch.feature_count)
      throw ValidationError("feature_names", "series " + s.id + " has the wrong feature count");
  }
  params.validate();
  params.norm = dataset.front().norm;
  params.feature_names = dataset.front().feature_names;
  params.window = dataset.front().window;

  const auto clock_start = std::chrono::steady_clock::now();
  const data::Split sp = data::split(dataset, 1.0 - config.validation_fraction, mix_seed(config.seed, 2));
  const data::Collection& fit = sp.train;
  const data::Collection& val = sp.test;
  if (fit.empty()) throw ValidationError("dataset", "no series left for fitting after the split");

  TrainResult result{params, {}};
  double best = std::numeric_limits<double>::infinity();
  Adam adam;
  std::vector<std::size_t> order(fit.size());
  const ode::Tolerances tol = config.tolerances();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.kl_weight = kl_weight(config, epoch);

    const double lr = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch));
    std::mt19937_64 rng(mix_seed(config.seed, 3, epoch));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> fifth(1, 5);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      ++rec.batches;
      std::vector<std::vector<double>> grads;
      double batch_loss = 0.0;
      bool aborted = false;
      for (std::size_t j = b; j < e; ++j) {
        const IrregularSeries& s = fit[order[j]];
        ElboOptions o;
        o.fraction = pick_fraction(s, fifth(rng));
        o.kl_weight = rec.kl_weight;
        o.classifier_loss_weight = config.classifier_loss_weight;
        o.seed = rng();
        o.tolerances = tol;
        o.gradient_path = config.gradient_path;
        o.rk4_step = config.rk4_step;
        try {
          ElboGradient g = elbo_gradient(s, params, o);
          if (!std::isfinite(g.parts.loss) || !all_finite(g.grads)) {
            aborted = true;
            continue;
          }
          batch_loss += g.parts.loss;
          if (grads.empty()) grads = std::move(g.grads);
          else
            for (std::size_t i = 0; i < grads.size(); ++i) add_into(grads[i], g.grads[i]);
        } catch (const DivergenceError&) {
          aborted = true;
        } catch (const StiffnessError&) {
          aborted = true;
        }
      }
      if (aborted) {
        ++rec.aborted_batches;
        continue;
      }
      const double n = static_cast<double>(e - b);
      double norm_sq = 0.0;
      for (auto& g : grads)
        for (double& x : g) {
          x /= n;
          norm_sq += x * x;
        }
      const double norm = std::sqrt(norm_sq);
      if (norm > config.grad_clip)
        for (auto& g : grads)
          for (double& x : g) x *= config.grad_clip / norm;
      adam.step(params, grads, lr);
      loss_sum += batch_loss;
      loss_count += e - b;
    }
    if (4 * rec.aborted_batches > rec.batches)
      throw TrainingInstabilityError("epoch " + std::to_string(epoch) + ": " +
                                     std::to_string(rec.aborted_batches) + " of " +
                                     std::to_string(rec.batches) +
                                     " minibatches aborted by solver failure");
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;

    // Validation at full KL weight with fixed fractions and seeds.
    const data::Collection& held = val.empty() ? fit : val;
    double vsum = 0.0;
    for (std::size_t i = 0; i < held.size(); ++i) {
      ElboOptions o;
      o.fraction = pick_fraction(held[i], static_cast<int>(i % 5) + 1);
      o.kl_weight = 1.0;
      o.classifier_loss_weight = config.classifier_loss_weight;
      o.seed = mix_seed(config.seed, 4, i);
      o.tolerances = tol;
      try {
        vsum += elbo(held[i], params, o).loss;
      } catch (const DivergenceError&) {
        vsum = std::numeric_limits<double>::infinity();
      } catch (const StiffnessError&) {
        vsum = std::numeric_limits<double>::infinity();
      }
    }
    rec.validation_loss = vsum / static_cast<double>(held.size());
    if (std::isfinite(rec.validation_loss)) {
      EvalOptions eo;
      eo.fractions = {1.0};
      eo.tolerances = tol;
      try {
        const EvalMetrics m = evaluate(held, params, eo);
        rec.validation_mse = m.per_fraction[0].mse;
        rec.validation_auc = m.per_fraction[0].auc;
      } catch (const Error&) {
        rec.validation_mse = std::numeric_limits<double>::infinity();
      }
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      result.report.best_epoch = epoch;
      result.params = params;
    }
    if (epoch - result.report.best_epoch >= config.patience) break;
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return result;
}

// ---------------------------------------------------------------------------

const FractionMetrics& EvalMetrics::at(double fraction) const {
  for (const auto& f : per_fraction)
    if (std::abs(f.fraction - fraction) < 1e-12) return f;
  throw ContractViolation("fraction " + std::to_string(fraction) + " was not evaluated");
}

json EvalMetrics::to_json() const {
  json arr = json::array();
  for (const auto& f : per_fraction)
    arr.push_back({{"fraction", f.fraction},
                   {"mse", f.mse},
                   {"final_fifth_mse", f.final_fifth_mse},
                   {"auc", f.auc},
                   {"accuracy", f.accuracy}});
  return {{"schema_version", 1}, {"series", series}, {"skipped", skipped}, {"per_fraction", arr}};
}

model::Reconstruction point_reconstruction(const IrregularSeries& s,
                                           const model::ModelParams& params, double fraction,
                                           std::span<const double> times,
                                           const ode::Tolerances& tol) {
  const model::LatentPosterior post = model::encode(s, params, fraction);
  const std::vector<double> noise(params.arch.noise_dim, 0.0);
  return model::decode(model::evolve(post.mean, noise, times, params, tol), params, fraction);
}

EvalMetrics evaluate(const data::Collection& series, const model::ModelParams& params,
                     const EvalOptions& options) {
  EvalMetrics out;
  out.series = series.size();
  const std::vector<double> noise(params.arch.noise_dim, 0.0);
  for (double f : options.fractions) {
    FractionMetrics fm;
    fm.fraction = f;
    metrics::MeanSquaredError all, tail;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : series) {
      if (!has_observation(s, f)) {
        ++out.skipped;
        continue;
      }
      const Schedule sc = schedule_for(s, f);
      const model::LatentPosterior post = model::encode(s, params, f);
      const model::LatentPath path = model::evolve(post.mean, noise, sc.times, params, options.tolerances);
      for (std::size_t j = 0; j < sc.rows.size(); ++j) {
        const std::size_t i = sc.rows[j];
        const auto xhat = model::decode_latent(path.states[j], params);
        for (std::size_t k = 0; k < s.feature_count(); ++k) {
          if (!s.mask[i][k]) continue;
          all.add(xhat[k], s.values[i][k]);
          if (s.times[i] > 0.8) tail.add(xhat[k], s.values[i][k]);
        }
      }
      if (s.label) {
        scores.push_back(model::classify_latent(path.states[sc.class_index], params));
        labels.push_back(*s.label);
      }
    }
    fm.mse = all.value();
    fm.final_fifth_mse = tail.value();
    if (!scores.empty()) {
      fm.auc = metrics::auc(scores, labels);
      fm.accuracy = metrics::accuracy(scores, labels, options.threshold);
    }
    out.per_fraction.push_back(fm);
  }
  return out;
}

json to_json(const TrainConfig& c) {
  return {{"latent_dim", c.arch.latent_dim},
          {"encoder_hidden", c.arch.encoder_hidden},
          {"dynamics_hidden", c.arch.dynamics_hidden},
          {"decoder_hidden", c.arch.decoder_hidden},
          {"classifier_hidden", c.arch.classifier_hidden},
          {"noise_dim", c.arch.noise_dim},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},
          {"kl_warmup_epochs", c.kl_warmup_epochs},
          {"classifier_loss_weight", c.classifier_loss_weight},
          {"obs_noise", c.obs_noise},
          {"seed", c.seed},
          {"rtol", c.rtol},
          {"atol", c.atol},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"grad_clip", c.grad_clip},
          {"gradient_path", c.gradient_path == GradientPath::Adjoint ? "adjoint" : "direct_rk4"},
          {"rk4_step", c.rk4_step}};
}

TrainConfig train_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config", "training config must be an object");
  TrainConfig c;
  auto count = [](const json& v, const std::string& k) {
    if (!v.is_number_unsigned()) throw ValidationError(k, k + " must be a non-negative integer");
    return v.get<std::size_t>();
  };
  auto real = [](const json& v, const std::string& k) {
    if (!v.is_number()) throw ValidationError(k, k + " must be a number");
    return v.get<double>();
  };
  for (const auto& [k, v] : doc.items()) {
    if (k == "latent_dim") c.arch.latent_dim = count(v, k);
    else if (k == "encoder_hidden") c.arch.encoder_hidden = count(v, k);
    else if (k == "dynamics_hidden") c.arch.dynamics_hidden = count(v, k);
    else if (k == "decoder_hidden") c.arch.decoder_hidden = count(v, k);
    else if (k == "classifier_hidden") c.arch.classifier_hidden = count(v, k);
    else if (k == "noise_dim") c.arch.noise_dim = count(v, k);
    else if (k == "epochs") c.epochs = count(v, k);
    else if (k == "batch_size") c.batch_size = count(v, k);
    else if (k == "learning_rate") c.learning_rate = real(v, k);
    else if (k == "lr_decay") c.lr_decay = real(v, k);
    else if (k == "kl_warmup_epochs") c.kl_warmup_epochs = count(v, k);
    else if (k == "classifier_loss_weight") c.classifier_loss_weight = real(v, k);
    else if (k == "obs_noise") c.obs_noise = real(v, k);
    else if (k == "seed") c.seed = count(v, k);
    else if (k == "rtol") c.rtol = real(v, k);
    else if (k == "atol") c.atol = real(v, k);
    else if (k == "patience") c.patience = count(v, k);
    else if (k == "validation_fraction") c.validation_fraction = real(v, k);
    else if (k == "grad_clip") c.grad_clip = real(v, k);
    else if (k == "rk4_step") c.rk4_step = real(v, k);
    else if (k == "gradient_path") {
      if (v == "adjoint") c.gradient_path = GradientPath::Adjoint;
      else if (v == "direct_rk4") c.gradient_path = GradientPath::DirectRk4;
      else throw ValidationError(k, "gradient_path must be 'adjoint' or 'direct_rk4'");
    } else {
      throw ValidationError(k, "unknown training config key '" + k + "'");
    }
  }
  return c;
}

}  // namespace lode::training
