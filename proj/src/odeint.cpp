#include "lode/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "lode/error.hpp"

namespace lode::ode {

namespace {

// Dormand–Prince 5(4) tableau, FSAL form, with Hairer's dense-output weights.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

// Step-size controller constants.
constexpr double kSafety = 0.9;
constexpr double kFacMin = 0.2;   // smallest shrink factor (h_new >= 0.2 h)
constexpr double kFacMax = 10.0;  // largest growth factor
constexpr double kBeta = 0.04;    // PI stabilisation
constexpr double kUnderflowFraction = 1e-12;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

[[noreturn]] void diverged(double t) {
  std::ostringstream os;
  os << "non-finite state at t = " << t;
  throw DivergenceError(t, os.str());
}

void validate(const OdeProblem& p) {
  if (!p.dynamics) throw ContractViolation("ODE problem has no dynamics");
  if (!std::isfinite(p.t_start) || !std::isfinite(p.t_end))
    throw ContractViolation("non-finite time span");
  if (!all_finite(p.y0)) throw NumericDomainError("non-finite initial state");
  const double dir = p.t_end >= p.t_start ? 1.0 : -1.0;
  double prev = p.t_start;
  for (double t : p.eval_times) {
    if (!std::isfinite(t)) throw ContractViolation("non-finite eval time");
    if ((t - prev) * dir < 0.0)
      throw ContractViolation("eval times must be sorted in the direction of integration");
    if ((t - p.t_end) * dir > 0.0) throw ContractViolation("eval time outside the time span");
    prev = t;
  }
}

/// Adaptive DOPRI5 stepper that can be advanced through successive targets and
/// accept state jumps in between (the adjoint needs both).
class Dopri5 {
 public:
  Dopri5(const Dynamics& f, State y0, double t0, double direction, const Tolerances& tol)
      : f_(f), y_(std::move(y0)), t_(t0), dir_(direction), tol_(tol) {
    const std::size_t n = y_.size();
    for (auto* k : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &ynew_, &err_})
      k->resize(n);
    if (!(tol.rtol > 0.0) || !(tol.atol > 0.0))
      throw ContractViolation("dopri5 tolerances must be positive");
    norm_dim_ = tol.error_components == 0 ? n : std::min(n, tol.error_components);
  }

  const State& state() const { return y_; }
  double time() const { return t_; }
  const SolverStats& stats() const { return stats_; }

  /// Replaces the current state (FSAL derivative is recomputed on the next step).
  void reset_state(State y) {
    y_ = std::move(y);
    k1_valid_ = false;
  }

  /// Integrates to `target`, appending the dense-output state at each of `outputs`
  /// (sorted in the direction of travel, within (t, target]).
  void advance_to(double target, std::span<const double> outputs, std::vector<State>& out) {
    std::size_t next = 0;
    while (next < outputs.size() && outputs[next] == t_) out.push_back(y_), ++next;
    const double span = std::abs(target - t_);
    if (span == 0.0) {
      while (next < outputs.size()) out.push_back(y_), ++next;
      return;
    }
    if (!k1_valid_) {
      eval(t_, y_, k1_);
      k1_valid_ = true;
    }
    if (h_ == 0.0) h_ = initial_step(span);
    if ((target - t_) * dir_ < 0.0) throw ContractViolation("dopri5 target behind the solver");
    const double min_step = kUnderflowFraction * span;

    bool last = false;
    bool rejected_before = false;
    while (!last) {
      if (stats_.accepted + stats_.rejected >= tol_.max_steps)
        throw StiffnessError(t_, "dopri5 exceeded the maximum number of steps");
      double h = dir_ * std::min(std::abs(h_), span);
      if ((t_ + 1.01 * h - target) * dir_ >= 0.0) {
        h = target - t_;
        last = true;
      }

      step(h);
      double err = 0.0;
      for (std::size_t i = 0; i < norm_dim_; ++i) {
        const double sk = tol_.atol + tol_.rtol * std::max(std::abs(y_[i]), std::abs(ynew_[i]));
        const double r = err_[i] / sk;
        err += r * r;
      }
      err = norm_dim_ > 0 ? std::sqrt(err / static_cast<double>(norm_dim_)) : 0.0;
      if (!std::isfinite(err)) {
        // Treat as a failed step: shrink hard, and give up if the step is already tiny.
        stats_.rejected++;
        h_ = h * kFacMin;
        last = false;
        if (std::abs(h_) < min_step) diverged(t_ + h);
        continue;
      }

      const double fac11 = std::pow(err, 0.2 - kBeta * 0.75);
      double fac = fac11 / std::pow(facold_, kBeta);
      fac = std::clamp(fac / kSafety, 1.0 / kFacMax, 1.0 / kFacMin);
      double h_new = h / fac;

      if (err <= 1.0) {
        facold_ = std::max(err, 1e-4);
        stats_.accepted++;
        if (!all_finite(ynew_) || !all_finite(k7_)) diverged(t_ + h);
        if (rejected_before) h_new = dir_ * std::min(std::abs(h_new), std::abs(h));
        rejected_before = false;

        const double t_new = last ? target : t_ + h;
        while (next < outputs.size() && (outputs[next] - t_new) * dir_ < 0.0) {
          out.push_back(interpolate(h, (outputs[next] - t_) / h));
          ++next;
        }
        while (next < outputs.size() && outputs[next] == t_new) out.push_back(ynew_), ++next;

        y_.swap(ynew_);
        k1_.swap(k7_);
        t_ = t_new;
        // A truncated final step says little about the natural step size.
        h_ = last ? dir_ * std::max(std::abs(h_new), std::abs(h_)) : h_new;
      } else {
        if (stats_.accepted > 0) stats_.rejected++;
        h_new = h / std::min(1.0 / kFacMin, fac11 / kSafety);
        rejected_before = true;
        last = false;
        h_ = h_new;
        if (std::abs(h_) < min_step) {
          std::ostringstream os;
          os << "dopri5 step size underflow at t = " << t_ << " (h = " << h_ << ")";
          throw StiffnessError(t_, os.str());
        }
      }
    }
    while (next < outputs.size()) out.push_back(y_), ++next;
  }

 private:
  void eval(double t, std::span<const double> y, std::vector<double>& dy) {
    f_(t, y, dy);
    stats_.evaluations++;
  }

  double initial_step(double span) {
    const std::size_t n = y_.size();
    double dnf = 0.0, dny = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sk = tol_.atol + tol_.rtol * std::abs(y_[i]);
      dnf += (k1_[i] / sk) * (k1_[i] / sk);
      dny += (y_[i] / sk) * (y_[i] / sk);
    }
    const double nn = static_cast<double>(std::max<std::size_t>(n, 1));
    dnf /= nn;
    dny /= nn;
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, span);
    for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + dir_ * h * k1_[i];
    eval(t_ + dir_ * h, ytmp_, k2_);
    double der2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sk = tol_.atol + tol_.rtol * std::abs(y_[i]);
      const double r = (k2_[i] - k1_[i]) / sk;
      der2 += r * r;
    }
    der2 = std::sqrt(der2 / nn) / h;
    const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
    const double h1 =
        der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 1.0 / 5.0);
    return dir_ * std::min({100.0 * h, h1, span});
  }

  void step(double h) {
    const std::size_t n = y_.size();
    for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * a21 * k1_[i];
    eval(t_ + c2 * h, ytmp_, k2_);
    for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * (a31 * k1_[i] + a32 * k2_[i]);
    eval(t_ + c3 * h, ytmp_, k3_);
    for (std::size_t i = 0; i < n; ++i)
      ytmp_[i] = y_[i] + h * (a41 * k1_[i] + a42 * k2_[i] + a43 * k3_[i]);
    eval(t_ + c4 * h, ytmp_, k4_);
    for (std::size_t i = 0; i < n; ++i)
      ytmp_[i] = y_[i] + h * (a51 * k1_[i] + a52 * k2_[i] + a53 * k3_[i] + a54 * k4_[i]);
    eval(t_ + c5 * h, ytmp_, k5_);
    for (std::size_t i = 0; i < n; ++i)
      ytmp_[i] = y_[i] + h * (a61 * k1_[i] + a62 * k2_[i] + a63 * k3_[i] + a64 * k4_[i] +
                              a65 * k5_[i]);
    eval(t_ + h, ytmp_, k6_);
    for (std::size_t i = 0; i < n; ++i)
      ynew_[i] = y_[i] + h * (a71 * k1_[i] + a73 * k3_[i] + a74 * k4_[i] + a75 * k5_[i] +
                              a76 * k6_[i]);
    eval(t_ + h, ynew_, k7_);
    for (std::size_t i = 0; i < n; ++i)
      err_[i] = h * (e1 * k1_[i] + e3 * k3_[i] + e4 * k4_[i] + e5 * k5_[i] + e6 * k6_[i] +
                     e7 * k7_[i]);
  }

  // Called before y_/k1_ are advanced: y_ = y(t), k1_ = f(t), ynew_/k7_ at t + h.
  State interpolate(double h, double theta) const {
    const std::size_t n = y_.size();
    State out(n);
    const double theta1 = 1.0 - theta;
    for (std::size_t i = 0; i < n; ++i) {
      const double ydiff = ynew_[i] - y_[i];
      const double bspl = h * k1_[i] - ydiff;
      const double r4 = ydiff - h * k7_[i] - bspl;
      const double r5 = h * (d1 * k1_[i] + d3 * k3_[i] + d4 * k4_[i] + d5 * k5_[i] +
                             d6 * k6_[i] + d7 * k7_[i]);
      out[i] = y_[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
    }
    return out;
  }

  const Dynamics& f_;
  State y_;
  double t_;
  double dir_;
  Tolerances tol_;
  std::size_t norm_dim_ = 0;
  double h_ = 0.0;
  double facold_ = 1e-4;
  bool k1_valid_ = false;
  State k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, ynew_, err_;
  SolverStats stats_;
};

}  // namespace

OdeSolution rk4_integrate(const OdeProblem& problem, double step) {
  validate(problem);
  if (!(step > 0.0)) throw ContractViolation("rk4 step must be positive");
  const std::size_t n = problem.y0.size();
  const double dir = problem.t_end >= problem.t_start ? 1.0 : -1.0;

  OdeSolution sol;
  sol.times = problem.eval_times;
  State y = problem.y0;
  State k1(n), k2(n), k3(n), k4(n), tmp(n);
  double t = problem.t_start;
  const auto f = [&](double tt, const State& yy, State& dy) {
    problem.dynamics(tt, yy, dy);
    sol.stats.evaluations++;
  };

  for (double target : problem.eval_times) {
    while ((target - t) * dir > 0.0) {
      const double remaining = std::abs(target - t);
      const bool final = remaining - step < 1e-10 * step;
      const double h = final ? target - t : dir * step;
      f(t, y, k1);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
      f(t + 0.5 * h, tmp, k2);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
      f(t + 0.5 * h, tmp, k3);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
      f(t + h, tmp, k4);
      for (std::size_t i = 0; i < n; ++i)
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      t = final ? target : t + h;
      sol.stats.accepted++;
      if (!all_finite(y)) diverged(t);
    }
    sol.states.push_back(y);
  }
  return sol;
}

OdeSolution dopri5_integrate(const OdeProblem& problem, const Tolerances& tol) {
  validate(problem);
  const double dir = problem.t_end >= problem.t_start ? 1.0 : -1.0;
  Dopri5 solver(problem.dynamics, problem.y0, problem.t_start, dir, tol);
  OdeSolution sol;
  sol.times = problem.eval_times;
  sol.states.reserve(problem.eval_times.size());
  const double target = problem.eval_times.empty() ? problem.t_start : problem.eval_times.back();
  solver.advance_to(target, problem.eval_times, sol.states);
  sol.stats = solver.stats();
  return sol;
}

AdjointResult adjoint_gradients(const VjpDynamics& dyn, std::span<const double> y0,
                                double t_start, std::span<const double> eval_times,
                                std::span<const State> loss_grads, const Tolerances& tol,
                                const std::vector<State>* forward_states) {
  const std::size_t n = dyn.state_dim;
  const std::size_t p = dyn.param_dim;
  if (y0.size() != n) throw ContractViolation("adjoint: y0 has the wrong dimension");
  if (loss_grads.size() != eval_times.size())
    throw ContractViolation("adjoint: one loss gradient per eval time required");
  for (const State& g : loss_grads)
    if (g.size() != n) throw ContractViolation("adjoint: loss gradient dimension mismatch");
  if (!dyn.eval || !dyn.vjp) throw ContractViolation("adjoint: dynamics lack eval/vjp");

  AdjointResult result;
  result.grad_y0.assign(n, 0.0);
  result.grad_params.assign(p, 0.0);
  if (eval_times.empty()) return result;

  std::vector<State> forward_local;
  const std::vector<State>* states = forward_states;
  if (states == nullptr) {
    OdeProblem fwd{dyn.eval, State(y0.begin(), y0.end()), t_start, eval_times.back(),
                   std::vector<double>(eval_times.begin(), eval_times.end())};
    OdeSolution sol = dopri5_integrate(fwd, tol);
    result.forward_stats = sol.stats;
    forward_local = std::move(sol.states);
    states = &forward_local;
  } else {
    validate(OdeProblem{dyn.eval, State(y0.begin(), y0.end()), t_start, eval_times.back(),
                        std::vector<double>(eval_times.begin(), eval_times.end())});
    if (states->size() != eval_times.size())
      throw ContractViolation("adjoint: forward states do not match eval times");
  }

  const bool null_impulse = std::all_of(loss_grads.begin(), loss_grads.end(), [](const State& g) {
    return std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; });
  });
  if (null_impulse) return result;

  // Augmented state [y, a, g]; integrated in reverse time.
  Dynamics augmented = [&dyn, n, p](double t, std::span<const double> s, std::span<double> ds) {
    const auto y = s.subspan(0, n);
    const auto a = s.subspan(n, n);
    auto f = ds.subspan(0, n);
    auto da = ds.subspan(n, n);
    auto dg = ds.subspan(2 * n, p);
    dyn.vjp(t, y, a, f, da, dg);
    for (double& v : da) v = -v;
    for (double& v : dg) v = -v;
  };

  Tolerances aug_tol = tol;
  aug_tol.error_components = 2 * n;

  const std::size_t last = eval_times.size() - 1;
  State aug(2 * n + p, 0.0);
  std::copy((*states)[last].begin(), (*states)[last].end(), aug.begin());
  for (std::size_t i = 0; i < n; ++i) aug[n + i] = loss_grads[last][i];

  Dopri5 solver(augmented, aug, eval_times[last], -1.0, aug_tol);
  std::vector<State> scratch;
  for (std::size_t i = last; i-- > 0;) {
    solver.advance_to(eval_times[i], {}, scratch);
    State s = solver.state();
    std::copy((*states)[i].begin(), (*states)[i].end(), s.begin());
    for (std::size_t j = 0; j < n; ++j) s[n + j] += loss_grads[i][j];
    solver.reset_state(std::move(s));
  }
  solver.advance_to(t_start, {}, scratch);
  const State& final_state = solver.state();
  std::copy(final_state.begin() + static_cast<std::ptrdiff_t>(n),
            final_state.begin() + static_cast<std::ptrdiff_t>(2 * n), result.grad_y0.begin());
  std::copy(final_state.begin() + static_cast<std::ptrdiff_t>(2 * n), final_state.end(),
            result.grad_params.begin());
  result.backward_stats = solver.stats();
  return result;
}

VjpDynamics make_tape_vjp_dynamics(ParamTapeDynamics f, std::vector<ad::Tensor> params,
                                   std::size_t state_dim) {
  VjpDynamics d;
  d.state_dim = state_dim;
  for (const ad::Tensor& t : params) d.param_dim += t.size();
  auto shared_f = std::make_shared<ParamTapeDynamics>(std::move(f));
  auto shared_p = std::make_shared<std::vector<ad::Tensor>>(std::move(params));

  d.eval = [shared_f, shared_p](double t, std::span<const double> y, std::span<double> dydt) {
    thread_local ad::Tape tape;
    tape.clear();
    std::vector<ad::Var> pv;
    pv.reserve(shared_p->size());
    for (const ad::Tensor& p : *shared_p) pv.push_back(tape.constant(p));
    const ad::Var yv = tape.constant(ad::Tensor::vector({y.begin(), y.end()}));
    const ad::Var out = (*shared_f)(tape, t, yv, pv);
    std::copy(out.value().data().begin(), out.value().data().end(), dydt.begin());
  };

  d.vjp = [shared_f, shared_p](double t, std::span<const double> y, std::span<const double> a,
                               std::span<double> f_out, std::span<double> a_dfdy,
                               std::span<double> a_dfdtheta) {
    thread_local ad::Tape tape;
    tape.clear();
    std::vector<ad::Var> pv;
    pv.reserve(shared_p->size());
    for (const ad::Tensor& p : *shared_p) pv.push_back(tape.variable(p));
    const ad::Var yv = tape.variable(ad::Tensor::vector({y.begin(), y.end()}));
    const ad::Var out = (*shared_f)(tape, t, yv, pv);
    std::copy(out.value().data().begin(), out.value().data().end(), f_out.begin());
    const ad::Var av = tape.constant(ad::Tensor::vector({a.begin(), a.end()}));
    const ad::Gradients g = tape.backward(ad::sum(ad::mul(out, av)));
    const auto gy = g.raw(yv);
    if (gy.empty())
      std::fill(a_dfdy.begin(), a_dfdy.end(), 0.0);
    else
      std::copy(gy.begin(), gy.end(), a_dfdy.begin());
    std::size_t offset = 0;
    for (const ad::Var& p : pv) {
      const auto gp = g.raw(p);
      const std::size_t n = p.value().size();
      if (gp.empty())
        std::fill_n(a_dfdtheta.begin() + static_cast<std::ptrdiff_t>(offset), n, 0.0);
      else
        std::copy(gp.begin(), gp.end(), a_dfdtheta.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += n;
    }
  };
  return d;
}

std::vector<ad::Var> rk4_on_tape(const TapeDynamics& f, ad::Var y0, double t_start,
                                 std::span<const double> eval_times, double step) {
  if (!(step > 0.0)) throw ContractViolation("rk4 step must be positive");
  std::vector<ad::Var> out;
  out.reserve(eval_times.size());
  ad::Var y = y0;
  double t = t_start;
  double prev = t_start;
  for (double target : eval_times) {
    if (target < prev) throw ContractViolation("rk4_on_tape eval times must be non-decreasing");
    prev = target;
    while (target - t > 0.0) {
      const double remaining = target - t;
      const bool final = remaining - step < 1e-10 * step;
      const double h = final ? remaining : step;
      const ad::Var k1 = f(t, y);
      const ad::Var k2 = f(t + 0.5 * h, ad::add(y, ad::scale(k1, 0.5 * h)));
      const ad::Var k3 = f(t + 0.5 * h, ad::add(y, ad::scale(k2, 0.5 * h)));
      const ad::Var k4 = f(t + h, ad::add(y, ad::scale(k3, h)));
      const ad::Var incr =
          ad::add(ad::add(k1, ad::scale(k2, 2.0)), ad::add(ad::scale(k3, 2.0), k4));
      y = ad::add(y, ad::scale(incr, h / 6.0));
      t = final ? target : t + h;
    }
    out.push_back(y);
  }
  return out;
}

}  // namespace lode::ode
