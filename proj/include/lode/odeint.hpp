#pragma once

// Explicit integrators for first-order systems y' = f(t, y), plus the adjoint
// sensitivity pass that differentiates a loss through an adaptive solve.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lode/autodiff.hpp"

namespace lode::ode {

using State = std::vector<double>;

/// Writes dy/dt into `dydt` (same length as `y`). Must be re-entrant.
using Dynamics = std::function<void(double t, std::span<const double> y, std::span<double> dydt)>;

struct OdeProblem {
  Dynamics dynamics;
  State y0;
  double t_start = 0.0;
  double t_end = 1.0;
  /// Monotone in the direction of integration, inside [t_start, t_end].
  std::vector<double> eval_times;
};

struct SolverStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
};

struct OdeSolution {
  std::vector<double> times;
  std::vector<State> states;
  SolverStats stats;
};

struct Tolerances {
  double rtol = 1e-7;
  double atol = 1e-9;
  std::size_t max_steps = 200000;
  /// Only the first `error_components` entries enter the error norm (0 = all).
  std::size_t error_components = 0;
};

/// Training-time tolerances; looser than the inference defaults above.
inline constexpr Tolerances kTrainingTolerances{1e-6, 1e-8};
inline constexpr Tolerances kInferenceTolerances{1e-7, 1e-9};

/// Classical fixed-step RK4. The last substep before each eval time is shortened
/// so states are produced exactly at the requested times.
OdeSolution rk4_integrate(const OdeProblem& problem, double step);

/// Dormand–Prince 5(4) with PI step control and 4th-order dense output.
/// Throws StiffnessError on step underflow and DivergenceError on non-finite state.
OdeSolution dopri5_integrate(const OdeProblem& problem, const Tolerances& tol = {});

/// Dynamics that can also produce vector–Jacobian products.
struct VjpDynamics {
  std::size_t state_dim = 0;
  std::size_t param_dim = 0;
  Dynamics eval;
  /// Given a cotangent `a`, writes f(t,y), aᵀ∂f/∂y and aᵀ∂f/∂θ.
  std::function<void(double t, std::span<const double> y, std::span<const double> a,
                     std::span<double> f, std::span<double> a_dfdy,
                     std::span<double> a_dfdtheta)>
      vjp;
};

/// Dynamics written on the tape: f(t, y; θ) with θ given as differentiable Vars.
using ParamTapeDynamics =
    std::function<ad::Var(ad::Tape&, double t, ad::Var y, std::span<const ad::Var> params)>;

/// Wraps tape dynamics as VjpDynamics; parameter gradients are flattened in the
/// order of `params`. Each call records on a thread-local tape.
VjpDynamics make_tape_vjp_dynamics(ParamTapeDynamics f, std::vector<ad::Tensor> params,
                                   std::size_t state_dim);

struct AdjointResult {
  State grad_y0;
  std::vector<double> grad_params;
  SolverStats forward_stats;
  SolverStats backward_stats;
};

/// Gradient of a loss L(y(t_1),…,y(t_n)) with respect to y0 and the dynamics
/// parameters. `loss_grads[i]` is ∂L/∂y(eval_times[i]). The augmented system
/// [y, a, g] is integrated backwards from the last eval time to t_start, with a
/// jump of loss_grads[i] added to a at each eval time. `forward_states`, when
/// supplied, must be the forward solution at eval_times (it re-anchors y at
/// each jump); otherwise a forward solve is performed.
AdjointResult adjoint_gradients(const VjpDynamics& dynamics, std::span<const double> y0,
                                double t_start, std::span<const double> eval_times,
                                std::span<const State> loss_grads, const Tolerances& tol = {},
                                const std::vector<State>* forward_states = nullptr);

/// Fixed-step RK4 recorded on an autodiff tape (discretize-then-differentiate).
/// Returns one Var per eval time. Used as the cross-check for the adjoint path.
using TapeDynamics = std::function<ad::Var(double t, ad::Var y)>;
std::vector<ad::Var> rk4_on_tape(const TapeDynamics& f, ad::Var y0, double t_start,
                                 std::span<const double> eval_times, double step);

}  // namespace lode::ode
