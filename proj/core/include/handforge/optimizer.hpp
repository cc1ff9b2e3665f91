#pragma once

#include <functional>
#include <string>
#include <vector>

#include "handforge/types.hpp"

namespace handforge {

/// Nonlinear least-squares problem: residual vector r(x) with its Jacobian.
/// The solver minimizes cost(x) = 0.5 * |r(x)|^2. Evaluators must be
/// deterministic functions of x.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual int parameter_count() const = 0;
  virtual int residual_count() const = 0;
  virtual VecX residuals(const VecX& x) const = 0;
  virtual SparseMat jacobian(const VecX& x) const = 0;

  /// Combined evaluation; the default forwards to the two calls above.
  /// Override when residuals and Jacobian share expensive work.
  virtual void eval(const VecX& x, VecX* r, SparseMat* jac) const {
    if (r) *r = residuals(x);
    if (jac) *jac = jacobian(x);
  }
};

/// Objective built from callables, for small problems and tests.
class FunctionObjective : public Objective {
 public:
  using ResidualFn = std::function<VecX(const VecX&)>;
  using JacobianFn = std::function<SparseMat(const VecX&)>;

  FunctionObjective(int params, int residuals, ResidualFn r, JacobianFn jac)
      : params_(params), residuals_(residuals), r_(std::move(r)), jac_(std::move(jac)) {}

  int parameter_count() const override { return params_; }
  int residual_count() const override { return residuals_; }
  VecX residuals(const VecX& x) const override { return r_(x); }
  SparseMat jacobian(const VecX& x) const override { return jac_(x); }

 private:
  int params_;
  int residuals_;
  ResidualFn r_;
  JacobianFn jac_;
};

/// Wraps an objective, replacing the analytic Jacobian with forward
/// differences. Test and fallback path.
class ForwardDifferenceObjective : public Objective {
 public:
  ForwardDifferenceObjective(const Objective& inner, double step = 1e-7)
      : inner_(inner), step_(step) {}
  int parameter_count() const override { return inner_.parameter_count(); }
  int residual_count() const override { return inner_.residual_count(); }
  VecX residuals(const VecX& x) const override { return inner_.residuals(x); }
  SparseMat jacobian(const VecX& x) const override;

 private:
  const Objective& inner_;
  double step_;
};

struct SolveOptions {
  int max_iters = 200;
  double g_tol = 1e-8;         // infinity norm of the gradient
  double x_tol = 1e-10;        // step norm, relative to 1 + |x|
  double initial_radius = 1.0;
  double max_radius = 1e8;
};

enum class Termination { gradient_tol, step_tol, max_iter, aborted_non_finite };

const char* termination_name(Termination t);

struct SolveReport {
  VecX x;
  double cost = 0.0;  // 0.5 * |r|^2 at x
  int iterations = 0;
  Termination reason = Termination::max_iter;
  std::vector<double> cost_trace;  // accepted iterates, non-increasing
};

/// Powell dogleg trust-region minimizer. Accepted steps strictly decrease the
/// cost; a non-finite residual or Jacobian at the current iterate aborts with
/// the last good state.
SolveReport dogleg_minimize(const Objective& objective, const VecX& x0,
                            const SolveOptions& opts = {});

/// Worst relative discrepancy between the supplied Jacobian and central
/// differences with per-coordinate step h * (1 + |x_i|). Entries smaller than
/// `atol` on both sides are ignored.
double check_gradient(const Objective& objective, const VecX& x, double h = 1e-6,
                      double atol = 1e-7);

}  // namespace handforge
