#include "handforge/optimizer.hpp"

#include <cmath>
#include <limits>

#include <Eigen/SparseCholesky>

namespace handforge {

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::gradient_tol: return "gradient-tol";
    case Termination::step_tol: return "step-tol";
    case Termination::max_iter: return "max-iter";
    case Termination::aborted_non_finite: return "aborted-non-finite";
  }
  return "unknown";
}

SparseMat ForwardDifferenceObjective::jacobian(const VecX& x) const {
  const VecX base = inner_.residuals(x);
  MatX dense(base.size(), x.size());
  VecX probe = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = step_ * (1.0 + std::abs(x[i]));
    probe[i] = x[i] + h;
    dense.col(i) = (inner_.residuals(probe) - base) / h;
    probe[i] = x[i];
  }
  return dense.sparseView();
}

namespace {

// Gauss-Newton step from the normal equations; a growing Tikhonov shift keeps
// the factorization alive on rank-deficient problems.
VecX gauss_newton_step(const SparseMat& jac, const VecX& grad) {
  SparseMat jtj = SparseMat(jac.transpose()) * jac;
  double shift = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    SparseMat sys = jtj;
    if (shift > 0.0) {
      SparseMat eye(jtj.rows(), jtj.cols());
      eye.setIdentity();
      sys = jtj + shift * eye;
    }
    Eigen::SimplicialLDLT<SparseMat> solver(sys);
    if (solver.info() == Eigen::Success) {
      const VecX step = solver.solve(-grad);
      if (step.allFinite()) return step;
    }
    double diag_max = 1e-12;
    for (int i = 0; i < jtj.rows(); ++i) diag_max = std::max(diag_max, jtj.coeff(i, i));
    shift = shift == 0.0 ? 1e-10 * diag_max : shift * 100.0;
  }
  // Last resort: steepest descent direction scaled like a Cauchy step.
  return -grad;
}

}  // namespace

SolveReport dogleg_minimize(const Objective& objective, const VecX& x0, const SolveOptions& opts) {
  SolveReport report;
  report.x = x0;

  VecX residual;
  SparseMat jac;
  objective.eval(report.x, &residual, &jac);
  if (!residual.allFinite())
    throw SolverError("dogleg: non-finite residual at the initial point");

  double cost = 0.5 * residual.squaredNorm();
  report.cost_trace.push_back(cost);
  double radius = opts.initial_radius;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    if (!jac.coeffs().allFinite()) {
      report.reason = Termination::aborted_non_finite;
      break;
    }
    const VecX grad = jac.transpose() * residual;
    if (grad.lpNorm<Eigen::Infinity>() < opts.g_tol) {
      report.reason = Termination::gradient_tol;
      break;
    }

    const VecX gn = gauss_newton_step(jac, grad);
    const VecX jg = jac * grad;
    const double jg2 = jg.squaredNorm();
    const VecX cauchy = jg2 > 0.0 ? VecX(-(grad.squaredNorm() / jg2) * grad) : VecX(-grad);

    bool stepped = false;
    while (true) {
      // Dogleg path within the current radius.
      VecX step;
      if (gn.norm() <= radius) {
        step = gn;
      } else if (cauchy.norm() >= radius) {
        step = (radius / cauchy.norm()) * cauchy;
      } else {
        const VecX d = gn - cauchy;
        const double a = d.squaredNorm();
        const double b = 2.0 * cauchy.dot(d);
        const double c = cauchy.squaredNorm() - radius * radius;
        const double disc = std::max(0.0, b * b - 4.0 * a * c);
        const double tau = a > 0.0 ? (-b + std::sqrt(disc)) / (2.0 * a) : 0.0;
        step = cauchy + tau * d;
      }

      const double step_norm = step.norm();
      if (step_norm < opts.x_tol * (opts.x_tol + report.x.norm())) {
        report.reason = Termination::step_tol;
        break;
      }

      const VecX x_new = report.x + step;
      const VecX r_new = objective.residuals(x_new);
      const double cost_new = r_new.allFinite()
                                  ? 0.5 * r_new.squaredNorm()
                                  : std::numeric_limits<double>::infinity();
      const double predicted = -(grad.dot(step) + 0.5 * (jac * step).squaredNorm());
      const double actual = cost - cost_new;
      const double rho = predicted > 0.0 ? actual / predicted : -1.0;

      if (rho > 0.0 && cost_new < cost) {
        report.x = x_new;
        cost = cost_new;
        report.cost_trace.push_back(cost);
        ++report.iterations;
        if (rho > 0.75 && step_norm >= 0.99 * radius)
          radius = std::min(2.0 * radius, opts.max_radius);
        else if (rho < 0.25)
          radius *= 0.25;
        stepped = true;
        break;
      }
      radius = 0.25 * std::min(radius, step_norm);
      if (radius < 1e-14) {
        report.reason = Termination::step_tol;
        break;
      }
    }

    if (!stepped) break;  // reason already set by the inner loop

    objective.eval(report.x, &residual, &jac);
    if (!residual.allFinite()) {
      report.reason = Termination::aborted_non_finite;
      break;
    }
    if (iter == opts.max_iters - 1) report.reason = Termination::max_iter;
  }

  report.cost = cost;
  return report;
}

double check_gradient(const Objective& objective, const VecX& x, double h, double atol) {
  const SparseMat jac = objective.jacobian(x);
  const MatX dense = MatX(jac);
  double worst = 0.0;
  VecX probe = x;
  for (int i = 0; i < x.size(); ++i) {
    const double hi = h * (1.0 + std::abs(x[i]));
    probe[i] = x[i] + hi;
    const VecX plus = objective.residuals(probe);
    probe[i] = x[i] - hi;
    const VecX minus = objective.residuals(probe);
    probe[i] = x[i];
    const VecX fd = (plus - minus) / (2.0 * hi);
    for (int r = 0; r < fd.size(); ++r) {
      const double a = dense(r, i), f = fd[r];
      if (std::max(std::abs(a), std::abs(f)) < atol) continue;
      worst = std::max(worst, std::abs(a - f) / std::max(std::abs(f), atol));
    }
  }
  return worst;
}

}  // namespace handforge
