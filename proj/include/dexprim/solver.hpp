#pragma once

#include "dexprim/nlp.hpp"

#include <Eigen/Sparse>

#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

namespace dexprim {

struct SolverConfig {
  double feas_tol = 1e-6;
  double stat_tol = 1e-6;
  double compl_tol = 1e-5;
  int max_outer = 30;
  int max_inner = 500;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e10;
  double multiplier_bound = 1e8;
  /// Line-delimited "iter cost feas stat penalty" records go here when set.
  std::ostream* log = nullptr;

  void validate() const {
    if (!(feas_tol > 0 && stat_tol > 0 && compl_tol > 0))
      throw InvalidInput("SolverConfig: tolerances must be positive");
    if (!(penalty_growth > 1.0)) throw InvalidInput("SolverConfig: penalty_growth must exceed 1");
    if (!(initial_penalty > 0.0)) throw InvalidInput("SolverConfig: initial_penalty must be positive");
    if (max_outer < 1 || max_inner < 1) throw InvalidInput("SolverConfig: iteration limits must be >= 1");
    if (!(multiplier_bound > 0.0)) throw InvalidInput("SolverConfig: multiplier_bound must be positive");
  }
};

enum class SolveStatus { converged, max_iterations, infeasible_detected };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iterations: return "max-iterations";
    case SolveStatus::infeasible_detected: return "infeasible-detected";
  }
  return "unknown";
}

struct IterationRecord {
  int outer = 0;
  int inner_iterations = 0;
  double cost = 0.0;
  double feasibility = 0.0;
  double stationarity = 0.0;
  double penalty = 0.0;
};

struct SolveResult {
  SolveStatus status = SolveStatus::max_iterations;
  VecX z;
  VecX mult_eq;
  VecX mult_ineq;
  double cost = 0.0;
  double max_violation = 0.0;
  double stationarity = 0.0;
  double complementarity = 0.0;
  int inner_iterations = 0;
  std::vector<IterationRecord> log;

  bool converged() const { return status == SolveStatus::converged; }
};

namespace detail {

struct Evaluation {
  double f = 0.0;
  VecX grad;
  VecX ce, ci;
  MatX je, ji;
};

inline void check_finite(const Evaluation& e, const VecX& z, bool derivatives) {
  bool ok = std::isfinite(e.f) && e.ce.allFinite() && e.ci.allFinite();
  if (derivatives) ok = ok && e.grad.allFinite() && e.je.allFinite() && e.ji.allFinite();
  if (!ok) throw NumericFailure("solve: callback returned a non-finite value", z);
}

/// Values only; the line search does not need derivatives.
inline Evaluation evaluate_values(const NlpProblem& p, const VecX& z) {
  Evaluation e;
  e.f = p.cost(z);
  e.ce = p.eval_eq(z);
  e.ci = p.eval_ineq(z);
  check_finite(e, z, false);
  return e;
}

inline void add_derivatives(const NlpProblem& p, const VecX& z, Evaluation& e) {
  e.grad = p.cost_gradient(z);
  e.je = p.eval_eq_jacobian(z);
  e.ji = p.eval_ineq_jacobian(z);
  check_finite(e, z, true);
}

inline Evaluation evaluate(const NlpProblem& p, const VecX& z) {
  Evaluation e = evaluate_values(p, z);
  add_derivatives(p, z, e);
  return e;
}

/// Augmented Lagrangian for fixed multipliers and penalty.
struct Merit {
  const VecX& mu_e;
  const VecX& mu_i;
  double rho;

  VecX shifted_eq(const Evaluation& e) const { return mu_e + rho * e.ce; }
  VecX shifted_ineq(const Evaluation& e) const { return (mu_i + rho * e.ci).cwiseMax(0.0); }

  double value(const Evaluation& e) const {
    double v = e.f;
    if (e.ce.size()) v += mu_e.dot(e.ce) + 0.5 * rho * e.ce.squaredNorm();
    if (e.ci.size()) v += (shifted_ineq(e).squaredNorm() - mu_i.squaredNorm()) / (2.0 * rho);
    return v;
  }

  /// Equals the Lagrangian gradient at the first-order multiplier estimates.
  VecX gradient(const Evaluation& e) const {
    VecX g = e.grad;
    if (e.ce.size()) g += e.je.transpose() * shifted_eq(e);
    if (e.ci.size()) g += e.ji.transpose() * shifted_ineq(e);
    return g;
  }
};

inline double projected_gradient_norm(const VecX& z, const VecX& g, const VecX& lo,
                                      const VecX& hi) {
  if (z.size() == 0) return 0.0;
  return ((z - g).cwiseMax(lo).cwiseMin(hi) - z).cwiseAbs().maxCoeff();
}

inline MatX gram(const MatX& j) {
  if (j.rows() == 0) return MatX::Zero(j.cols(), j.cols());
  const Eigen::SparseMatrix<double> js = j.sparseView();
  return MatX(Eigen::SparseMatrix<double>(js.transpose() * js));
}

/// Box-projected Newton-type minimization of the merit. The step model is the
/// Lagrangian Hessian at the multiplier estimates (or a BFGS approximation when the
/// problem has none) plus rho * J^T J over equalities and active inequalities,
/// shifted along the diagonal until it factors.
struct InnerSolver {
  const NlpProblem& p;
  MatX secant;
  bool scaled = false;

  explicit InnerSolver(const NlpProblem& problem) : p(problem) {
    if (!problem.lagrangian_hessian) secant = MatX::Identity(p.n_vars, p.n_vars);
  }

  /// Returns the number of iterations taken; z and e are updated in place.
  int run(VecX& z, Evaluation& e, const Merit& merit, double tol, int max_iter) {
    const int n = p.n_vars;
    int it = 0;
    for (; it < max_iter; ++it) {
      const VecX g = merit.gradient(e);
      if (projected_gradient_norm(z, g, p.lower, p.upper) <= tol) break;
      const double phi = merit.value(e);

      // Variables held at a bound with the gradient pushing outward stay fixed.
      std::vector<int> free;
      free.reserve(n);
      for (int j = 0; j < n; ++j) {
        const bool at_lo = z[j] <= p.lower[j] && g[j] > 0.0;
        const bool at_hi = z[j] >= p.upper[j] && g[j] < 0.0;
        if (!(at_lo || at_hi)) free.push_back(j);
      }

      const VecX we = e.ce.size() ? merit.shifted_eq(e) : VecX(0);
      const VecX wi = e.ci.size() ? merit.shifted_ineq(e) : VecX(0);
      MatX b = p.lagrangian_hessian ? p.lagrangian_hessian(z, we, wi) : secant;
      if (e.ce.size()) b += merit.rho * gram(e.je);
      if (e.ci.size()) {
        std::vector<int> active;
        for (int i = 0; i < e.ci.size(); ++i)
          if (wi[i] > 0.0) active.push_back(i);
        if (!active.empty()) b += merit.rho * gram(e.ji(active, Eigen::all));
      }

      const int nf = static_cast<int>(free.size());
      VecX d = VecX::Zero(n);
      if (nf > 0) {
        const MatX bff = b(free, free);
        const VecX gf = g(free);
        const double diag_scale = std::max(1.0, bff.diagonal().cwiseAbs().maxCoeff());
        double shift = 0.0;
        VecX df;
        for (int attempt = 0; attempt < 40; ++attempt) {
          MatX shifted = bff;
          shifted.diagonal().array() += shift;
          Eigen::LLT<MatX> llt(shifted);
          if (llt.info() == Eigen::Success) {
            df = llt.solve(-gf);
            if (df.allFinite() && df.dot(gf) < 0.0) break;
            df.resize(0);
          }
          shift = shift == 0.0 ? 1e-10 * diag_scale : shift * 10.0;
        }
        if (df.size() == nf) d(free) = df;
      }

      auto line_search = [&](const VecX& dir, VecX& z_new, Evaluation& e_new) {
        double alpha = 1.0;
        for (int k = 0; k < 60; ++k, alpha *= 0.5) {
          z_new = p.project(z + alpha * dir);
          const double slope = g.dot(z_new - z);
          if (!(slope < 0.0)) continue;
          e_new = evaluate_values(p, z_new);
          if (merit.value(e_new) <= phi + 1e-4 * slope) return true;
        }
        return false;
      };

      VecX z_new;
      Evaluation e_new;
      bool ok = d.squaredNorm() > 0.0 && line_search(d, z_new, e_new);
      if (!ok) {
        const double gscale = std::max(1.0, b.diagonal().cwiseAbs().maxCoeff());
        ok = line_search(-g / gscale, z_new, e_new);
      }
      if (!ok) break;
      add_derivatives(p, z_new, e_new);

      if (!p.lagrangian_hessian) {
        // Secant pair on the Lagrangian with multipliers frozen at the new point.
        const VecX le = e_new.ce.size() ? merit.shifted_eq(e_new) : VecX(0);
        const VecX li = e_new.ci.size() ? merit.shifted_ineq(e_new) : VecX(0);
        update_secant(z_new - z, lagrangian_grad(e_new, le, li) - lagrangian_grad(e, le, li));
      }
      // Steps at the rounding floor of z mean the merit cannot improve further.
      const double moved = (z_new - z).cwiseAbs().maxCoeff();
      const double scale = 1.0 + z.cwiseAbs().maxCoeff();
      z = std::move(z_new);
      e = std::move(e_new);
      if (moved <= 1e-14 * scale) {
        ++it;
        break;
      }
    }
    return it;
  }

  static VecX lagrangian_grad(const Evaluation& e, const VecX& le, const VecX& li) {
    VecX g = e.grad;
    if (e.ce.size()) g += e.je.transpose() * le;
    if (e.ci.size()) g += e.ji.transpose() * li;
    return g;
  }

  void update_secant(const VecX& s, const VecX& y) {
    const double sy = s.dot(y);
    if (!(sy > 1e-12 * s.norm() * y.norm()) || !std::isfinite(sy)) return;
    if (!scaled) {
      secant *= y.squaredNorm() / sy;
      scaled = true;
    }
    const VecX bs = secant * s;
    const double sbs = s.dot(bs);
    secant += y * y.transpose() / sy;
    if (sbs > 0.0) secant -= bs * bs.transpose() / sbs;
  }
};

/// Multipliers minimizing the Lagrangian gradient over the variables not held at a
/// bound, using the equalities and the inequalities with a positive first-order
/// estimate. Inequality multipliers are clipped to be nonnegative.
inline void least_squares_multipliers(const NlpProblem& p, const VecX& z, const Evaluation& e,
                                      const VecX& mu_e_first, const VecX& mu_i_first, double bound,
                                      VecX& mu_e, VecX& mu_i) {
  VecX lg = e.grad;
  if (e.ce.size()) lg += e.je.transpose() * mu_e_first;
  if (e.ci.size()) lg += e.ji.transpose() * mu_i_first;
  std::vector<int> free, active;
  for (int j = 0; j < p.n_vars; ++j) {
    const bool at_lo = z[j] <= p.lower[j] && lg[j] > 0.0;
    const bool at_hi = z[j] >= p.upper[j] && lg[j] < 0.0;
    if (!(at_lo || at_hi)) free.push_back(j);
  }
  for (int i = 0; i < p.n_ineq; ++i)
    if (mu_i_first[i] > 0.0) active.push_back(i);
  const int ne = p.n_eq, na = static_cast<int>(active.size());
  mu_e = mu_e_first;
  mu_i = mu_i_first;
  if (free.empty() || ne + na == 0) return;
  MatX a(free.size(), ne + na);
  if (ne) a.leftCols(ne) = e.je(Eigen::all, free).transpose();
  if (na) a.rightCols(na) = e.ji(active, free).transpose();
  const VecX sol = a.completeOrthogonalDecomposition().solve(VecX(-e.grad(free)));
  if (!sol.allFinite()) return;
  if (ne) mu_e = sol.head(ne).cwiseMax(-bound).cwiseMin(bound);
  mu_i.setZero();
  for (int k = 0; k < na; ++k) mu_i[active[k]] = std::clamp(sol[ne + k], 0.0, bound);
}

}  // namespace detail

/// Augmented-Lagrangian solve with a box-projected Newton-type inner loop.
inline SolveResult solve(const NlpProblem& problem, const VecX& z0, const SolverConfig& config = {}) {
  config.validate();
  if (z0.size() != problem.n_vars) throw InvalidInput("solve: z0 has wrong dimension");
  problem.validate_at(problem.project(z0));

  VecX z = problem.project(z0);
  detail::Evaluation e = detail::evaluate(problem, z);
  VecX mu_e = VecX::Zero(problem.n_eq);
  VecX mu_i = VecX::Zero(problem.n_ineq);
  double rho = config.initial_penalty;
  // The first inner tolerance is relative to the starting merit gradient, so a
  // feasible warm start with a small gradient still gets a real first solve.
  const VecX g0 = detail::Merit{mu_e, mu_i, config.initial_penalty}.gradient(e);
  const double pg0 = detail::projected_gradient_norm(z, g0, problem.lower, problem.upper);
  double inner_tol = std::max(config.stat_tol, std::min(1e-2, 0.1 * pg0));
  double prev_feas = std::numeric_limits<double>::infinity();
  int stalled = 0;

  detail::InnerSolver inner(problem);
  SolveResult res;
  res.status = SolveStatus::max_iterations;

  for (int outer = 0; outer < config.max_outer; ++outer) {
    const detail::Merit merit{mu_e, mu_i, rho};
    const int iters = inner.run(z, e, merit, inner_tol, config.max_inner);
    res.inner_iterations += iters;

    const double bound = config.multiplier_bound;
    VecX fe = mu_e, fi = mu_i;
    if (problem.n_eq) fe = (mu_e + rho * e.ce).cwiseMax(-bound).cwiseMin(bound);
    if (problem.n_ineq) fi = (mu_i + rho * e.ci).cwiseMax(0.0).cwiseMin(bound);
    VecX le, li;
    detail::least_squares_multipliers(problem, z, e, fe, fi, bound, le, li);
    mu_e = le;
    mu_i = li;

    const KktResidual kkt = kkt_residual(problem, z, mu_e, mu_i);
    res.log.push_back({outer, iters, e.f, kkt.feasibility, kkt.stationarity, rho});
    if (config.log)
      *config.log << std::setprecision(10) << outer << ' ' << e.f << ' ' << kkt.feasibility << ' '
                  << kkt.stationarity << ' ' << rho << '\n';

    if (kkt.feasibility <= config.feas_tol && kkt.stationarity <= config.stat_tol &&
        kkt.complementarity <= config.compl_tol) {
      res.status = SolveStatus::converged;
      break;
    }
    if (kkt.feasibility > config.feas_tol && kkt.feasibility > 0.25 * prev_feas) {
      if (rho >= config.max_penalty && ++stalled >= 3) {
        res.status = SolveStatus::infeasible_detected;
        break;
      }
      rho = std::min(rho * config.penalty_growth, config.max_penalty);
    } else {
      stalled = 0;
    }
    prev_feas = kkt.feasibility;
    inner_tol = std::max(config.stat_tol, inner_tol * 0.1);
  }

  const KktResidual kkt = kkt_residual(problem, z, mu_e, mu_i);
  res.z = z;
  res.mult_eq = mu_e;
  res.mult_ineq = mu_i;
  res.cost = e.f;
  res.max_violation = kkt.feasibility;
  res.stationarity = kkt.stationarity;
  res.complementarity = kkt.complementarity;
  return res;
}

}  // namespace dexprim
