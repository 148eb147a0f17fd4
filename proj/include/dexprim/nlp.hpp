#pragma once

#include "dexprim/common.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dexprim {

struct VariableSlice {
  std::string name;
  int offset = 0;
  int size = 0;
};

struct VariableLayout {
  std::vector<VariableSlice> slices;

  int add(std::string name, int size) {
    const int offset = total();
    slices.push_back({std::move(name), offset, size});
    return offset;
  }
  int total() const { return slices.empty() ? 0 : slices.back().offset + slices.back().size; }

  const VariableSlice& at(const std::string& name) const {
    for (const auto& s : slices)
      if (s.name == name) return s;
    throw InvalidInput("VariableLayout: no slice named " + name);
  }

  /// Slices must tile [0, n) in order without gaps.
  bool partitions(int n) const {
    int next = 0;
    for (const auto& s : slices) {
      if (s.offset != next || s.size < 0) return false;
      next += s.size;
    }
    return next == n;
  }
};

/// Generic NLP: minimize cost(z) s.t. eq(z) = 0, ineq(z) <= 0, lower <= z <= upper.
/// Jacobians are dense (rows = constraints). `lagrangian_hessian(z, w_eq, w_ineq)`, when
/// set, returns the Hessian of cost + w_eq . eq + w_ineq . ineq; without it the solver
/// falls back to a secant approximation.
struct NlpProblem {
  int n_vars = 0;
  int n_eq = 0;
  int n_ineq = 0;
  VecX lower;
  VecX upper;
  VariableLayout layout;

  std::function<double(const VecX&)> cost;
  std::function<VecX(const VecX&)> cost_gradient;
  std::function<MatX(const VecX&, const VecX&, const VecX&)> lagrangian_hessian;
  std::function<VecX(const VecX&)> eq;
  std::function<MatX(const VecX&)> eq_jacobian;
  std::function<VecX(const VecX&)> ineq;
  std::function<MatX(const VecX&)> ineq_jacobian;

  VecX eval_eq(const VecX& z) const { return n_eq ? eq(z) : VecX(0); }
  VecX eval_ineq(const VecX& z) const { return n_ineq ? ineq(z) : VecX(0); }
  MatX eval_eq_jacobian(const VecX& z) const { return n_eq ? eq_jacobian(z) : MatX(0, n_vars); }
  MatX eval_ineq_jacobian(const VecX& z) const {
    return n_ineq ? ineq_jacobian(z) : MatX(0, n_vars);
  }

  VecX project(const VecX& z) const { return z.cwiseMax(lower).cwiseMin(upper); }

  /// Throws InvalidInput if declared sizes and callback outputs disagree at z.
  void validate_at(const VecX& z) const {
    if (z.size() != n_vars) throw InvalidInput("NlpProblem: point has wrong dimension");
    if (lower.size() != n_vars || upper.size() != n_vars)
      throw InvalidInput("NlpProblem: bounds have wrong dimension");
    if (!layout.slices.empty() && !layout.partitions(n_vars))
      throw InvalidInput("NlpProblem: layout slices do not partition the variables");
    if (!cost || !cost_gradient) throw InvalidInput("NlpProblem: missing cost callbacks");
    if (cost_gradient(z).size() != n_vars) throw InvalidInput("NlpProblem: gradient size mismatch");
    if (n_eq && (!eq || !eq_jacobian)) throw InvalidInput("NlpProblem: missing eq callbacks");
    if (n_ineq && (!ineq || !ineq_jacobian))
      throw InvalidInput("NlpProblem: missing ineq callbacks");
    const MatX je = eval_eq_jacobian(z), ji = eval_ineq_jacobian(z);
    if (eval_eq(z).size() != n_eq || je.rows() != n_eq || je.cols() != n_vars)
      throw InvalidInput("NlpProblem: equality callback size mismatch");
    if (eval_ineq(z).size() != n_ineq || ji.rows() != n_ineq || ji.cols() != n_vars)
      throw InvalidInput("NlpProblem: inequality callback size mismatch");
  }
};

struct KktResidual {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
};

/// Optimality residuals at (z, multipliers). Stationarity is the infinity norm of the
/// box-projected Lagrangian gradient; feasibility includes bound violation;
/// complementarity is the natural residual max |min(-c_i, mu_i)|, which also flags
/// negative multipliers.
inline KktResidual kkt_residual(const NlpProblem& p, const VecX& z, const VecX& mult_eq,
                                const VecX& mult_ineq) {
  KktResidual r;
  const VecX ce = p.eval_eq(z), ci = p.eval_ineq(z);
  VecX grad = p.cost_gradient(z);
  if (p.n_eq) grad += p.eval_eq_jacobian(z).transpose() * mult_eq;
  if (p.n_ineq) grad += p.eval_ineq_jacobian(z).transpose() * mult_ineq;
  const VecX zp = z.cwiseMax(p.lower).cwiseMin(p.upper);
  r.stationarity = ((zp - grad).cwiseMax(p.lower).cwiseMin(p.upper) - zp).cwiseAbs().maxCoeff();
  double feas = (z - zp).cwiseAbs().maxCoeff();
  if (p.n_eq) feas = std::max(feas, ce.cwiseAbs().maxCoeff());
  if (p.n_ineq) feas = std::max(feas, ci.cwiseMax(0.0).maxCoeff());
  r.feasibility = feas;
  if (p.n_ineq) r.complementarity = (-ci).cwiseMin(mult_ineq).cwiseAbs().maxCoeff();
  return r;
}

struct GradientCheckReport {
  double cost_gradient = 0.0;
  double eq_jacobian = 0.0;
  double ineq_jacobian = 0.0;
  double lagrangian_hessian = 0.0;
  int worst_index = -1;
  std::string worst_block;

  double max_error() const {
    return std::max({cost_gradient, eq_jacobian, ineq_jacobian, lagrangian_hessian});
  }
};

/// Compares analytic derivatives with central differences. Element error is
/// |analytic - fd| / max(1, |analytic|, |fd|). The Lagrangian Hessian, when present, is
/// checked with unit multipliers against differences of the Lagrangian gradient.
inline GradientCheckReport check_gradients(const NlpProblem& p, const VecX& z, double step = 1e-6) {
  GradientCheckReport rep;
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };
  const VecX g = p.cost_gradient(z);
  const MatX je = p.eval_eq_jacobian(z), ji = p.eval_ineq_jacobian(z);
  const VecX we = VecX::Ones(p.n_eq), wi = VecX::Ones(p.n_ineq);
  auto lag_grad = [&](const VecX& x) {
    VecX lg = p.cost_gradient(x);
    if (p.n_eq) lg += p.eq_jacobian(x).transpose() * we;
    if (p.n_ineq) lg += p.ineq_jacobian(x).transpose() * wi;
    return lg;
  };
  const MatX hess = p.lagrangian_hessian ? p.lagrangian_hessian(z, we, wi) : MatX();
  double worst = -1.0;
  auto note = [&](double& block_max, double e, int j, const char* name) {
    block_max = std::max(block_max, e);
    if (e > worst) {
      worst = e;
      rep.worst_index = j;
      rep.worst_block = name;
    }
  };
  VecX zp = z, zm = z;
  for (int j = 0; j < p.n_vars; ++j) {
    zp[j] = z[j] + step;
    zm[j] = z[j] - step;
    const double fd = (p.cost(zp) - p.cost(zm)) / (2.0 * step);
    note(rep.cost_gradient, rel(g[j], fd), j, "cost");
    if (p.n_eq) {
      const VecX fd_col = (p.eq(zp) - p.eq(zm)) / (2.0 * step);
      for (int i = 0; i < p.n_eq; ++i) note(rep.eq_jacobian, rel(je(i, j), fd_col[i]), j, "eq");
    }
    if (p.n_ineq) {
      const VecX fd_col = (p.ineq(zp) - p.ineq(zm)) / (2.0 * step);
      for (int i = 0; i < p.n_ineq; ++i) note(rep.ineq_jacobian, rel(ji(i, j), fd_col[i]), j, "ineq");
    }
    if (p.lagrangian_hessian) {
      const VecX fd_col = (lag_grad(zp) - lag_grad(zm)) / (2.0 * step);
      for (int i = 0; i < p.n_vars; ++i) note(rep.lagrangian_hessian, rel(hess(i, j), fd_col[i]), j, "hessian");
    }
    zp[j] = zm[j] = z[j];
  }
  return rep;
}

inline std::vector<double> to_std(const VecX& v) { return {v.data(), v.data() + v.size()}; }

/// Structured-text dump of a problem evaluated at z: layout, bounds, and every
/// callback value. Jacobians are written row-major.
inline nlohmann::json dump_problem(const NlpProblem& p, const VecX& z) {
  nlohmann::json j;
  j["n_vars"] = p.n_vars;
  j["n_eq"] = p.n_eq;
  j["n_ineq"] = p.n_ineq;
  for (const auto& s : p.layout.slices)
    j["layout"].push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  j["lower"] = to_std(p.lower);
  j["upper"] = to_std(p.upper);
  j["z"] = to_std(z);
  j["cost"] = p.cost(z);
  j["cost_gradient"] = to_std(p.cost_gradient(z));
  j["eq"] = to_std(p.eval_eq(z));
  j["ineq"] = to_std(p.eval_ineq(z));
  auto rows = [](const MatX& m) {
    std::vector<std::vector<double>> out(m.rows());
    for (int i = 0; i < m.rows(); ++i) out[i] = to_std(m.row(i).transpose());
    return out;
  };
  j["eq_jacobian"] = rows(p.eval_eq_jacobian(z));
  j["ineq_jacobian"] = rows(p.eval_ineq_jacobian(z));
  return j;
}

}  // namespace dexprim
