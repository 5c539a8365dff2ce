#pragma once

// Dense convex quadratic programming via a Mehrotra predictor-corrector
// primal-dual interior point method:
//
//   min  1/2 x' P x + q' x
//   s.t. A x  = b
//        G x <= h
//
// Sized for the planner's subproblems (tens of variables, a few hundred
// rows), fully deterministic: fixed iteration order, no time-dependent
// stopping.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mpcom::qp {

struct Problem
{
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;  // may have zero rows
  Eigen::VectorXd b;
  Eigen::MatrixXd G;  // may have zero rows
  Eigen::VectorXd h;
};

enum class Status { Solved, MaxIterations, NumericalFailure };

struct Settings
{
  double tolerance = 1e-8;
  int max_iterations = 60;
  double regularization = 1e-9;
  bool verbose = false;  ///< per-iteration diagnostics to stderr
};

struct Solution
{
  Status status = Status::NumericalFailure;
  Eigen::VectorXd x;
  Eigen::VectorXd y;  ///< equality multipliers
  Eigen::VectorXd z;  ///< inequality multipliers (>= 0)
  int iterations = 0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();

  double objective(const Problem & p) const
  {
    return 0.5 * x.dot(p.P * x) + p.q.dot(x);
  }
};

inline Solution solve(const Problem & prob, const Settings & settings = {})
{
  const Eigen::Index n = prob.P.rows();
  const Eigen::Index me = prob.A.rows();
  const Eigen::Index mi = prob.G.rows();
  Solution sol;
  sol.x = Eigen::VectorXd::Zero(n);
  sol.y = Eigen::VectorXd::Zero(me);
  sol.z = Eigen::VectorXd::Zero(mi);

  const double delta = settings.regularization;

  // Equality-only problems reduce to one KKT solve.
  if (mi == 0) {
    Eigen::MatrixXd K(n + me, n + me);
    K.setZero();
    K.topLeftCorner(n, n) = prob.P + delta * Eigen::MatrixXd::Identity(n, n);
    if (me > 0) {
      K.topRightCorner(n, me) = prob.A.transpose();
      K.bottomLeftCorner(me, n) = prob.A;
      K.bottomRightCorner(me, me) = -delta * Eigen::MatrixXd::Identity(me, me);
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -prob.q;
    rhs.tail(me) = prob.b;
    const Eigen::VectorXd sv = K.partialPivLu().solve(rhs);
    sol.x = sv.head(n);
    sol.y = sv.tail(me);
    sol.dual_residual = (prob.P * sol.x + prob.q + prob.A.transpose() * sol.y)
                          .lpNorm<Eigen::Infinity>();
    sol.primal_residual = me > 0 ? (prob.A * sol.x - prob.b).lpNorm<Eigen::Infinity>() : 0.0;
    sol.gap = 0.0;
    sol.status = sol.x.allFinite() ? Status::Solved : Status::NumericalFailure;
    return sol;
  }

  // Starting point: equality-constrained minimizer, slacks pushed interior.
  {
    Eigen::MatrixXd K(n + me, n + me);
    K.setZero();
    K.topLeftCorner(n, n) =
      prob.P + Eigen::MatrixXd::Identity(n, n) * std::max(delta, 1e-9);
    if (me > 0) {
      K.topRightCorner(n, me) = prob.A.transpose();
      K.bottomLeftCorner(me, n) = prob.A;
      K.bottomRightCorner(me, me) = -delta * Eigen::MatrixXd::Identity(me, me);
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -prob.q;
    rhs.tail(me) = prob.b;
    const Eigen::VectorXd sv = K.partialPivLu().solve(rhs);
    if (!sv.allFinite()) { return sol; }
    sol.x = sv.head(n);
    sol.y = sv.tail(me);
  }
  Eigen::VectorXd s = prob.h - prob.G * sol.x;
  const double shift = std::max(0.0, -s.minCoeff()) + 1.0;
  s.array() += shift;
  sol.z = Eigen::VectorXd::Ones(mi);

  const double q_scale = 1.0 + prob.q.lpNorm<Eigen::Infinity>();
  const double b_scale = 1.0 + (me > 0 ? prob.b.lpNorm<Eigen::Infinity>() : 0.0) +
                         prob.h.lpNorm<Eigen::Infinity>();

  // Constraint rows are sparse (boxes, rates, half-planes); accumulate
  // G' W G over their nonzero patterns instead of a dense triple product.
  std::vector<std::vector<Eigen::Index>> g_pattern(mi);
  for (Eigen::Index i = 0; i < mi; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (prob.G(i, j) != 0.0) { g_pattern[i].push_back(j); }
    }
  }

  Eigen::MatrixXd K(n + me, n + me);
  K.setZero();
  if (me > 0) {
    K.topRightCorner(n, me) = prob.A.transpose();
    K.bottomLeftCorner(me, n) = prob.A;
    K.bottomRightCorner(me, me) = -delta * Eigen::MatrixXd::Identity(me, me);
  }
  Eigen::VectorXd rhs(n + me);

  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    const Eigen::VectorXd rd =
      prob.P * sol.x + prob.q +
      (me > 0 ? Eigen::VectorXd(prob.A.transpose() * sol.y) : Eigen::VectorXd::Zero(n)) +
      prob.G.transpose() * sol.z;
    const Eigen::VectorXd rp_eq =
      me > 0 ? Eigen::VectorXd(prob.A * sol.x - prob.b) : Eigen::VectorXd(0);
    const Eigen::VectorXd rp_in = prob.G * sol.x + s - prob.h;
    const double mu = s.dot(sol.z) / static_cast<double>(mi);

    sol.dual_residual = rd.lpNorm<Eigen::Infinity>();
    sol.primal_residual = std::max(
      me > 0 ? rp_eq.lpNorm<Eigen::Infinity>() : 0.0, rp_in.lpNorm<Eigen::Infinity>());
    sol.gap = mu;
    sol.iterations = iter;

    if (sol.dual_residual <= settings.tolerance * q_scale &&
        sol.primal_residual <= settings.tolerance * b_scale &&
        mu <= settings.tolerance * q_scale) {
      sol.status = Status::Solved;
      return sol;
    }

    // Uncapped scaling keeps the Newton recovery of dz consistent with
    // the factorized system; the static regularization handles rows
    // sitting hard on the boundary.
    const Eigen::ArrayXd w = sol.z.array() / s.array();
    K.topLeftCorner(n, n) = prob.P;
    K.topLeftCorner(n, n).diagonal().array() += delta;
    for (Eigen::Index i = 0; i < mi; ++i) {
      for (const Eigen::Index a : g_pattern[i]) {
        const double ga = w(i) * prob.G(i, a);
        for (const Eigen::Index b : g_pattern[i]) { K(a, b) += ga * prob.G(i, b); }
      }
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);

    // Solves the reduced Newton system for a given complementarity
    // target r_sz (s.*z -> r_sz): eliminate ds, dz. One round of
    // iterative refinement counters the scaling-induced conditioning.
    const auto newton = [&](const Eigen::VectorXd & r_sz,
                            Eigen::VectorXd & dx, Eigen::VectorXd & dy,
                            Eigen::VectorXd & dz, Eigen::VectorXd & ds) {
      // dz = w .* (G dx + rp_in) - (r_sz ./ s)   [from S dz + Z ds = -r_sz, ds = -(rp_in + G dx)]
      // dual row: P dx + A' dy + G' dz = -rd
      // => (P + G' W G) dx + A' dy = -rd - G'(w .* rp_in - r_sz ./ s)
      rhs.head(n) = -rd - prob.G.transpose() *
                            (w * rp_in.array() - r_sz.array() / s.array()).matrix();
      if (me > 0) { rhs.tail(me) = -rp_eq; }
      Eigen::VectorXd sv = lu.solve(rhs);
      sv += lu.solve(rhs - K * sv);
      dx = sv.head(n);
      dy = sv.tail(me);
      ds = -(rp_in + prob.G * dx);
      dz = (-r_sz.array() - sol.z.array() * ds.array()).matrix().cwiseQuotient(s);
    };

    const auto max_step = [](const Eigen::VectorXd & v, const Eigen::VectorXd & dv) {
      double a = 1.0;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (dv(i) < 0.0) { a = std::min(a, -v(i) / dv(i)); }
      }
      return a;
    };

    // Affine (predictor) direction.
    Eigen::VectorXd dx, dy, dz, ds;
    newton(s.cwiseProduct(sol.z), dx, dy, dz, ds);
    if (!dx.allFinite() || !ds.allFinite() || !dz.allFinite()) {
      sol.status = Status::NumericalFailure;
      return sol;
    }
    const double alpha_aff = std::min(max_step(s, ds), max_step(sol.z, dz));
    const double mu_aff = (s + alpha_aff * ds).dot(sol.z + alpha_aff * dz) /
                          static_cast<double>(mi);
    double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
    // Keep centering alive while the iterate is still infeasible, so the
    // gap cannot collapse ahead of the residuals.
    if (sol.primal_residual > 1e2 * mu || sol.dual_residual > 1e2 * mu * q_scale) {
      sigma = std::max(sigma, 0.1);
    }

    // Corrector with centering.
    const Eigen::VectorXd r_sz =
      (s.array() * sol.z.array() + ds.array() * dz.array() - sigma * mu).matrix();
    newton(r_sz, dx, dy, dz, ds);
    if (!dx.allFinite() || !ds.allFinite() || !dz.allFinite()) {
      sol.status = Status::NumericalFailure;
      return sol;
    }

    const double alpha_p = 0.99 * max_step(s, ds);
    const double alpha_d = 0.99 * max_step(sol.z, dz);
    if (settings.verbose) {
      Eigen::Index worst = 0;
      rd.cwiseAbs().maxCoeff(&worst);
      std::fprintf(stderr,
                   "iter %2d  rd %9.2e (coord %2ld)  rp %9.2e  mu %9.2e  sigma %5.3f  "
                   "ap %6.4f  ad %6.4f\n",
                   iter, sol.dual_residual, static_cast<long>(worst), sol.primal_residual,
                   mu, sigma, alpha_p, alpha_d);
    }
    sol.x += alpha_p * dx;
    s += alpha_p * ds;
    if (me > 0) { sol.y += alpha_d * dy; }
    sol.z += alpha_d * dz;
  }

  sol.status = Status::MaxIterations;
  return sol;
}

}  // namespace mpcom::qp
