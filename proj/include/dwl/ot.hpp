#pragma once

// Entropic and exact optimal-transport primitives: Gibbs kernel, Sinkhorn
// scaling, the iterative barycenter recursion, and a small exact solver for
// the transportation LP (successive shortest paths with potentials).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dwl/common.hpp"

namespace dwl {

// y_m from raw token counts.
inline Vec normalize_counts(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) {
    if (c < 0) throw ParameterError("normalize_counts: negative count");
    total += c;
  }
  if (total == 0) throw DataError("normalize_counts: empty document (all counts zero)");
  Vec p(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t i = 0; i < counts.size(); ++i)
    p(static_cast<Eigen::Index>(i)) =
        static_cast<double>(counts[i]) / static_cast<double>(total);
  return p;
}

// K_ij = exp(-cost_ij / epsilon). Costs are nonnegative with zero diagonal,
// so entries lie in (0,1] and the diagonal is exactly 1.
inline Mat gibbs_kernel(const Mat& cost, double epsilon) {
  if (epsilon <= 0.0) throw ParameterError("gibbs_kernel: epsilon must be positive");
  return (-cost.array() / epsilon).exp();
}

struct ExactOtResult {
  double value = 0.0;
  Mat plan;
};

// Exact transportation LP by successive shortest augmenting paths with node
// potentials (bipartite min-cost flow; supply arcs saturate monotonically so
// at most rows+cols augmentations occur). Intended as a small-N oracle.
inline ExactOtResult exact_ot(const Vec& u, const Vec& v, const Mat& cost) {
  const Eigen::Index n = u.size();
  if (v.size() != n || cost.rows() != n || cost.cols() != n)
    throw ShapeError("exact_ot: dimension mismatch");

  Mat flow = Mat::Zero(n, n);
  Vec ru = u;  // remaining supply
  Vec rv = v;  // remaining demand
  Vec pot_src = Vec::Zero(n);
  Vec pot_snk = Vec::Zero(n);
  const double inf = std::numeric_limits<double>::infinity();
  const double mass_tol = 1e-14;

  while (ru.sum() > mass_tol) {
    // Dijkstra over 2n nodes on reduced costs; virtual source feeds every
    // row with remaining supply.
    std::vector<double> dist(2 * static_cast<std::size_t>(n), inf);
    std::vector<int> prev(2 * static_cast<std::size_t>(n), -1);
    std::vector<bool> done(2 * static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i)
      if (ru(i) > mass_tol) dist[static_cast<std::size_t>(i)] = 0.0;

    auto node_src = [n](Eigen::Index i) { return static_cast<std::size_t>(i); };
    auto node_snk = [n](Eigen::Index j) { return static_cast<std::size_t>(n + j); };

    for (;;) {
      std::size_t best = 2 * static_cast<std::size_t>(n);
      double bd = inf;
      for (std::size_t t = 0; t < 2 * static_cast<std::size_t>(n); ++t)
        if (!done[t] && dist[t] < bd) {
          bd = dist[t];
          best = t;
        }
      if (best == 2 * static_cast<std::size_t>(n)) break;
      done[best] = true;
      if (best < static_cast<std::size_t>(n)) {
        Eigen::Index i = static_cast<Eigen::Index>(best);
        for (Eigen::Index j = 0; j < n; ++j) {
          double rc = cost(i, j) + pot_src(i) - pot_snk(j);
          if (rc < 0) rc = 0;  // guard float noise
          if (dist[node_src(i)] + rc < dist[node_snk(j)]) {
            dist[node_snk(j)] = dist[node_src(i)] + rc;
            prev[node_snk(j)] = static_cast<int>(node_src(i));
          }
        }
      } else {
        Eigen::Index j = static_cast<Eigen::Index>(best - static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
          if (flow(i, j) <= 0.0) continue;
          double rc = -cost(i, j) - pot_src(i) + pot_snk(j);
          if (rc < 0) rc = 0;
          if (dist[node_snk(j)] + rc < dist[node_src(i)]) {
            dist[node_src(i)] = dist[node_snk(j)] + rc;
            prev[node_src(i)] = static_cast<int>(node_snk(j));
          }
        }
      }
    }

    // Closest reachable sink with remaining demand.
    Eigen::Index tj = -1;
    double td = inf;
    for (Eigen::Index j = 0; j < n; ++j)
      if (rv(j) > mass_tol && dist[node_snk(j)] < td) {
        td = dist[node_snk(j)];
        tj = j;
      }
    if (tj < 0) throw NumericalError("exact_ot: no augmenting path (unbalanced marginals?)");

    // Bottleneck along the path.
    double amount = rv(tj);
    for (int t = static_cast<int>(node_snk(tj)); prev[t] >= 0; t = prev[t]) {
      int p = prev[t];
      if (t >= n && p < n) {
        // forward arc src p -> snk t-n: unbounded
      } else {
        // backward arc snk p-n -> src t
        amount = std::min(amount, flow(t, p - n));
      }
    }
    {
      int head = static_cast<int>(node_snk(tj));
      while (prev[head] >= 0) head = prev[head];
      amount = std::min(amount, ru(head));
    }

    for (int t = static_cast<int>(node_snk(tj)); prev[t] >= 0; t = prev[t]) {
      int p = prev[t];
      if (t >= n && p < n)
        flow(p, t - n) += amount;
      else
        flow(t, p - n) -= amount;
    }
    {
      int head = static_cast<int>(node_snk(tj));
      while (prev[head] >= 0) head = prev[head];
      ru(head) -= amount;
    }
    rv(tj) -= amount;

    // Cap increments at the target distance so every residual reduced cost
    // stays nonnegative.
    for (Eigen::Index i = 0; i < n; ++i)
      pot_src(i) += std::min(dist[node_src(i)], td);
    for (Eigen::Index j = 0; j < n; ++j)
      pot_snk(j) += std::min(dist[node_snk(j)], td);
  }

  ExactOtResult out;
  out.plan = flow;
  out.value = (flow.array() * cost.array()).sum();
  return out;
}

struct SinkhornResult {
  double value = 0.0;           // transport cost + epsilon * plan entropy term
  double transport_cost = 0.0;  // Tr(plan^T cost)
  Mat plan;
  int iterations = 0;
  double marginal_error = 0.0;  // achieved l1 violation
  bool converged = false;
};

// 0*ln(0) = 0 convention.
inline double plan_entropy_term(const Mat& plan) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < plan.rows(); ++i)
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      double t = plan(i, j);
      if (t > 0.0) s += t * std::log(t);
    }
  return s;
}

namespace detail {

// One half-update of the log-domain potentials:
//   f_i = eps * (ln a_i - LSE_j((g_j - c_ij) / eps))
inline void log_domain_update(const Vec& log_marg, const Mat& cost, double eps,
                              const Vec& other, bool rows, Vec* pot) {
  const Eigen::Index n = pot->size();
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      mx = std::max(mx, (other(j) - (rows ? cost(i, j) : cost(j, i))) / eps);
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      s += std::exp((other(j) - (rows ? cost(i, j) : cost(j, i))) / eps - mx);
    (*pot)(i) = eps * (log_marg(i) - mx - std::log(s));
  }
}

}  // namespace detail

// Matrix-scaling iteration in probability scale by default; the stabilized
// path works on log-domain potentials with an epsilon-scaling warm start and
// is required for small epsilon, where the plain kernel underflows.
inline SinkhornResult sinkhorn_distance(const Vec& u, const Vec& v, const Mat& cost,
                                        double epsilon, int max_iters = 1000,
                                        double marginal_tol = 1e-6,
                                        bool stabilized = false) {
  const Eigen::Index n = u.size();
  if (v.size() != n || cost.rows() != n || cost.cols() != n)
    throw ShapeError("sinkhorn_distance: dimension mismatch");
  if (epsilon <= 0.0) throw ParameterError("sinkhorn_distance: epsilon must be positive");
  if (max_iters < 1) throw ParameterError("sinkhorn_distance: max_iters must be positive");

  const Vec a = floor_smooth(u);
  const Vec b = floor_smooth(v);
  SinkhornResult out;

  if (!stabilized) {
    const Mat kernel = gibbs_kernel(cost, epsilon);
    Vec sa = Vec::Ones(n);
    Vec sb = Vec::Ones(n);
    for (int it = 1; it <= max_iters; ++it) {
      sa = a.array() / (kernel * sb).array();
      sb = b.array() / (kernel.transpose() * sa).array();
      out.iterations = it;
      // After the sb update column sums match b; only row sums can be off.
      Vec row_sums = sa.array() * (kernel * sb).array();
      out.marginal_error = (row_sums - a).cwiseAbs().sum();
      if (!row_sums.allFinite())
        throw NumericalError("sinkhorn_distance: non-finite scaling at iteration " +
                             std::to_string(it));
      if (out.marginal_error <= marginal_tol) {
        out.converged = true;
        break;
      }
    }
    out.plan = sa.asDiagonal() * kernel * sb.asDiagonal();
  } else {
    const Vec log_a = a.array().log();
    const Vec log_b = b.array().log();
    Vec f = Vec::Zero(n);
    Vec g = Vec::Zero(n);
    // Anneal from a coarse epsilon down to the target; a few sweeps per
    // stage are enough to warm-start the next one.
    double eps_cur = std::max(cost.maxCoeff(), epsilon);
    while (eps_cur > epsilon * 1.0000001) {
      for (int s = 0; s < 5; ++s) {
        detail::log_domain_update(log_a, cost, eps_cur, g, true, &f);
        detail::log_domain_update(log_b, cost, eps_cur, f, false, &g);
      }
      eps_cur = std::max(epsilon, eps_cur / 2.0);
    }
    for (int it = 1; it <= max_iters; ++it) {
      detail::log_domain_update(log_a, cost, epsilon, g, true, &f);
      detail::log_domain_update(log_b, cost, epsilon, f, false, &g);
      out.iterations = it;
      double err = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        double r = 0.0;
        for (Eigen::Index j = 0; j < n; ++j)
          r += std::exp((f(i) + g(j) - cost(i, j)) / epsilon);
        err += std::abs(r - a(i));
      }
      out.marginal_error = err;
      if (!std::isfinite(err))
        throw NumericalError("sinkhorn_distance: non-finite potentials at iteration " +
                             std::to_string(it));
      if (err <= marginal_tol) {
        out.converged = true;
        break;
      }
    }
    out.plan = Mat(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        out.plan(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / epsilon);
  }

  out.transport_cost = (out.plan.array() * cost.array()).sum();
  out.value = out.transport_cost + epsilon * plan_entropy_term(out.plan);
  if (!std::isfinite(out.value)) throw NumericalError("sinkhorn_distance: non-finite value");
  return out;
}

// History of the barycenter forward recursion; the backward passes replay it.
struct BarycenterTrace {
  std::vector<Mat> phi;   // phi[l-1] is the N x K matrix of phi_k^l, l = 1..L
  std::vector<Mat> beta;  // beta[l] for l = 0..L; beta[0] is all-ones
  Vec yhat_raw;           // unnormalized output of the recursion
};

// Forward recursion on a precomputed kernel:
//   phi_k = C^T (b_k / (C beta_k)),  yhat = prod_k phi_k^{w_k},
//   beta_k = yhat / phi_k,  from beta_k = 1.
// The geometric mean is evaluated in log space.
inline Vec barycenter_forward(const Mat& basis, const Vec& weights, const Mat& kernel,
                              int inner_iters, BarycenterTrace* trace = nullptr) {
  const Eigen::Index n = basis.rows();
  const Eigen::Index k = basis.cols();
  if (weights.size() != k) throw ShapeError("barycenter_forward: weights/basis mismatch");
  if (kernel.rows() != n || kernel.cols() != n)
    throw ShapeError("barycenter_forward: kernel/basis mismatch");
  if (inner_iters < 1) throw ParameterError("barycenter_forward: inner_iters must be positive");

  Mat smooth_basis(n, k);
  for (Eigen::Index c = 0; c < k; ++c) smooth_basis.col(c) = floor_smooth(basis.col(c));

  Mat beta = Mat::Ones(n, k);
  Mat phi(n, k);
  Vec yhat = Vec::Ones(n);
  if (trace) {
    trace->phi.clear();
    trace->beta.clear();
    trace->phi.reserve(static_cast<std::size_t>(inner_iters));
    trace->beta.reserve(static_cast<std::size_t>(inner_iters) + 1);
    trace->beta.push_back(beta);
  }
  for (int l = 1; l <= inner_iters; ++l) {
    Vec log_y = Vec::Zero(n);
    for (Eigen::Index c = 0; c < k; ++c) {
      Vec denom = kernel * beta.col(c);
      if ((denom.array() <= 0.0).any())
        throw NumericalError("barycenter_forward: zero denominator in C*beta");
      phi.col(c) = kernel.transpose() * (smooth_basis.col(c).array() / denom.array()).matrix();
      log_y += weights(c) * phi.col(c).array().log().matrix();
    }
    yhat = log_y.array().exp();
    for (Eigen::Index c = 0; c < k; ++c)
      beta.col(c) = yhat.array() / phi.col(c).array();
    if (trace) {
      trace->phi.push_back(phi);
      trace->beta.push_back(beta);
    }
  }
  if (!yhat.allFinite()) throw NumericalError("barycenter_forward: non-finite iterate");
  if (trace) trace->yhat_raw = yhat;
  return yhat;
}

// Entropic Wasserstein barycenter of the basis columns. The raw recursion
// output is normalized so the result is a proper distribution.
inline Vec sinkhorn_barycenter(const Mat& basis, const Vec& weights, const Mat& cost,
                               double epsilon, int inner_iters,
                               BarycenterTrace* trace = nullptr) {
  const Mat kernel = gibbs_kernel(cost, epsilon);
  Vec yhat = barycenter_forward(basis, weights, kernel, inner_iters, trace);
  return yhat / yhat.sum();
}

// Transport plan between basis column k and the barycenter, recovered from
// the converged scalings: diag(b_k / (C beta_k)) * C * diag(beta_k). The row
// marginal is exactly b_k; the column marginal approaches yhat as the
// recursion converges.
inline Mat recover_plan(const Vec& basis_col, const Vec& beta_col, const Mat& kernel) {
  Vec b = floor_smooth(basis_col);
  Vec left = b.array() / (kernel * beta_col).array();
  return left.asDiagonal() * kernel * beta_col.asDiagonal();
}

}  // namespace dwl
