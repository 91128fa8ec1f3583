#pragma once

// Linear word-embedding model, squared-distance cost construction, the
// distillation power, transport aggregation, Laplacian assembly, and the
// regularized embedding objective with its gradient.

#include <cmath>
#include <iostream>
#include <vector>

#include "dwl/common.hpp"

namespace dwl {

// Columns of theta are the word embeddings (linear map applied to one-hot
// codes). theta_current is the snapshot the proximal term pulls toward.
struct EmbeddingModel {
  Mat theta;          // D_emb x N
  Mat theta_current;  // snapshot, same shape
};

// Pairwise squared Euclidean distances between embedding columns.
inline Mat cost_matrix(const Mat& theta) {
  if (!theta.allFinite()) throw ParameterError("cost_matrix: non-finite embeddings");
  const Eigen::Index n = theta.cols();
  Vec sq = theta.colwise().squaredNorm();
  Mat cost = sq.replicate(1, n) + sq.transpose().replicate(n, 1) -
             2.0 * theta.transpose() * theta;
  // Exact symmetry and zero diagonal despite float cancellation.
  cost = 0.5 * (cost + cost.transpose());
  cost = cost.cwiseMax(0.0);
  cost.diagonal().setZero();
  return cost;
}

// Elementwise power D^tau, the distilled ("smoothed") cost. tau below 0.25
// oversmooths and only warrants a warning; tau outside (0,1] is an error.
inline Mat distill(const Mat& cost, double tau, std::ostream* warn = &std::cerr) {
  if (tau <= 0.0 || tau > 1.0)
    throw ParameterError("distill: tau must lie in (0,1]");
  if (tau < 0.25 && warn)
    (*warn) << "distill: tau=" << tau << " is below 0.25; the distilled cost may be oversmoothed\n";
  if (tau == 1.0) return cost;
  return cost.array().pow(tau);
}

// T = sum of per-document plans. An empty batch yields the zero matrix.
inline Mat aggregate_transports(const std::vector<Mat>& plans, Eigen::Index n = -1) {
  if (plans.empty()) {
    if (n < 0) throw ShapeError("aggregate_transports: empty list without a dimension");
    return Mat::Zero(n, n);
  }
  Mat total = Mat::Zero(plans.front().rows(), plans.front().cols());
  for (const Mat& p : plans) {
    if (p.rows() != total.rows() || p.cols() != total.cols())
      throw ShapeError("aggregate_transports: plan shape mismatch");
    total += p;
  }
  return total;
}

// L = diag(S 1) - S with S the symmetrized aggregate transport.
inline Mat laplacian(const Mat& transport) {
  Mat s = 0.5 * (transport + transport.transpose());
  Mat l = -s;
  l.diagonal() += s.rowwise().sum();
  return l;
}

// E(theta) = Tr(X L X^T) + beta * ||theta - theta_c||_F^2
inline double embedding_objective(const EmbeddingModel& model, const Mat& lap,
                                  double beta) {
  double smooth = (model.theta * lap * model.theta.transpose()).trace();
  double prox = (model.theta - model.theta_current).squaredNorm();
  return smooth + beta * prox;
}

inline Mat embedding_gradient(const EmbeddingModel& model, const Mat& lap, double beta) {
  // L is symmetric, so d/dtheta Tr(theta L theta^T) = 2 theta L.
  return 2.0 * model.theta * lap + 2.0 * beta * (model.theta - model.theta_current);
}

inline EmbeddingModel embedding_gradient_step(const EmbeddingModel& model, const Mat& lap,
                                              double beta, double rho) {
  EmbeddingModel out = model;
  out.theta -= rho * embedding_gradient(model, lap, beta);
  if (!out.theta.allFinite())
    throw NumericalError("embedding_gradient_step: non-finite embeddings");
  return out;
}

}  // namespace dwl
