#pragma once

// Wasserstein dictionary learning: softmax-parametrized topics and weights,
// barycentric document reconstruction on a distilled cost, the squared
// reconstruction loss, and explicit forward/backward Sinkhorn gradients.

#include <cmath>
#include <utility>
#include <vector>

#include "dwl/common.hpp"
#include "dwl/ot.hpp"

namespace dwl {

// Free parameters of the topic model: R (N x K) generates the topic columns
// B, A (K x M) generates the per-document weight columns Lambda.
struct TopicLogits {
  Mat R;
  Mat A;
};

struct TopicModelState {
  Mat B;       // N x K, column-stochastic
  Mat Lambda;  // K x M, column-stochastic
};

// Column-wise softmax with max subtraction.
inline Mat softmax_columns(const Mat& logits) {
  if (!logits.allFinite()) throw ParameterError("softmax_columns: non-finite logits");
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Vec col = logits.col(c);
    Vec e = (col.array() - col.maxCoeff()).exp();
    out.col(c) = e / e.sum();
  }
  return out;
}

inline TopicModelState state_from_logits(const TopicLogits& logits) {
  return {softmax_columns(logits.R), softmax_columns(logits.A)};
}

inline double reconstruction_loss(const Vec& y, const Vec& yhat) {
  if (y.size() != yhat.size()) throw ShapeError("reconstruction_loss: length mismatch");
  return (y - yhat).squaredNorm();
}

inline Vec reconstruction_loss_grad(const Vec& y, const Vec& yhat) {
  if (y.size() != yhat.size()) throw ShapeError("reconstruction_loss_grad: length mismatch");
  return 2.0 * (yhat - y);
}

// Document m as the entropic barycenter of the topic columns under the
// distilled cost.
inline Vec reconstruct_document(const TopicModelState& state, Eigen::Index m,
                                const Mat& distilled_cost, double epsilon,
                                int inner_iters) {
  if (m < 0 || m >= state.Lambda.cols())
    throw ShapeError("reconstruct_document: document index out of range");
  return sinkhorn_barycenter(state.B, state.Lambda.col(m), distilled_cost, epsilon,
                             inner_iters);
}

struct SinkhornGradResult {
  Mat grad_basis;   // N x K, d loss / d B
  Vec grad_weights; // K, d loss / d lambda_m
  Mat plan_to_closest;  // transport plan between b_{k_m} and the barycenter
  Vec yhat;             // normalized reconstruction
  double loss = 0.0;    // squared loss of the raw recursion output
  int closest_topic = 0;
};

// Forward barycenter recursion plus the two backward recursions. The
// backward passes replay the stored (phi, beta) history from the last
// iteration down to the first; the adjoint of an iterate only exists once
// the later iterates have been processed, so the loops run in reverse.
inline SinkhornGradResult sinkhorn_grad(const Vec& y, const Mat& basis, const Vec& lambda,
                                        const Mat& kernel, int inner_iters,
                                        int supervised_topic = -1) {
  const Eigen::Index n = basis.rows();
  const Eigen::Index k = basis.cols();
  if (y.size() != n) throw ShapeError("sinkhorn_grad: document/basis mismatch");

  BarycenterTrace trace;
  Vec yhat_raw = barycenter_forward(basis, lambda, kernel, inner_iters, &trace);
  const int L = inner_iters;

  Mat smooth_basis(n, k);
  for (Eigen::Index c = 0; c < k; ++c) smooth_basis.col(c) = floor_smooth(basis.col(c));

  SinkhornGradResult out;
  out.loss = reconstruction_loss(y, yhat_raw);
  Vec loss_grad = reconstruction_loss_grad(y, yhat_raw);

  // Backward loop for weights. g is the adjoint of ln(yhat) at the current
  // level; r holds the adjoint of ln(beta) handed down from the level above.
  {
    Vec g = loss_grad.array() * yhat_raw.array();
    Mat r = Mat::Zero(n, k);
    Vec w = Vec::Zero(k);
    for (int l = L; l >= 1; --l) {
      const Mat& phi = trace.phi[static_cast<std::size_t>(l - 1)];
      for (Eigen::Index c = 0; c < k; ++c)
        w(c) += phi.col(c).array().log().matrix().dot(g);
      if (l > 1) {
        const Mat& beta_prev = trace.beta[static_cast<std::size_t>(l - 1)];
        Mat r_next(n, k);
        for (Eigen::Index c = 0; c < k; ++c) {
          Vec adj_phi =
              (lambda(c) * g - r.col(c)).array() / phi.col(c).array();
          Vec denom = kernel * beta_prev.col(c);
          Vec inner = (kernel * adj_phi).array() * smooth_basis.col(c).array() /
                      denom.array().square();
          r_next.col(c) =
              -(kernel.transpose() * inner).array() * beta_prev.col(c).array();
        }
        r = std::move(r_next);
        g = r.rowwise().sum();
      }
    }
    out.grad_weights = w;
  }

  // Backward loop for basis. v is the value adjoint of yhat at the current
  // level; z carries the per-topic adjoint handed down from above.
  {
    Vec v = loss_grad;
    Mat z = Mat::Zero(n, k);
    Mat m_acc = Mat::Zero(n, k);
    for (int l = L; l >= 1; --l) {
      const Mat& beta_cur = trace.beta[static_cast<std::size_t>(l)];
      const Mat& beta_prev = trace.beta[static_cast<std::size_t>(l - 1)];
      Mat psi(n, k);
      for (Eigen::Index c = 0; c < k; ++c) {
        psi.col(c) =
            kernel * ((lambda(c) * v - z.col(c)).array() * beta_cur.col(c).array())
                        .matrix();
        Vec denom = kernel * beta_prev.col(c);
        m_acc.col(c) += (psi.col(c).array() / denom.array()).matrix();
      }
      if (l > 1) {
        const Mat& phi_prev = trace.phi[static_cast<std::size_t>(l - 2)];
        for (Eigen::Index c = 0; c < k; ++c) {
          Vec denom = kernel * beta_prev.col(c);
          Vec inner =
              smooth_basis.col(c).array() * psi.col(c).array() / denom.array().square();
          z.col(c) = -(kernel.transpose() * inner).array() / phi_prev.col(c).array();
        }
        v = z.rowwise().sum();
      }
    }
    if (!m_acc.allFinite())
      throw NumericalError("sinkhorn_grad: non-finite basis gradient");
    out.grad_basis = m_acc;
  }

  // Plan between the closest topic and the barycenter, from the converged
  // scalings of the last forward iteration.
  int km = supervised_topic;
  if (km < 0) {
    double best = -1.0;
    for (Eigen::Index c = 0; c < k; ++c)
      if (lambda(c) > best) {
        best = lambda(c);
        km = static_cast<int>(c);
      }
  }
  out.closest_topic = km;
  out.plan_to_closest =
      recover_plan(basis.col(km), trace.beta.back().col(km), kernel);
  out.yhat = yhat_raw / yhat_raw.sum();
  return out;
}

// Spec-shaped convenience wrapper taking the model state and a cost matrix.
inline SinkhornGradResult sinkhorn_grad(const Vec& y, const TopicModelState& state,
                                        Eigen::Index m, const Mat& distilled_cost,
                                        double epsilon, int inner_iters,
                                        int supervised_topic = -1) {
  if (m < 0 || m >= state.Lambda.cols())
    throw ShapeError("sinkhorn_grad: document index out of range");
  Mat kernel = gibbs_kernel(distilled_cost, epsilon);
  return sinkhorn_grad(y, state.B, state.Lambda.col(m), kernel, inner_iters,
                       supervised_topic);
}

// d loss / d logits for one softmax column: (diag(p) - p p^T) * upstream.
inline Vec softmax_backward(const Vec& p, const Vec& upstream) {
  return (p.array() * upstream.array()).matrix() - p * p.dot(upstream);
}

// One gradient-descent step on the logits. grad_basis is the batch-averaged
// gradient wrt B; (doc_index, grad) pairs carry the per-document weight
// gradients, so only the A-columns of batch documents move.
inline TopicLogits apply_logit_updates(
    const TopicLogits& logits, const Mat& grad_basis,
    const std::vector<std::pair<Eigen::Index, Vec>>& grad_weights, double rho) {
  TopicLogits out = logits;
  Mat b = softmax_columns(logits.R);
  if (grad_basis.rows() != b.rows() || grad_basis.cols() != b.cols())
    throw ShapeError("apply_logit_updates: grad_basis shape mismatch");
  for (Eigen::Index c = 0; c < b.cols(); ++c)
    out.R.col(c) -= rho * softmax_backward(b.col(c), grad_basis.col(c));
  for (const auto& [m, g] : grad_weights) {
    if (m < 0 || m >= logits.A.cols())
      throw ShapeError("apply_logit_updates: document index out of range");
    Vec lam = softmax_columns(logits.A.col(m));
    out.A.col(m) -= rho * softmax_backward(lam, g);
  }
  return out;
}

}  // namespace dwl
