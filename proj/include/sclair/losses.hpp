#pragma once

#include <cstddef>
#include <vector>

#include "sclair/tensor.hpp"

namespace sclair {

// One training batch in loss space: N projection outputs with their labels.
template <class T>
struct SupConBatch {
  Tensor<T> z;              // [N x D], every row L2-normalized
  std::vector<int> labels;  // N class indices in 0..25
  double tau = 0.1;         // temperature, > 0
};

struct SupConResult {
  double loss = 0.0;                // sum over anchors (the loss as written)
  std::vector<double> per_anchor;   // one term per anchor; 0 for skipped
  std::size_t skipped_anchors = 0;  // anchors with no positive in the batch
};

// Supervised contrastive loss: for each anchor i with positive set P(i)
// (same-label others) and candidate set A(i) (all others),
//   term_i = (-1/|P(i)|) * sum_{p in P(i)} log[ exp(z_i.z_p/tau)
//                                              / sum_{a in A(i)} exp(z_i.z_a/tau) ]
// computed with log-sum-exp stabilization. Anchors with |P(i)| = 0 contribute
// 0 and are tallied. `validate=false` skips the unit-norm precondition check
// so finite-difference harnesses can evaluate at perturbed z.
template <class T>
SupConResult supcon_loss(const SupConBatch<T>& batch, bool validate = true);

// The per-anchor partial derivative of term_i with respect to z_i alone:
//   (1/tau) { sum_p z_p (P_ip - 1/|P(i)|) + sum_n z_n P_in },
// with P_ix = exp(z_i.z_x/tau) / sum_{a in A(i)} exp(z_i.z_a/tau).
// Errors if anchor i has no positives (the expression divides by |P(i)|).
template <class T>
Tensor<T> supcon_grad_anchor(const SupConBatch<T>& batch, std::size_t i);

// Gradient of the full loss with respect to every row of z: accumulates, per
// anchor j, both the anchor's own partial (above) and the cross terms each
// z_k (k != j) receives through anchor j's numerators and denominator. Rows
// that play no role in any surviving term come back zero.
template <class T>
Tensor<T> supcon_grad_total(const SupConBatch<T>& batch, bool validate = true);

template <class T>
struct CrossEntropyResult {
  double loss = 0.0;       // batch mean of -log p_true, probs clamped at 1e-12
  Tensor<T> grad_logits;   // [N x C]: (softmax - onehot)/N wrt pre-softmax logits
};

// probs: [N x C] rows of softmax outputs (each row must sum to 1 within 1e-6).
template <class T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels);

}  // namespace sclair
