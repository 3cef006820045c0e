#include "sclair/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sclair/data.hpp"

namespace sclair {

namespace {

template <class T>
void validate_batch(const SupConBatch<T>& b, bool check_norms) {
  if (b.z.rank() != 2 || b.z.rows() < 2) {
    throw std::invalid_argument("supcon: batch needs an [N x D] z with N >= 2, got " +
                                shape_str(b.z.shape()));
  }
  if (b.labels.size() != b.z.rows()) {
    throw std::invalid_argument("supcon: " + std::to_string(b.labels.size()) + " labels for " +
                                std::to_string(b.z.rows()) + " rows");
  }
  if (!(b.tau > 0.0)) {
    throw std::invalid_argument("supcon: tau must be positive, got " + std::to_string(b.tau));
  }
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    if (b.labels[i] < 0 || b.labels[i] >= static_cast<int>(kNumClasses)) {
      throw std::invalid_argument("supcon: label " + std::to_string(b.labels[i]) + " at row " +
                                  std::to_string(i) + " outside 0..25");
    }
  }
  if (!check_norms) return;
  const std::size_t n = b.z.rows(), d = b.z.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = static_cast<double>(b.z.at(i, j));
      s += v * v;
    }
    if (std::abs(std::sqrt(s) - 1.0) > 1e-5) {
      throw std::invalid_argument("supcon: row " + std::to_string(i) + " has norm " +
                                  std::to_string(std::sqrt(s)) + ", expected 1 within 1e-5");
    }
  }
}

// Softmax weights P_ix over the candidate set A(i) = everyone but i, computed
// from the similarity row in 64-bit with log-sum-exp stabilization. Returns
// P_ix in out[x] (out[i] left 0) and the log-partition value through *lse.
template <class T>
void anchor_softmax(const Tensor<T>& sims, std::size_t i, double tau, std::vector<double>& out,
                    double* lse) {
  const std::size_t n = sims.rows();
  double m = -1e300;
  for (std::size_t a = 0; a < n; ++a) {
    if (a == i) continue;
    m = std::max(m, static_cast<double>(sims.at(i, a)) / tau);
  }
  double denom = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    if (a == i) continue;
    denom += std::exp(static_cast<double>(sims.at(i, a)) / tau - m);
  }
  out.assign(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    if (a == i) continue;
    out[a] = std::exp(static_cast<double>(sims.at(i, a)) / tau - m) / denom;
  }
  if (lse) *lse = m + std::log(denom);
}

template <class T>
std::size_t positives_of(const SupConBatch<T>& b, std::size_t i) {
  std::size_t c = 0;
  for (std::size_t k = 0; k < b.labels.size(); ++k) {
    if (k != i && b.labels[k] == b.labels[i]) ++c;
  }
  return c;
}

}  // namespace

template <class T>
SupConResult supcon_loss(const SupConBatch<T>& batch, bool validate) {
  validate_batch(batch, validate);
  const std::size_t n = batch.z.rows();
  Tensor<T> sims = matmul_nt(batch.z, batch.z);
  SupConResult res;
  res.per_anchor.assign(n, 0.0);
  std::vector<double> probs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t np = positives_of(batch, i);
    if (np == 0) {
      ++res.skipped_anchors;
      continue;
    }
    double lse = 0.0;
    anchor_softmax(sims, i, batch.tau, probs, &lse);
    double term = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || batch.labels[p] != batch.labels[i]) continue;
      term += lse - static_cast<double>(sims.at(i, p)) / batch.tau;
    }
    term /= static_cast<double>(np);
    res.per_anchor[i] = term;
    res.loss += term;
  }
  return res;
}

template <class T>
Tensor<T> supcon_grad_anchor(const SupConBatch<T>& batch, std::size_t i) {
  validate_batch(batch, true);
  const std::size_t n = batch.z.rows(), d = batch.z.cols();
  if (i >= n) throw std::invalid_argument("supcon_grad_anchor: anchor index out of range");
  const std::size_t np = positives_of(batch, i);
  if (np == 0) {
    throw std::invalid_argument("supcon_grad_anchor: anchor " + std::to_string(i) +
                                " has no positives; Eq. undefined for |P(i)| = 0");
  }
  Tensor<T> sims = matmul_nt(batch.z, batch.z);
  std::vector<double> probs;
  anchor_softmax(sims, i, batch.tau, probs, nullptr);
  std::vector<double> acc(d, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    if (x == i) continue;
    const double coef =
        probs[x] - (batch.labels[x] == batch.labels[i] ? 1.0 / static_cast<double>(np) : 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      acc[j] += coef * static_cast<double>(batch.z.at(x, j));
    }
  }
  Tensor<T> g({d});
  for (std::size_t j = 0; j < d; ++j) g[j] = static_cast<T>(acc[j] / batch.tau);
  return g;
}

template <class T>
Tensor<T> supcon_grad_total(const SupConBatch<T>& batch, bool validate) {
  validate_batch(batch, validate);
  const std::size_t n = batch.z.rows(), d = batch.z.cols();
  Tensor<T> sims = matmul_nt(batch.z, batch.z);
  std::vector<double> acc(n * d, 0.0);
  std::vector<double> probs;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t np = positives_of(batch, j);
    if (np == 0) continue;
    anchor_softmax(sims, j, batch.tau, probs, nullptr);
    for (std::size_t x = 0; x < n; ++x) {
      if (x == j) continue;
      const double coef =
          (probs[x] -
           (batch.labels[x] == batch.labels[j] ? 1.0 / static_cast<double>(np) : 0.0)) /
          batch.tau;
      // Anchor j's own row collects coef * z_x; row x collects the cross term
      // coef * z_j it receives through anchor j's numerator and denominator.
      for (std::size_t c = 0; c < d; ++c) {
        acc[j * d + c] += coef * static_cast<double>(batch.z.at(x, c));
        acc[x * d + c] += coef * static_cast<double>(batch.z.at(j, c));
      }
    }
  }
  Tensor<T> g({n, d});
  for (std::size_t i = 0; i < n * d; ++i) g[i] = static_cast<T>(acc[i]);
  return g;
}

template <class T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.rows() == 0) {
    throw std::invalid_argument("cross_entropy: expected [N x C] probabilities, got " +
                                shape_str(probs.shape()));
  }
  const std::size_t n = probs.rows(), c = probs.cols();
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(c)) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) + " outside 0.." +
                                  std::to_string(c - 1));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += static_cast<double>(probs.at(i, j));
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("cross_entropy: probability row " + std::to_string(i) +
                                  " sums to " + std::to_string(s) + ", expected 1 within 1e-6");
    }
  }
  CrossEntropyResult<T> res;
  res.grad_logits = Tensor<T>({n, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::max(static_cast<double>(probs.at(i, labels[i])), 1e-12);
    loss -= std::log(p);
    for (std::size_t j = 0; j < c; ++j) {
      const double onehot = (static_cast<int>(j) == labels[i]) ? 1.0 : 0.0;
      res.grad_logits.at(i, j) =
          static_cast<T>((static_cast<double>(probs.at(i, j)) - onehot) / static_cast<double>(n));
    }
  }
  res.loss = loss / static_cast<double>(n);
  return res;
}

#define SCLAIR_INSTANTIATE_LOSSES(T)                                                  \
  template SupConResult supcon_loss<T>(const SupConBatch<T>&, bool);                  \
  template Tensor<T> supcon_grad_anchor<T>(const SupConBatch<T>&, std::size_t);       \
  template Tensor<T> supcon_grad_total<T>(const SupConBatch<T>&, bool);               \
  template CrossEntropyResult<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);

SCLAIR_INSTANTIATE_LOSSES(float)
SCLAIR_INSTANTIATE_LOSSES(double)

#undef SCLAIR_INSTANTIATE_LOSSES

}  // namespace sclair
