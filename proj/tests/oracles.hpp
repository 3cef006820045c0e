// Independent reference implementations used to verify the optimized code.
// Everything here is written in the most literal way possible (plain nested
// loops, no stabilization, long double accumulators) so that agreement with
// the production kernels is meaningful.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "sclair/tensor.hpp"

namespace oracles {

// Triple-loop matrix product.
template <class T>
sclair::Tensor<T> matmul(const sclair::Tensor<T>& a, const sclair::Tensor<T>& b) {
  sclair::Tensor<T> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += static_cast<long double>(a.at(i, k)) * static_cast<long double>(b.at(k, j));
      }
      c.at(i, j) = static_cast<T>(acc);
    }
  }
  return c;
}

// Direct softmax (no max subtraction; only safe for small inputs).
template <class T>
std::vector<double> softmax(const std::vector<T>& v) {
  long double den = 0.0L;
  for (T x : v) den += std::exp(static_cast<long double>(x));
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<double>(std::exp(static_cast<long double>(v[i])) / den);
  }
  return out;
}

// Valid cross-correlation, stride 1: y[f][t] = b[f] + sum_{c,k} w[f][c*K+k] x[c][t+k].
template <class T>
sclair::Tensor<T> conv1d(const sclair::Tensor<T>& x, const sclair::Tensor<T>& w,
                         const sclair::Tensor<T>& bias, std::size_t kernel) {
  const std::size_t cin = x.rows(), tin = x.cols(), f = w.rows();
  const std::size_t tout = tin - kernel + 1;
  sclair::Tensor<T> y({f, tout});
  for (std::size_t o = 0; o < f; ++o) {
    for (std::size_t t = 0; t < tout; ++t) {
      long double acc = static_cast<long double>(bias[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t k = 0; k < kernel; ++k) {
          acc += static_cast<long double>(w.at(o, c * kernel + k)) *
                 static_cast<long double>(x.at(c, t + k));
        }
      }
      y.at(o, t) = static_cast<T>(acc);
    }
  }
  return y;
}

// Literal supervised contrastive loss: for each anchor i with positives
// P(i) = {p != i : label_p == label_i} and candidates A(i) = {a != i},
//   term_i = (-1/|P(i)|) sum_{p in P(i)} log( exp(s_ip/tau) / sum_a exp(s_ia/tau) ),
// where s_xy is the plain dot product of rows x and y. Sum over anchors with
// |P(i)| > 0; anchors without positives contribute 0 and are tallied.
struct SupConRef {
  double loss = 0.0;
  std::vector<double> per_anchor;
  std::size_t skipped = 0;
};

inline SupConRef supcon(const sclair::Tensor<double>& z, const std::vector<int>& labels,
                        double tau) {
  const std::size_t n = z.rows(), d = z.cols();
  SupConRef out;
  out.per_anchor.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> pos;
    for (std::size_t p = 0; p < n; ++p) {
      if (p != i && labels[p] == labels[i]) pos.push_back(p);
    }
    if (pos.empty()) {
      ++out.skipped;
      continue;
    }
    long double den = 0.0L;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      long double s = 0.0L;
      for (std::size_t c = 0; c < d; ++c) s += (long double)z.at(i, c) * z.at(a, c);
      den += std::exp(s / (long double)tau);
    }
    long double term = 0.0L;
    for (std::size_t p : pos) {
      long double s = 0.0L;
      for (std::size_t c = 0; c < d; ++c) s += (long double)z.at(i, c) * z.at(p, c);
      term += std::log(std::exp(s / (long double)tau) / den);
    }
    out.per_anchor[i] = static_cast<double>(-term / (long double)pos.size());
    out.loss += out.per_anchor[i];
  }
  return out;
}

// Same quantity expressed through an explicitly materialized similarity
// matrix; used to cross-check the row-wise formulation above.
inline double supcon_from_sims(const sclair::Tensor<double>& z, const std::vector<int>& labels,
                               double tau) {
  const std::size_t n = z.rows(), d = z.cols();
  sclair::Tensor<double> s({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t c = 0; c < d; ++c) acc += (long double)z.at(i, c) * z.at(j, c);
      s.at(i, j) = static_cast<double>(acc / (long double)tau);
    }
  }
  long double total = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t npos = 0;
    for (std::size_t p = 0; p < n; ++p) npos += (p != i && labels[p] == labels[i]);
    if (npos == 0) continue;
    long double den = 0.0L;
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i) den += std::exp((long double)s.at(i, a));
    }
    long double term = 0.0L;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || labels[p] != labels[i]) continue;
      term += (long double)s.at(i, p) - std::log(den);
    }
    total += -term / (long double)npos;
  }
  return static_cast<double>(total);
}

// Central finite difference of a scalar function along one coordinate of a
// caller-owned buffer.
inline double central_fd(const std::function<double()>& f, double& coord, double h = 1e-5) {
  const double saved = coord;
  coord = saved + h;
  const double up = f();
  coord = saved - h;
  const double dn = f();
  coord = saved;
  return (up - dn) / (2.0 * h);
}

// Shared relative-error definition: max abs deviation over the largest
// infinity norm (floored so all-zero pairs compare as equal).
template <class T>
double rel_err(const sclair::Tensor<T>& a, const sclair::Tensor<T>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    na = std::max(na, std::abs(static_cast<double>(a[i])));
    nb = std::max(nb, std::abs(static_cast<double>(b[i])));
  }
  return num / std::max({na, nb, 1e-6});
}

}  // namespace oracles
