#include "sclair/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstring>
#include <sstream>

namespace sclair {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

template <class T>
using MatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using MatMapMut = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using VecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using VecMapMut = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
void require_matrix(const Tensor<T>& t, const char* op, const char* which) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": " + which + " must be rank-2, got shape " +
                                shape_str(t.shape()));
  }
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul", "lhs");
  require_matrix(b, "matmul", "rhs");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, lhs " + shape_str(a.shape()) +
                                " rhs " + shape_str(b.shape()));
  }
  Tensor<T> out({a.rows(), b.cols()});
  MatMap<T> ma(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  MatMap<T> mb(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  MatMapMut<T> mo(out.data(), static_cast<Eigen::Index>(out.rows()),
                  static_cast<Eigen::Index>(out.cols()));
  mo.noalias() = ma * mb;
  return out;
}

template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn", "lhs");
  require_matrix(b, "matmul_tn", "rhs");
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("matmul_tn: shared dimension disagrees, lhs " +
                                shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
  }
  Tensor<T> out({a.cols(), b.cols()});
  MatMap<T> ma(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  MatMap<T> mb(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  MatMapMut<T> mo(out.data(), static_cast<Eigen::Index>(out.rows()),
                  static_cast<Eigen::Index>(out.cols()));
  mo.noalias() = ma.transpose() * mb;
  return out;
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt", "lhs");
  require_matrix(b, "matmul_nt", "rhs");
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: shared dimension disagrees, lhs " +
                                shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
  }
  Tensor<T> out({a.rows(), b.rows()});
  MatMap<T> ma(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  MatMap<T> mb(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  MatMapMut<T> mo(out.data(), static_cast<Eigen::Index>(out.rows()),
                  static_cast<Eigen::Index>(out.cols()));
  mo.noalias() = ma * mb.transpose();
  return out;
}

template <class T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x) {
  require_matrix(w, "matvec", "matrix");
  if (x.rank() != 1 || w.cols() != x.size()) {
    throw std::invalid_argument("matvec: matrix " + shape_str(w.shape()) + " vs vector " +
                                shape_str(x.shape()));
  }
  Tensor<T> out({w.rows()});
  MatMap<T> mw(w.data(), static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
  VecMap<T> vx(x.data(), static_cast<Eigen::Index>(x.size()));
  VecMapMut<T> vo(out.data(), static_cast<Eigen::Index>(out.size()));
  vo.noalias() = mw * vx;
  return out;
}

template <class T>
Tensor<T> matvec_tn(const Tensor<T>& w, const Tensor<T>& x) {
  require_matrix(w, "matvec_tn", "matrix");
  if (x.rank() != 1 || w.rows() != x.size()) {
    throw std::invalid_argument("matvec_tn: matrix " + shape_str(w.shape()) + " vs vector " +
                                shape_str(x.shape()));
  }
  Tensor<T> out({w.cols()});
  MatMap<T> mw(w.data(), static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
  VecMap<T> vx(x.data(), static_cast<Eigen::Index>(x.size()));
  VecMapMut<T> vo(out.data(), static_cast<Eigen::Index>(out.size()));
  vo.noalias() = mw.transpose() * vx;
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose", "input");
  Tensor<T> out({a.cols(), a.rows()});
  MatMap<T> ma(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  MatMapMut<T> mo(out.data(), static_cast<Eigen::Index>(out.rows()),
                  static_cast<Eigen::Index>(out.cols()));
  mo = ma.transpose();
  return out;
}

template <class T>
Tensor<T> softmax_stable(const Tensor<T>& v) {
  if (v.rank() != 1 || v.size() == 0) {
    throw std::invalid_argument("softmax_stable: want a non-empty vector, got " +
                                shape_str(v.shape()));
  }
  Tensor<T> out(v.shape());
  T m = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) m = std::max(m, v[i]);
  T denom = T(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    denom += out[i];
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] /= denom;
  return out;
}

template <class T>
T l2_norm(const Tensor<T>& v) {
  VecMap<T> mv(v.data(), static_cast<Eigen::Index>(v.size()));
  return mv.norm();
}

template <class T>
Tensor<T> l2_normalize(const Tensor<T>& v, T eps) {
  Tensor<T> out(v.shape());
  T n = std::max(l2_norm(v), eps);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: size mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  VecMap<T> va(a.data(), static_cast<Eigen::Index>(a.size()));
  VecMap<T> vb(b.data(), static_cast<Eigen::Index>(b.size()));
  return va.dot(vb);
}

template <class T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("axpy: size mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(y.shape()));
  }
  VecMap<T> vx(x.data(), static_cast<Eigen::Index>(x.size()));
  VecMapMut<T> vy(y.data(), static_cast<Eigen::Index>(y.size()));
  vy += alpha * vx;
}

template <class T>
std::uint64_t tensor_bytes_hash(const Tensor<T>& t, std::uint64_t h) {
  const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
  std::size_t n = t.size() * sizeof(T);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

#define SCLAIR_INSTANTIATE_TENSOR_OPS(T)                                         \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> matmul_tn<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> matvec<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> matvec_tn<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> transpose<T>(const Tensor<T>&);                             \
  template Tensor<T> softmax_stable<T>(const Tensor<T>&);                        \
  template Tensor<T> l2_normalize<T>(const Tensor<T>&, T);                       \
  template T l2_norm<T>(const Tensor<T>&);                                       \
  template T dot<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template void axpy<T>(T, const Tensor<T>&, Tensor<T>&);                        \
  template std::uint64_t tensor_bytes_hash<T>(const Tensor<T>&, std::uint64_t);

SCLAIR_INSTANTIATE_TENSOR_OPS(float)
SCLAIR_INSTANTIATE_TENSOR_OPS(double)

#undef SCLAIR_INSTANTIATE_TENSOR_OPS

}  // namespace sclair
