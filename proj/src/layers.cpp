#include "sclair/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace sclair {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kMaxPool1d: return "maxpool1d";
    case LayerKind::kGap: return "gap";
    case LayerKind::kDense: return "dense";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kLstm: return "lstm";
    case LayerKind::kBilstm: return "bilstm";
    case LayerKind::kL2Norm: return "l2norm";
  }
  return "?";
}

LayerSpec LayerSpec::conv1d(std::size_t filters, std::size_t kernel) {
  return {LayerKind::kConv1d, filters, kernel, 0.0, 0.0};
}
LayerSpec LayerSpec::maxpool1d() { return {LayerKind::kMaxPool1d, 0, 0, 0.0, 0.0}; }
LayerSpec LayerSpec::gap() { return {LayerKind::kGap, 0, 0, 0.0, 0.0}; }
LayerSpec LayerSpec::dense(std::size_t units) { return {LayerKind::kDense, units, 0, 0.0, 0.0}; }
LayerSpec LayerSpec::relu() { return {LayerKind::kRelu, 0, 0, 0.0, 0.0}; }
LayerSpec LayerSpec::dropout(double rate) { return {LayerKind::kDropout, 0, 0, rate, 0.0}; }
LayerSpec LayerSpec::lstm(std::size_t units) { return {LayerKind::kLstm, units, 0, 0.0, 0.0}; }
LayerSpec LayerSpec::bilstm(std::size_t units) { return {LayerKind::kBilstm, units, 0, 0.0, 0.0}; }
LayerSpec LayerSpec::l2norm(double eps) { return {LayerKind::kL2Norm, 0, 0, 0.0, eps}; }

namespace {

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Glorot-uniform on a [fan_out x fan_in]-style matrix; biases stay zero.
template <class T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-lim, lim));
}

void require_ct(const std::vector<std::size_t>& in, const char* who) {
  if (in.size() != 2 || in[0] == 0 || in[1] == 0) {
    throw std::invalid_argument(std::string(who) + ": expected a [channels x time] input, got " +
                                shape_str(in));
  }
}

void require_vec(const std::vector<std::size_t>& in, const char* who) {
  if (in.size() != 1 || in[0] == 0) {
    throw std::invalid_argument(std::string(who) + ": expected a vector input, got " +
                                shape_str(in));
  }
}

template <class T>
void require_filled(const LayerCache<T>& cache, const char* who) {
  if (!cache.filled) {
    throw std::logic_error(std::string(who) + ": backward called before forward");
  }
}

template <class T>
void reset(LayerCache<T>& cache) {
  cache.t.clear();
  cache.idx.clear();
  cache.children.clear();
  cache.filled = false;
}

template <class T>
Tensor<T> reverse_time(const Tensor<T>& x) {
  const std::size_t c = x.extent(0), n = x.extent(1);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t t = 0; t < n; ++t) out.at(i, t) = x.at(i, n - 1 - t);
  return out;
}

// ---------------------------------------------------------------------------
// conv1d: valid cross-correlation, stride 1, via im2col + GEMM.
// ---------------------------------------------------------------------------
template <class T>
class Conv1d final : public Layer<T> {
 public:
  Conv1d(std::size_t filters, std::size_t kernel) : units_(filters), kernel_(kernel) {}

  LayerKind kind() const override { return LayerKind::kConv1d; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    require_ct(in, "conv1d");
    if (in[1] < kernel_) {
      throw std::invalid_argument("conv1d: input length " + std::to_string(in[1]) +
                                  " is shorter than kernel length " + std::to_string(kernel_));
    }
    return {units_, in[1] - kernel_ + 1};
  }

  void init(const std::vector<std::size_t>& in, Rng& rng) override {
    require_ct(in, "conv1d");
    cin_ = in[0];
    w_ = Tensor<T>({units_, cin_ * kernel_});
    b_ = Tensor<T>({units_});
    glorot_fill(w_, cin_ * kernel_, units_, rng);
    gw_ = Tensor<T>(w_.shape());
    gb_ = Tensor<T>(b_.shape());
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    output_shape(x.shape());  // revalidate length at call time
    const std::size_t tin = x.extent(1), tout = tin - kernel_ + 1;
    Tensor<T> cols({cin_ * kernel_, tout});
    for (std::size_t c = 0; c < cin_; ++c) {
      for (std::size_t k = 0; k < kernel_; ++k) {
        std::memcpy(cols.data() + (c * kernel_ + k) * tout, x.data() + c * tin + k,
                    tout * sizeof(T));
      }
    }
    Tensor<T> y = matmul(w_, cols);
    for (std::size_t f = 0; f < units_; ++f) {
      T* row = y.data() + f * tout;
      for (std::size_t t = 0; t < tout; ++t) row[t] += b_[f];
    }
    reset(cache);
    cache.t.push_back(std::move(cols));
    cache.idx = {tin};
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "conv1d");
    const Tensor<T>& cols = cache.t[0];
    const std::size_t tin = cache.idx[0], tout = gout.extent(1);
    axpy(T(1), matmul_nt(gout, cols), gw_);
    for (std::size_t f = 0; f < units_; ++f) {
      const T* row = gout.data() + f * tout;
      T s = T(0);
      for (std::size_t t = 0; t < tout; ++t) s += row[t];
      gb_[f] += s;
    }
    Tensor<T> gcols = matmul_tn(w_, gout);  // [(cin*kernel) x tout]
    Tensor<T> gx({cin_, tin});
    for (std::size_t c = 0; c < cin_; ++c) {
      for (std::size_t k = 0; k < kernel_; ++k) {
        const T* src = gcols.data() + (c * kernel_ + k) * tout;
        T* dst = gx.data() + c * tin + k;
        for (std::size_t t = 0; t < tout; ++t) dst[t] += src[t];
      }
    }
    return gx;
  }

  std::vector<ParamRef<T>> params() override {
    return {{"W", &w_, &gw_}, {"b", &b_, &gb_}};
  }

 private:
  std::size_t units_, kernel_, cin_ = 0;
  Tensor<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// maxpool1d: window 2, stride 2, trailing odd column dropped; backward routes
// to the first maximal index of each window.
// ---------------------------------------------------------------------------
template <class T>
class MaxPool1d final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kMaxPool1d; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    require_ct(in, "maxpool1d");
    if (in[1] < 2) {
      throw std::invalid_argument("maxpool1d: input length " + std::to_string(in[1]) +
                                  " is shorter than the pooling window (2)");
    }
    return {in[0], in[1] / 2};
  }

  void init(const std::vector<std::size_t>& in, Rng&) override { require_ct(in, "maxpool1d"); }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    output_shape(x.shape());
    const std::size_t c = x.extent(0), tin = x.extent(1), tout = tin / 2;
    Tensor<T> y({c, tout});
    reset(cache);
    cache.idx.assign(2 + c * tout, 0);
    cache.idx[0] = c;
    cache.idx[1] = tin;
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t t = 0; t < tout; ++t) {
        const std::size_t p = i * tin + 2 * t;
        const bool second = x[p + 1] > x[p];  // strict: ties keep the first index
        y.at(i, t) = second ? x[p + 1] : x[p];
        cache.idx[2 + i * tout + t] = second ? p + 1 : p;
      }
    }
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "maxpool1d");
    const std::size_t c = cache.idx[0], tin = cache.idx[1], tout = gout.extent(1);
    Tensor<T> gx({c, tin});
    for (std::size_t j = 0; j < c * tout; ++j) gx[cache.idx[2 + j]] += gout[j];
    return gx;
  }

  std::vector<ParamRef<T>> params() override { return {}; }
};

// ---------------------------------------------------------------------------
// gap: per-channel mean over time.
// ---------------------------------------------------------------------------
template <class T>
class Gap final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kGap; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    require_ct(in, "gap");
    return {in[0]};
  }

  void init(const std::vector<std::size_t>& in, Rng&) override { require_ct(in, "gap"); }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    const std::size_t c = x.extent(0), n = x.extent(1);
    Tensor<T> y({c});
    for (std::size_t i = 0; i < c; ++i) {
      T s = T(0);
      for (std::size_t t = 0; t < n; ++t) s += x.at(i, t);
      y[i] = s / static_cast<T>(n);
    }
    reset(cache);
    cache.idx = {c, n};
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "gap");
    const std::size_t c = cache.idx[0], n = cache.idx[1];
    Tensor<T> gx({c, n});
    for (std::size_t i = 0; i < c; ++i) {
      const T g = gout[i] / static_cast<T>(n);
      for (std::size_t t = 0; t < n; ++t) gx.at(i, t) = g;
    }
    return gx;
  }

  std::vector<ParamRef<T>> params() override { return {}; }
};

// ---------------------------------------------------------------------------
// dense: y = W x + b on vectors.
// ---------------------------------------------------------------------------
template <class T>
class Dense final : public Layer<T> {
 public:
  explicit Dense(std::size_t units) : units_(units) {}

  LayerKind kind() const override { return LayerKind::kDense; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    require_vec(in, "dense");
    return {units_};
  }

  void init(const std::vector<std::size_t>& in, Rng& rng) override {
    require_vec(in, "dense");
    in_ = in[0];
    w_ = Tensor<T>({units_, in_});
    b_ = Tensor<T>({units_});
    glorot_fill(w_, in_, units_, rng);
    gw_ = Tensor<T>(w_.shape());
    gb_ = Tensor<T>(b_.shape());
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    Tensor<T> y = matvec(w_, x);
    for (std::size_t i = 0; i < units_; ++i) y[i] += b_[i];
    reset(cache);
    cache.t.push_back(x);
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "dense");
    const Tensor<T>& x = cache.t[0];
    for (std::size_t i = 0; i < units_; ++i) {
      const T g = gout[i];
      T* row = gw_.data() + i * in_;
      for (std::size_t j = 0; j < in_; ++j) row[j] += g * x[j];
      gb_[i] += g;
    }
    return matvec_tn(w_, gout);
  }

  std::vector<ParamRef<T>> params() override {
    return {{"W", &w_, &gw_}, {"b", &b_, &gb_}};
  }

 private:
  std::size_t units_, in_ = 0;
  Tensor<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// relu: subgradient 0 at exactly 0.
// ---------------------------------------------------------------------------
template <class T>
class Relu final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kRelu; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    return in;
  }

  void init(const std::vector<std::size_t>&, Rng&) override {}

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    reset(cache);
    cache.t.push_back(x);
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "relu");
    const Tensor<T>& x = cache.t[0];
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gout[i] : T(0);
    return gx;
  }

  std::vector<ParamRef<T>> params() override { return {}; }
};

// ---------------------------------------------------------------------------
// dropout: inverted scaling at train time, bit-exact identity at inference.
// ---------------------------------------------------------------------------
template <class T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  LayerKind kind() const override { return LayerKind::kDropout; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    return in;
  }

  void init(const std::vector<std::size_t>&, Rng&) override {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng, LayerCache<T>& cache) const override {
    reset(cache);
    if (mode == Mode::kInfer || rate_ == 0.0) {
      cache.idx = {0};  // identity marker
      cache.filled = true;
      return x;
    }
    if (rng == nullptr) {
      throw std::invalid_argument("dropout: training-mode forward requires an rng");
    }
    const double keep = 1.0 - rate_;
    const T scale = static_cast<T>(1.0 / keep);
    Tensor<T> mask(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = rng->bernoulli(keep) ? scale : T(0);
      y[i] = x[i] * mask[i];
    }
    cache.idx = {1};
    cache.t.push_back(std::move(mask));
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "dropout");
    if (cache.idx[0] == 0) return gout;
    const Tensor<T>& mask = cache.t[0];
    Tensor<T> gx(gout.shape());
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] = gout[i] * mask[i];
    return gx;
  }

  std::vector<ParamRef<T>> params() override { return {}; }

 private:
  double rate_;
};

// ---------------------------------------------------------------------------
// lstm: standard recurrence, h_0 = c_0 = 0, returns h_T; backward is full
// BPTT. Gate layout in the stacked weights/biases is [i; f; g; o].
// ---------------------------------------------------------------------------
template <class T>
class Lstm final : public Layer<T> {
 public:
  explicit Lstm(std::size_t units) : h_(units) {}

  LayerKind kind() const override { return LayerKind::kLstm; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    require_ct(in, "lstm");
    return {h_};
  }

  void init(const std::vector<std::size_t>& in, Rng& rng) override {
    require_ct(in, "lstm");
    cin_ = in[0];
    wx_ = Tensor<T>({4 * h_, cin_});
    wh_ = Tensor<T>({4 * h_, h_});
    b_ = Tensor<T>({4 * h_});
    glorot_fill(wx_, cin_, 4 * h_, rng);
    glorot_fill(wh_, h_, 4 * h_, rng);
    for (std::size_t j = 0; j < h_; ++j) b_[h_ + j] = T(1);  // forget-gate bias
    gwx_ = Tensor<T>(wx_.shape());
    gwh_ = Tensor<T>(wh_.shape());
    gb_ = Tensor<T>(b_.shape());
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    output_shape(x.shape());
    const std::size_t steps = x.extent(1), h = h_;
    Tensor<T> xt = transpose(x);           // [T x C]: row t is the step-t input
    Tensor<T> ax = matmul_nt(xt, wx_);     // [T x 4H]: row t is Wx * x_t
    Tensor<T> gates({steps, 4 * h});       // post-activation i,f,g,o per row
    Tensor<T> cst({steps + 1, h});         // cell states, row 0 = c_0 = 0
    Tensor<T> hst({steps + 1, h});         // hidden states, row 0 = h_0 = 0
    Tensor<T> hprev({h});
    for (std::size_t t = 0; t < steps; ++t) {
      std::memcpy(hprev.data(), hst.data() + t * h, h * sizeof(T));
      Tensor<T> wh = matvec(wh_, hprev);
      const T* a = ax.data() + t * 4 * h;
      T* g = gates.data() + t * 4 * h;
      const T* cprev = cst.data() + t * h;
      T* c = cst.data() + (t + 1) * h;
      T* hv = hst.data() + (t + 1) * h;
      for (std::size_t j = 0; j < h; ++j) {
        const T gi = sigmoid(a[j] + wh[j] + b_[j]);
        const T gf = sigmoid(a[h + j] + wh[h + j] + b_[h + j]);
        const T gg = std::tanh(a[2 * h + j] + wh[2 * h + j] + b_[2 * h + j]);
        const T go = sigmoid(a[3 * h + j] + wh[3 * h + j] + b_[3 * h + j]);
        g[j] = gi;
        g[h + j] = gf;
        g[2 * h + j] = gg;
        g[3 * h + j] = go;
        c[j] = gf * cprev[j] + gi * gg;
        hv[j] = go * std::tanh(c[j]);
      }
    }
    Tensor<T> out({h});
    std::memcpy(out.data(), hst.data() + steps * h, h * sizeof(T));
    reset(cache);
    cache.t = {std::move(xt), std::move(gates), std::move(cst), std::move(hst)};
    cache.filled = true;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "lstm");
    const Tensor<T>& xt = cache.t[0];
    const Tensor<T>& gates = cache.t[1];
    const Tensor<T>& cst = cache.t[2];
    const Tensor<T>& hst = cache.t[3];
    const std::size_t steps = xt.extent(0), h = h_;
    Tensor<T> da({steps, 4 * h});  // grads wrt pre-activation gate inputs
    Tensor<T> dh = gout;
    Tensor<T> dc({h});
    Tensor<T> dav({4 * h});
    for (std::size_t t = steps; t-- > 0;) {
      const T* g = gates.data() + t * 4 * h;
      const T* c = cst.data() + (t + 1) * h;
      const T* cprev = cst.data() + t * h;
      T* d = da.data() + t * 4 * h;
      for (std::size_t j = 0; j < h; ++j) {
        const T gi = g[j], gf = g[h + j], gg = g[2 * h + j], go = g[3 * h + j];
        const T tc = std::tanh(c[j]);
        const T dcj = dc[j] + dh[j] * go * (T(1) - tc * tc);
        d[j] = dcj * gg * gi * (T(1) - gi);
        d[h + j] = dcj * cprev[j] * gf * (T(1) - gf);
        d[2 * h + j] = dcj * gi * (T(1) - gg * gg);
        d[3 * h + j] = dh[j] * tc * go * (T(1) - go);
        dc[j] = dcj * gf;
      }
      std::memcpy(dav.data(), d, 4 * h * sizeof(T));
      dh = matvec_tn(wh_, dav);
    }
    axpy(T(1), matmul_tn(da, xt), gwx_);
    Tensor<T> hprev({steps, h});
    std::memcpy(hprev.data(), hst.data(), steps * h * sizeof(T));
    axpy(T(1), matmul_tn(da, hprev), gwh_);
    for (std::size_t t = 0; t < steps; ++t) {
      const T* d = da.data() + t * 4 * h;
      for (std::size_t j = 0; j < 4 * h; ++j) gb_[j] += d[j];
    }
    return transpose(matmul(da, wx_));  // [T x C] -> [C x T]
  }

  std::vector<ParamRef<T>> params() override {
    return {{"Wx", &wx_, &gwx_}, {"Wh", &wh_, &gwh_}, {"b", &b_, &gb_}};
  }

 private:
  std::size_t h_, cin_ = 0;
  Tensor<T> wx_, wh_, b_, gwx_, gwh_, gb_;
};

// ---------------------------------------------------------------------------
// bilstm: independent forward and time-reversed LSTMs, outputs concatenated.
// ---------------------------------------------------------------------------
template <class T>
class Bilstm final : public Layer<T> {
 public:
  explicit Bilstm(std::size_t units) : h_(units), fwd_(units), bwd_(units) {}

  LayerKind kind() const override { return LayerKind::kBilstm; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    require_ct(in, "bilstm");
    return {2 * h_};
  }

  void init(const std::vector<std::size_t>& in, Rng& rng) override {
    Rng rf = rng.derive(1);
    Rng rb = rng.derive(2);
    fwd_.init(in, rf);
    bwd_.init(in, rb);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng, LayerCache<T>& cache) const override {
    reset(cache);
    cache.children.resize(2);
    Tensor<T> yf = fwd_.forward(x, mode, rng, cache.children[0]);
    Tensor<T> yb = bwd_.forward(reverse_time(x), mode, rng, cache.children[1]);
    Tensor<T> y({2 * h_});
    std::memcpy(y.data(), yf.data(), h_ * sizeof(T));
    std::memcpy(y.data() + h_, yb.data(), h_ * sizeof(T));
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "bilstm");
    Tensor<T> gf({h_}), gb({h_});
    std::memcpy(gf.data(), gout.data(), h_ * sizeof(T));
    std::memcpy(gb.data(), gout.data() + h_, h_ * sizeof(T));
    Tensor<T> gx = fwd_.backward(gf, cache.children[0]);
    Tensor<T> gxr = reverse_time(bwd_.backward(gb, cache.children[1]));
    axpy(T(1), gxr, gx);
    return gx;
  }

  std::vector<ParamRef<T>> params() override {
    std::vector<ParamRef<T>> out;
    for (auto& p : fwd_.params()) out.push_back({"fwd." + p.name, p.value, p.grad});
    for (auto& p : bwd_.params()) out.push_back({"bwd." + p.name, p.value, p.grad});
    return out;
  }

 private:
  std::size_t h_;
  Lstm<T> fwd_, bwd_;
};

// ---------------------------------------------------------------------------
// l2norm: y = x / max(||x||, eps).
// ---------------------------------------------------------------------------
template <class T>
class L2Norm final : public Layer<T> {
 public:
  explicit L2Norm(double eps) : eps_(eps) {}

  LayerKind kind() const override { return LayerKind::kL2Norm; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
    return in;
  }

  void init(const std::vector<std::size_t>&, Rng&) override {}

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng*, LayerCache<T>& cache) const override {
    const T n = l2_norm(x);
    const T eps = static_cast<T>(eps_);
    Tensor<T> y(x.shape());
    const T denom = std::max(n, eps);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / denom;
    reset(cache);
    cache.t.push_back(y);
    cache.t.push_back(Tensor<T>::row({n}));
    cache.filled = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) override {
    require_filled(cache, "l2norm");
    const Tensor<T>& y = cache.t[0];
    const T n = cache.t[1][0];
    const T eps = static_cast<T>(eps_);
    Tensor<T> gx(gout.shape());
    if (n > eps) {
      const T gy = dot(gout, y);
      for (std::size_t i = 0; i < gout.size(); ++i) gx[i] = (gout[i] - gy * y[i]) / n;
    } else {
      for (std::size_t i = 0; i < gout.size(); ++i) gx[i] = gout[i] / eps;
    }
    return gx;
  }

  std::vector<ParamRef<T>> params() override { return {}; }

 private:
  double eps_;
};

}  // namespace

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kConv1d:
      if (spec.units == 0 || spec.kernel == 0) {
        throw std::invalid_argument("conv1d: filters and kernel length must be positive");
      }
      return std::make_unique<Conv1d<T>>(spec.units, spec.kernel);
    case LayerKind::kMaxPool1d:
      return std::make_unique<MaxPool1d<T>>();
    case LayerKind::kGap:
      return std::make_unique<Gap<T>>();
    case LayerKind::kDense:
      if (spec.units == 0) throw std::invalid_argument("dense: units must be positive");
      return std::make_unique<Dense<T>>(spec.units);
    case LayerKind::kRelu:
      return std::make_unique<Relu<T>>();
    case LayerKind::kDropout:
      if (spec.rate < 0.0 || spec.rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0,1), got " +
                                    std::to_string(spec.rate));
      }
      return std::make_unique<Dropout<T>>(spec.rate);
    case LayerKind::kLstm:
      if (spec.units == 0) throw std::invalid_argument("lstm: units must be positive");
      return std::make_unique<Lstm<T>>(spec.units);
    case LayerKind::kBilstm:
      if (spec.units == 0) throw std::invalid_argument("bilstm: units must be positive");
      return std::make_unique<Bilstm<T>>(spec.units);
    case LayerKind::kL2Norm:
      if (spec.eps <= 0.0) throw std::invalid_argument("l2norm: eps must be positive");
      return std::make_unique<L2Norm<T>>(spec.eps);
  }
  throw std::invalid_argument("make_layer: unknown layer kind");
}

template <class T>
void LayerStack<T>::add(const LayerSpec& spec) {
  specs_.push_back(spec);
  layers_.push_back(make_layer<T>(spec));
  initialized_ = false;
}

template <class T>
void LayerStack<T>::init(const std::vector<std::size_t>& input_shape, Rng& rng) {
  in_shape_ = input_shape;
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Rng child = rng.derive(i);
    layers_[i]->init(shape, child);
    shape = layers_[i]->output_shape(shape);
  }
  out_shape_ = shape;
  initialized_ = true;
}

template <class T>
Tensor<T> LayerStack<T>::forward(const Tensor<T>& x, Mode mode, Rng* rng,
                                 std::vector<LayerCache<T>>* caches) const {
  if (!initialized_) throw std::logic_error("LayerStack::forward before init");
  if (caches) caches->resize(layers_.size());
  LayerCache<T> scratch;
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur, mode, rng, caches ? (*caches)[i] : scratch);
  }
  return cur;
}

template <class T>
Tensor<T> LayerStack<T>::backward(const Tensor<T>& gout,
                                  const std::vector<LayerCache<T>>& caches) {
  if (caches.size() != layers_.size()) {
    throw std::logic_error("LayerStack::backward: cache count does not match layer count");
  }
  Tensor<T> g = gout;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, caches[i]);
  return g;
}

template <class T>
std::vector<ParamRef<T>> LayerStack<T>::params() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& p : layers_[i]->params()) {
      out.push_back({"l" + std::to_string(i) + "." + p.name, p.value, p.grad});
    }
  }
  return out;
}

template <class T>
void LayerStack<T>::zero_grads() {
  for (auto& l : layers_) l->zero_grads();
}

template <class T>
std::size_t LayerStack<T>::param_count() {
  std::size_t n = 0;
  for (auto& l : layers_) n += l->param_count();
  return n;
}

template <class T>
std::vector<Tensor<T>> snapshot_params(LayerStack<T>& s) {
  std::vector<Tensor<T>> out;
  for (auto& p : s.params()) out.push_back(*p.value);
  return out;
}

template <class T>
void restore_params(LayerStack<T>& s, const std::vector<Tensor<T>>& snap) {
  auto refs = s.params();
  if (refs.size() != snap.size()) {
    throw std::logic_error("restore_params: snapshot does not match parameter list");
  }
  for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = snap[i];
}

template <class T>
std::uint64_t params_hash(LayerStack<T>& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& p : s.params()) h = tensor_bytes_hash(*p.value, h);
  return h;
}

#define SCLAIR_INSTANTIATE_LAYERS(T)                                             \
  template std::unique_ptr<Layer<T>> make_layer<T>(const LayerSpec&);            \
  template class LayerStack<T>;                                                  \
  template std::vector<Tensor<T>> snapshot_params<T>(LayerStack<T>&);            \
  template void restore_params<T>(LayerStack<T>&, const std::vector<Tensor<T>>&); \
  template std::uint64_t params_hash<T>(LayerStack<T>&);

SCLAIR_INSTANTIATE_LAYERS(float)
SCLAIR_INSTANTIATE_LAYERS(double)

#undef SCLAIR_INSTANTIATE_LAYERS

}  // namespace sclair
