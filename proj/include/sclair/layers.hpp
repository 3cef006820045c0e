#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sclair/rng.hpp"
#include "sclair/tensor.hpp"

namespace sclair {

enum class Mode { kTrain, kInfer };

enum class LayerKind {
  kConv1d,
  kMaxPool1d,
  kGap,
  kDense,
  kRelu,
  kDropout,
  kLstm,
  kBilstm,
  kL2Norm,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t units = 0;   // conv filters / dense width / lstm units per direction
  std::size_t kernel = 0;  // conv kernel length
  double rate = 0.0;       // dropout rate
  double eps = 1e-12;      // l2norm zero-vector guard

  static LayerSpec conv1d(std::size_t filters, std::size_t kernel);
  static LayerSpec maxpool1d();
  static LayerSpec gap();
  static LayerSpec dense(std::size_t units);
  static LayerSpec relu();
  static LayerSpec dropout(double rate);
  static LayerSpec lstm(std::size_t units);
  static LayerSpec bilstm(std::size_t units);
  static LayerSpec l2norm(double eps = 1e-12);
};

// Activations a forward pass caches for the matching backward pass. Owned by
// the caller (one per in-flight sample), so a single layer instance can serve
// a whole batch and its gradient accumulation stays in fixed sample order.
template <class T>
struct LayerCache {
  std::vector<Tensor<T>> t;
  std::vector<std::size_t> idx;
  std::vector<LayerCache<T>> children;
  bool filled = false;
};

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const = 0;

  // Allocates and initializes parameters for the given input shape.
  virtual void init(const std::vector<std::size_t>& in, Rng& rng) = 0;

  // Pure given (x, mode, rng state); fills `cache` for backward.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng,
                            LayerCache<T>& cache) const = 0;

  // Returns grad wrt input and accumulates parameter grads in place.
  virtual Tensor<T> backward(const Tensor<T>& gout, const LayerCache<T>& cache) = 0;

  virtual std::vector<ParamRef<T>> params() = 0;

  std::size_t param_count() {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.value->size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params()) p.grad->fill(T(0));
  }
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec);

// A plain sequential stack: the only topology the encoder/head builders need.
template <class T>
class LayerStack {
 public:
  void add(const LayerSpec& spec);

  // Initializes every layer with a child RNG derived from its index, so a
  // layer's weights do not depend on the widths of the layers before it.
  void init(const std::vector<std::size_t>& input_shape, Rng& rng);

  bool initialized() const { return initialized_; }
  const std::vector<std::size_t>& input_shape() const { return in_shape_; }
  const std::vector<std::size_t>& output_shape() const { return out_shape_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng,
                    std::vector<LayerCache<T>>* caches) const;
  Tensor<T> backward(const Tensor<T>& gout, const std::vector<LayerCache<T>>& caches);

  std::vector<ParamRef<T>> params();  // names prefixed "l<i>."
  void zero_grads();
  std::size_t param_count();

  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  const std::vector<LayerSpec>& specs() const { return specs_; }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::size_t> in_shape_, out_shape_;
  bool initialized_ = false;
};

template <class T>
std::vector<Tensor<T>> snapshot_params(LayerStack<T>& s);

template <class T>
void restore_params(LayerStack<T>& s, const std::vector<Tensor<T>>& snap);

// FNV-1a over all parameter payload bytes; detects any weight change.
template <class T>
std::uint64_t params_hash(LayerStack<T>& s);

}  // namespace sclair
