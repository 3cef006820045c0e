#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sclair/data.hpp"
#include "sclair/layers.hpp"

namespace sclair {

enum class Arch { kCnn1d, kLstm, kBilstm, kCnn1dLstm, kCnn1dBilstm };

Arch arch_from_string(const std::string& s);  // 1dcnn | lstm | bilstm | 1dcnn-lstm | 1dcnn-bilstm
const char* arch_name(Arch a);

struct ArchHyper {
  std::size_t conv_filters1 = 100;  // early conv stage
  std::size_t conv_filters2 = 160;  // late conv stage
  std::size_t kernel = 10;
  std::size_t lstm_units = 256;
  std::size_t proj_dim = 128;
  double classifier_dropout = 0.5;
  bool normalize_encoder = true;    // L2-normalize r (switchable for CE ablation)
  bool normalize_projection = true; // L2-normalize z before the loss
};

// Appends the full encoder stack for `arch`, including the final l2norm layer
// when hp.normalize_encoder is set, so backward flows through normalization.
template <class T>
void append_encoder_layers(LayerStack<T>& stack, Arch arch, const ArchHyper& hp);

std::size_t encoder_dim(Arch arch, const ArchHyper& hp);

struct Provenance {
  std::uint64_t seed = 0;
  std::string dataset_name;
  std::string stage = "init";  // init | stage1 | stage2 | ce | finetuned
};

struct ModelBundle {
  Arch arch = Arch::kCnn1d;
  ArchHyper hp;
  LayerStack<float> encoder;
  std::optional<LayerStack<float>> projection;  // dense(proj_dim)+relu[+l2norm]
  LayerStack<float> classifier;                 // dropout(p)+dense(26)
  Provenance prov;

  bool has_projection() const { return projection.has_value(); }
};

// Builds and initializes all stacks from the given RNG (weights are a pure
// function of the rng state). Throws with the conv length trace if the input
// is too short for the stack.
ModelBundle build_bundle(Arch arch, const ArchHyper& hp, const Rng& rng, bool with_projection);

ModelBundle clone_bundle(ModelBundle& b);

// r = Enc(x), unit-norm when hp.normalize_encoder (the stack's l2norm layer).
Tensor<float> encode(const ModelBundle& b, const Tensor<float>& sample);

// z = Proj(r); errors on inference bundles.
Tensor<float> project(const ModelBundle& b, const Tensor<float>& r);

// Classifier probabilities; training mode applies dropout (needs rng).
Tensor<float> classify(const ModelBundle& b, const Tensor<float>& r, Mode mode,
                       Rng* rng = nullptr);

enum class ParamForm { kInference, kStage1 };
std::size_t param_count(ModelBundle& b, ParamForm form);

// Removes the projection head; encoder weights are untouched. No-op with a
// stderr warning when the head is already gone.
void discard_projection(ModelBundle& b);

// Checkpoint file: magic "SCLR", u8 version, u32 little-endian header length,
// UTF-8 JSON header (arch, hyperparameters, provenance, tensor directory),
// then raw little-endian f32 payloads in directory order.
void save_checkpoint(ModelBundle& b, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

std::uint64_t encoder_hash(ModelBundle& b);

}  // namespace sclair
