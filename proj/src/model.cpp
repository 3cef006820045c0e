#include "sclair/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace sclair {

Arch arch_from_string(const std::string& s) {
  if (s == "1dcnn") return Arch::kCnn1d;
  if (s == "lstm") return Arch::kLstm;
  if (s == "bilstm") return Arch::kBilstm;
  if (s == "1dcnn-lstm") return Arch::kCnn1dLstm;
  if (s == "1dcnn-bilstm") return Arch::kCnn1dBilstm;
  throw std::invalid_argument("unknown architecture '" + s +
                              "' (expected 1dcnn | lstm | bilstm | 1dcnn-lstm | 1dcnn-bilstm)");
}

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::kCnn1d: return "1dcnn";
    case Arch::kLstm: return "lstm";
    case Arch::kBilstm: return "bilstm";
    case Arch::kCnn1dLstm: return "1dcnn-lstm";
    case Arch::kCnn1dBilstm: return "1dcnn-bilstm";
  }
  return "?";
}

template <class T>
void append_encoder_layers(LayerStack<T>& stack, Arch arch, const ArchHyper& hp) {
  const bool conv_front = arch == Arch::kCnn1d || arch == Arch::kCnn1dLstm ||
                          arch == Arch::kCnn1dBilstm;
  if (conv_front) {
    stack.add(LayerSpec::conv1d(hp.conv_filters1, hp.kernel));
    stack.add(LayerSpec::relu());
    stack.add(LayerSpec::conv1d(hp.conv_filters1, hp.kernel));
    stack.add(LayerSpec::relu());
    stack.add(LayerSpec::maxpool1d());
  }
  switch (arch) {
    case Arch::kCnn1d:
      stack.add(LayerSpec::conv1d(hp.conv_filters2, hp.kernel));
      stack.add(LayerSpec::relu());
      stack.add(LayerSpec::conv1d(hp.conv_filters2, hp.kernel));
      stack.add(LayerSpec::relu());
      stack.add(LayerSpec::gap());
      break;
    case Arch::kLstm:
    case Arch::kCnn1dLstm:
      stack.add(LayerSpec::lstm(hp.lstm_units));
      break;
    case Arch::kBilstm:
    case Arch::kCnn1dBilstm:
      stack.add(LayerSpec::bilstm(hp.lstm_units));
      break;
  }
  if (hp.normalize_encoder) stack.add(LayerSpec::l2norm());
}

template void append_encoder_layers<float>(LayerStack<float>&, Arch, const ArchHyper&);
template void append_encoder_layers<double>(LayerStack<double>&, Arch, const ArchHyper&);

std::size_t encoder_dim(Arch arch, const ArchHyper& hp) {
  switch (arch) {
    case Arch::kCnn1d: return hp.conv_filters2;
    case Arch::kLstm:
    case Arch::kCnn1dLstm: return hp.lstm_units;
    case Arch::kBilstm:
    case Arch::kCnn1dBilstm: return 2 * hp.lstm_units;
  }
  return 0;
}

namespace {

template <class T>
std::string length_trace(const LayerStack<T>& s, std::vector<std::size_t> shape) {
  std::ostringstream tr;
  tr << shape.back();
  for (std::size_t i = 0; i < s.num_layers(); ++i) {
    try {
      shape = s.layer(i).output_shape(shape);
    } catch (const std::exception&) {
      tr << " -> (too short at " << layer_kind_name(s.layer(i).kind()) << ")";
      return tr.str();
    }
    if (shape.size() == 2) {
      tr << " -> " << shape[1];
    }
  }
  return tr.str();
}

template <class T>
LayerStack<T> clone_stack(LayerStack<T>& s) {
  LayerStack<T> out;
  for (const auto& sp : s.specs()) out.add(sp);
  if (s.initialized()) {
    Rng dummy(0);
    out.init(s.input_shape(), dummy);
    restore_params(out, snapshot_params(s));
  }
  return out;
}

}  // namespace

ModelBundle build_bundle(Arch arch, const ArchHyper& hp, const Rng& rng, bool with_projection) {
  ModelBundle b;
  b.arch = arch;
  b.hp = hp;
  append_encoder_layers(b.encoder, arch, hp);
  Rng enc_rng = rng.derive(1);
  const std::vector<std::size_t> in_shape{kNumChannels, kFixedLen};
  try {
    b.encoder.init(in_shape, enc_rng);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("build_encoder: ") + e.what() +
                                "; length trace: " + length_trace(b.encoder, in_shape));
  }
  const std::vector<std::size_t> r_shape{encoder_dim(arch, hp)};
  if (with_projection) {
    LayerStack<float> proj;
    proj.add(LayerSpec::dense(hp.proj_dim));
    proj.add(LayerSpec::relu());
    if (hp.normalize_projection) proj.add(LayerSpec::l2norm());
    Rng proj_rng = rng.derive(2);
    proj.init(r_shape, proj_rng);
    b.projection = std::move(proj);
  }
  b.classifier.add(LayerSpec::dropout(hp.classifier_dropout));
  b.classifier.add(LayerSpec::dense(kNumClasses));
  Rng cls_rng = rng.derive(3);
  b.classifier.init(r_shape, cls_rng);
  return b;
}

ModelBundle clone_bundle(ModelBundle& b) {
  ModelBundle out;
  out.arch = b.arch;
  out.hp = b.hp;
  out.prov = b.prov;
  out.encoder = clone_stack(b.encoder);
  if (b.projection) out.projection = clone_stack(*b.projection);
  out.classifier = clone_stack(b.classifier);
  return out;
}

Tensor<float> encode(const ModelBundle& b, const Tensor<float>& sample) {
  return b.encoder.forward(sample, Mode::kInfer, nullptr, nullptr);
}

Tensor<float> project(const ModelBundle& b, const Tensor<float>& r) {
  if (!b.projection) {
    throw std::logic_error("project: bundle has no projection head (inference form)");
  }
  return b.projection->forward(r, Mode::kInfer, nullptr, nullptr);
}

Tensor<float> classify(const ModelBundle& b, const Tensor<float>& r, Mode mode, Rng* rng) {
  Tensor<float> logits = b.classifier.forward(r, mode, rng, nullptr);
  return softmax_stable(logits);
}

std::size_t param_count(ModelBundle& b, ParamForm form) {
  std::size_t n = b.encoder.param_count() + b.classifier.param_count();
  if (form == ParamForm::kStage1) {
    if (!b.projection) {
      throw std::logic_error("param_count: stage-1 form requested but no projection head");
    }
    n += b.projection->param_count();
  }
  return n;
}

void discard_projection(ModelBundle& b) {
  if (!b.projection) {
    std::cerr << "discard_projection: bundle has no projection head; nothing to do\n";
    return;
  }
  b.projection.reset();
}

std::uint64_t encoder_hash(ModelBundle& b) { return params_hash(b.encoder); }

// ---------------------------------------------------------------------------
// checkpoint serialization (explicitly little-endian, independent of host)
// ---------------------------------------------------------------------------
namespace {

constexpr char kMagic[4] = {'S', 'C', 'L', 'R'};
constexpr std::uint8_t kVersionByte = 1;

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32le(std::string& out, float v) { put_u32le(out, std::bit_cast<std::uint32_t>(v)); }

float get_f32le(const unsigned char* p) { return std::bit_cast<float>(get_u32le(p)); }

std::vector<std::pair<std::string, Tensor<float>*>> tensor_directory(ModelBundle& b) {
  std::vector<std::pair<std::string, Tensor<float>*>> dir;
  for (auto& p : b.encoder.params()) dir.emplace_back("enc." + p.name, p.value);
  if (b.projection) {
    for (auto& p : b.projection->params()) dir.emplace_back("proj." + p.name, p.value);
  }
  for (auto& p : b.classifier.params()) dir.emplace_back("cls." + p.name, p.value);
  return dir;
}

json hyper_to_json(const ArchHyper& hp) {
  return json{{"conv_filters1", hp.conv_filters1},
              {"conv_filters2", hp.conv_filters2},
              {"kernel", hp.kernel},
              {"lstm_units", hp.lstm_units},
              {"proj_dim", hp.proj_dim},
              {"classifier_dropout", hp.classifier_dropout},
              {"normalize_encoder", hp.normalize_encoder},
              {"normalize_projection", hp.normalize_projection}};
}

ArchHyper hyper_from_json(const json& j) {
  ArchHyper hp;
  hp.conv_filters1 = j.at("conv_filters1").get<std::size_t>();
  hp.conv_filters2 = j.at("conv_filters2").get<std::size_t>();
  hp.kernel = j.at("kernel").get<std::size_t>();
  hp.lstm_units = j.at("lstm_units").get<std::size_t>();
  hp.proj_dim = j.at("proj_dim").get<std::size_t>();
  hp.classifier_dropout = j.at("classifier_dropout").get<double>();
  hp.normalize_encoder = j.at("normalize_encoder").get<bool>();
  hp.normalize_projection = j.at("normalize_projection").get<bool>();
  return hp;
}

}  // namespace

void save_checkpoint(ModelBundle& b, const std::string& path) {
  auto dir = tensor_directory(b);
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : dir) {
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size() * 4;
  }
  json header{{"arch", arch_name(b.arch)},
              {"hyper", hyper_to_json(b.hp)},
              {"has_projection", b.has_projection()},
              {"provenance",
               {{"seed", b.prov.seed},
                {"dataset_name", b.prov.dataset_name},
                {"stage", b.prov.stage}}},
              {"input_shape", {kNumChannels, kFixedLen}},
              {"tensors", tensors}};
  const std::string hs = header.dump();
  std::string out;
  out.reserve(9 + hs.size() + offset);
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersionByte));
  put_u32le(out, static_cast<std::uint32_t>(hs.size()));
  out += hs;
  for (const auto& [name, t] : dir) {
    for (std::size_t i = 0; i < t->size(); ++i) put_f32le(out, (*t)[i]);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 9) throw std::runtime_error("checkpoint: truncated file " + path);
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
  if (bytes[4] != kVersionByte) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(bytes[4]) +
                             " in " + path);
  }
  const std::uint32_t hlen = get_u32le(bytes + 5);
  if (9 + static_cast<std::size_t>(hlen) > buf.size()) {
    throw std::runtime_error("checkpoint: truncated header in " + path);
  }
  json header;
  try {
    header = json::parse(buf.substr(9, hlen));
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " + e.what());
  }
  ModelBundle b;
  try {
    const Arch arch = arch_from_string(header.at("arch").get<std::string>());
    const ArchHyper hp = hyper_from_json(header.at("hyper"));
    const bool has_proj = header.at("has_projection").get<bool>();
    Rng dummy(0);
    b = build_bundle(arch, hp, dummy, has_proj);
    const auto& prov = header.at("provenance");
    b.prov.seed = prov.at("seed").get<std::uint64_t>();
    b.prov.dataset_name = prov.at("dataset_name").get<std::string>();
    b.prov.stage = prov.at("stage").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " + e.what());
  }

  auto dir = tensor_directory(b);
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& [name, t] : dir) by_name[name] = t;

  const std::size_t payload_start = 9 + hlen;
  std::size_t filled = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: unknown tensor '" + name + "' in " + path);
    }
    Tensor<float>* t = it->second;
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t->shape()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                               shape_str(shape) + " but the model expects " +
                               shape_str(t->shape()));
    }
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (payload_start + offset + 4 * t->size() > buf.size()) {
      throw std::runtime_error("checkpoint: truncated payload for tensor '" + name + "' in " +
                               path);
    }
    const unsigned char* p = bytes + payload_start + offset;
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = get_f32le(p + 4 * i);
    ++filled;
  }
  if (filled != dir.size()) {
    throw std::runtime_error("checkpoint: " + path + " fills " + std::to_string(filled) + " of " +
                             std::to_string(dir.size()) + " model tensors");
  }
  return b;
}

}  // namespace sclair
