#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "sclair/data.hpp"
#include "sclair/model.hpp"
#include "sclair/rng.hpp"
#include "sclair/tensor.hpp"

using namespace sclair;
namespace fs = std::filesystem;

namespace {

const char* kFixtureDir = SCLAIR_FIXTURE_DIR;

Tensor<float> pattern_input() {
  Tensor<float> x({kNumChannels, kFixedLen});
  for (std::size_t c = 0; c < kNumChannels; ++c)
    for (std::size_t t = 0; t < kFixedLen; ++t)
      x.at(c, t) = static_cast<float>(
          std::sin(static_cast<double>(c + 1) + 0.05 * static_cast<double>(t)));
  return x;
}

// The small deterministic rig the committed golden fixtures were generated
// from (fixture generator: tools/make_fixtures.cpp).
ModelBundle golden_rig() {
  ArchHyper hp;
  hp.lstm_units = 8;
  hp.proj_dim = 4;
  return build_bundle(Arch::kLstm, hp, Rng(987654321), true);
}

std::vector<float> read_float_csv(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<float> out;
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stof(tok));
  return out;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::path("tmp_test_model") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("arch tags: spelling round-trip and rejection of unknown tags") {
  for (const char* name : {"1dcnn", "lstm", "bilstm", "1dcnn-lstm", "1dcnn-bilstm"}) {
    CHECK(arch_name(arch_from_string(name)) == std::string(name));
  }
  CHECK_THROWS_AS(arch_from_string("cnn2d"), std::invalid_argument);
  CHECK_THROWS_AS(arch_from_string(""), std::invalid_argument);
}

TEST_CASE("encoder widths: 160 / 256 / 512 / 256 / 512 at stock hyperparameters") {
  ArchHyper hp;
  CHECK(encoder_dim(Arch::kCnn1d, hp) == 160);
  CHECK(encoder_dim(Arch::kLstm, hp) == 256);
  CHECK(encoder_dim(Arch::kBilstm, hp) == 512);
  CHECK(encoder_dim(Arch::kCnn1dLstm, hp) == 256);
  CHECK(encoder_dim(Arch::kCnn1dBilstm, hp) == 512);
}

TEST_CASE("convolutional encoder: valid-conv/pool length trace 155->146->137->68->59->50") {
  LayerStack<float> stack;
  ArchHyper hp;
  append_encoder_layers(stack, Arch::kCnn1d, hp);
  std::vector<std::size_t> shape = {kNumChannels, kFixedLen};
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < stack.num_layers(); ++i) {
    shape = stack.layer(i).output_shape(shape);
    if (shape.size() == 2) lengths.push_back(shape[1]);
  }
  // conv/relu pairs share a length; record the distinct trace
  std::vector<std::size_t> trace;
  for (std::size_t v : lengths)
    if (trace.empty() || trace.back() != v) trace.push_back(v);
  CHECK(trace == std::vector<std::size_t>{146, 137, 68, 59, 50});
  CHECK(shape == std::vector<std::size_t>{160});
}

TEST_CASE("build_bundle: too-short conv stacking is rejected with the length trace") {
  ArchHyper hp;
  hp.kernel = 80;  // 155 -> 76 -> pool 38 -> conv(80) impossible
  try {
    build_bundle(Arch::kCnn1d, hp, Rng(1), false);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("shorter") != std::string::npos);
  }
}

TEST_CASE("build_bundle: weights are a pure function of the seed") {
  ArchHyper hp;
  hp.lstm_units = 6;
  ModelBundle a = build_bundle(Arch::kLstm, hp, Rng(11), true);
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(11), true);
  ModelBundle c = build_bundle(Arch::kLstm, hp, Rng(12), true);
  CHECK(encoder_hash(a) == encoder_hash(b));
  CHECK(encoder_hash(a) != encoder_hash(c));
  CHECK(params_hash(a.classifier) == params_hash(b.classifier));
}

TEST_CASE("encode: unit-norm embeddings, finite on degenerate input") {
  ArchHyper hp;
  hp.lstm_units = 8;
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(3), false);
  Tensor<float> r = encode(b, pattern_input());
  REQUIRE(r.shape() == std::vector<std::size_t>{8});
  CHECK(std::abs(l2_norm(r) - 1.0f) < 1e-5f);

  Tensor<float> zero({kNumChannels, kFixedLen});
  Tensor<float> rz = encode(b, zero);
  CHECK(rz.all_finite());
}

TEST_CASE("project: unit norm; identity rig passes nonnegative r through; inference rejects") {
  ArchHyper hp;
  hp.lstm_units = 4;
  hp.proj_dim = 4;  // D_E == D_P so the dense can be set to the identity
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(5), true);

  Tensor<float> r = encode(b, pattern_input());
  Tensor<float> z = project(b, r);
  REQUIRE(z.shape() == std::vector<std::size_t>{4});
  CHECK(std::abs(l2_norm(z) - 1.0f) < 1e-5f);

  auto ps = b.projection->params();
  ps[0].value->fill(0.0f);
  for (std::size_t i = 0; i < 4; ++i) ps[0].value->at(i, i) = 1.0f;
  ps[1].value->fill(0.0f);
  Tensor<float> nonneg = l2_normalize(Tensor<float>::row({0.5f, 0.1f, 0.8f, 0.2f}));
  Tensor<float> through = project(b, nonneg);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(through[i] == doctest::Approx(nonneg[i]).epsilon(1e-6));

  ModelBundle inf = build_bundle(Arch::kLstm, hp, Rng(5), false);
  CHECK_THROWS_AS(project(inf, nonneg), std::logic_error);
}

TEST_CASE("classify: uniform at zero weights, deterministic inference, scale-stable argmax") {
  ArchHyper hp;
  hp.lstm_units = 8;
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(6), false);
  Tensor<float> r = encode(b, pattern_input());

  auto cls = b.classifier.params();
  cls[0].value->fill(0.0f);
  cls[1].value->fill(0.0f);
  Tensor<float> uniform = classify(b, r, Mode::kInfer);
  REQUIRE(uniform.shape() == std::vector<std::size_t>{kNumClasses});
  for (std::size_t i = 0; i < kNumClasses; ++i)
    CHECK(uniform[i] == doctest::Approx(1.0 / 26.0).epsilon(1e-6));

  ModelBundle b2 = build_bundle(Arch::kLstm, hp, Rng(6), false);
  Tensor<float> p1 = classify(b2, r, Mode::kInfer);
  Tensor<float> p2 = classify(b2, r, Mode::kInfer);
  CHECK(p1 == p2);
  float sum = 0.0f;
  for (std::size_t i = 0; i < kNumClasses; ++i) sum += p1[i];
  CHECK(std::abs(sum - 1.0f) < 1e-5f);

  std::size_t argmax = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i)
    if (p1[i] > p1[argmax]) argmax = i;
  auto w = b2.classifier.params();
  for (std::size_t i = 0; i < w[0].value->size(); ++i) (*w[0].value)[i] *= 3.0f;
  for (std::size_t i = 0; i < w[1].value->size(); ++i) (*w[1].value)[i] *= 3.0f;
  Tensor<float> scaled = classify(b2, r, Mode::kInfer);
  std::size_t argmax2 = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i)
    if (scaled[i] > scaled[argmax2]) argmax2 = i;
  CHECK(argmax == argmax2);
}

TEST_CASE("classify: training mode applies dropout, inference mode does not") {
  ArchHyper hp;
  hp.lstm_units = 32;
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(7), false);
  Tensor<float> r = encode(b, pattern_input());
  Rng d1(100), d2(101);
  Tensor<float> t1 = classify(b, r, Mode::kTrain, &d1);
  Tensor<float> t2 = classify(b, r, Mode::kTrain, &d2);
  CHECK(t1 != t2);  // different dropout masks move the probabilities
  CHECK(classify(b, r, Mode::kInfer) == classify(b, r, Mode::kInfer));
}

TEST_CASE("param_count: published totals for the stock convolutional model") {
  ArchHyper hp;
  ModelBundle b = build_bundle(Arch::kCnn1d, hp, Rng(1), true);
  CHECK(param_count(b, ParamForm::kInference) == 526706);
  CHECK(param_count(b, ParamForm::kStage1) - param_count(b, ParamForm::kInference) == 20608);

  ModelBundle no_proj = build_bundle(Arch::kCnn1d, hp, Rng(1), false);
  CHECK(param_count(no_proj, ParamForm::kInference) == 526706);
}

TEST_CASE("discard_projection: encoder untouched, counts and files shrink, idempotent") {
  fs::path dir = fresh_dir("discard");
  ArchHyper hp;
  hp.lstm_units = 8;
  hp.proj_dim = 4;
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(9), true);
  const std::uint64_t before = encoder_hash(b);
  const std::size_t stage1 = param_count(b, ParamForm::kStage1);
  save_checkpoint(b, (dir / "with.sclr").string());

  discard_projection(b);
  CHECK_FALSE(b.has_projection());
  CHECK(encoder_hash(b) == before);
  CHECK(stage1 - param_count(b, ParamForm::kInference) == 8 * 4 + 4);
  CHECK_THROWS_AS(param_count(b, ParamForm::kStage1), std::logic_error);
  save_checkpoint(b, (dir / "without.sclr").string());
  CHECK(fs::file_size(dir / "without.sclr") < fs::file_size(dir / "with.sclr"));

  discard_projection(b);  // warns, does not throw
  CHECK_FALSE(b.has_projection());
}

TEST_CASE("checkpoint: bit-exact round-trip of weights, config, and provenance") {
  fs::path dir = fresh_dir("roundtrip");
  ArchHyper hp;
  hp.lstm_units = 8;
  hp.proj_dim = 4;
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(10), true);
  b.prov.seed = 4242;
  b.prov.dataset_name = "mini";
  b.prov.stage = "stage1";
  const std::string path = (dir / "b.sclr").string();
  save_checkpoint(b, path);

  ModelBundle back = load_checkpoint(path);
  CHECK(back.arch == b.arch);
  CHECK(back.hp.lstm_units == 8);
  CHECK(back.hp.proj_dim == 4);
  CHECK(back.prov.seed == 4242);
  CHECK(back.prov.dataset_name == "mini");
  CHECK(back.prov.stage == "stage1");
  CHECK(encoder_hash(back) == encoder_hash(b));
  REQUIRE(back.has_projection());
  CHECK(params_hash(*back.projection) == params_hash(*b.projection));
  CHECK(params_hash(back.classifier) == params_hash(b.classifier));

  Tensor<float> x = pattern_input();
  CHECK(classify(back, encode(back, x), Mode::kInfer) == classify(b, encode(b, x), Mode::kInfer));
}

TEST_CASE("checkpoint: corrupted or truncated files are rejected, not crashed on") {
  fs::path dir = fresh_dir("corrupt");
  ArchHyper hp;
  hp.lstm_units = 4;
  ModelBundle b = build_bundle(Arch::kLstm, hp, Rng(11), false);
  const std::string good = (dir / "good.sclr").string();
  save_checkpoint(b, good);

  std::ifstream in(good, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();

  {
    std::string magic = bytes;
    magic[0] = 'X';  // breaks the magic
    std::ofstream out(dir / "magic.sclr", std::ios::binary);
    out << magic;
  }
  CHECK_THROWS(load_checkpoint((dir / "magic.sclr").string()));

  {
    std::string version = bytes;
    version[4] = 99;  // unsupported version byte
    std::ofstream out(dir / "version.sclr", std::ios::binary);
    out << version;
  }
  CHECK_THROWS(load_checkpoint((dir / "version.sclr").string()));

  {
    std::ofstream out(dir / "trunc.sclr", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS(load_checkpoint((dir / "trunc.sclr").string()));

  CHECK_THROWS(load_checkpoint((dir / "absent.sclr").string()));
}

TEST_CASE("golden fixtures: embeddings and checkpoint decode identically across builds") {
  const fs::path fixtures(kFixtureDir);
  REQUIRE(fs::exists(fixtures / "golden_r.csv"));

  ModelBundle rig = golden_rig();
  Tensor<float> r = encode(rig, pattern_input());
  Tensor<float> z = project(rig, r);

  std::vector<float> want_r = read_float_csv(fixtures / "golden_r.csv");
  std::vector<float> want_z = read_float_csv(fixtures / "golden_z.csv");
  REQUIRE(want_r.size() == r.size());
  REQUIRE(want_z.size() == z.size());
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - want_r[i]) < 1e-6f);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - want_z[i]) < 1e-6f);

  // The committed checkpoint must decode to the exact weights it was written
  // from (the format is little-endian by definition, so this also guards
  // against platform-order regressions).
  ModelBundle loaded = load_checkpoint((fixtures / "golden.sclr").string());
  std::ifstream hash_in(fixtures / "golden.sclr.hash");
  REQUIRE(hash_in.good());
  std::string want_hash;
  hash_in >> want_hash;
  char got_hash[32];
  std::snprintf(got_hash, sizeof(got_hash), "%016llx",
                static_cast<unsigned long long>(encoder_hash(loaded)));
  CHECK(want_hash == got_hash);

  Tensor<float> r2 = encode(loaded, pattern_input());
  for (std::size_t i = 0; i < r2.size(); ++i) CHECK(std::abs(r2[i] - want_r[i]) < 1e-6f);
}

TEST_SUITE_END();
