// Regenerates the golden fixtures under tests/fixtures/. The rig here must
// stay in lockstep with golden_rig() in tests/test_model.cpp: the fixtures
// pin the encoder/projection outputs and the checkpoint bytes for one small
// deterministic model so later builds can prove they decode and evaluate it
// identically.
//
// Usage: sclair_make_fixtures <output-dir>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "sclair/data.hpp"
#include "sclair/model.hpp"
#include "sclair/rng.hpp"
#include "sclair/tensor.hpp"

using namespace sclair;
namespace fs = std::filesystem;

namespace {

Tensor<float> pattern_input() {
  Tensor<float> x({kNumChannels, kFixedLen});
  for (std::size_t c = 0; c < kNumChannels; ++c)
    for (std::size_t t = 0; t < kFixedLen; ++t)
      x.at(c, t) = static_cast<float>(
          std::sin(static_cast<double>(c + 1) + 0.05 * static_cast<double>(t)));
  return x;
}

void write_float_csv(const Tensor<float>& v, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < v.size(); ++i) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof(buf), v[i]);
    if (i) out << ',';
    out.write(buf, res.ptr - buf);
  }
  out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <output-dir>\n", argv[0]);
    return 1;
  }
  const fs::path dir(argv[1]);
  fs::create_directories(dir);

  ArchHyper hp;
  hp.lstm_units = 8;
  hp.proj_dim = 4;
  ModelBundle rig = build_bundle(Arch::kLstm, hp, Rng(987654321), true);

  Tensor<float> r = encode(rig, pattern_input());
  Tensor<float> z = project(rig, r);
  write_float_csv(r, dir / "golden_r.csv");
  write_float_csv(z, dir / "golden_z.csv");

  save_checkpoint(rig, (dir / "golden.sclr").string());
  std::ofstream hash_out(dir / "golden.sclr.hash", std::ios::binary);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(encoder_hash(rig)));
  hash_out << buf << '\n';

  std::printf("fixtures written to %s\n", dir.string().c_str());
  return 0;
}
