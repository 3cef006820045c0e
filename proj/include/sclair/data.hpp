#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sclair/rng.hpp"
#include "sclair/tensor.hpp"

namespace sclair {

inline constexpr std::size_t kNumChannels = 6;
inline constexpr std::size_t kFixedLen = 155;
inline constexpr std::size_t kNumClasses = 26;
inline constexpr double kDefaultRateHz = 62.0;

int label_index(char label);   // 'A' -> 0 ... 'Z' -> 25
char index_label(int index);

// Raw 6-channel time series; channel order ax,ay,az,gx,gy,gz.
struct ImuRecording {
  Tensor<double> samples;  // [6 x T]
  double sampling_rate_hz = kDefaultRateHz;
  char label = 'A';
  std::string subject_id;
  int repetition = 0;
};

struct PreprocessedSample {
  Tensor<double> matrix;  // [6 x 155]
  char label = 'A';
  std::string subject_id;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest file
  std::string subject;
  char label = 'A';
  int repetition = 0;
};

struct DatasetManifest {
  std::string dataset_name;
  double sampling_rate_hz = kDefaultRateHz;
  std::vector<ManifestEntry> samples;
  std::string base_dir;  // directory containing the manifest; resolves paths
};

// Parses + validates the manifest JSON; labels are upper-cased, duplicate
// (subject, label, repetition) triples and missing sample files are errors.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

// Sample CSV: header exactly "ax,ay,az,gx,gy,gz", one row per timestep.
Tensor<double> load_sample_csv(const std::string& path);
void save_sample_csv(const Tensor<double>& samples, const std::string& path);

std::vector<ImuRecording> load_recordings(const DatasetManifest& m);

// Per-channel linear interpolation onto the grid t_k = k/target_hz,
// k = 0..floor((T-1)*target/source); bit-identical passthrough at equal rates.
ImuRecording resample(const ImuRecording& rec, double target_hz = kDefaultRateHz);

// Pad zeros at the tail / truncate to the first `target_len` columns.
Tensor<double> fix_length(const Tensor<double>& samples, std::size_t target_len = kFixedLen);

// Per-channel (x - mean)/max(std, 1e-8) with population (divide-by-N) std;
// constant channels come out all zero.
Tensor<double> zscore(const Tensor<double>& matrix);

struct PreprocessOptions {
  double target_hz = kDefaultRateHz;
  std::size_t target_len = kFixedLen;
  bool zscore_before_pad = false;  // ablation switch; default is pad-then-normalize
};

PreprocessedSample preprocess(const ImuRecording& rec, const PreprocessOptions& opt = {});

std::vector<PreprocessedSample> load_preprocessed(const DatasetManifest& m,
                                                  const PreprocessOptions& opt = {});

struct LosoFold {
  std::string test_subject;
  std::vector<std::string> train_subjects;
};

// One fold per distinct subject, in sorted subject order.
std::vector<LosoFold> loso_splits(const DatasetManifest& m);

// Stratified by label: per class, seeded shuffle, first ceil(ratio * n_c)
// indices go to train. Ratio 1.0 empties the validation set (with a warning).
struct TrainValSplit {
  std::vector<std::size_t> train;  // indices into the input sample list
  std::vector<std::size_t> val;
  std::vector<std::string> warnings;
};
TrainValSplit train_val_split(const std::vector<PreprocessedSample>& samples, double ratio,
                              Rng rng);

// Full shuffle keyed by (rng, epoch); the final partial batch is kept, except
// that a size-1 tail is dropped (and tallied) in SCL mode.
struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
  std::size_t dropped_singletons = 0;
};
BatchPlan make_batches(std::size_t n, std::size_t batch_size, const Rng& rng, std::uint64_t epoch,
                       bool scl_mode);

// Synthetic airwriting-like corpus. Per letter k and channel c, fixed tones
// f in [0.5,3] Hz with amplitudes A,B in [0.2,1]; per subject and channel a
// phase/amplitude jitter; per recording a duration in [1.5,3.0] s and white
// noise sigma=0.05:
//   x_c(t) = amp_{s,c} * (A sin(2 pi f t + phi_{s,c}) + B sin(4 pi f t)) + eta
// Shifting the jitter windows creates a "different device/user population"
// target rig for the transfer experiments.
struct SynthOptions {
  std::size_t n_subjects = 10;
  std::size_t n_reps = 5;
  double rate_hz = kDefaultRateHz;
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string dataset_name = "synth";
  std::string subject_prefix = "S";
  double phase_lo = 0.0;
  double phase_hi = 0.7853981633974483;  // pi/4
  double amp_lo = 0.8;
  double amp_hi = 1.2;
};

DatasetManifest synth_generate(const SynthOptions& opt);

}  // namespace sclair
