#include "sclair/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sclair {

int label_index(char label) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(label)));
  if (u < 'A' || u > 'Z') {
    throw std::invalid_argument(std::string("label '") + label + "' outside A..Z");
  }
  return u - 'A';
}

char index_label(int index) {
  if (index < 0 || index >= static_cast<int>(kNumClasses)) {
    throw std::invalid_argument("label index " + std::to_string(index) + " outside 0..25");
  }
  return static_cast<char>('A' + index);
}

namespace {

constexpr const char* kCsvHeader = "ax,ay,az,gx,gy,gz";

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

std::string format_real(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

char parse_label(const std::string& raw, const std::string& where) {
  if (raw.size() != 1) {
    throw std::runtime_error("manifest: " + where + ": label '" + raw +
                             "' is not a single letter A..Z");
  }
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(raw[0])));
  if (u < 'A' || u > 'Z') {
    throw std::runtime_error("manifest: " + where + ": label '" + raw + "' outside A..Z");
  }
  return u;
}

}  // namespace

Tensor<double> load_sample_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("sample csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("sample csv: empty file " + path);
  strip_cr(line);
  if (line != kCsvHeader) {
    throw std::runtime_error("sample csv: bad header in " + path + ": expected '" +
                             std::string(kCsvHeader) + "', got '" + line + "'");
  }
  std::vector<double> vals;  // timestep-major
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      double v = 0.0;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc{}) {
        throw std::runtime_error("sample csv: " + path + " line " + std::to_string(lineno) +
                                 ": cannot parse value " + std::to_string(c + 1));
      }
      p = res.ptr;
      if (c + 1 < kNumChannels) {
        if (p >= end || *p != ',') {
          throw std::runtime_error("sample csv: " + path + " line " + std::to_string(lineno) +
                                   ": expected 6 comma-separated values");
        }
        ++p;
      }
      vals.push_back(v);
    }
    if (p != end) {
      throw std::runtime_error("sample csv: " + path + " line " + std::to_string(lineno) +
                               ": trailing characters after 6 values");
    }
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("sample csv: no data rows in " + path);
  Tensor<double> out({kNumChannels, rows});
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t c = 0; c < kNumChannels; ++c) out.at(c, t) = vals[t * kNumChannels + c];
  }
  return out;
}

void save_sample_csv(const Tensor<double>& samples, const std::string& path) {
  if (samples.rank() != 2 || samples.extent(0) != kNumChannels) {
    throw std::invalid_argument("sample csv: expected a [6 x T] tensor, got " +
                                shape_str(samples.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("sample csv: cannot write " + path);
  out << kCsvHeader << '\n';
  const std::size_t n = samples.extent(1);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      if (c) out << ',';
      out << format_real(samples.at(c, t));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("sample csv: write failed for " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("manifest: " + path + " is not valid JSON: " + e.what());
  }
  for (const char* field : {"dataset_name", "sampling_rate_hz", "samples"}) {
    if (!j.contains(field)) {
      throw std::runtime_error("manifest: " + path + " missing field '" + field + "'");
    }
  }
  DatasetManifest m;
  m.dataset_name = j.at("dataset_name").get<std::string>();
  m.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
  if (!(m.sampling_rate_hz > 0)) {
    throw std::runtime_error("manifest: sampling_rate_hz must be positive");
  }
  m.base_dir = fs::path(path).parent_path().string();
  if (m.base_dir.empty()) m.base_dir = ".";
  const auto& arr = j.at("samples");
  if (!arr.is_array() || arr.empty()) {
    throw std::runtime_error("manifest: " + path + ": 'samples' must be a non-empty array");
  }
  std::set<std::tuple<std::string, char, int>> seen;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "entry " + std::to_string(i);
    const auto& e = arr[i];
    for (const char* field : {"path", "subject", "label", "repetition"}) {
      if (!e.contains(field)) {
        throw std::runtime_error("manifest: " + where + " missing field '" + field + "'");
      }
    }
    ManifestEntry me;
    me.path = e.at("path").get<std::string>();
    me.subject = e.at("subject").get<std::string>();
    me.label = parse_label(e.at("label").get<std::string>(), where);
    me.repetition = e.at("repetition").get<int>();
    auto key = std::make_tuple(me.subject, me.label, me.repetition);
    if (!seen.insert(key).second) {
      throw std::runtime_error("manifest: " + where + " duplicates (subject=" + me.subject +
                               ", label=" + std::string(1, me.label) +
                               ", repetition=" + std::to_string(me.repetition) + ")");
    }
    const fs::path full = fs::path(m.base_dir) / me.path;
    if (!fs::exists(full)) {
      throw std::runtime_error("manifest: " + where + " references missing file " +
                               full.string());
    }
    m.samples.push_back(std::move(me));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["dataset_name"] = m.dataset_name;
  j["sampling_rate_hz"] = m.sampling_rate_hz;
  json arr = json::array();
  for (const auto& e : m.samples) {
    arr.push_back({{"path", e.path},
                   {"subject", e.subject},
                   {"label", std::string(1, e.label)},
                   {"repetition", e.repetition}});
  }
  j["samples"] = std::move(arr);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("manifest: write failed for " + path);
}

std::vector<ImuRecording> load_recordings(const DatasetManifest& m) {
  std::vector<ImuRecording> out;
  out.reserve(m.samples.size());
  for (const auto& e : m.samples) {
    ImuRecording rec;
    rec.samples = load_sample_csv((fs::path(m.base_dir) / e.path).string());
    rec.sampling_rate_hz = m.sampling_rate_hz;
    rec.label = e.label;
    rec.subject_id = e.subject;
    rec.repetition = e.repetition;
    out.push_back(std::move(rec));
  }
  return out;
}

ImuRecording resample(const ImuRecording& rec, double target_hz) {
  if (!(target_hz > 0)) {
    throw std::invalid_argument("resample: target rate must be positive, got " +
                                std::to_string(target_hz));
  }
  if (rec.sampling_rate_hz == target_hz) return rec;  // bit-identical passthrough
  const std::size_t t = rec.samples.extent(1);
  if (t < 2) {
    throw std::invalid_argument("resample: need at least 2 samples to interpolate, got " +
                                std::to_string(t));
  }
  const std::size_t kmax = static_cast<std::size_t>(
      std::floor(static_cast<double>(t - 1) * target_hz / rec.sampling_rate_hz));
  const std::size_t n_out = kmax + 1;
  ImuRecording out = rec;
  out.samples = Tensor<double>({kNumChannels, n_out});
  out.sampling_rate_hz = target_hz;
  const double step = rec.sampling_rate_hz / target_hz;  // source index per output step
  for (std::size_t k = 0; k < n_out; ++k) {
    const double p = static_cast<double>(k) * step;
    std::size_t i = static_cast<std::size_t>(p);
    if (i >= t - 1) i = t - 2;
    const double frac = p - static_cast<double>(i);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      out.samples.at(c, k) =
          (1.0 - frac) * rec.samples.at(c, i) + frac * rec.samples.at(c, i + 1);
    }
  }
  return out;
}

Tensor<double> fix_length(const Tensor<double>& samples, std::size_t target_len) {
  if (samples.rank() != 2 || samples.extent(0) != kNumChannels || samples.extent(1) == 0) {
    throw std::invalid_argument("fix_length: expected a non-empty [6 x T] tensor, got " +
                                shape_str(samples.shape()));
  }
  const std::size_t t = samples.extent(1);
  if (t == target_len) return samples;
  Tensor<double> out({kNumChannels, target_len});  // zero-filled: tail padding is free
  const std::size_t keep = std::min(t, target_len);
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    for (std::size_t i = 0; i < keep; ++i) out.at(c, i) = samples.at(c, i);
  }
  return out;
}

Tensor<double> zscore(const Tensor<double>& matrix) {
  if (matrix.rank() != 2 || matrix.extent(1) == 0) {
    throw std::invalid_argument("zscore: expected a non-empty [C x T] tensor, got " +
                                shape_str(matrix.shape()));
  }
  const std::size_t c = matrix.extent(0), n = matrix.extent(1);
  Tensor<double> out(matrix.shape());
  for (std::size_t i = 0; i < c; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += matrix.at(i, t);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double d = matrix.at(i, t) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);  // population std
    const double denom = std::max(std::sqrt(var), 1e-8);
    for (std::size_t t = 0; t < n; ++t) out.at(i, t) = (matrix.at(i, t) - mean) / denom;
  }
  return out;
}

PreprocessedSample preprocess(const ImuRecording& rec, const PreprocessOptions& opt) {
  ImuRecording r = resample(rec, opt.target_hz);
  Tensor<double> m = opt.zscore_before_pad ? fix_length(zscore(r.samples), opt.target_len)
                                           : zscore(fix_length(r.samples, opt.target_len));
  PreprocessedSample out;
  out.matrix = std::move(m);
  out.label = rec.label;
  out.subject_id = rec.subject_id;
  return out;
}

std::vector<PreprocessedSample> load_preprocessed(const DatasetManifest& m,
                                                  const PreprocessOptions& opt) {
  std::vector<PreprocessedSample> out;
  out.reserve(m.samples.size());
  for (const auto& rec : load_recordings(m)) out.push_back(preprocess(rec, opt));
  return out;
}

std::vector<LosoFold> loso_splits(const DatasetManifest& m) {
  std::set<std::string> subjects;
  for (const auto& e : m.samples) subjects.insert(e.subject);
  if (subjects.size() < 2) {
    throw std::invalid_argument("loso: need at least 2 distinct subjects, got " +
                                std::to_string(subjects.size()));
  }
  std::vector<LosoFold> folds;
  for (const auto& test : subjects) {
    LosoFold f;
    f.test_subject = test;
    for (const auto& s : subjects) {
      if (s != test) f.train_subjects.push_back(s);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

TrainValSplit train_val_split(const std::vector<PreprocessedSample>& samples, double ratio,
                              Rng rng) {
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw std::invalid_argument("train_val_split: ratio must lie in (0,1], got " +
                                std::to_string(ratio));
  }
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_class[static_cast<std::size_t>(label_index(samples[i].label))].push_back(i);
  }
  TrainValSplit out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idxs = by_class[c];
    const std::string letter(1, index_label(static_cast<int>(c)));
    if (idxs.empty()) {
      out.warnings.push_back("class " + letter + " has no samples");
      continue;
    }
    if (idxs.size() < 5) {
      out.warnings.push_back("class " + letter + " has only " + std::to_string(idxs.size()) +
                             " samples; stratified split is degenerate");
    }
    Rng crng = rng.derive(c);
    crng.shuffle(idxs);
    std::size_t n_train =
        static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(idxs.size())));
    n_train = std::min(n_train, idxs.size());
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      (i < n_train ? out.train : out.val).push_back(idxs[i]);
    }
  }
  if (out.val.empty()) {
    out.warnings.push_back("validation set is empty at ratio " + std::to_string(ratio));
  }
  return out;
}

BatchPlan make_batches(std::size_t n, std::size_t batch_size, const Rng& rng, std::uint64_t epoch,
                       bool scl_mode) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be positive");
  if (scl_mode && batch_size < 2) {
    throw std::invalid_argument("make_batches: batch_size must be >= 2 in SCL mode");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng r = rng.derive(epoch);
  r.shuffle(order);
  BatchPlan plan;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, n);
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (scl_mode && !plan.batches.empty() && plan.batches.back().size() == 1) {
    plan.batches.pop_back();
    plan.dropped_singletons = 1;
  }
  return plan;
}

DatasetManifest synth_generate(const SynthOptions& opt) {
  if (opt.n_subjects < 2) {
    throw std::invalid_argument(
        "synth: need at least 2 subjects (leave-one-subject-out requires one subject to hold "
        "out), got " +
        std::to_string(opt.n_subjects));
  }
  if (opt.n_reps < 1) throw std::invalid_argument("synth: need at least 1 repetition");
  if (!(opt.rate_hz > 0)) throw std::invalid_argument("synth: sampling rate must be positive");
  if (opt.out_dir.empty()) throw std::invalid_argument("synth: output directory not set");
  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec || !fs::is_directory(opt.out_dir)) {
    throw std::runtime_error("synth: cannot create output directory " + opt.out_dir);
  }

  Rng base(opt.seed);
  constexpr double kTwoPi = 6.283185307179586476925287;

  struct LetterParams {
    double f[kNumChannels], a[kNumChannels], b[kNumChannels];
  };
  std::vector<LetterParams> letters(kNumClasses);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    Rng lr = base.derive(1, k);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      letters[k].f[c] = lr.uniform(0.5, 3.0);
      letters[k].a[c] = lr.uniform(0.2, 1.0);
      letters[k].b[c] = lr.uniform(0.2, 1.0);
    }
  }

  struct SubjectParams {
    double phase[kNumChannels], amp[kNumChannels];
  };
  std::vector<SubjectParams> subjects(opt.n_subjects);
  std::vector<std::string> subject_ids(opt.n_subjects);
  int width = 2;
  for (std::size_t v = opt.n_subjects - 1; v >= 100; v /= 10) ++width;
  for (std::size_t s = 0; s < opt.n_subjects; ++s) {
    Rng sr = base.derive(2, s);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      subjects[s].phase[c] = sr.uniform(opt.phase_lo, opt.phase_hi);
      subjects[s].amp[c] = sr.uniform(opt.amp_lo, opt.amp_hi);
    }
    std::ostringstream id;
    id << opt.subject_prefix;
    id.width(width);
    id.fill('0');
    id << s;
    subject_ids[s] = id.str();
  }

  DatasetManifest m;
  m.dataset_name = opt.dataset_name;
  m.sampling_rate_hz = opt.rate_hz;
  m.base_dir = opt.out_dir;
  for (std::size_t s = 0; s < opt.n_subjects; ++s) {
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      for (std::size_t rep = 0; rep < opt.n_reps; ++rep) {
        Rng rr = base.derive(3, (k * opt.n_subjects + s) * opt.n_reps + rep);
        const double duration = rr.uniform(1.5, 3.0);
        const std::size_t n =
            std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(duration * opt.rate_hz)));
        Tensor<double> x({kNumChannels, n});
        const LetterParams& lp = letters[k];
        const SubjectParams& sp = subjects[s];
        for (std::size_t c = 0; c < kNumChannels; ++c) {
          for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / opt.rate_hz;
            const double clean = lp.a[c] * std::sin(kTwoPi * lp.f[c] * t + sp.phase[c]) +
                                 lp.b[c] * std::sin(2.0 * kTwoPi * lp.f[c] * t);
            x.at(c, i) = sp.amp[c] * clean + 0.05 * rr.normal();
          }
        }
        std::ostringstream name;
        name << subject_ids[s] << '_' << index_label(static_cast<int>(k)) << '_';
        name.width(2);
        name.fill('0');
        name << rep;
        name << ".csv";
        save_sample_csv(x, (fs::path(opt.out_dir) / name.str()).string());
        ManifestEntry e;
        e.path = name.str();
        e.subject = subject_ids[s];
        e.label = index_label(static_cast<int>(k));
        e.repetition = static_cast<int>(rep);
        m.samples.push_back(std::move(e));
      }
    }
  }
  save_manifest(m, (fs::path(opt.out_dir) / "manifest.json").string());
  return m;
}

}  // namespace sclair
