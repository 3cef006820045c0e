#include "sclair/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>
#include <utility>

namespace sclair {

namespace {

// RNG stream ids. Every random decision in a run is keyed off the config seed
// through one of these, so runs are reproducible and streams never collide.
constexpr std::uint64_t kStreamInit = 1;     // weight initialization
constexpr std::uint64_t kStreamSplit = 2;    // per-fold train/val split
constexpr std::uint64_t kStreamShuffle = 3;  // per-(stage, epoch) batch order
constexpr std::uint64_t kStreamDropout = 4;  // per-(stage, epoch) dropout masks
constexpr std::uint64_t kStreamFold = 5;     // per-fold training seed
constexpr std::uint64_t kStreamHead = 6;     // finetune head re-initialization

// Stage tags for the shuffle/dropout streams (stage 1 / CE vs classifier head).
constexpr std::uint64_t kStageBody = 1;
constexpr std::uint64_t kStageHead = 2;

void append_params(LayerStack<float>& stack, const char* prefix,
                   std::vector<ParamRef<float>>& out) {
  for (auto p : stack.params()) {
    p.name = std::string(prefix) + p.name;
    out.push_back(p);
  }
}

Tensor<float> row_of(const Tensor<float>& m, std::size_t i) {
  const std::size_t d = m.cols();
  Tensor<float> out({d});
  std::copy(m.data() + i * d, m.data() + (i + 1) * d, out.data());
  return out;
}

void set_row(Tensor<float>& m, std::size_t i, const Tensor<float>& v) {
  const std::size_t d = m.cols();
  if (v.size() != d) {
    throw std::logic_error("set_row: vector " + shape_str(v.shape()) + " into matrix " +
                           shape_str(m.shape()));
  }
  std::copy(v.data(), v.data() + d, m.data() + i * d);
}

std::size_t argmax_first(const Tensor<float>& v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

// Mean SCL loss over the validation set, evaluated as one full batch in
// inference mode. The val set is fixed, so its skipped-anchor set is fixed
// too and the values are comparable across epochs.
double scl_validation_loss(const ModelBundle& b, const SampleSet& val, double tau) {
  if (val.size() < 2) {
    throw std::invalid_argument("validation SCL loss needs at least 2 samples, got " +
                                std::to_string(val.size()));
  }
  const std::size_t d = b.projection->output_shape().at(0);
  Tensor<float> z({val.size(), d});
  for (std::size_t i = 0; i < val.size(); ++i) {
    set_row(z, i, project(b, encode(b, val.x[i])));
  }
  SupConBatch<float> sb{std::move(z), val.y, tau};
  SupConResult res = supcon_loss(sb, /*validate=*/false);
  const std::size_t kept = val.size() - res.skipped_anchors;
  if (kept == 0) {
    throw std::runtime_error(
        "validation SCL loss undefined: every validation anchor lacks a positive");
  }
  return res.loss / static_cast<double>(kept);
}

void write_float(std::ofstream& out, float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

}  // namespace

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (loss_mode != "scl" && loss_mode != "ce") {
    throw std::invalid_argument("config: loss_mode must be 'scl' or 'ce' (got '" + loss_mode +
                                "')");
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("config: tau must be > 0 (got " + std::to_string(tau) + ")");
  }
  if (!(val_ratio > 0.0 && val_ratio < 1.0)) {
    throw std::invalid_argument("config: val_ratio must be in (0, 1) (got " +
                                std::to_string(val_ratio) + ")");
  }
  if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (loss_mode == "scl" && batch_size < 2) {
    throw std::invalid_argument("config: batch_size must be >= 2 in scl mode");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"loss_mode", loss_mode},
                        {"arch", arch_name(arch)},
                        {"tau", tau},
                        {"proj_dim", hp.proj_dim},
                        {"learning_rate", learning_rate},
                        {"batch_size", batch_size},
                        {"max_epochs", max_epochs},
                        {"patience", patience},
                        {"val_ratio", val_ratio},
                        {"seed", seed},
                        {"restore_best", restore_best},
                        {"warm_start_head", warm_start_head},
                        {"jobs", jobs},
                        {"dataset_name", dataset_name},
                        {"normalize_encoder", hp.normalize_encoder},
                        {"normalize_projection", hp.normalize_projection},
                        {"classifier_dropout", hp.classifier_dropout}};
}

// ---------------------------------------------------------------------------
// optimizer + early stopping
// ---------------------------------------------------------------------------

template <class T>
void Adam<T>::step(const std::vector<ParamRef<T>>& params, double lr) {
  if (slots_.empty() && !params.empty()) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slots_[i].m = Tensor<T>(params[i].value->shape());
      slots_[i].v = Tensor<T>(params[i].value->shape());
    }
  }
  if (slots_.size() != params.size()) {
    throw std::logic_error("adam_step: parameter list size changed between steps");
  }
  ++t_;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].value;
    const Tensor<T>& g = *params[i].grad;
    if (!p.same_shape(slots_[i].m)) {
      throw std::logic_error("adam_step: shape of '" + params[i].name + "' changed");
    }
    if (!g.all_finite()) {
      throw std::runtime_error("adam_step: non-finite gradient in tensor '" + params[i].name +
                               "'");
    }
    Tensor<T>& m = slots_[i].m;
    Tensor<T>& v = slots_[i].v;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = kBeta1 * static_cast<double>(m[k]) + (1.0 - kBeta1) * gk;
      const double vk = kBeta2 * static_cast<double>(v[k]) + (1.0 - kBeta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / bc1) / (std::sqrt(vk / bc2) + kEps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw std::invalid_argument("early stopping patience must be >= 1");
}

bool EarlyStopper::observe(double val_loss) {
  ++epoch_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    return true;
  }
  return false;
}

bool EarlyStopper::should_stop() const { return epoch_ - best_epoch_ >= patience_; }

nlohmann::json TrainHistory::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    nlohmann::json e{{"epoch", i + 1},
                     {"train_loss", epochs[i].train_loss},
                     {"val_loss", epochs[i].val_loss},
                     {"skipped_anchors", epochs[i].skipped_anchors}};
    if (epochs[i].val_accuracy >= 0.0) e["val_accuracy"] = epochs[i].val_accuracy;
    eps.push_back(std::move(e));
  }
  return nlohmann::json{{"epochs", std::move(eps)},
                        {"best_epoch", best_epoch},
                        {"best_val_loss", best_val_loss},
                        {"skipped_anchors", skipped_anchors},
                        {"dropped_singletons", dropped_singletons}};
}

// ---------------------------------------------------------------------------
// sample plumbing
// ---------------------------------------------------------------------------

SampleSet to_model_inputs(const std::vector<PreprocessedSample>& samples) {
  SampleSet s;
  s.x.reserve(samples.size());
  s.y.reserve(samples.size());
  s.subject.reserve(samples.size());
  for (const auto& p : samples) {
    s.x.push_back(p.matrix.cast<float>());
    s.y.push_back(label_index(p.label));
    s.subject.push_back(p.subject_id);
  }
  return s;
}

SampleSet subset(const SampleSet& s, const std::vector<std::size_t>& idx) {
  SampleSet out;
  out.x.reserve(idx.size());
  out.y.reserve(idx.size());
  out.subject.reserve(idx.size());
  for (std::size_t i : idx) {
    if (i >= s.size()) {
      throw std::out_of_range("subset: index " + std::to_string(i) + " out of range (size " +
                              std::to_string(s.size()) + ")");
    }
    out.x.push_back(s.x[i]);
    out.y.push_back(s.y[i]);
    out.subject.push_back(s.subject[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// stage 1: supervised contrastive training of encoder + projection
// ---------------------------------------------------------------------------

StageResult train_stage1(const SampleSet& train, const SampleSet& val, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.loss_mode != "scl") {
    throw std::invalid_argument("train_stage1: loss_mode must be 'scl' (got '" + cfg.loss_mode +
                                "')");
  }
  if (train.size() < 2) {
    throw std::invalid_argument("train_stage1: need at least 2 training samples, got " +
                                std::to_string(train.size()));
  }
  if (val.size() == 0) throw std::invalid_argument("train_stage1: empty validation set");

  Rng base(cfg.seed);
  ModelBundle bundle = build_bundle(cfg.arch, cfg.hp, base.derive(kStreamInit),
                                    /*with_projection=*/true);
  bundle.prov = Provenance{cfg.seed, cfg.dataset_name, "stage1"};

  std::vector<ParamRef<float>> params;
  append_params(bundle.encoder, "enc.", params);
  append_params(*bundle.projection, "proj.", params);
  Adam<float> opt;
  EarlyStopper stop(cfg.patience);
  TrainHistory hist;
  std::vector<Tensor<float>> best_enc, best_proj;

  const std::size_t d = bundle.projection->output_shape().at(0);
  const Rng shuffle_rng = base.derive(kStreamShuffle, kStageBody);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    BatchPlan plan = make_batches(train.size(), cfg.batch_size, shuffle_rng, epoch,
                                  /*scl_mode=*/true);
    hist.dropped_singletons += plan.dropped_singletons;
    Rng drop = base.derive(kStreamDropout, kStageBody, epoch);

    double loss_sum = 0.0;
    std::size_t anchors = 0, skipped = 0;
    for (const auto& batch : plan.batches) {
      bundle.encoder.zero_grads();
      bundle.projection->zero_grads();
      const std::size_t n = batch.size();
      std::vector<std::vector<LayerCache<float>>> cenc(n), cproj(n);
      Tensor<float> z({n, d});
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor<float> r = bundle.encoder.forward(train.x[batch[i]], Mode::kTrain, &drop, &cenc[i]);
        set_row(z, i, bundle.projection->forward(r, Mode::kTrain, &drop, &cproj[i]));
        labels[i] = train.y[batch[i]];
      }
      SupConBatch<float> sb{std::move(z), std::move(labels), cfg.tau};
      SupConResult res = supcon_loss(sb, /*validate=*/false);
      Tensor<float> gz = supcon_grad_total(sb, /*validate=*/false);
      loss_sum += res.loss;
      skipped += res.skipped_anchors;
      anchors += n - res.skipped_anchors;
      for (std::size_t i = 0; i < n; ++i) {
        Tensor<float> gr = bundle.projection->backward(row_of(gz, i), cproj[i]);
        bundle.encoder.backward(gr, cenc[i]);
      }
      opt.step(params, cfg.learning_rate);
    }
    if (anchors == 0) {
      throw std::runtime_error("train_stage1: every anchor in epoch " + std::to_string(epoch) +
                               " was skipped (no in-batch positives); batching is degenerate");
    }

    EpochStats st;
    st.train_loss = loss_sum / static_cast<double>(anchors);
    st.val_loss = scl_validation_loss(bundle, val, cfg.tau);
    st.skipped_anchors = skipped;
    hist.epochs.push_back(st);
    hist.skipped_anchors += skipped;

    if (stop.observe(st.val_loss)) {
      best_enc = snapshot_params(bundle.encoder);
      best_proj = snapshot_params(*bundle.projection);
    }
    if (stop.should_stop()) break;
  }

  if (cfg.restore_best && !best_enc.empty()) {
    restore_params(bundle.encoder, best_enc);
    restore_params(*bundle.projection, best_proj);
  }
  hist.best_epoch = stop.best_epoch();
  hist.best_val_loss = stop.best_loss();
  return StageResult{std::move(bundle), std::move(hist)};
}

// ---------------------------------------------------------------------------
// frozen-encoder classifier training (stage 2 and finetune share this)
// ---------------------------------------------------------------------------

namespace {

TrainHistory train_classifier_frozen(ModelBundle& b, const SampleSet& train, const SampleSet& val,
                                     const TrainConfig& cfg) {
  if (train.size() == 0) throw std::invalid_argument("classifier training: empty training set");
  if (val.size() == 0) throw std::invalid_argument("classifier training: empty validation set");
  const std::uint64_t pre_hash = encoder_hash(b);

  // The encoder is frozen, so its outputs are computed exactly once.
  std::vector<Tensor<float>> rtr(train.size()), rva(val.size());
  for (std::size_t i = 0; i < train.size(); ++i) rtr[i] = encode(b, train.x[i]);
  for (std::size_t i = 0; i < val.size(); ++i) rva[i] = encode(b, val.x[i]);

  std::vector<ParamRef<float>> params;
  append_params(b.classifier, "cls.", params);
  Adam<float> opt;
  EarlyStopper stop(cfg.patience);
  TrainHistory hist;
  std::vector<Tensor<float>> best;

  Rng base(cfg.seed);
  const Rng shuffle_rng = base.derive(kStreamShuffle, kStageHead);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    BatchPlan plan = make_batches(train.size(), cfg.batch_size, shuffle_rng, epoch,
                                  /*scl_mode=*/false);
    Rng drop = base.derive(kStreamDropout, kStageHead, epoch);

    double loss_sum = 0.0;
    for (const auto& batch : plan.batches) {
      b.classifier.zero_grads();
      const std::size_t n = batch.size();
      std::vector<std::vector<LayerCache<float>>> caches(n);
      Tensor<float> probs({n, kNumClasses});
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor<float> logits = b.classifier.forward(rtr[batch[i]], Mode::kTrain, &drop, &caches[i]);
        set_row(probs, i, softmax_stable(logits));
        labels[i] = train.y[batch[i]];
      }
      CrossEntropyResult<float> ce = cross_entropy(probs, labels);
      loss_sum += ce.loss * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        b.classifier.backward(row_of(ce.grad_logits, i), caches[i]);
      }
      opt.step(params, cfg.learning_rate);
    }

    Tensor<float> vprobs({val.size(), kNumClasses});
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      Tensor<float> logits = b.classifier.forward(rva[i], Mode::kInfer, nullptr, nullptr);
      Tensor<float> p = softmax_stable(logits);
      if (argmax_first(p) == static_cast<std::size_t>(val.y[i])) ++correct;
      set_row(vprobs, i, p);
    }
    CrossEntropyResult<float> vce = cross_entropy(vprobs, val.y);

    EpochStats st;
    st.train_loss = loss_sum / static_cast<double>(train.size());
    st.val_loss = vce.loss;
    st.val_accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
    hist.epochs.push_back(st);

    if (stop.observe(st.val_loss)) best = snapshot_params(b.classifier);
    if (stop.should_stop()) break;
  }

  if (cfg.restore_best && !best.empty()) restore_params(b.classifier, best);
  hist.best_epoch = stop.best_epoch();
  hist.best_val_loss = stop.best_loss();

  if (encoder_hash(b) != pre_hash) {
    throw std::logic_error("internal: encoder weights changed during frozen-head training");
  }
  return hist;
}

void reinit_head(ModelBundle& b, std::uint64_t seed) {
  LayerStack<float> head;
  for (const auto& spec : b.classifier.specs()) head.add(spec);
  Rng rng = Rng(seed).derive(kStreamHead);
  head.init(b.classifier.input_shape(), rng);
  b.classifier = std::move(head);
}

}  // namespace

StageResult train_stage2(ModelBundle bundle, const SampleSet& train, const SampleSet& val,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (!bundle.encoder.initialized()) {
    throw std::invalid_argument("train_stage2: bundle is uninitialized");
  }
  if (bundle.arch != cfg.arch) {
    throw std::invalid_argument(std::string("train_stage2: config arch '") + arch_name(cfg.arch) +
                                "' does not match bundle arch '" + arch_name(bundle.arch) + "'");
  }
  discard_projection(bundle);
  TrainHistory hist = train_classifier_frozen(bundle, train, val, cfg);
  bundle.prov.stage = "stage2";
  return StageResult{std::move(bundle), std::move(hist)};
}

StageResult finetune(ModelBundle& pretrained, const SampleSet& train, const SampleSet& val,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (pretrained.arch != cfg.arch) {
    throw std::invalid_argument(std::string("finetune: config arch '") + arch_name(cfg.arch) +
                                "' does not match bundle arch '" + arch_name(pretrained.arch) +
                                "'");
  }
  if (train.size() == 0) throw std::invalid_argument("finetune: target training set is empty");
  if (val.size() == 0) throw std::invalid_argument("finetune: target validation set is empty");

  ModelBundle b = clone_bundle(pretrained);
  if (b.projection) discard_projection(b);
  if (!cfg.warm_start_head) reinit_head(b, cfg.seed);
  TrainHistory hist = train_classifier_frozen(b, train, val, cfg);
  b.prov.stage = "finetuned";
  b.prov.seed = cfg.seed;
  if (!cfg.dataset_name.empty()) b.prov.dataset_name = cfg.dataset_name;
  return StageResult{std::move(b), std::move(hist)};
}

// ---------------------------------------------------------------------------
// single-stage cross-entropy baseline
// ---------------------------------------------------------------------------

StageResult train_ce(const SampleSet& train, const SampleSet& val, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.loss_mode != "ce") {
    throw std::invalid_argument("train_ce: loss_mode must be 'ce' (got '" + cfg.loss_mode + "')");
  }
  if (train.size() == 0) throw std::invalid_argument("train_ce: empty training set");
  if (val.size() == 0) throw std::invalid_argument("train_ce: empty validation set");

  Rng base(cfg.seed);
  ModelBundle bundle = build_bundle(cfg.arch, cfg.hp, base.derive(kStreamInit),
                                    /*with_projection=*/false);
  bundle.prov = Provenance{cfg.seed, cfg.dataset_name, "ce"};

  std::vector<ParamRef<float>> params;
  append_params(bundle.encoder, "enc.", params);
  append_params(bundle.classifier, "cls.", params);
  Adam<float> opt;
  EarlyStopper stop(cfg.patience);
  TrainHistory hist;
  std::vector<Tensor<float>> best_enc, best_cls;

  const Rng shuffle_rng = base.derive(kStreamShuffle, kStageBody);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    BatchPlan plan = make_batches(train.size(), cfg.batch_size, shuffle_rng, epoch,
                                  /*scl_mode=*/false);
    Rng drop = base.derive(kStreamDropout, kStageBody, epoch);

    double loss_sum = 0.0;
    for (const auto& batch : plan.batches) {
      bundle.encoder.zero_grads();
      bundle.classifier.zero_grads();
      const std::size_t n = batch.size();
      std::vector<std::vector<LayerCache<float>>> cenc(n), ccls(n);
      Tensor<float> probs({n, kNumClasses});
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor<float> r = bundle.encoder.forward(train.x[batch[i]], Mode::kTrain, &drop, &cenc[i]);
        Tensor<float> logits = bundle.classifier.forward(r, Mode::kTrain, &drop, &ccls[i]);
        set_row(probs, i, softmax_stable(logits));
        labels[i] = train.y[batch[i]];
      }
      CrossEntropyResult<float> ce = cross_entropy(probs, labels);
      loss_sum += ce.loss * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor<float> gr = bundle.classifier.backward(row_of(ce.grad_logits, i), ccls[i]);
        bundle.encoder.backward(gr, cenc[i]);
      }
      opt.step(params, cfg.learning_rate);
    }

    Tensor<float> vprobs({val.size(), kNumClasses});
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      Tensor<float> p = classify(bundle, encode(bundle, val.x[i]), Mode::kInfer);
      if (argmax_first(p) == static_cast<std::size_t>(val.y[i])) ++correct;
      set_row(vprobs, i, p);
    }
    CrossEntropyResult<float> vce = cross_entropy(vprobs, val.y);

    EpochStats st;
    st.train_loss = loss_sum / static_cast<double>(train.size());
    st.val_loss = vce.loss;
    st.val_accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
    hist.epochs.push_back(st);

    if (stop.observe(st.val_loss)) {
      best_enc = snapshot_params(bundle.encoder);
      best_cls = snapshot_params(bundle.classifier);
    }
    if (stop.should_stop()) break;
  }

  if (cfg.restore_best && !best_enc.empty()) {
    restore_params(bundle.encoder, best_enc);
    restore_params(bundle.classifier, best_cls);
  }
  hist.best_epoch = stop.best_epoch();
  hist.best_val_loss = stop.best_loss();
  return StageResult{std::move(bundle), std::move(hist)};
}

TrainOutcome run_training(const SampleSet& train, const SampleSet& val, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.loss_mode == "scl") {
    StageResult s1 = train_stage1(train, val, cfg);
    StageResult s2 = train_stage2(std::move(s1.bundle), train, val, cfg);
    return TrainOutcome{std::move(s2.bundle), std::move(s1.history), std::move(s2.history)};
  }
  StageResult r = train_ce(train, val, cfg);
  return TrainOutcome{std::move(r.bundle), TrainHistory{}, std::move(r.history)};
}

// ---------------------------------------------------------------------------
// evaluation + LOSO orchestration
// ---------------------------------------------------------------------------

EvalReport evaluate(const ModelBundle& bundle, const SampleSet& samples) {
  if (samples.size() == 0) throw std::invalid_argument("evaluate: empty sample set");
  EvalReport rep;
  rep.confusion.assign(kNumClasses, std::vector<std::size_t>(kNumClasses, 0));
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor<float> p = classify(bundle, encode(bundle, samples.x[i]), Mode::kInfer);
    const std::size_t pred = argmax_first(p);
    const auto y = static_cast<std::size_t>(samples.y[i]);
    rep.confusion[y][pred] += 1;
    auto& t = tally[samples.subject[i]];
    t.second += 1;
    if (pred == y) t.first += 1;
  }
  double mean = 0.0;
  for (const auto& [subj, t] : tally) {
    const double acc = static_cast<double>(t.first) / static_cast<double>(t.second);
    rep.per_subject[subj] = acc;
    mean += acc;
  }
  rep.mean_accuracy = mean / static_cast<double>(tally.size());
  std::size_t trace = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) trace += rep.confusion[c][c];
  rep.pooled_accuracy = static_cast<double>(trace) / static_cast<double>(samples.size());
  rep.top_confusions = top_confusions(rep.confusion, 5);
  return rep;
}

EvalReport loso_run(const DatasetManifest& manifest, const TrainConfig& cfg,
                    const PreprocessOptions& pre) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig c = cfg;
  if (c.dataset_name.empty()) c.dataset_name = manifest.dataset_name;
  c.validate();

  const std::vector<LosoFold> folds = loso_splits(manifest);
  if (folds.size() < 2) {
    throw std::invalid_argument("loso: need at least 2 subjects, manifest has " +
                                std::to_string(folds.size()));
  }
  const std::vector<PreprocessedSample> samples = load_preprocessed(manifest, pre);

  struct FoldOut {
    double acc = 0.0;
    std::vector<std::vector<std::size_t>> cm;
    std::size_t n_test = 0;
    std::size_t skipped = 0;
    bool failed = false;
    std::string error;
  };
  std::vector<FoldOut> outs(folds.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= folds.size()) return;
      try {
        const LosoFold& fold = folds[i];
        std::vector<PreprocessedSample> pool, test;
        for (const auto& s : samples) {
          (s.subject_id == fold.test_subject ? test : pool).push_back(s);
        }
        TrainValSplit split =
            train_val_split(pool, 1.0 - c.val_ratio, Rng(c.seed).derive(kStreamSplit, i));
        for (std::size_t idx : split.train) {
          if (pool[idx].subject_id == fold.test_subject) {
            throw std::logic_error("held-out subject leaked into the training set");
          }
        }
        for (std::size_t idx : split.val) {
          if (pool[idx].subject_id == fold.test_subject) {
            throw std::logic_error("held-out subject leaked into the validation set");
          }
        }
        SampleSet pool_set = to_model_inputs(pool);
        SampleSet tr = subset(pool_set, split.train);
        SampleSet va = subset(pool_set, split.val);
        SampleSet te = to_model_inputs(test);

        TrainConfig fc = c;
        fc.seed = Rng(c.seed).derive(kStreamFold, i).next_u64();
        TrainOutcome out = run_training(tr, va, fc);
        EvalReport rep = evaluate(out.bundle, te);
        outs[i].acc = rep.pooled_accuracy;
        outs[i].cm = std::move(rep.confusion);
        outs[i].n_test = te.size();
        outs[i].skipped = out.stage1.skipped_anchors + out.stage2.skipped_anchors;
      } catch (const std::exception& e) {
        outs[i].failed = true;
        outs[i].error = e.what();
      }
    }
  };

  const std::size_t nthreads = std::max<std::size_t>(1, std::min(c.jobs, folds.size()));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (outs[i].failed) {
      throw std::runtime_error("loso: fold '" + folds[i].test_subject + "' failed: " +
                               outs[i].error);
    }
  }

  EvalReport agg;
  agg.confusion.assign(kNumClasses, std::vector<std::size_t>(kNumClasses, 0));
  double mean = 0.0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    agg.per_subject[folds[i].test_subject] = outs[i].acc;
    mean += outs[i].acc;
    total += outs[i].n_test;
    agg.skipped_anchors += outs[i].skipped;
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      for (std::size_t col = 0; col < kNumClasses; ++col) {
        agg.confusion[r][col] += outs[i].cm[r][col];
      }
    }
  }
  agg.mean_accuracy = mean / static_cast<double>(folds.size());
  std::size_t trace = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) trace += agg.confusion[k][k];
  agg.pooled_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  agg.top_confusions = top_confusions(agg.confusion, 5);
  agg.config = c.to_json();
  agg.wall_clock_s =
      std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() -
                                                                t0)
          .count();
  return agg;
}

ManifestTrainResult train_on_manifest(const DatasetManifest& manifest, const TrainConfig& cfg,
                                      const PreprocessOptions& pre) {
  TrainConfig c = cfg;
  if (c.dataset_name.empty()) c.dataset_name = manifest.dataset_name;
  c.validate();
  const std::vector<PreprocessedSample> samples = load_preprocessed(manifest, pre);
  TrainValSplit split =
      train_val_split(samples, 1.0 - c.val_ratio, Rng(c.seed).derive(kStreamSplit));
  SampleSet all = to_model_inputs(samples);
  SampleSet tr = subset(all, split.train);
  SampleSet va = subset(all, split.val);
  ManifestTrainResult res;
  res.outcome = run_training(tr, va, c);
  res.n_train = tr.size();
  res.n_val = va.size();
  res.warnings = std::move(split.warnings);
  return res;
}

TransferReport finetune_loso(ModelBundle& pretrained, const DatasetManifest& target,
                             const TrainConfig& cfg, const PreprocessOptions& pre) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig c = cfg;
  if (c.dataset_name.empty()) c.dataset_name = target.dataset_name;
  c.validate();

  const std::vector<LosoFold> folds = loso_splits(target);
  if (folds.size() < 2) {
    throw std::invalid_argument("finetune: target manifest needs at least 2 subjects for "
                                "leave-one-subject-out transfer, got " +
                                std::to_string(folds.size()));
  }
  const std::vector<PreprocessedSample> samples = load_preprocessed(target, pre);

  TransferReport out;
  out.zero_shot = evaluate(pretrained, to_model_inputs(samples));
  out.zero_shot.config = c.to_json();

  struct FoldOut {
    double acc = 0.0;
    std::vector<std::vector<std::size_t>> cm;
    std::size_t n_test = 0;
    bool failed = false;
    std::string error;
  };
  std::vector<FoldOut> outs(folds.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= folds.size()) return;
      try {
        const LosoFold& fold = folds[i];
        std::vector<PreprocessedSample> pool, test;
        for (const auto& s : samples) {
          (s.subject_id == fold.test_subject ? test : pool).push_back(s);
        }
        TrainValSplit split =
            train_val_split(pool, 1.0 - c.val_ratio, Rng(c.seed).derive(kStreamSplit, i));
        SampleSet pool_set = to_model_inputs(pool);
        SampleSet tr = subset(pool_set, split.train);
        SampleSet va = subset(pool_set, split.val);
        SampleSet te = to_model_inputs(test);

        TrainConfig fc = c;
        fc.seed = Rng(c.seed).derive(kStreamFold, i).next_u64();
        StageResult sr = finetune(pretrained, tr, va, fc);
        EvalReport rep = evaluate(sr.bundle, te);
        outs[i].acc = rep.pooled_accuracy;
        outs[i].cm = std::move(rep.confusion);
        outs[i].n_test = te.size();
      } catch (const std::exception& e) {
        outs[i].failed = true;
        outs[i].error = e.what();
      }
    }
  };

  const std::size_t nthreads = std::max<std::size_t>(1, std::min(c.jobs, folds.size()));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (outs[i].failed) {
      throw std::runtime_error("finetune: fold '" + folds[i].test_subject + "' failed: " +
                               outs[i].error);
    }
  }

  EvalReport& ft = out.finetuned;
  ft.confusion.assign(kNumClasses, std::vector<std::size_t>(kNumClasses, 0));
  double mean = 0.0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    ft.per_subject[folds[i].test_subject] = outs[i].acc;
    mean += outs[i].acc;
    total += outs[i].n_test;
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      for (std::size_t col = 0; col < kNumClasses; ++col) ft.confusion[r][col] += outs[i].cm[r][col];
    }
  }
  ft.mean_accuracy = mean / static_cast<double>(folds.size());
  std::size_t trace = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) trace += ft.confusion[k][k];
  ft.pooled_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  ft.top_confusions = top_confusions(ft.confusion, 5);
  ft.config = c.to_json();
  ft.wall_clock_s =
      std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() -
                                                                t0)
          .count();
  return out;
}

void export_embeddings(ModelBundle& bundle, const SampleSet& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_embeddings: cannot open '" + path + "'");
  const std::size_t dr = bundle.encoder.output_shape().at(0);
  const bool with_z = bundle.has_projection();
  const std::size_t dz = with_z ? bundle.projection->output_shape().at(0) : 0;

  out << "subject,label";
  for (std::size_t i = 0; i < dr; ++i) out << ",r" << i;
  for (std::size_t i = 0; i < dz; ++i) out << ",z" << i;
  out << "\n";

  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor<float> r = encode(bundle, samples.x[i]);
    out << samples.subject[i] << ',' << index_label(samples.y[i]);
    for (std::size_t k = 0; k < dr; ++k) {
      out << ',';
      write_float(out, r[k]);
    }
    if (with_z) {
      Tensor<float> z = project(bundle, r);
      for (std::size_t k = 0; k < dz; ++k) {
        out << ',';
        write_float(out, z[k]);
      }
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("export_embeddings: write to '" + path + "' failed");
}

}  // namespace sclair
