#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sclair/data.hpp"
#include "sclair/losses.hpp"
#include "sclair/model.hpp"
#include "sclair/report.hpp"

namespace sclair {

struct TrainConfig {
  std::string loss_mode = "scl";  // scl | ce
  Arch arch = Arch::kCnn1d;
  ArchHyper hp;                   // proj_dim and normalization switches live here
  double tau = 0.1;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double val_ratio = 0.2;
  std::uint64_t seed = 0;
  bool restore_best = true;      // early stopping restores best-epoch weights
  bool warm_start_head = false;  // finetune: keep the pretrained head weights
  std::size_t jobs = 1;          // LOSO fold parallelism
  std::string dataset_name;

  void validate() const;
  nlohmann::json to_json() const;  // fully resolved config echo
};

// Bias-corrected Adam (beta1=0.9, beta2=0.999, eps=1e-8). Moment slots are
// allocated on the first step and keyed to the parameter list order.
template <class T>
class Adam {
 public:
  Adam() = default;
  void step(const std::vector<ParamRef<T>>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

// Stops once `patience` epochs pass without a strict validation improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  bool observe(double val_loss);  // advances the epoch; true on a new best
  bool should_stop() const;
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based
  double best_loss() const { return best_; }
  std::size_t epochs_seen() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0, best_epoch_ = 0;
  double best_;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = -1.0;  // classifier stages only; -1 elsewhere
  std::size_t skipped_anchors = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_loss = 0.0;
  std::size_t skipped_anchors = 0;
  std::size_t dropped_singletons = 0;
  nlohmann::json to_json() const;
};

// Model-ready float views of the preprocessed corpus.
struct SampleSet {
  std::vector<Tensor<float>> x;
  std::vector<int> y;  // label indices 0..25
  std::vector<std::string> subject;
  std::size_t size() const { return x.size(); }
};

SampleSet to_model_inputs(const std::vector<PreprocessedSample>& samples);
SampleSet subset(const SampleSet& s, const std::vector<std::size_t>& idx);

struct StageResult {
  ModelBundle bundle;
  TrainHistory history;
};

// Stage 1: encoder + projection trained with the supervised contrastive loss.
StageResult train_stage1(const SampleSet& train, const SampleSet& val, const TrainConfig& cfg);

// Stage 2: projection discarded, classifier trained with CE, encoder frozen.
StageResult train_stage2(ModelBundle bundle, const SampleSet& train, const SampleSet& val,
                         const TrainConfig& cfg);

// Single-stage CE baseline (encoder + classifier end to end, no projection).
StageResult train_ce(const SampleSet& train, const SampleSet& val, const TrainConfig& cfg);

// Classifier-head transfer: head re-initialized (unless cfg.warm_start_head)
// and trained on the target data, encoder frozen and bit-identical.
StageResult finetune(ModelBundle& pretrained, const SampleSet& train, const SampleSet& val,
                     const TrainConfig& cfg);

EvalReport evaluate(const ModelBundle& bundle, const SampleSet& samples);

struct TrainOutcome {
  ModelBundle bundle;
  TrainHistory stage1;  // empty in ce mode
  TrainHistory stage2;  // classifier stage (scl) or the single ce stage
};

// Runs the configured pipeline (scl two-stage or ce single-stage).
TrainOutcome run_training(const SampleSet& train, const SampleSet& val, const TrainConfig& cfg);

// Full leave-one-subject-out sweep; aggregates the per-fold reports. Folds
// run on cfg.jobs threads; each fold derives independent RNG streams, so the
// report does not depend on the thread count.
EvalReport loso_run(const DatasetManifest& manifest, const TrainConfig& cfg,
                    const PreprocessOptions& pre = {});

// Whole-manifest training: stratified (1 - val_ratio):val_ratio split, then
// the configured pipeline. Backs the `train` command.
struct ManifestTrainResult {
  TrainOutcome outcome;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<std::string> warnings;
};
ManifestTrainResult train_on_manifest(const DatasetManifest& manifest, const TrainConfig& cfg,
                                      const PreprocessOptions& pre = {});

// Transfer experiment on a target manifest: evaluates the pretrained bundle
// as-is on every target sample (zero_shot), then runs LOSO over the target
// subjects where each fold fine-tunes the classifier head on the remaining
// subjects (finetuned).
struct TransferReport {
  EvalReport zero_shot;
  EvalReport finetuned;
};
TransferReport finetune_loso(ModelBundle& pretrained, const DatasetManifest& target,
                             const TrainConfig& cfg, const PreprocessOptions& pre = {});

// One CSV row per sample: subject, label, r (and z when a projection exists).
void export_embeddings(ModelBundle& bundle, const SampleSet& samples, const std::string& path);

}  // namespace sclair
