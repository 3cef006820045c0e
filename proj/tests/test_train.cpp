#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "sclair/data.hpp"
#include "sclair/losses.hpp"
#include "sclair/model.hpp"
#include "sclair/rng.hpp"
#include "sclair/train.hpp"

using namespace sclair;
namespace fs = std::filesystem;

namespace {

// One shared tiny corpus for the training tests: 3 subjects x 26 letters x 4
// repetitions, preprocessed once. Generated on first use.
struct Corpus {
  DatasetManifest manifest;
  SampleSet all;
  SampleSet train, val;
};

const Corpus& corpus() {
  static Corpus c = [] {
    Corpus out;
    SynthOptions opt;
    opt.n_subjects = 3;
    opt.n_reps = 4;
    opt.seed = 11;
    opt.out_dir = "tmp_test_train/corpus";
    fs::remove_all(opt.out_dir);
    out.manifest = synth_generate(opt);
    std::vector<PreprocessedSample> pre = load_preprocessed(out.manifest);
    out.all = to_model_inputs(pre);
    TrainValSplit split = train_val_split(pre, 0.8, Rng(99));
    out.train = subset(out.all, split.train);
    out.val = subset(out.all, split.val);
    return out;
  }();
  return c;
}

TrainConfig tiny_config(const std::string& mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.loss_mode = mode;
  cfg.arch = Arch::kCnn1d;
  cfg.hp.conv_filters1 = 8;
  cfg.hp.conv_filters2 = 12;
  cfg.hp.proj_dim = 16;
  cfg.max_epochs = 6;
  cfg.seed = seed;
  cfg.dataset_name = "tiny";
  return cfg;
}

double val_ce_of(const ModelBundle& bundle, const SampleSet& val) {
  Tensor<double> probs({val.size(), kNumClasses});
  for (std::size_t i = 0; i < val.size(); ++i) {
    Tensor<float> p = classify(bundle, encode(bundle, val.x[i]), Mode::kInfer);
    for (std::size_t c = 0; c < kNumClasses; ++c) probs.at(i, c) = p[c];
  }
  return cross_entropy(probs, val.y).loss;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("adam: first-step magnitude, zero-gradient fixpoint, quadratic descent") {
  Tensor<double> theta({4}, 1.0);
  Tensor<double> grad({4});
  std::vector<ParamRef<double>> params = {{"theta", &theta, &grad}};

  Adam<double> opt;
  grad.fill(0.37);  // any constant gradient: first step is ~lr * sign(g)
  opt.step(params, 1e-3);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(theta[i] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));

  Adam<double> frozen;
  Tensor<double> fix({3}, 2.5);
  Tensor<double> zero({3});
  std::vector<ParamRef<double>> fp = {{"theta", &fix, &zero}};
  for (int i = 0; i < 10; ++i) frozen.step(fp, 0.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(fix[i] == 2.5);
  CHECK(frozen.steps() == 10);

  Adam<double> quad;
  Tensor<double> q({5}, 1.0);
  Tensor<double> qg({5});
  std::vector<ParamRef<double>> qp = {{"theta", &q, &qg}};
  for (int it = 0; it < 100; ++it) {
    for (std::size_t i = 0; i < 5; ++i) qg[i] = 2.0 * q[i];  // grad of ||q||^2
    quad.step(qp, 0.1);
  }
  CHECK(l2_norm(q) < 1e-2);
}

TEST_CASE("adam: a non-finite gradient aborts and names the offending tensor") {
  Tensor<double> theta({2}, 1.0);
  Tensor<double> grad({2});
  grad[1] = std::numeric_limits<double>::quiet_NaN();
  std::vector<ParamRef<double>> params = {{"cls.l1.W", &theta, &grad}};
  Adam<double> opt;
  try {
    opt.step(params, 1e-3);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("cls.l1.W") != std::string::npos);
  }
}

TEST_CASE("early stopping: the patience-5 trace stops after epoch 7, best at epoch 2") {
  EarlyStopper stop(5);
  const double trace[] = {5.0, 4.0, 4.1, 4.2, 4.3, 4.4, 4.5};
  std::size_t stopped_after = 0;
  for (double v : trace) {
    stop.observe(v);
    if (stop.should_stop()) {
      stopped_after = stop.epochs_seen();
      break;
    }
  }
  CHECK(stopped_after == 7);
  CHECK(stop.best_epoch() == 2);
  CHECK(stop.best_loss() == 4.0);
}

TEST_CASE("early stopping: strict improvement required; plateaus exhaust patience") {
  EarlyStopper stop(2);
  stop.observe(1.0);
  CHECK_FALSE(stop.should_stop());
  stop.observe(1.0);  // equal is not an improvement
  CHECK_FALSE(stop.should_stop());
  stop.observe(1.0);
  CHECK(stop.should_stop());
  CHECK(stop.best_epoch() == 1);
}

TEST_CASE("config validation rejects out-of-range settings") {
  TrainConfig cfg = tiny_config("scl", 1);
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.val_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.batch_size = 1;  // scl needs pairs
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.loss_mode = "hinge";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("stage 1: contrastive loss falls, history is deterministic in the seed") {
  const Corpus& c = corpus();
  TrainConfig cfg = tiny_config("scl", 7);
  StageResult a = train_stage1(c.train, c.val, cfg);
  REQUIRE_FALSE(a.history.epochs.empty());
  CHECK(a.history.epochs.back().train_loss < a.history.epochs.front().train_loss);
  CHECK(a.bundle.has_projection());
  CHECK(a.bundle.prov.stage == "stage1");
  CHECK(a.history.best_epoch >= 1);
  CHECK(a.history.best_epoch <= a.history.epochs.size());
  // early-stopping budget: epochs never exceed best + patience (or the cap)
  CHECK(a.history.epochs.size() <=
        std::max<std::size_t>(a.history.best_epoch + cfg.patience, cfg.max_epochs));

  StageResult b = train_stage1(c.train, c.val, cfg);
  CHECK(encoder_hash(a.bundle) == encoder_hash(b.bundle));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    CHECK(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
  }

  TrainConfig other = cfg;
  other.seed = 8;
  StageResult d = train_stage1(c.train, c.val, other);
  CHECK(encoder_hash(a.bundle) != encoder_hash(d.bundle));
}

TEST_CASE("stage 2: encoder frozen, projection gone, best val loss is reproducible") {
  const Corpus& c = corpus();
  TrainConfig cfg = tiny_config("scl", 7);
  StageResult s1 = train_stage1(c.train, c.val, cfg);
  const std::uint64_t enc_before = encoder_hash(s1.bundle);

  StageResult s2 = train_stage2(clone_bundle(s1.bundle), c.train, c.val, cfg);
  CHECK(encoder_hash(s2.bundle) == enc_before);
  CHECK_FALSE(s2.bundle.has_projection());
  CHECK(s2.bundle.prov.stage == "stage2");
  REQUIRE_FALSE(s2.history.epochs.empty());
  CHECK(s2.history.epochs.back().val_accuracy >= 0.0);  // classifier stages report it

  // restore_best contract: the returned weights reproduce the recorded best
  CHECK(std::abs(val_ce_of(s2.bundle, c.val) - s2.history.best_val_loss) < 1e-6);
}

TEST_CASE("ce baseline: single stage, same inference size as the two-stage model") {
  const Corpus& c = corpus();
  TrainConfig cfg = tiny_config("ce", 7);
  StageResult ce = train_ce(c.train, c.val, cfg);
  CHECK_FALSE(ce.bundle.has_projection());
  CHECK(ce.bundle.prov.stage == "ce");
  REQUIRE_FALSE(ce.history.epochs.empty());
  CHECK(ce.history.epochs.back().train_loss < ce.history.epochs.front().train_loss);

  TrainConfig scl_cfg = tiny_config("scl", 7);
  StageResult s1 = train_stage1(c.train, c.val, scl_cfg);
  StageResult s2 = train_stage2(std::move(s1.bundle), c.train, c.val, scl_cfg);
  CHECK(param_count(ce.bundle, ParamForm::kInference) ==
        param_count(s2.bundle, ParamForm::kInference));

  StageResult again = train_ce(c.train, c.val, cfg);
  CHECK(encoder_hash(ce.bundle) == encoder_hash(again.bundle));
  CHECK(params_hash(ce.bundle.classifier) == params_hash(again.bundle.classifier));
}

TEST_CASE("run_training dispatches both pipelines with coherent histories") {
  const Corpus& c = corpus();
  TrainOutcome scl = run_training(c.train, c.val, tiny_config("scl", 3));
  CHECK_FALSE(scl.stage1.epochs.empty());
  CHECK_FALSE(scl.stage2.epochs.empty());
  CHECK_FALSE(scl.bundle.has_projection());

  TrainOutcome ce = run_training(c.train, c.val, tiny_config("ce", 3));
  CHECK(ce.stage1.epochs.empty());
  CHECK_FALSE(ce.stage2.epochs.empty());
}

TEST_CASE("finetune: frozen encoder, fresh-vs-warm head, guards") {
  const Corpus& c = corpus();
  TrainConfig cfg = tiny_config("scl", 5);
  TrainOutcome pre = run_training(c.train, c.val, cfg);
  const std::uint64_t enc = encoder_hash(pre.bundle);

  TrainConfig ft = cfg;
  ft.loss_mode = "ce";
  ft.seed = 17;
  StageResult cold = finetune(pre.bundle, c.train, c.val, ft);
  CHECK(encoder_hash(cold.bundle) == enc);
  CHECK(cold.bundle.prov.stage == "finetuned");

  TrainConfig warm = ft;
  warm.warm_start_head = true;
  StageResult kept = finetune(pre.bundle, c.train, c.val, warm);
  CHECK(encoder_hash(kept.bundle) == enc);
  // different starting heads end at different weights on this short budget
  CHECK(params_hash(cold.bundle.classifier) != params_hash(kept.bundle.classifier));

  SampleSet empty;
  CHECK_THROWS(finetune(pre.bundle, empty, c.val, ft));

  TrainConfig mismatch = ft;
  mismatch.arch = Arch::kLstm;
  CHECK_THROWS(finetune(pre.bundle, c.train, c.val, mismatch));
}

TEST_CASE("evaluate: constant and perfect predictors, bookkeeping, purity") {
  const Corpus& c = corpus();
  ArchHyper hp;
  hp.conv_filters1 = 8;
  hp.conv_filters2 = 12;
  ModelBundle bundle = build_bundle(Arch::kCnn1d, hp, Rng(2), false);
  auto cls = bundle.classifier.params();
  cls[0].value->fill(0.0f);
  cls[1].value->fill(0.0f);

  // uniform probabilities -> first-max tie rule -> everything becomes 'A'
  EvalReport r = evaluate(bundle, c.all);
  std::size_t n_a = 0, total = 0;
  for (std::size_t i = 0; i < c.all.size(); ++i) n_a += (c.all.y[i] == 0);
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < kNumClasses; ++p) {
      row += r.confusion[t][p];
      if (p != 0) CHECK(r.confusion[t][p] == 0);  // all mass in column A
    }
    std::size_t want = 0;
    for (std::size_t i = 0; i < c.all.size(); ++i)
      want += (c.all.y[i] == static_cast<int>(t));
    CHECK(row == want);  // row sums equal class counts
    total += row;
  }
  CHECK(total == c.all.size());
  CHECK(r.pooled_accuracy ==
        doctest::Approx(static_cast<double>(n_a) / c.all.size()).epsilon(1e-12));

  // restricted to true 'A' samples the same predictor is perfect
  std::vector<std::size_t> only_a;
  for (std::size_t i = 0; i < c.all.size(); ++i)
    if (c.all.y[i] == 0) only_a.push_back(i);
  EvalReport pr = evaluate(bundle, subset(c.all, only_a));
  CHECK(pr.pooled_accuracy == 1.0);
  CHECK(pr.mean_accuracy == 1.0);
  CHECK(pr.confusion[0][0] == only_a.size());

  EvalReport r2 = evaluate(bundle, c.all);
  CHECK(r2.confusion == r.confusion);
  CHECK(r2.mean_accuracy == r.mean_accuracy);

  SampleSet empty;
  CHECK_THROWS(evaluate(bundle, empty));
}

TEST_CASE("top_confusions: symmetric counting, percent of total error, ranking rules") {
  std::vector<std::vector<std::size_t>> cm(26, std::vector<std::size_t>(26, 0));
  cm[3][15] = 3;  // D predicted as P
  cm[15][3] = 2;  // P predicted as D
  cm[23][24] = 1; // X predicted as Y
  for (int i = 0; i < 26; ++i) cm[i][i] = 50;

  std::vector<ConfusionPair> pairs = top_confusions(cm, 5);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].a == 'D');
  CHECK(pairs[0].b == 'P');
  CHECK(pairs[0].count == 5);
  CHECK(pairs[0].percent == doctest::Approx(83.33).epsilon(1e-3));
  CHECK(pairs[1].a == 'X');
  CHECK(pairs[1].b == 'Y');
  CHECK(pairs[1].percent == doctest::Approx(16.67).epsilon(1e-3));

  std::vector<std::vector<std::size_t>> clean(26, std::vector<std::size_t>(26, 0));
  for (int i = 0; i < 26; ++i) clean[i][i] = 4;
  CHECK(top_confusions(clean, 5).empty());

  // ties break alphabetically and k caps the list
  std::vector<std::vector<std::size_t>> tie(26, std::vector<std::size_t>(26, 0));
  tie[1][2] = 2;  // (B,C)
  tie[0][1] = 2;  // (A,B)
  tie[4][5] = 2;  // (E,F)
  std::vector<ConfusionPair> ranked = top_confusions(tie, 2);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].a == 'A');
  CHECK(ranked[1].a == 'B');
}

TEST_CASE("export_embeddings: header + one unit-norm row per sample, seed-stable") {
  const Corpus& c = corpus();
  std::vector<std::size_t> first_six = {0, 1, 2, 3, 4, 5};
  SampleSet six = subset(c.all, first_six);

  ArchHyper hp;
  hp.lstm_units = 8;
  hp.proj_dim = 4;
  ModelBundle rig = build_bundle(Arch::kLstm, hp, Rng(987654321), true);
  fs::create_directories("tmp_test_train");
  export_embeddings(rig, six, "tmp_test_train/emb.csv");

  std::ifstream in("tmp_test_train/emb.csv");
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("subject,label,r0", 0) == 0);
  CHECK(header.find("z0") != std::string::npos);  // stage-1 bundle exports z too
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // subject
    std::getline(ss, cell, ',');  // label
    double norm2 = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      std::getline(ss, cell, ',');
      const double v = std::stod(cell);
      norm2 += v * v;
    }
    CHECK(std::abs(std::sqrt(norm2) - 1.0) < 1e-5);
  }
  CHECK(rows == six.size());

  export_embeddings(rig, six, "tmp_test_train/emb2.csv");
  std::ifstream a("tmp_test_train/emb.csv", std::ios::binary);
  std::ifstream b("tmp_test_train/emb2.csv", std::ios::binary);
  std::ostringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("loso_run: per-subject folds, aggregate accounting, thread invariance") {
  const Corpus& c = corpus();
  TrainConfig cfg = tiny_config("ce", 21);
  cfg.max_epochs = 2;

  EvalReport r1 = loso_run(c.manifest, cfg);
  CHECK(r1.per_subject.size() == 3);  // one fold per subject
  double mean = 0.0;
  for (const auto& [subj, acc] : r1.per_subject) mean += acc;
  mean /= static_cast<double>(r1.per_subject.size());
  CHECK(r1.mean_accuracy == doctest::Approx(mean).epsilon(1e-12));
  std::size_t total = 0, diag = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) total += r1.confusion[i][j];
    diag += r1.confusion[i][i];
  }
  CHECK(total == c.all.size());  // every sample is tested exactly once
  CHECK(r1.pooled_accuracy ==
        doctest::Approx(static_cast<double>(diag) / total).epsilon(1e-12));

  TrainConfig threaded = cfg;
  threaded.jobs = 2;
  EvalReport r2 = loso_run(c.manifest, threaded);
  CHECK(r2.confusion == r1.confusion);
  CHECK(r2.per_subject == r1.per_subject);
  CHECK(r2.mean_accuracy == r1.mean_accuracy);
}

TEST_CASE("train_on_manifest: split arithmetic and low-repetition warnings") {
  const Corpus& c = corpus();
  TrainConfig cfg = tiny_config("ce", 31);
  cfg.max_epochs = 2;
  ManifestTrainResult r = train_on_manifest(c.manifest, cfg);
  // 3 subjects x 4 reps = 12 per class; ceil(0.8*12)=10 train, 2 val
  CHECK(r.n_train == 26 * 10);
  CHECK(r.n_val == 26 * 2);
  CHECK_FALSE(r.outcome.stage2.epochs.empty());
}

TEST_SUITE_END();
