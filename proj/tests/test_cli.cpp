#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string cli_path() {
  if (const char* env = std::getenv("SCLAIR_CLI")) return env;
  return "./sclair";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Runs the CLI with the given argument string; captures exit code and both
// output streams through scratch files.
RunResult run(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  fs::create_directories("tmp_test_cli");
  const std::string out = "tmp_test_cli/out" + std::to_string(counter) + ".txt";
  const std::string err = "tmp_test_cli/err" + std::to_string(counter) + ".txt";
  ++counter;
  const std::string cmd =
      env_prefix + cli_path() + " " + args + " >" + out + " 2>" + err;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = (raw == -1) ? -1 : WEXITSTATUS(raw);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return json::parse(in);
}

// Shared tiny corpus + source model built once; later cases reuse them.
struct CliRig {
  fs::path dir = "tmp_test_cli/rig";
  fs::path manifest;        // 3 subjects x 4 reps
  fs::path target_manifest; // 2 subjects x 5 reps, shifted jitter population
  fs::path model;           // ce-trained checkpoint on `manifest`
  fs::path train_report;
};

const CliRig& rig() {
  static CliRig r = [] {
    CliRig out;
    fs::remove_all(out.dir);
    fs::create_directories(out.dir);

    RunResult synth = run("synth --subjects 3 --reps 4 --seed 5 --out " +
                          (out.dir / "src").string());
    REQUIRE(synth.exit_code == 0);
    out.manifest = out.dir / "src" / "manifest.json";
    REQUIRE(fs::exists(out.manifest));

    RunResult target = run(
        "synth --subjects 2 --reps 5 --seed 5 --subject-prefix T "
        "--phase-lo 0.6 --phase-hi 1.2 --amp-lo 1.1 --amp-hi 1.5 --out " +
        (out.dir / "tgt").string());
    REQUIRE(target.exit_code == 0);
    out.target_manifest = out.dir / "tgt" / "manifest.json";

    out.model = out.dir / "model.sclr";
    out.train_report = out.dir / "train.json";
    RunResult train = run("train --manifest " + out.manifest.string() +
                          " --loss ce --max-epochs 2 --seed 9 --out " +
                          out.model.string() + " --report " +
                          out.train_report.string());
    REQUIRE(train.exit_code == 0);
    REQUIRE(fs::exists(out.model));
    return out;
  }();
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage surface: help exits 0, missing or unknown subcommands exit 1") {
  CHECK(run("--help").exit_code == 0);
  CHECK(run("--version").exit_code == 0);
  CHECK(run("").exit_code == 1);
  CHECK(run("frobnicate").exit_code == 1);
  CHECK(run("train").exit_code == 1);  // --manifest is required
}

TEST_CASE("synth: deterministic corpus; single-subject request is a usage error") {
  const CliRig& r = rig();
  json m = load_json(r.manifest);
  CHECK(m["samples"].size() == 26 * 3 * 4);

  RunResult again = run("synth --subjects 3 --reps 4 --seed 5 --out " +
                        (r.dir / "src2").string());
  CHECK(again.exit_code == 0);
  CHECK(slurp(r.dir / "src2" / "manifest.json") == slurp(r.manifest));
  // stdout names the manifest for pipelines to consume
  CHECK(again.out.find("manifest.json") != std::string::npos);

  RunResult solo = run("synth --subjects 1 --out " + (r.dir / "solo").string());
  CHECK(solo.exit_code == 1);
  CHECK(solo.err.find("leave-one-subject-out") != std::string::npos);
}

TEST_CASE("train: report echoes resolved defaults and writes a loadable checkpoint") {
  const CliRig& r = rig();
  json rep = load_json(r.train_report);
  CHECK(rep["mode"] == "train");
  CHECK(rep["config"]["tau"] == 0.1);
  CHECK(rep["config"]["batch_size"] == 32);
  CHECK(rep["config"]["patience"] == 5);
  CHECK(rep["config"]["loss_mode"] == "ce");
  CHECK(rep["config"]["arch"] == "1dcnn");
  CHECK(rep["config"]["seed"] == 9);
  CHECK(rep.contains("version"));
  CHECK(rep["param_counts"]["proj_params"] == 0);  // ce builds no projection
  CHECK(rep["param_counts"]["inference"] == 526706);
  CHECK(rep.contains("ce"));
  CHECK_FALSE(rep.contains("stage1"));
}

TEST_CASE("train: contrastive mode reports both stages and the projection size") {
  const CliRig& r = rig();
  fs::path report = r.dir / "train_scl.json";
  RunResult t = run("train --manifest " + r.manifest.string() +
                    " --loss scl --max-epochs 2 --seed 9 --report " + report.string());
  CHECK(t.exit_code == 0);
  json rep = load_json(report);
  CHECK(rep["param_counts"]["proj_params"] == 20608);
  CHECK(rep.contains("stage1"));
  CHECK(rep.contains("stage2"));
  CHECK(rep["config"]["loss_mode"] == "scl");
}

TEST_CASE("seed resolution: flag beats environment beats the built-in default") {
  const CliRig& r = rig();
  fs::path report = r.dir / "seed_env.json";
  RunResult env_run = run("train --manifest " + r.manifest.string() +
                              " --loss ce --max-epochs 1 --report " + report.string(),
                          "SCLAIR_SEED=1234 ");
  CHECK(env_run.exit_code == 0);
  CHECK(load_json(report)["config"]["seed"] == 1234);

  RunResult flag_run = run("train --manifest " + r.manifest.string() +
                               " --loss ce --max-epochs 1 --seed 7 --report " +
                               report.string(),
                           "SCLAIR_SEED=1234 ");
  CHECK(flag_run.exit_code == 0);
  CHECK(load_json(report)["config"]["seed"] == 7);

  RunResult bad = run("train --manifest " + r.manifest.string(), "SCLAIR_SEED=banana ");
  CHECK(bad.exit_code == 1);
}

TEST_CASE("eval: self-evaluation report, capped confusion list, embeddings export") {
  const CliRig& r = rig();
  fs::path report = r.dir / "eval.json";
  fs::path emb = r.dir / "emb.csv";
  RunResult e = run("eval --model " + r.model.string() + " --manifest " +
                    r.manifest.string() + " --confusions 3 --embeddings " +
                    emb.string() + " --report " + report.string());
  CHECK(e.exit_code == 0);
  json rep = load_json(report);
  CHECK(rep["config"]["mode"] == "eval");
  const double acc = rep["pooled_accuracy"].get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(rep["top_confusions"].size() <= 3);
  CHECK(rep["per_subject"].size() == 3);

  std::ifstream emb_in(emb);
  REQUIRE(emb_in.good());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(emb_in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 1 + 26 * 3 * 4);  // header + one row per sample

  RunResult missing = run("eval --model tmp_test_cli/nonexistent.sclr --manifest " +
                          r.manifest.string());
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("nonexistent.sclr") != std::string::npos);
}

TEST_CASE("loso: per-subject accuracies, confusion CSV, byte-stable reports") {
  const CliRig& r = rig();
  fs::path rep1 = r.dir / "loso1.json";
  fs::path rep2 = r.dir / "loso2.json";
  const std::string flags = "loso --manifest " + r.manifest.string() +
                            " --loss ce --max-epochs 1 --seed 3 --omit-timing";
  RunResult a = run(flags + " --report " + rep1.string());
  CHECK(a.exit_code == 0);
  json rep = load_json(rep1);
  CHECK(rep["mode"] == "loso");
  CHECK(rep["per_subject"].size() == 3);
  CHECK(rep["confusion"].size() == 26);
  CHECK(rep["wall_clock_s"] == 0.0);  // --omit-timing pins the only nondeterminism

  fs::path csv = rep1;
  csv.replace_extension(".confusion.csv");
  REQUIRE(fs::exists(csv));
  std::ifstream csv_in(csv);
  std::string header;
  std::getline(csv_in, header);
  CHECK(header.rfind("true\\pred,A,", 0) == 0);

  RunResult b = run(flags + " --report " + rep2.string());
  CHECK(b.exit_code == 0);
  CHECK(slurp(rep1) == slurp(rep2));
}

TEST_CASE("finetune: zero-shot and finetuned sections share the frozen encoder") {
  const CliRig& r = rig();
  fs::path report = r.dir / "finetune.json";
  RunResult f = run("finetune --model " + r.model.string() + " --manifest " +
                    r.target_manifest.string() + " --max-epochs 2 --seed 13 --report " +
                    report.string());
  CHECK(f.exit_code == 0);
  json rep = load_json(report);
  CHECK(rep["mode"] == "finetune");
  REQUIRE(rep.contains("zero_shot"));
  REQUIRE(rep.contains("finetuned"));
  CHECK(rep.contains("encoder_hash"));
  CHECK(rep["zero_shot"].contains("pooled_accuracy"));
  CHECK(rep["finetuned"].contains("mean_accuracy"));
  CHECK(rep["finetuned"]["per_subject"].size() == 2);

  RunResult missing = run("finetune --model tmp_test_cli/ghost.sclr --manifest " +
                          r.target_manifest.string());
  CHECK(missing.exit_code == 2);
}

TEST_CASE("gradcheck: every check listed with its error; sabotage trips exit 3") {
  RunResult ok = run("gradcheck --seed 0");
  CHECK(ok.exit_code == 0);
  std::size_t pass_lines = 0;
  std::istringstream lines(ok.out);
  std::string line;
  while (std::getline(lines, line))
    if (line.find(" PASS") != std::string::npos) ++pass_lines;
  CHECK(pass_lines >= 13);
  CHECK(ok.out.find("supcon_grad_anchor vs closed form") != std::string::npos);
  CHECK(ok.out.find("supcon_grad_total vs finite differences") != std::string::npos);

  RunResult bad = run("gradcheck --seed 0 --inject-bug");
  CHECK(bad.exit_code == 3);
  CHECK(bad.out.find("FAIL") != std::string::npos);

  RunResult arch = run("gradcheck --arch 1dcnn-bilstm --seed 2");
  CHECK(arch.exit_code == 0);
}

TEST_CASE("report: renders an existing result file for human reading") {
  const CliRig& r = rig();
  RunResult p = run("report --in " + r.train_report.string());
  CHECK(p.exit_code == 0);
  CHECK(p.out.find("mode train") != std::string::npos);
  CHECK(p.out.find("best epoch") != std::string::npos);

  RunResult missing = run("report --in tmp_test_cli/ghost.json");
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("ghost.json") != std::string::npos);
}

TEST_SUITE_END();
