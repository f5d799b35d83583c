// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "aalbert/errors.hpp"
#include "aalbert/run_config.hpp"

namespace aalbert {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "aalbert_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Invocation {
  int exit_code = -1;
  std::string out, err;
};

Invocation run_cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(AALBERT_CLI_PATH) + " " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Small synthetic corpus and encoder so each CLI run stays well under a second.
const char* kTiny =
    "--data.synthetic.num_speakers 3 --data.synthetic.utterances_per_speaker 10 "
    "--data.synthetic.min_frames 30 --data.synthetic.max_frames 45 --data.synthetic.min_segment 6 "
    "--data.synthetic.max_segment 12 --data.synthetic.target_dim 12 --encoder.target_dim 12 "
    "--layers 2 --hidden-dim 16 --heads-per-layer 2 --encoder.ff_dim 32 --encoder.max_sequence_length 64 "
    "--batch-size 4 --lr 1e-3 --pretrain.seed 2 --mask.seed 2";

TEST(RunConfig, KeysAreSortedAndDistinct) {
  const auto keys = RunConfig::keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(std::adjacent_find(keys.begin(), keys.end()), keys.end());
  EXPECT_NE(std::find(keys.begin(), keys.end(), "encoder.num_layers"), keys.end());
}

TEST(RunConfig, DocumentRoundTrip) {
  RunConfig a;
  a.apply_preset("smoke");
  a.set("probe.depths", "two_hidden,linear");
  a.set("attention.heads", "1,3");
  a.set("optimizer.beta2", "0.98");
  a.set("data.path", "/data/x");
  RunConfig b;
  b.apply_document(a.to_document());
  EXPECT_EQ(b.to_document(), a.to_document());
  EXPECT_EQ(b.probe.depths, (std::vector<ProbeDepth>{ProbeDepth::kTwoHidden, ProbeDepth::kLinear}));
  EXPECT_EQ(b.optimizer.beta2, 0.98);
}

TEST(RunConfig, DefaultsAndSmokePreset) {
  RunConfig c;
  EXPECT_EQ(c.optimizer.learning_rate, 5e-5);
  EXPECT_EQ(c.pretrain.batch_size, 50u);
  EXPECT_EQ(c.encoder.hidden_dim, 768u);
  c.apply_preset("smoke");
  EXPECT_EQ(c.encoder.hidden_dim, 64u);
  EXPECT_EQ(c.encoder.num_layers, 2u);
  EXPECT_TRUE(c.encoder.share_weights);
  EXPECT_EQ(c.pretrain.batch_size, 8u);
  EXPECT_EQ(c.pretrain.steps, 500u);
  EXPECT_THROW(c.apply_preset("huge"), ConfigError);
}

TEST(RunConfig, ErrorsNameTheKey) {
  RunConfig c;
  try {
    c.set("encoder.num_layer", "3");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.num_layer"), std::string::npos);
  }
  try {
    c.set("encoder.num_layers", "three");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.num_layers"), std::string::npos);
  }
  EXPECT_THROW(c.set("encoder.share_weights", "maybe"), ConfigError);
  EXPECT_THROW(c.set("downstream.fusion", "concat"), ConfigError);
  EXPECT_THROW(c.apply_document("encoder.num_layers 3\n"), ConfigError);
  EXPECT_NO_THROW(c.apply_document("# comment\n\nencoder.num_layers = 6  # trailing\n"));
  EXPECT_EQ(c.encoder.num_layers, 6u);
}

TEST(RunConfig, ValidateRejectsInconsistentSettings) {
  RunConfig c;
  c.data.source = "tape";
  EXPECT_THROW(c.validate(), ConfigError);
  c.data.source = "manifest";
  EXPECT_THROW(c.validate(), ConfigError);
  c.data.path = "m.csv";
  EXPECT_NO_THROW(c.validate());
  c.encoder.num_heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Cli, ReferenceTableMatchesReportedTotalsQuickly) {
  const auto dir = fresh_dir("reference_table");
  const auto start = std::chrono::steady_clock::now();
  const auto r = run_cli("count-params --paper-table", dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_LT(secs, 1.0);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "layers,param_sharing,parameters,reported,relative_error");
  int rows = 0;
  double reduction = 0.0;
  while (std::getline(lines, line)) {
    if (line.rfind("reduction_12_layers=", 0) == 0) {
      reduction = std::stod(line.substr(20));
      continue;
    }
    ++rows;
    const auto last = line.rfind(',');
    EXPECT_LE(std::abs(std::stod(line.substr(last + 1))), 0.05) << line;
  }
  EXPECT_EQ(rows, 6);
  EXPECT_GE(reduction, 0.90);
  EXPECT_LE(reduction, 0.925);
}

TEST(Cli, CountParamsForConfigAndCheckpointAgree) {
  const auto dir = fresh_dir("count");
  RunConfig c;
  c.apply_preset("smoke");
  const auto path = dir / "w.aalw";
  save_weights(init_encoder<float>(c.encoder, 1), path);
  const auto from_config = run_cli("count-params --preset smoke", dir);
  const auto from_file = run_cli("count-params --checkpoint '" + path.string() + "' --csv '" +
                                     (dir / "p.csv").string() + "'", dir);
  ASSERT_EQ(from_config.exit_code, 0) << from_config.err;
  ASSERT_EQ(from_file.exit_code, 0) << from_file.err;
  EXPECT_EQ(from_config.out, from_file.out);
  EXPECT_EQ(slurp(dir / "p.csv"), from_file.out);
  EXPECT_NE(from_file.out.find("total," + std::to_string(parameter_breakdown(c.encoder).total())), std::string::npos);
}

TEST(Cli, UnknownKeyExitsOneNamingIt) {
  const auto dir = fresh_dir("unknown_key");
  const auto r = run_cli("pretrain --synthetic --encoder.num_layrs 2 --run-dir '" + (dir / "run").string() + "'", dir);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.err, "error=config reason=\"unknown config key 'encoder.num_layrs'\"\n");
  EXPECT_FALSE(fs::exists(dir / "run"));

  std::ofstream(dir / "bad.cfg") << "pretrain.stepz = 4\n";
  const auto f = run_cli("count-params --config '" + (dir / "bad.cfg").string() + "'", dir);
  EXPECT_EQ(f.exit_code, 1);
  EXPECT_NE(f.err.find("pretrain.stepz"), std::string::npos);
}

TEST(Cli, ZeroStepsCheckpointEqualsInit) {
  const auto dir = fresh_dir("zero_steps");
  const auto run = dir / "run";
  const auto r = run_cli(std::string("pretrain --synthetic ") + kTiny + " --steps 0 --run-dir '" + run.string() + "'", dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  RunConfig resolved;
  resolved.apply_file(run / "config.resolved");
  const auto loaded = load_weights<float>(run / "checkpoints" / "step_000000.aalw");
  EXPECT_EQ(weights_checksum(loaded), weights_checksum(init_encoder<float>(resolved.encoder, 2)));
  EXPECT_EQ(slurp(run / "metrics" / "loss.csv"), "step,loss\n");
}

TEST(Cli, PretrainRunIsSelfDescribingAndReproducible) {
  const auto dir = fresh_dir("reproducible");
  const std::string args = std::string("pretrain --synthetic ") + kTiny + " --steps 6 --pretrain.checkpoint_every 3";
  const auto a = run_cli(args + " --run-dir '" + (dir / "a").string() + "'", dir);
  ASSERT_EQ(a.exit_code, 0) << a.err;
  // Replaying from the resolved config alone must give the same bytes.
  const auto b = run_cli("pretrain --config '" + (dir / "a" / "config.resolved").string() + "' --run-dir '" +
                             (dir / "b").string() + "'",
                         dir);
  ASSERT_EQ(b.exit_code, 0) << b.err;
  for (const char* f : {"config.resolved", "metrics/loss.csv", "checkpoints/step_000003.aalw",
                        "checkpoints/step_000006.aalw", "checkpoints/step_000006.aalo"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_NE(a.out.find("checkpoint="), std::string::npos);
}

TEST(Cli, TimestampedRunDirectoryLayout) {
  const auto dir = fresh_dir("layout");
  const auto r = run_cli(std::string("pretrain --synthetic ") + kTiny + " --steps 1 --output-dir '" +
                             (dir / "runs").string() + "'",
                         dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(dir / "runs")) runs.push_back(e.path());
  ASSERT_EQ(runs.size(), 1u);
  for (const char* sub : {"checkpoints", "metrics", "analysis"}) EXPECT_TRUE(fs::is_directory(runs[0] / sub));
  EXPECT_TRUE(fs::exists(runs[0] / "config.resolved"));
  EXPECT_EQ(runs[0].filename().string().size(), 16u);  // YYYYMMDDTHHMMSSZ
}

TEST(Cli, PrecedencePresetThenFileThenOverride) {
  const auto dir = fresh_dir("precedence");
  std::ofstream(dir / "a.cfg") << "encoder.num_layers = 5\nencoder.hidden_dim = 32\n";
  const auto r = run_cli("count-params --preset smoke --config '" + (dir / "a.cfg").string() +
                             "' --layers 7 --encoder.num_heads=8",
                         dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  RunConfig expected;
  expected.apply_preset("smoke");
  expected.encoder.num_layers = 7;
  expected.encoder.hidden_dim = 32;
  expected.encoder.num_heads = 8;
  EXPECT_NE(r.out.find("total," + std::to_string(parameter_breakdown(expected.encoder).total())), std::string::npos)
      << r.out;
}

TEST(Cli, DownstreamProbeAndAttentionWriteTheirOutputs) {
  const auto dir = fresh_dir("pipeline");
  ASSERT_EQ(run_cli(std::string("pretrain --synthetic ") + kTiny + " --steps 3 --run-dir '" + (dir / "pre").string() +
                        "'",
                    dir)
                .exit_code,
            0);
  const std::string ckpt = " --checkpoint '" + (dir / "pre" / "checkpoints" / "step_000003.aalw").string() + "'";

  const auto d = run_cli(std::string("downstream --synthetic ") + kTiny + ckpt +
                             " --task phoneme --mode fine_tune --fusion last_layer --downstream.epochs 2"
                             " --export-embeddings --run-dir '" + (dir / "ds").string() + "'",
                         dir);
  ASSERT_EQ(d.exit_code, 0) << d.err;
  const auto metrics = slurp(dir / "ds" / "metrics" / "downstream.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);
  EXPECT_NE(metrics.find("\nphoneme,fine_tune,last_layer,2,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "ds" / "checkpoints" / "fine_tuned.aalw"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "analysis" / "embeddings.csv"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "metrics" / "train_curve.csv"));

  const auto p = run_cli(std::string("probe --synthetic ") + kTiny + ckpt +
                             " --depths linear,one_hidden --tasks speaker --probe.hidden_width 8 --probe.epochs 1"
                             " --run-dir '" + (dir / "pr").string() + "'",
                         dir);
  ASSERT_EQ(p.exit_code, 0) << p.err;
  const auto report = slurp(dir / "pr" / "analysis" / "probe_report.csv");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 5);  // header + 2 layers x 2 depths

  const auto a = run_cli(std::string("analyze-attention --synthetic ") + kTiny + ckpt +
                             " --heads 1 --sample-size 4 --run-dir '" + (dir / "at").string() + "'",
                         dir);
  ASSERT_EQ(a.exit_code, 0) << a.err;
  EXPECT_TRUE(fs::exists(dir / "at" / "analysis" / "js_matrix_1.csv"));
  EXPECT_TRUE(fs::exists(dir / "at" / "analysis" / "js_matrix_avg.csv"));
  EXPECT_FALSE(fs::exists(dir / "at" / "analysis" / "js_matrix_0.csv"));
}

TEST(Cli, IncompatibleCheckpointExitsTwoWithBothWidths) {
  const auto dir = fresh_dir("incompatible");
  EncoderConfig c;
  c.num_layers = 1;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ff_dim = 16;
  c.input_dim = 40;
  c.target_dim = 12;
  c.max_sequence_length = 64;
  save_weights(init_encoder<float>(c, 1), dir / "w.aalw");
  const auto r = run_cli(std::string("downstream --synthetic ") + kTiny + " --checkpoint '" +
                             (dir / "w.aalw").string() + "' --run-dir '" + (dir / "run").string() + "'",
                         dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(r.err.rfind("error=data ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("40"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("160"), std::string::npos) << r.err;
}

TEST(Cli, MissingOrCorruptCheckpointExitsTwo) {
  const auto dir = fresh_dir("missing");
  const auto missing = run_cli("probe --synthetic --checkpoint '" + (dir / "nope.aalw").string() + "'", dir);
  EXPECT_EQ(missing.exit_code, 2);
  std::ofstream(dir / "junk.aalw") << "not a checkpoint";
  const auto junk = run_cli("analyze-attention --synthetic --checkpoint '" + (dir / "junk.aalw").string() + "'", dir);
  EXPECT_EQ(junk.exit_code, 2);
  EXPECT_EQ(junk.err.rfind("error=data kind=", 0), 0u) << junk.err;
  EXPECT_EQ(std::count(junk.err.begin(), junk.err.end(), '\n'), 1);
}

TEST(Cli, NonFiniteLossExitsThree) {
  const auto dir = fresh_dir("numeric");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 2;
  spec.utterances_per_speaker = 3;
  spec.min_frames = 30;
  spec.max_frames = 40;
  spec.min_segment = 6;
  spec.max_segment = 12;
  spec.target_dim = 12;
  auto corpus = generate_synthetic_corpus(spec);
  for (auto& u : corpus) u.target.values[0] = std::numeric_limits<float>::quiet_NaN();
  const auto manifest = export_corpus(corpus, dir / "features");
  const auto r = run_cli(std::string("pretrain ") + kTiny + " --manifest '" + manifest.string() +
                             "' --steps 3 --run-dir '" + (dir / "run").string() + "'",
                         dir);
  EXPECT_EQ(r.exit_code, 3) << r.err;
  EXPECT_EQ(r.err.rfind("error=numeric step=", 0), 0u) << r.err;
}

TEST(Cli, BadFlagValueExitsOne) {
  const auto dir = fresh_dir("bad_flag");
  EXPECT_EQ(run_cli("pretrain --threads 0", dir).exit_code, 1);
  EXPECT_EQ(run_cli("count-params --layers", dir).exit_code, 1);
  EXPECT_EQ(run_cli("", dir).exit_code, 1);
}

}  // namespace
}  // namespace aalbert
