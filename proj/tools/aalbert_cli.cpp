// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// aalbert: pre-training, downstream evaluation, probing and attention analysis.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric abort.
// Failures print one line on stderr: `error=<kind> [field=value ...] reason="..."`,
// e.g. `error=numeric step=41 reason="..."` or `error=data kind=checksum reason="..."`.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aalbert/binary_io.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/log.hpp"
#include "aalbert/run_config.hpp"

namespace fs = std::filesystem;
using namespace aalbert;

namespace {

enum ExitCode { kOk = 0, kConfigFailure = 1, kDataFailure = 2, kNumericFailure = 3 };

struct CommonOptions {
  std::vector<std::string> config_files;
  std::string preset;
  std::string run_dir;
  std::string checkpoint;
  int threads = 0;
  bool synthetic = false;
  bool verbose = false;
};

// Shorthands accepted next to the dotted keys.
const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table{
      {"layers", "encoder.num_layers"},     {"share-weights", "encoder.share_weights"},
      {"hidden-dim", "encoder.hidden_dim"}, {"heads-per-layer", "encoder.num_heads"},
      {"steps", "pretrain.steps"},          {"batch-size", "pretrain.batch_size"},
      {"lr", "optimizer.learning_rate"},    {"task", "downstream.task"},
      {"mode", "downstream.mode"},          {"fusion", "downstream.fusion"},
      {"depths", "probe.depths"},           {"tasks", "probe.tasks"},
      {"heads", "attention.heads"},         {"sample-size", "attention.sample_size"},
      {"output-dir", "run.output_dir"},
  };
  return table;
}

// `--key value` or `--key=value` pairs left over after the declared options.
void apply_overrides(RunConfig& config, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& token = extras[i];
    if (token.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + token + "'");
    std::string key = token.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else if (i + 1 < extras.size()) {
      value = extras[++i];
    } else {
      throw ConfigError("missing value for '--" + key + "'");
    }
    if (key == "manifest") {
      config.set("data.source", "manifest");
      config.set("data.path", value);
      continue;
    }
    if (const auto it = aliases().find(key); it != aliases().end()) key = it->second;
    config.set(key, value);
  }
}

RunConfig resolve(const CommonOptions& o, const std::vector<std::string>& extras) {
  RunConfig config;
  if (!o.preset.empty()) config.apply_preset(o.preset);
  for (const auto& f : o.config_files) config.apply_file(f);
  apply_overrides(config, extras);
  if (o.synthetic) config.data.source = "synthetic";
  if (o.threads > 0) config.run.threads = o.threads;
  if (!o.checkpoint.empty()) config.run.checkpoint = o.checkpoint;
  config.validate();
  return config;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

// run/<timestamp>/{config.resolved, checkpoints/, metrics/, analysis/}
fs::path make_run_dir(const RunConfig& config, const std::string& explicit_dir) {
  fs::path dir = explicit_dir;
  if (dir.empty()) {
    const fs::path base = fs::path(config.run.output_dir) / timestamp();
    dir = base;
    for (int n = 2; fs::exists(dir); ++n) dir = base.string() + "-" + std::to_string(n);
  }
  for (const char* sub : {"checkpoints", "metrics", "analysis"}) fs::create_directories(dir / sub);
  write_text_atomic(dir / "config.resolved", config.to_document());
  std::cout << "run_dir=" << dir.string() << "\n";
  return dir;
}

EncoderWeights<float> load_checkpoint(const RunConfig& config) {
  if (config.run.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_weights<float>(config.run.checkpoint);
}

int cmd_pretrain(const RunConfig& config, const std::string& run_dir) {
  const auto corpus = load_corpus(config);
  const auto dir = make_run_dir(config, run_dir);
  auto settings = config.pretrain_settings();
  settings.checkpoint_dir = dir / "checkpoints";
  settings.loss_csv = dir / "metrics" / "loss.csv";
  const auto result = pretrain(corpus, config.encoder, config.mask, settings);
  std::cout << "checkpoint=" << result.last_checkpoint.string() << "\n";
  if (!result.losses.empty()) {
    std::printf("first_loss=%.6f final_loss=%.6f\n", result.losses.front(), result.losses.back());
  }
  return kOk;
}

int cmd_downstream(const RunConfig& config, const std::string& run_dir, bool raw_baseline, bool export_embeddings) {
  const auto corpus = load_corpus(config);
  const auto settings = config.downstream_settings();
  std::optional<EncoderWeights<float>> encoder;
  if (!raw_baseline) encoder = load_checkpoint(config);
  const auto dir = make_run_dir(config, run_dir);
  const auto result = raw_baseline ? train_raw_baseline(corpus, settings) : train_downstream(*encoder, corpus, settings);

  std::string curve = "epoch,train_loss,dev_accuracy\n";
  char line[96];
  for (std::size_t e = 0; e < result.train_loss.size(); ++e) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f\n", e + 1, result.train_loss[e], result.dev_accuracy[e]);
    curve += line;
  }
  write_text_atomic(dir / "metrics" / "train_curve.csv", curve);

  MetricsRow row;
  row.task = settings.task;
  row.mode = raw_baseline ? TrainMode::kFeatureExtraction : settings.mode;
  row.fusion = raw_baseline ? FusionMode::kLastLayer : settings.fusion;
  row.layer_count = raw_baseline ? 0 : encoder->config.num_layers;
  row.test_accuracy = result.test_accuracy;
  append_metrics_row(dir / "metrics" / "downstream.csv", row);
  if (result.encoder) save_weights(*result.encoder, dir / "checkpoints" / "fine_tuned.aalw");
  if (export_embeddings && encoder) {
    const auto& source = result.encoder ? *result.encoder : *encoder;
    export_pooled_embeddings(source, result.fusion, corpus, dir / "analysis" / "embeddings.csv",
                             settings.downsample_factor, settings.threads);
  }
  std::printf("best_epoch=%zu test_accuracy=%.6f max_fusion_weight_error=%.3g\n", result.best_epoch,
              result.test_accuracy, result.max_fusion_weight_error);
  return kOk;
}

int cmd_probe(const RunConfig& config, const std::string& run_dir) {
  const auto corpus = load_corpus(config);
  const auto encoder = load_checkpoint(config);
  const auto dir = make_run_dir(config, run_dir);
  const auto report = probe_sweep(encoder, corpus, config.probe.depths, config.probe.tasks, config.probe_settings(),
                                  config.probe.hidden_width, fs::path(config.run.checkpoint).filename().string());
  const auto path = dir / "analysis" / "probe_report.csv";
  write_text_atomic(path, report.to_csv());
  std::cout << "probe_report=" << path.string() << "\n";
  return kOk;
}

int cmd_analyze_attention(const RunConfig& config, const std::string& run_dir) {
  const auto corpus = load_corpus(config);
  const auto encoder = load_checkpoint(config);
  const auto dir = make_run_dir(config, run_dir);
  const auto analysis = build_js_matrices(encoder, corpus, config.attention_settings());
  for (const auto& p : write_js_matrices(analysis, dir / "analysis")) std::cout << "matrix=" << p.string() << "\n";
  return kOk;
}

int cmd_count_params(const RunConfig& config, bool paper_table, const std::string& csv_path) {
  std::string out;
  char line[128];
  if (paper_table) {
    struct Row {
      std::size_t layers;
      bool shared;
      double reported;
    };
    const Row rows[] = {{3, true, 7.4e6},   {6, true, 7.4e6},   {12, true, 7.4e6},
                        {3, false, 21.6e6}, {6, false, 44.4e6}, {12, false, 84.3e6}};
    out = "layers,param_sharing,parameters,reported,relative_error\n";
    for (const auto& r : rows) {
      EncoderConfig c;  // 768 hidden, 12 heads, 3072 feed-forward, 160 inputs
      c.num_layers = r.layers;
      c.share_weights = r.shared;
      const double total = static_cast<double>(parameter_breakdown(c).total());
      std::snprintf(line, sizeof(line), "%zu,%s,%.0f,%.0f,%+.4f\n", r.layers, r.shared ? "shared" : "unshared", total,
                    r.reported, (total - r.reported) / r.reported);
      out += line;
    }
    EncoderConfig shared, unshared;
    shared.num_layers = unshared.num_layers = 12;
    unshared.share_weights = false;
    const double ratio = 1.0 - static_cast<double>(parameter_breakdown(shared).total()) /
                                   static_cast<double>(parameter_breakdown(unshared).total());
    std::snprintf(line, sizeof(line), "reduction_12_layers=%.4f\n", ratio);
    std::cout << out << line;
  } else {
    const auto b = config.run.checkpoint.empty() ? parameter_breakdown(config.encoder)
                                                 : count_parameters(load_checkpoint(config));
    out = "component,parameters\n";
    out += "input_projection," + std::to_string(b.input_projection) + "\n";
    out += "layer_blocks," + std::to_string(b.layer_blocks()) + "\n";
    out += "reconstruction_head," + std::to_string(b.reconstruction_head) + "\n";
    out += "total," + std::to_string(b.total()) + "\n";
    std::cout << out;
  }
  if (!csv_path.empty()) write_text_atomic(csv_path, out);
  return kOk;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

int fail(const std::string& kind, const std::string& reason, int code) {
  std::cerr << "error=" << kind << " reason=\"" << one_line(reason) << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AALBERT: shared-layer transformer pre-training and analysis"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_files, "Config file(s) applied in order");
    sub->add_option("--preset", common.preset, "Preset applied before config files (paper, smoke)");
    sub->add_option("--run-dir", common.run_dir, "Exact output directory instead of run/<timestamp>");
    sub->add_option("--threads", common.threads, "Worker thread cap")->check(CLI::PositiveNumber);
    sub->add_flag("--synthetic", common.synthetic, "Use the synthetic corpus");
    sub->add_flag("-v,--verbose", common.verbose, "Log progress");
    sub->allow_extras();
    sub->footer("Any config key can be overridden with --<key> <value>, e.g. --encoder.num_layers 6.");
  };

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked reconstruction pre-training");
  add_common(pretrain_cmd);

  bool raw_baseline = false, export_embeddings = false;
  auto* downstream_cmd = app.add_subcommand("downstream", "Phoneme or speaker classification on a checkpoint");
  add_common(downstream_cmd);
  downstream_cmd->add_option("--checkpoint", common.checkpoint, "Weight file (.aalw)");
  downstream_cmd->add_flag("--raw-baseline", raw_baseline, "Train the same head on the input features instead");
  downstream_cmd->add_flag("--export-embeddings", export_embeddings, "Write mean-pooled fused representations");

  auto* probe_cmd = app.add_subcommand("probe", "Layer-wise probes on a frozen checkpoint");
  add_common(probe_cmd);
  probe_cmd->add_option("--checkpoint", common.checkpoint, "Weight file (.aalw)")->required();

  auto* attention_cmd = app.add_subcommand("analyze-attention", "JS divergence between layers' attention");
  add_common(attention_cmd);
  attention_cmd->add_option("--checkpoint", common.checkpoint, "Weight file (.aalw)")->required();

  bool paper_table = false;
  std::string csv_path;
  auto* count_cmd = app.add_subcommand("count-params", "Parameter counts for a config or checkpoint");
  add_common(count_cmd);
  count_cmd->add_option("--checkpoint", common.checkpoint, "Weight file (.aalw)");
  count_cmd->add_flag("--paper-table", paper_table, "Reference configurations: 3/6/12 layers, shared and unshared");
  count_cmd->add_option("--csv", csv_path, "Also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", e.what(), kConfigFailure);
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    log::set_verbose(common.verbose);
    const auto config = resolve(common, active->remaining());
    if (active == pretrain_cmd) return cmd_pretrain(config, common.run_dir);
    if (active == downstream_cmd) return cmd_downstream(config, common.run_dir, raw_baseline, export_embeddings);
    if (active == probe_cmd) return cmd_probe(config, common.run_dir);
    if (active == attention_cmd) return cmd_analyze_attention(config, common.run_dir);
    return cmd_count_params(config, paper_table, csv_path);
  } catch (const NumericError& e) {
    return fail("numeric step=" + std::to_string(e.step()), e.what(), kNumericFailure);
  } catch (const FormatError& e) {
    return fail(std::string("data kind=") + to_string(e.kind()), e.what(), kDataFailure);
  } catch (const fs::filesystem_error& e) {
    return fail("data", e.what(), kDataFailure);
  } catch (const std::invalid_argument& e) {
    return fail("config", e.what(), kConfigFailure);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kConfigFailure);
  }
}
