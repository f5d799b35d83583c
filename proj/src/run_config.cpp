// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "aalbert/errors.hpp"

namespace aalbert {

namespace {

template <typename C, typename F>
void for_each_field(C& c, F&& f) {
  f("encoder.num_layers", c.encoder.num_layers);
  f("encoder.hidden_dim", c.encoder.hidden_dim);
  f("encoder.num_heads", c.encoder.num_heads);
  f("encoder.ff_dim", c.encoder.ff_dim);
  f("encoder.input_dim", c.encoder.input_dim);
  f("encoder.target_dim", c.encoder.target_dim);
  f("encoder.share_weights", c.encoder.share_weights);
  f("encoder.dropout_rate", c.encoder.dropout_rate);
  f("encoder.max_sequence_length", c.encoder.max_sequence_length);

  f("mask.select_fraction", c.mask.select_fraction);
  f("mask.zero_prob", c.mask.zero_prob);
  f("mask.replace_prob", c.mask.replace_prob);
  f("mask.keep_prob", c.mask.keep_prob);
  f("mask.downsample_factor", c.mask.downsample_factor);
  f("mask.downsample_mode", c.mask.downsample_mode);
  f("mask.seed", c.mask.seed);

  f("optimizer.learning_rate", c.optimizer.learning_rate);
  f("optimizer.beta1", c.optimizer.beta1);
  f("optimizer.beta2", c.optimizer.beta2);
  f("optimizer.epsilon", c.optimizer.epsilon);
  f("optimizer.weight_decay", c.optimizer.weight_decay);

  f("pretrain.steps", c.pretrain.steps);
  f("pretrain.batch_size", c.pretrain.batch_size);
  f("pretrain.warmup_steps", c.pretrain.warmup_steps);
  f("pretrain.checkpoint_every", c.pretrain.checkpoint_every);
  f("pretrain.seed", c.pretrain.seed);

  f("data.source", c.data.source);
  f("data.path", c.data.path);
  f("data.synthetic.num_speakers", c.data.synthetic.num_speakers);
  f("data.synthetic.num_phone_classes", c.data.synthetic.num_phone_classes);
  f("data.synthetic.utterances_per_speaker", c.data.synthetic.utterances_per_speaker);
  f("data.synthetic.min_frames", c.data.synthetic.min_frames);
  f("data.synthetic.max_frames", c.data.synthetic.max_frames);
  f("data.synthetic.min_segment", c.data.synthetic.min_segment);
  f("data.synthetic.max_segment", c.data.synthetic.max_segment);
  f("data.synthetic.target_dim", c.data.synthetic.target_dim);
  f("data.synthetic.noise", c.data.synthetic.noise);
  f("data.synthetic.voiced_gain", c.data.synthetic.voiced_gain);
  f("data.synthetic.unvoiced_gain", c.data.synthetic.unvoiced_gain);
  f("data.synthetic.seed", c.data.synthetic.seed);

  f("downstream.task", c.downstream.task);
  f("downstream.mode", c.downstream.mode);
  f("downstream.fusion", c.downstream.fusion);
  f("downstream.learning_rate", c.downstream.learning_rate);
  f("downstream.weight_decay", c.downstream.weight_decay);
  f("downstream.epochs", c.downstream.epochs);
  f("downstream.batch_size", c.downstream.batch_size);
  f("downstream.patience", c.downstream.patience);
  f("downstream.phoneme_hidden", c.downstream.phoneme_hidden);
  f("downstream.downsample_factor", c.downstream.downsample_factor);
  f("downstream.seed", c.downstream.seed);

  f("probe.depths", c.probe.depths);
  f("probe.tasks", c.probe.tasks);
  f("probe.hidden_width", c.probe.hidden_width);
  f("probe.learning_rate", c.probe.settings.learning_rate);
  f("probe.epochs", c.probe.settings.epochs);
  f("probe.patience", c.probe.settings.patience);
  f("probe.batch_size", c.probe.settings.batch_size);
  f("probe.max_frames", c.probe.settings.max_frames);
  f("probe.downsample_factor", c.probe.settings.downsample_factor);
  f("probe.seed", c.probe.settings.seed);

  f("attention.sample_size", c.attention.sample_size);
  f("attention.heads", c.attention.heads);
  f("attention.downsample_factor", c.attention.downsample_factor);
  f("attention.seed", c.attention.seed);

  f("run.output_dir", c.run.output_dir);
  f("run.checkpoint", c.run.checkpoint);
  f("run.threads", c.run.threads);
}

std::string format(std::size_t v) { return std::to_string(v); }
std::string format(int v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
std::string format(DownsampleMode v) { return v == DownsampleMode::kDecimate ? "decimate" : "stack"; }
std::string format(DownstreamTask v) { return to_string(v); }
std::string format(TrainMode v) { return to_string(v); }
std::string format(FusionMode v) { return to_string(v); }
std::string format(ProbeDepth v) { return to_string(v); }
std::string format(ProbeTask v) { return to_string(v); }

template <typename T>
std::string format(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format(v[i]);
  return out;
}

[[noreturn]] void bad_value(const std::string& expected) { throw ConfigError(expected); }

template <typename Int>
void parse_integer(const std::string& text, Int& out) {
  Int v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size()) bad_value("expected an integer");
  out = v;
}

void parse(const std::string& text, std::size_t& out) { parse_integer(text, out); }
void parse(const std::string& text, int& out) { parse_integer(text, out); }
void parse(const std::string& text, double& out) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size()) bad_value("expected a number");
  out = v;
}
void parse(const std::string& text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    bad_value("expected true or false");
  }
}
void parse(const std::string& text, std::string& out) { out = text; }
void parse(const std::string& text, DownsampleMode& out) {
  if (text == "decimate") {
    out = DownsampleMode::kDecimate;
  } else if (text == "stack") {
    out = DownsampleMode::kStack;
  } else {
    bad_value("expected decimate or stack");
  }
}
void parse(const std::string& text, DownstreamTask& out) { out = parse_task(text); }
void parse(const std::string& text, TrainMode& out) { out = parse_train_mode(text); }
void parse(const std::string& text, FusionMode& out) { out = parse_fusion_mode(text); }
void parse(const std::string& text, ProbeDepth& out) { out = parse_probe_depth(text); }
void parse(const std::string& text, ProbeTask& out) { out = parse_probe_task(text); }

template <typename T>
void parse(const std::string& text, std::vector<T>& out) {
  std::vector<T> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    T v{};
    parse(item, v);
    items.push_back(v);
  }
  out = std::move(items);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> out;
  for_each_field(c, [&](const char* key, auto&) { out.emplace_back(key); });
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> RunConfig::presets() { return {"paper", "smoke"}; }

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  for_each_field(*this, [&](const char* k, auto& field) {
    if (found || key != k) return;
    found = true;
    try {
      parse(trim(value), field);
    } catch (const ConfigError& e) {
      throw ConfigError("bad value '" + value + "' for config key '" + key + "': " + e.what());
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  std::string out;
  bool found = false;
  for_each_field(*this, [&](const char* k, const auto& field) {
    if (!found && key == k) {
      found = true;
      out = format(field);
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
  return out;
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "paper") return;
  if (name != "smoke") throw ConfigError("unknown preset '" + name + "' (expected paper or smoke)");
  encoder.num_layers = 2;
  encoder.hidden_dim = 64;
  encoder.num_heads = 4;
  encoder.ff_dim = 256;
  encoder.share_weights = true;
  encoder.dropout_rate = 0.1;
  optimizer.learning_rate = 2e-3;
  pretrain.steps = 500;
  pretrain.batch_size = 8;
  pretrain.seed = 1;
  mask.seed = 1;
  downstream.seed = 1;
  probe.settings.seed = 1;
  attention.seed = 1;
}

void RunConfig::apply_document(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto content = trim(line.substr(0, line.find('#')));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    set(trim(content.substr(0, eq)), trim(content.substr(eq + 1)));
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_document(ss.str(), path.string());
}

std::string RunConfig::to_document() const {
  std::string out;
  for (const auto& key : keys()) out += key + " = " + get(key) + "\n";
  return out;
}

void RunConfig::validate() const {
  encoder.validate();
  mask.validate();
  if (data.source == "synthetic") {
    data.synthetic.validate();
  } else if (data.source == "manifest" || data.source == "directory") {
    if (data.path.empty()) throw ConfigError("data.path must be set for data.source = " + data.source);
  } else {
    throw ConfigError("data.source must be synthetic, manifest or directory, got '" + data.source + "'");
  }
  if (pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  if (run.threads < 1) throw ConfigError("run.threads must be at least 1");
  if (probe.depths.empty()) throw ConfigError("probe.depths must not be empty");
  if (probe.tasks.empty()) throw ConfigError("probe.tasks must not be empty");
  if (attention.sample_size == 0) throw ConfigError("attention.sample_size must be positive");
}

PretrainSettings RunConfig::pretrain_settings() const {
  PretrainSettings s;
  s.steps = pretrain.steps;
  s.batch_size = pretrain.batch_size;
  s.optimizer = optimizer;
  s.warmup_steps = pretrain.warmup_steps;
  s.checkpoint_every = pretrain.checkpoint_every;
  s.seed = pretrain.seed;
  s.threads = run.threads;
  return s;
}

DownstreamSettings RunConfig::downstream_settings() const {
  auto s = downstream;
  s.threads = run.threads;
  return s;
}

ProbeSettings RunConfig::probe_settings() const {
  auto s = probe.settings;
  s.threads = run.threads;
  return s;
}

AttentionAnalysisSettings RunConfig::attention_settings() const {
  auto s = attention;
  s.threads = run.threads;
  return s;
}

std::vector<UtteranceFeatures> load_corpus(const RunConfig& config) {
  if (config.data.source == "synthetic") return generate_synthetic_corpus(config.data.synthetic);
  if (config.data.source == "manifest") return load_manifest_corpus(config.data.path);
  auto ingested = ingest_directory(config.data.path);
  if (ingested.utterances.empty()) {
    throw FormatError(FormatError::Kind::kIo, "no readable feature files in " + config.data.path);
  }
  return std::move(ingested.utterances);
}

}  // namespace aalbert
