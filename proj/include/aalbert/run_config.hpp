// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: every tunable of a CLI run under a flat dotted key.
//
// Document format, one entry per line:
//   # comment
//   encoder.num_layers = 12
// Lists are comma separated (`probe.depths = linear,two_hidden`). Values are
// resolved as defaults, then a preset, then config files, then overrides;
// unknown keys are rejected with ConfigError naming the key.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aalbert/adamw.hpp"
#include "aalbert/attention_analysis.hpp"
#include "aalbert/data.hpp"
#include "aalbert/downstream.hpp"
#include "aalbert/encoder.hpp"
#include "aalbert/pretraining.hpp"
#include "aalbert/probing.hpp"

namespace aalbert {

struct RunConfig {
  EncoderConfig encoder;
  MaskPolicy mask;
  AdamWSettings optimizer;

  struct Pretrain {
    std::size_t steps = 500;
    std::size_t batch_size = 50;
    std::size_t warmup_steps = 0;
    std::size_t checkpoint_every = 0;
    std::uint64_t seed = 0;
  } pretrain;

  struct Data {
    std::string source = "synthetic";  // synthetic | manifest | directory
    std::string path;                  // manifest file or feature directory
    SyntheticCorpusSpec synthetic;
  } data;

  DownstreamSettings downstream;

  struct Probe {
    ProbeSettings settings;
    std::vector<ProbeDepth> depths{ProbeDepth::kLinear, ProbeDepth::kOneHidden, ProbeDepth::kTwoHidden};
    std::vector<ProbeTask> tasks{ProbeTask::kPhoneme, ProbeTask::kSpeaker};
    std::size_t hidden_width = 768;
  } probe;

  AttentionAnalysisSettings attention;

  struct Run {
    std::string output_dir = "run";
    std::string checkpoint;
    int threads = 1;
  } run;

  static std::vector<std::string> keys();
  static std::vector<std::string> presets();

  // Both throw ConfigError naming the key for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // `paper` keeps the defaults; `smoke` is the small desk-scale setup.
  void apply_preset(const std::string& name);
  // `origin` prefixes line-level error messages.
  void apply_document(const std::string& text, const std::string& origin = "config");
  void apply_file(const std::filesystem::path& path);
  // Every key, sorted, one `key = value` line each; apply_document restores it.
  std::string to_document() const;

  void validate() const;

  PretrainSettings pretrain_settings() const;
  DownstreamSettings downstream_settings() const;
  ProbeSettings probe_settings() const;
  AttentionAnalysisSettings attention_settings() const;
};

// The corpus named by `config.data`. Manifest and directory sources throw
// FormatError on unreadable input.
std::vector<UtteranceFeatures> load_corpus(const RunConfig& config);

}  // namespace aalbert
