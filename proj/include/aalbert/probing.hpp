// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Frame-level probes on frozen layer representations.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aalbert/data.hpp"
#include "aalbert/encoder.hpp"

namespace aalbert {

enum class ProbeDepth { kLinear, kOneHidden, kTwoHidden };
enum class ProbeTask { kPhoneme, kSpeaker };
// kGaussianNoise replaces the representations with N(0,1) draws of the same
// shape, a control that carries no information about the labels.
enum class ProbeInput { kEncoder, kGaussianNoise };

const char* to_string(ProbeDepth depth);
const char* to_string(ProbeTask task);
ProbeDepth parse_probe_depth(const std::string& name);
ProbeTask parse_probe_task(const std::string& name);

struct ProbeConfig {
  ProbeDepth depth = ProbeDepth::kLinear;
  ProbeTask task = ProbeTask::kPhoneme;
  std::size_t layer = 1;  // 1..L
  std::size_t hidden_width = 768;
  ProbeInput input = ProbeInput::kEncoder;
};

struct ProbeSettings {
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::size_t batch_size = 256;
  // Each split is subsampled to at most this many frames.
  std::size_t max_frames = 200000;
  std::size_t downsample_factor = 3;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  // Most frequent training label, scored on the test frames.
  double majority_accuracy = 0.0;
  std::vector<double> dev_accuracy;
  std::size_t train_frames = 0;
};

// Trains a probe on layer `config.layer` of the frozen encoder (train split),
// keeps the epoch with the best dev accuracy and scores the test split.
// Throws ConfigError for a layer outside 1..L.
ProbeResult run_probe(const EncoderWeights<float>& encoder, const ProbeConfig& config,
                      const std::vector<UtteranceFeatures>& corpus, const ProbeSettings& settings);

struct ProbeCell {
  std::size_t layer = 0;
  ProbeDepth depth = ProbeDepth::kLinear;
  ProbeTask task = ProbeTask::kPhoneme;
  double accuracy = 0.0;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  std::string model_id;
  std::vector<ProbeCell> cells;  // layer-major, then task, then depth

  // `layer,depth,task,accuracy,seed`
  std::string to_csv() const;
};

// Every (layer, task, depth) cell over layers 1..L. The encoder runs once; cells
// are spread over settings.threads workers and do not depend on the thread
// count. A failing cell aborts the sweep with its coordinates in the message.
ProbeReport probe_sweep(const EncoderWeights<float>& encoder, const std::vector<UtteranceFeatures>& corpus,
                        const std::vector<ProbeDepth>& depths, const std::vector<ProbeTask>& tasks,
                        const ProbeSettings& settings, std::size_t hidden_width = 768,
                        const std::string& model_id = "");

}  // namespace aalbert
