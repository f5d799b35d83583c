// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Downstream phoneme and speaker classifiers on encoder representations.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aalbert/adamw.hpp"
#include "aalbert/data.hpp"
#include "aalbert/encoder.hpp"
#include "aalbert/rng.hpp"

namespace aalbert {

enum class DownstreamTask { kPhoneme, kSpeaker };
enum class TrainMode { kFeatureExtraction, kFineTune };
enum class FusionMode { kLastLayer, kWeightedSum };

const char* to_string(DownstreamTask task);
const char* to_string(TrainMode mode);
const char* to_string(FusionMode mode);
// Inverse of to_string; throws ConfigError listing the accepted names.
DownstreamTask parse_task(const std::string& name);
TrainMode parse_train_mode(const std::string& name);
FusionMode parse_fusion_mode(const std::string& name);

template <typename T>
struct FusionHead {
  FusionMode mode = FusionMode::kLastLayer;
  Tensor<T> raw_weights;  // [L], weighted sum only

  // Raw weights start at zero, i.e. a plain average.
  static FusionHead last_layer();
  static FusionHead weighted_sum(std::size_t num_layers);

  // softmax(raw_weights); empty for last-layer fusion.
  std::vector<T> layer_weights() const;
  std::vector<Tensor<T>> parameters() const;
};

// Last-layer fusion returns layers.back(); weighted sum returns
// sum_l softmax(raw)_l * layers[l]. Throws ShapeError when the raw weight
// count differs from the layer count.
template <typename T>
Tensor<T> fuse(std::span<const Tensor<T>> layers, const FusionHead<T>& head);

// Frame classifier: d_rep -> hidden -> 72 with GELU in between.
template <typename T>
struct PhonemeHead {
  Tensor<T> hidden_weight, hidden_bias, output_weight, output_bias;

  static PhonemeHead init(std::size_t rep_dim, std::size_t hidden_dim, Rng& rng);
  Tensor<T> logits(const Tensor<T>& reps) const;  // [T, 72]
  std::vector<Tensor<T>> parameters() const;
};

// Per-frame linear layer followed by mean pooling over frames.
template <typename T>
struct SpeakerHead {
  Tensor<T> weight, bias;

  static SpeakerHead init(std::size_t rep_dim, std::size_t num_speakers, Rng& rng);
  Tensor<T> logits(const Tensor<T>& reps) const;  // [1, num_speakers]
  std::vector<Tensor<T>> parameters() const;
};

struct DownstreamSettings {
  DownstreamTask task = DownstreamTask::kSpeaker;
  TrainMode mode = TrainMode::kFeatureExtraction;
  FusionMode fusion = FusionMode::kWeightedSum;
  // 0 selects the default: 1e-3 with a frozen encoder, 1e-4 when fine-tuning.
  double learning_rate = 0.0;
  double weight_decay = 0.01;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t patience = 5;          // epochs without a dev improvement
  std::size_t phoneme_hidden = 0;    // 0: the representation width
  std::size_t downsample_factor = 3;
  std::uint64_t seed = 0;
  int threads = 1;

  double resolved_learning_rate() const;
};

struct DownstreamResult {
  std::vector<double> train_loss;    // mean cross-entropy per epoch
  std::vector<double> dev_accuracy;  // per epoch
  std::size_t best_epoch = 0;        // 1-based
  double test_accuracy = 0.0;
  std::size_t steps = 0;
  // Largest |sum of fusion weights - 1| seen after any optimizer step.
  double max_fusion_weight_error = 0.0;

  FusionHead<float> fusion;
  std::optional<PhonemeHead<float>> phoneme_head;
  std::optional<SpeakerHead<float>> speaker_head;
  // Fine-tuned encoder at the selected epoch; empty for feature extraction.
  std::optional<EncoderWeights<float>> encoder;
};

// Trains on the corpus's train split, selects the epoch with the best dev
// accuracy and reports test accuracy: frame level for phonemes, utterance
// level for speakers. The encoder is never modified; fine-tuning works on a
// copy returned in the result.
DownstreamResult train_downstream(const EncoderWeights<float>& encoder,
                                  const std::vector<UtteranceFeatures>& corpus,
                                  const DownstreamSettings& settings);

// Same head and protocol applied directly to the encoder input features.
DownstreamResult train_raw_baseline(const std::vector<UtteranceFeatures>& corpus,
                                    const DownstreamSettings& settings);

// Test accuracy of always predicting the most frequent training label, scored
// like train_downstream: per frame for phonemes, per utterance for speakers.
double majority_baseline(const std::vector<UtteranceFeatures>& corpus, DownstreamTask task,
                         std::uint64_t split_seed, std::size_t downsample_factor = 3);

// CSV `utterance_id,speaker,e0,...`: one row per utterance holding the mean
// over frames of the fused representation.
void export_pooled_embeddings(const EncoderWeights<float>& encoder, const FusionHead<float>& fusion,
                              const std::vector<UtteranceFeatures>& corpus, const std::filesystem::path& path,
                              std::size_t downsample_factor = 3, int threads = 1);

struct MetricsRow {
  DownstreamTask task = DownstreamTask::kSpeaker;
  TrainMode mode = TrainMode::kFeatureExtraction;
  FusionMode fusion = FusionMode::kWeightedSum;
  std::size_t layer_count = 0;
  double test_accuracy = 0.0;
};

inline constexpr const char* kMetricsHeader = "task,mode,fusion,layer_count,test_accuracy";

// Appends a row, writing the header first when the file is new.
void append_metrics_row(const std::filesystem::path& path, const MetricsRow& row);

}  // namespace aalbert
