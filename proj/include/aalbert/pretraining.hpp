// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Masked-reconstruction pre-training.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "aalbert/adamw.hpp"
#include "aalbert/data.hpp"
#include "aalbert/encoder.hpp"
#include "aalbert/rng.hpp"

namespace aalbert {

enum class DownsampleMode {
  kDecimate,  // keep frames 0, k, 2k, ...
  kStack,     // concatenate k consecutive frames; the last group repeats the final frame
};

// T' = ceil(T / factor) in both modes. Stacking multiplies the width by factor.
FeatureMatrix downsample(const FeatureMatrix& features, std::size_t factor,
                         DownsampleMode mode = DownsampleMode::kDecimate);
// Decimated labels aligned with downsample() output.
std::vector<std::uint16_t> downsample_labels(std::span<const std::uint16_t> labels, std::size_t factor);

struct MaskPolicy {
  double select_fraction = 0.15;
  double zero_prob = 0.8;
  double replace_prob = 0.1;
  double keep_prob = 0.1;
  std::size_t downsample_factor = 3;
  DownsampleMode downsample_mode = DownsampleMode::kDecimate;
  std::uint64_t seed = 0;

  void validate() const;
  // Number of frames selected in an utterance of length T'.
  std::size_t selected_count(std::size_t frames) const;
};

enum class MaskAction { kZero, kReplace, kKeep };

struct MaskedFrame {
  std::size_t index = 0;
  MaskAction action = MaskAction::kKeep;
  std::size_t source = 0;  // kReplace only: the copied frame
};

struct MaskSpec {
  std::vector<MaskedFrame> frames;     // ascending index
  std::vector<std::uint8_t> selected;  // one flag per frame
};

struct MaskedFeatures {
  FeatureMatrix corrupted;
  MaskSpec spec;
};

// Selects selected_count(T') frames without replacement and corrupts each one:
// zeroed, replaced by a copy of another frame of the original utterance, or
// kept. Keep frames are still marked for loss.
MaskedFeatures apply_mask(const FeatureMatrix& features, const MaskPolicy& policy, Rng& rng);

// Mean absolute error over masked rows and all columns. With no masked rows the
// result is a constant zero and a warning is logged.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                              std::span<const std::uint8_t> mask);

// Encoder inputs and targets after the data pipeline and downsampling.
struct PretrainExample {
  std::string id;
  FeatureMatrix input;   // T' x d_in
  FeatureMatrix target;  // T' x d_out
};

std::vector<PretrainExample> prepare_pretraining_data(const std::vector<UtteranceFeatures>& corpus,
                                                      const MaskPolicy& policy);

struct PretrainBatch {
  std::vector<Tensor<float>> inputs;   // corrupted, one per utterance
  std::vector<Tensor<float>> targets;  // clean
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<std::size_t> lengths;

  std::size_t masked_frames() const;
};

// Masks utterance i with a stream derived from (policy seed, step, utterance id),
// so the result does not depend on batch composition or thread count.
PretrainBatch build_batch(std::span<const PretrainExample> examples, std::span<const std::size_t> indices,
                          const MaskPolicy& policy, std::uint64_t step, int threads = 1);

// Masked L1 over a whole batch: every masked frame of every utterance weighs
// the same. Throws ShapeError for a batch without frames.
Tensor<float> batch_loss(const std::vector<EncoderOutput<float>>& outputs, const PretrainBatch& batch);

struct PretrainSettings {
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  AdamWSettings optimizer{};
  std::size_t warmup_steps = 0;  // linear warmup; 0 disables
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 0;
  int threads = 1;
  // Empty paths disable the corresponding output.
  std::filesystem::path checkpoint_dir;
  std::filesystem::path loss_csv;
};

struct PretrainResult {
  EncoderWeights<float> weights;
  std::vector<double> losses;  // one per step
  std::filesystem::path last_checkpoint;
};

// Per step: shuffled mini-batch -> mask -> forward -> masked L1 -> backward ->
// AdamW. Checkpoints are `step_NNNNNN.aalw` plus an `.aalo` optimizer sidecar;
// zero steps writes `step_000000` holding the initial weights.
// A non-finite loss throws NumericError before any update; checkpoints already
// written stay in place.
PretrainResult pretrain(const std::vector<UtteranceFeatures>& corpus, const EncoderConfig& config,
                        const MaskPolicy& policy, const PretrainSettings& settings);

// Same loop on prepared examples, starting from `initial`.
PretrainResult pretrain(std::span<const PretrainExample> examples, EncoderWeights<float> initial,
                        const MaskPolicy& policy, const PretrainSettings& settings);

std::string format_loss_csv(std::span<const double> losses);

}  // namespace aalbert
