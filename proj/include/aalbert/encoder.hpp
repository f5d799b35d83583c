// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Post-norm transformer encoder with an optional cross-layer weight-sharing
// switch. With share_weights every layer references one LayerBlock;
// otherwise each layer owns an independent block.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "aalbert/rng.hpp"
#include "aalbert/tensor.hpp"

namespace aalbert {

struct EncoderConfig {
  std::size_t num_layers = 3;
  std::size_t hidden_dim = 768;
  std::size_t num_heads = 12;
  std::size_t ff_dim = 3072;
  std::size_t input_dim = 160;
  std::size_t target_dim = 201;
  bool share_weights = true;
  double dropout_rate = 0.1;
  std::size_t max_sequence_length = 1024;

  // Throws ConfigError on any invariant violation.
  void validate() const;
  std::size_t head_dim() const { return hidden_dim / num_heads; }

  bool operator==(const EncoderConfig&) const = default;
};

// Parameters of one transformer layer. Linear weights are stored [in, out].
template <typename T>
struct LayerBlock {
  Tensor<T> query_weight, query_bias;
  Tensor<T> key_weight, key_bias;
  Tensor<T> value_weight, value_bias;
  Tensor<T> output_weight, output_bias;
  Tensor<T> attention_norm_gamma, attention_norm_beta;
  Tensor<T> ff_in_weight, ff_in_bias;
  Tensor<T> ff_out_weight, ff_out_bias;
  Tensor<T> ff_norm_gamma, ff_norm_beta;

  // Fixed order used by checkpoints and optimizers.
  std::vector<Tensor<T>> parameters() const;
};

template <typename T>
struct EncoderWeights {
  EncoderConfig config;
  Tensor<T> input_weight, input_bias;
  // One entry per layer. In shared mode every entry holds the same pointer.
  std::vector<std::shared_ptr<LayerBlock<T>>> layers;
  Tensor<T> head_weight, head_bias;
  // Sinusoidal table [max_sequence_length, hidden_dim]; not a parameter.
  Tensor<T> positional;

  EncoderWeights() = default;
  EncoderWeights(EncoderWeights&&) noexcept = default;
  EncoderWeights& operator=(EncoderWeights&&) noexcept = default;
  // Copies would silently alias parameters; use clone().
  EncoderWeights(const EncoderWeights&) = delete;
  EncoderWeights& operator=(const EncoderWeights&) = delete;

  // Deep copy preserving the sharing layout.
  EncoderWeights clone() const;

  // Blocks in layer order, each listed once.
  std::vector<std::shared_ptr<LayerBlock<T>>> distinct_blocks() const;
  // Every distinct parameter tensor in checkpoint order.
  std::vector<Tensor<T>> parameters() const;
  void zero_grad() const;
};

// Allocates weights for `config` with deterministic initialization:
// truncated normal (std 0.02) projection weights, zero biases, unit layer-norm
// scales.
template <typename T>
EncoderWeights<T> init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Independent per-layer copies of a shared model's block (or a deep copy of an
// unshared model). Used to compare both layouts on identical values.
template <typename T>
EncoderWeights<T> untie(const EncoderWeights<T>& weights);

// Copies every parameter value of `src` into `dst`; configs must agree.
template <typename T>
void copy_values(const EncoderWeights<T>& src, EncoderWeights<T>& dst);

// Attention probabilities captured from one forward pass, laid out
// [layer][head][query][key].
template <typename T>
struct AttentionRecord {
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t length = 0;
  std::vector<T> probabilities;

  std::span<const T> row(std::size_t layer, std::size_t head, std::size_t query) const {
    return std::span<const T>(probabilities).subspan(
        ((layer * num_heads + head) * length + query) * length, length);
  }
};

template <typename T>
struct EncoderOutput {
  // Hidden states after each layer; layers[l] is layer l+1, each [T, hidden].
  std::vector<Tensor<T>> layers;
  std::optional<AttentionRecord<T>> attention;
  Tensor<T> reconstruction;  // [T, target_dim]
};

struct ForwardOptions {
  bool capture_attention = false;
  // Dropout is applied only when a generator is supplied and the configured
  // rate is positive.
  Rng* dropout_rng = nullptr;
};

// input: [T, input_dim] with T <= max_sequence_length.
template <typename T>
EncoderOutput<T> forward(const EncoderWeights<T>& weights, const Tensor<T>& input,
                         const ForwardOptions& options = {});

// Runs independent forward passes for a batch of utterances. When
// dropout_seed is set, utterance i draws dropout masks from a stream derived
// from (seed, i), so results do not depend on the thread count.
template <typename T>
std::vector<EncoderOutput<T>> forward_batch(const EncoderWeights<T>& weights,
                                            std::span<const Tensor<T>> inputs,
                                            bool capture_attention,
                                            std::optional<std::uint64_t> dropout_seed, int threads = 1);

struct ParameterBreakdown {
  std::size_t input_projection = 0;
  std::size_t per_block = 0;
  std::size_t num_blocks = 0;
  std::size_t reconstruction_head = 0;

  std::size_t layer_blocks() const { return per_block * num_blocks; }
  std::size_t total() const { return input_projection + layer_blocks() + reconstruction_head; }
};

// Closed-form count from the architecture alone (no allocation).
ParameterBreakdown parameter_breakdown(const EncoderConfig& config);

// Counts allocated parameter arrays, each distinct array once.
template <typename T>
ParameterBreakdown count_parameters(const EncoderWeights<T>& weights);

// FNV-1a over all parameter bytes; changes whenever any value changes.
template <typename T>
std::uint64_t weights_checksum(const EncoderWeights<T>& weights);

// Weight checkpoint, version 1, all integers and floats little-endian:
//   "AALW" | u32 version | u32 num_layers | u32 hidden_dim | u32 num_heads |
//   u32 ff_dim | u32 input_dim | u32 target_dim | u8 share_weights |
//   f64 dropout_rate | u32 max_sequence_length | u32 array_count |
//   array_count x (u64 element_count, f32 values...) | u64 fnv1a(preceding)
// Arrays: input weight, input bias, then for each distinct block the sixteen
// LayerBlock::parameters() in order, then head weight, head bias.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

template <typename T>
void save_weights(const EncoderWeights<T>& weights, const std::filesystem::path& path);
template <typename T>
EncoderWeights<T> load_weights(const std::filesystem::path& path);

}  // namespace aalbert
