// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "aalbert/binary_io.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/ops.hpp"
#include "aalbert/parallel.hpp"

namespace aalbert {

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("encoder config: ") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(ff_dim, "ff_dim");
  positive(input_dim, "input_dim");
  positive(target_dim, "target_dim");
  positive(max_sequence_length, "max_sequence_length");
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("encoder config: hidden_dim " + std::to_string(hidden_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("encoder config: dropout_rate must lie in [0,1)");
  }
}

template <typename T>
std::vector<Tensor<T>> LayerBlock<T>::parameters() const {
  return {query_weight,         query_bias,          key_weight,   key_bias,
          value_weight,         value_bias,          output_weight, output_bias,
          attention_norm_gamma, attention_norm_beta, ff_in_weight, ff_in_bias,
          ff_out_weight,        ff_out_bias,         ff_norm_gamma, ff_norm_beta};
}

namespace {

template <typename T>
Tensor<T> sinusoidal_table(std::size_t length, std::size_t dim) {
  std::vector<T> v(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      v[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>({length, dim}, std::move(v));
}

template <typename T>
Tensor<T> normal_weight(Rng& rng, std::size_t in, std::size_t out) {
  std::vector<T> v(in * out);
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(0.02));
  return Tensor<T>({in, out}, std::move(v), true);
}

template <typename T>
Tensor<T> param(std::size_t n, T value) {
  return Tensor<T>::full({n}, value, true);
}

template <typename T>
std::shared_ptr<LayerBlock<T>> make_block(const EncoderConfig& c, Rng& rng) {
  auto b = std::make_shared<LayerBlock<T>>();
  const std::size_t d = c.hidden_dim, f = c.ff_dim;
  b->query_weight = normal_weight<T>(rng, d, d);
  b->query_bias = param<T>(d, T(0));
  b->key_weight = normal_weight<T>(rng, d, d);
  b->key_bias = param<T>(d, T(0));
  b->value_weight = normal_weight<T>(rng, d, d);
  b->value_bias = param<T>(d, T(0));
  b->output_weight = normal_weight<T>(rng, d, d);
  b->output_bias = param<T>(d, T(0));
  b->attention_norm_gamma = param<T>(d, T(1));
  b->attention_norm_beta = param<T>(d, T(0));
  b->ff_in_weight = normal_weight<T>(rng, d, f);
  b->ff_in_bias = param<T>(f, T(0));
  b->ff_out_weight = normal_weight<T>(rng, f, d);
  b->ff_out_bias = param<T>(d, T(0));
  b->ff_norm_gamma = param<T>(d, T(1));
  b->ff_norm_beta = param<T>(d, T(0));
  return b;
}

template <typename T>
std::shared_ptr<LayerBlock<T>> clone_block(const LayerBlock<T>& src) {
  auto b = std::make_shared<LayerBlock<T>>();
  auto dst_params = std::vector<Tensor<T>*>{
      &b->query_weight,         &b->query_bias,          &b->key_weight,    &b->key_bias,
      &b->value_weight,         &b->value_bias,          &b->output_weight, &b->output_bias,
      &b->attention_norm_gamma, &b->attention_norm_beta, &b->ff_in_weight,  &b->ff_in_bias,
      &b->ff_out_weight,        &b->ff_out_bias,         &b->ff_norm_gamma, &b->ff_norm_beta};
  const auto src_params = src.parameters();
  for (std::size_t i = 0; i < src_params.size(); ++i) *dst_params[i] = src_params[i].detach(true);
  return b;
}

}  // namespace

template <typename T>
EncoderWeights<T> EncoderWeights<T>::clone() const {
  EncoderWeights out;
  out.config = config;
  out.input_weight = input_weight.detach(true);
  out.input_bias = input_bias.detach(true);
  out.head_weight = head_weight.detach(true);
  out.head_bias = head_bias.detach(true);
  out.positional = positional;
  std::vector<std::pair<const LayerBlock<T>*, std::shared_ptr<LayerBlock<T>>>> copies;
  for (const auto& layer : layers) {
    auto it = std::find_if(copies.begin(), copies.end(),
                           [&](const auto& entry) { return entry.first == layer.get(); });
    if (it == copies.end()) {
      copies.emplace_back(layer.get(), clone_block(*layer));
      out.layers.push_back(copies.back().second);
    } else {
      out.layers.push_back(it->second);
    }
  }
  return out;
}

template <typename T>
std::vector<std::shared_ptr<LayerBlock<T>>> EncoderWeights<T>::distinct_blocks() const {
  std::vector<std::shared_ptr<LayerBlock<T>>> out;
  for (const auto& layer : layers) {
    if (std::find(out.begin(), out.end(), layer) == out.end()) out.push_back(layer);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> EncoderWeights<T>::parameters() const {
  std::vector<Tensor<T>> out{input_weight, input_bias};
  for (const auto& block : distinct_blocks()) {
    for (auto& p : block->parameters()) out.push_back(p);
  }
  out.push_back(head_weight);
  out.push_back(head_bias);
  return out;
}

template <typename T>
void EncoderWeights<T>::zero_grad() const {
  for (auto p : parameters()) p.zero_grad();
}

template <typename T>
EncoderWeights<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EncoderWeights<T> w;
  w.config = config;
  w.input_weight = normal_weight<T>(rng, config.input_dim, config.hidden_dim);
  w.input_bias = param<T>(config.hidden_dim, T(0));
  if (config.share_weights) {
    auto block = make_block<T>(config, rng);
    w.layers.assign(config.num_layers, block);
  } else {
    for (std::size_t l = 0; l < config.num_layers; ++l) w.layers.push_back(make_block<T>(config, rng));
  }
  w.head_weight = normal_weight<T>(rng, config.hidden_dim, config.target_dim);
  w.head_bias = param<T>(config.target_dim, T(0));
  w.positional = sinusoidal_table<T>(config.max_sequence_length, config.hidden_dim);
  return w;
}

template <typename T>
EncoderWeights<T> untie(const EncoderWeights<T>& weights) {
  EncoderWeights<T> out = weights.clone();
  out.config.share_weights = false;
  for (auto& layer : out.layers) layer = clone_block(*layer);
  return out;
}

template <typename T>
void copy_values(const EncoderWeights<T>& src, EncoderWeights<T>& dst) {
  if (!(src.config == dst.config)) throw ConfigError("copy_values: encoder configs differ");
  auto from = src.parameters();
  auto to = dst.parameters();
  for (std::size_t i = 0; i < from.size(); ++i) {
    auto values = to[i].mutable_values();
    std::copy(from[i].values().begin(), from[i].values().end(), values.begin());
  }
}

namespace {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  return dropout(x, rate, *rng);
}

template <typename T>
Tensor<T> self_attention(const LayerBlock<T>& b, const Tensor<T>& x, const EncoderConfig& c,
                         AttentionRecord<T>* record, std::size_t layer) {
  const std::size_t dk = c.head_dim();
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dk)));
  const auto q = linear(x, b.query_weight, b.query_bias);
  const auto k = linear(x, b.key_weight, b.key_bias);
  const auto v = linear(x, b.value_weight, b.value_bias);
  std::vector<Tensor<T>> heads;
  heads.reserve(c.num_heads);
  for (std::size_t h = 0; h < c.num_heads; ++h) {
    const std::size_t lo = h * dk, hi = lo + dk;
    const auto kh = slice_cols(k, lo, hi);
    const auto scores = scale(matmul(slice_cols(q, lo, hi), transpose(kh)), inv_sqrt);
    const auto probs = softmax(scores);
    if (record != nullptr) {
      const std::size_t t = record->length;
      std::copy(probs.values().begin(), probs.values().end(),
                record->probabilities.begin() + static_cast<std::ptrdiff_t>((layer * c.num_heads + h) * t * t));
    }
    heads.push_back(matmul(probs, slice_cols(v, lo, hi)));
  }
  const auto merged = c.num_heads == 1 ? heads[0] : concat<T>(heads, 1);
  return linear(merged, b.output_weight, b.output_bias);
}

}  // namespace

template <typename T>
EncoderOutput<T> forward(const EncoderWeights<T>& weights, const Tensor<T>& input,
                         const ForwardOptions& options) {
  const EncoderConfig& c = weights.config;
  if (input.dim() != 2 || input.cols() != c.input_dim) {
    throw ShapeError("encoder forward: expected input [T," + std::to_string(c.input_dim) + "], got " +
                     shape_string(input.shape()));
  }
  const std::size_t length = input.rows();
  if (length > c.max_sequence_length) {
    throw ShapeError("encoder forward: sequence length " + std::to_string(length) +
                     " exceeds positional table length " + std::to_string(c.max_sequence_length));
  }
  EncoderOutput<T> out;
  AttentionRecord<T>* record = nullptr;
  if (options.capture_attention) {
    out.attention = AttentionRecord<T>{c.num_layers, c.num_heads, length,
                                       std::vector<T>(c.num_layers * c.num_heads * length * length)};
    record = &*out.attention;
  }

  const auto pos = weights.positional.values();
  const Tensor<T> positions({length, c.hidden_dim},
                            std::vector<T>(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(length * c.hidden_dim)));
  auto x = add(linear(input, weights.input_weight, weights.input_bias), positions);
  x = maybe_dropout(x, c.dropout_rate, options.dropout_rng);

  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const LayerBlock<T>& b = *weights.layers[l];
    auto attended = maybe_dropout(self_attention(b, x, c, record, l), c.dropout_rate, options.dropout_rng);
    x = layer_norm(add(x, attended), b.attention_norm_gamma, b.attention_norm_beta);
    auto ff = linear(gelu(linear(x, b.ff_in_weight, b.ff_in_bias)), b.ff_out_weight, b.ff_out_bias);
    ff = maybe_dropout(ff, c.dropout_rate, options.dropout_rng);
    x = layer_norm(add(x, ff), b.ff_norm_gamma, b.ff_norm_beta);
    out.layers.push_back(x);
  }
  out.reconstruction = linear(x, weights.head_weight, weights.head_bias);
  return out;
}

template <typename T>
std::vector<EncoderOutput<T>> forward_batch(const EncoderWeights<T>& weights,
                                            std::span<const Tensor<T>> inputs, bool capture_attention,
                                            std::optional<std::uint64_t> dropout_seed, int threads) {
  std::vector<EncoderOutput<T>> outputs(inputs.size());
  const bool record_grads = grad_enabled();
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    std::optional<NoGradGuard> guard;
    if (!record_grads) guard.emplace();
    std::optional<Rng> rng;
    if (dropout_seed) rng.emplace(derive_seed(*dropout_seed, {i}));
    ForwardOptions options{capture_attention, rng ? &*rng : nullptr};
    outputs[i] = forward(weights, inputs[i], options);
  });
  return outputs;
}

ParameterBreakdown parameter_breakdown(const EncoderConfig& c) {
  c.validate();
  const std::size_t d = c.hidden_dim, f = c.ff_dim;
  ParameterBreakdown b;
  b.input_projection = c.input_dim * d + d;
  b.per_block = 4 * (d * d + d)   // query, key, value, output projections
                + (d * f + f)     // feed-forward in
                + (f * d + d)     // feed-forward out
                + 2 * (2 * d);    // two layer norms
  b.num_blocks = c.share_weights ? 1 : c.num_layers;
  b.reconstruction_head = d * c.target_dim + c.target_dim;
  return b;
}

template <typename T>
ParameterBreakdown count_parameters(const EncoderWeights<T>& w) {
  std::unordered_set<const void*> seen;
  auto count = [&](const std::vector<Tensor<T>>& tensors) {
    std::size_t n = 0;
    for (const auto& t : tensors) {
      if (seen.insert(t.id()).second) n += t.numel();
    }
    return n;
  };
  ParameterBreakdown b;
  b.input_projection = count({w.input_weight, w.input_bias});
  std::size_t blocks_total = 0;
  for (const auto& layer : w.layers) {
    const std::size_t n = count(layer->parameters());
    if (n > 0) {
      b.per_block = n;
      ++b.num_blocks;
      blocks_total += n;
    }
  }
  if (b.num_blocks > 0 && blocks_total != b.per_block * b.num_blocks) {
    throw std::logic_error("count_parameters: layer blocks differ in size");
  }
  b.reconstruction_head = count({w.head_weight, w.head_bias});
  return b;
}

template <typename T>
std::uint64_t weights_checksum(const EncoderWeights<T>& w) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& p : w.parameters()) {
    const auto values = p.values();
    h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()), h);
  }
  return h;
}

namespace {
constexpr char kWeightMagic[] = "AALW";
}

template <typename T>
void save_weights(const EncoderWeights<T>& w, const std::filesystem::path& path) {
  const EncoderConfig& c = w.config;
  ByteWriter out;
  out.raw(std::string_view(kWeightMagic, 4));
  out.u32(kWeightFormatVersion);
  for (std::size_t v : {c.num_layers, c.hidden_dim, c.num_heads, c.ff_dim, c.input_dim, c.target_dim}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.u8(c.share_weights ? 1 : 0);
  out.f64(c.dropout_rate);
  out.u32(static_cast<std::uint32_t>(c.max_sequence_length));
  const auto params = w.parameters();
  out.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    out.u64(p.numel());
    for (T v : p.values()) out.f32(static_cast<float>(v));
  }
  out.u64(fnv1a64(out.bytes()));
  write_file_atomic(path, out.bytes());
}

template <typename T>
EncoderWeights<T> load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string name = path.string();
  ByteReader in(bytes, name);
  if (in.remaining() < 4 || in.raw(4) != std::string_view(kWeightMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, name + ": not an encoder weight file (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kWeightFormatVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      name + ": weight format version " + std::to_string(version) + ", expected " +
                          std::to_string(kWeightFormatVersion));
  }
  EncoderConfig c;
  c.num_layers = in.u32();
  c.hidden_dim = in.u32();
  c.num_heads = in.u32();
  c.ff_dim = in.u32();
  c.input_dim = in.u32();
  c.target_dim = in.u32();
  c.share_weights = in.u8() != 0;
  c.dropout_rate = in.f64();
  c.max_sequence_length = in.u32();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kShapeMismatch, name + ": invalid embedded config: " + e.what());
  }

  EncoderWeights<T> w = init_encoder<T>(c, 0);
  auto params = w.parameters();
  const std::uint32_t count = in.u32();
  if (count != params.size()) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      name + ": config implies " + std::to_string(params.size()) + " parameter arrays, file has " +
                          std::to_string(count));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::uint64_t n = in.u64();
    if (n != params[i].numel()) {
      throw FormatError(FormatError::Kind::kShapeMismatch,
                        name + ": parameter array " + std::to_string(i) + " holds " + std::to_string(n) +
                            " values, config implies " + std::to_string(params[i].numel()));
    }
    in.need(4 * n);
    auto values = params[i].mutable_values();
    for (auto& v : values) v = static_cast<T>(in.f32());
  }
  const std::size_t payload = in.position();
  const std::uint64_t stored = in.u64();
  if (stored != fnv1a64(std::span(bytes).first(payload))) {
    throw FormatError(FormatError::Kind::kChecksum, name + ": checksum mismatch (file corrupted)");
  }
  if (in.remaining() != 0) {
    throw FormatError(FormatError::Kind::kTrailingData,
                      name + ": " + std::to_string(in.remaining()) + " unexpected trailing bytes");
  }
  return w;
}

#define AALBERT_INSTANTIATE_ENCODER(T)                                                             \
  template struct LayerBlock<T>;                                                                   \
  template struct EncoderWeights<T>;                                                               \
  template EncoderWeights<T> init_encoder<T>(const EncoderConfig&, std::uint64_t);                 \
  template EncoderWeights<T> untie<T>(const EncoderWeights<T>&);                                   \
  template void copy_values<T>(const EncoderWeights<T>&, EncoderWeights<T>&);                      \
  template EncoderOutput<T> forward<T>(const EncoderWeights<T>&, const Tensor<T>&,                 \
                                       const ForwardOptions&);                                     \
  template std::vector<EncoderOutput<T>> forward_batch<T>(const EncoderWeights<T>&,                \
                                                          std::span<const Tensor<T>>, bool,        \
                                                          std::optional<std::uint64_t>, int);      \
  template ParameterBreakdown count_parameters<T>(const EncoderWeights<T>&);                       \
  template std::uint64_t weights_checksum<T>(const EncoderWeights<T>&);                            \
  template void save_weights<T>(const EncoderWeights<T>&, const std::filesystem::path&);           \
  template EncoderWeights<T> load_weights<T>(const std::filesystem::path&);

AALBERT_INSTANTIATE_ENCODER(float)
AALBERT_INSTANTIATE_ENCODER(double)

#undef AALBERT_INSTANTIATE_ENCODER

}  // namespace aalbert
