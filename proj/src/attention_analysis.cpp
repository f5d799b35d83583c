// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/attention_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "aalbert/binary_io.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/parallel.hpp"
#include "aalbert/pretraining.hpp"
#include "aalbert/rng.hpp"

namespace aalbert {

namespace {

constexpr double kSumTolerance = 1e-5;

template <typename T>
void check_distribution(std::span<const T> p, const char* name) {
  double sum = 0.0;
  for (T v : p) {
    if (!(v >= T(0))) throw ConfigError(std::string("js_divergence: ") + name + " has a negative or NaN entry");
    sum += static_cast<double>(v);
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ConfigError(std::string("js_divergence: ") + name + " sums to " + std::to_string(sum));
  }
}

// Both KL terms against m = (p + q) / 2, with 0 log 0 taken as 0.
template <typename T>
double jsd_unchecked(std::span<const T> p, std::span<const T> q) {
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double a = p[k], b = q[k];
    const double m = 0.5 * (a + b);
    const double ta = a > 0.0 ? a * std::log2(a / m) : 0.0;
    const double tb = b > 0.0 ? b * std::log2(b / m) : 0.0;
    total += ta + tb;
  }
  return std::clamp(0.5 * total, 0.0, 1.0);
}

template <typename T>
double jsd_checked(std::span<const T> p, std::span<const T> q) {
  if (p.size() != q.size()) {
    throw ShapeError("js_divergence: lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  check_distribution(p, "p");
  check_distribution(q, "q");
  return jsd_unchecked(p, q);
}

}  // namespace

double js_divergence(std::span<const double> p, std::span<const double> q) { return jsd_checked(p, q); }
double js_divergence(std::span<const float> p, std::span<const float> q) { return jsd_checked(p, q); }

template <typename T>
double layer_pair_divergence(const AttentionRecord<T>& attention, std::size_t layer_i, std::size_t layer_j,
                             std::size_t head) {
  if (layer_i >= attention.num_layers || layer_j >= attention.num_layers) {
    throw ShapeError("layer_pair_divergence: layers " + std::to_string(layer_i) + "," + std::to_string(layer_j) +
                     " outside 0.." + std::to_string(attention.num_layers - 1));
  }
  if (head >= attention.num_heads) {
    throw ShapeError("layer_pair_divergence: head " + std::to_string(head) + " outside 0.." +
                     std::to_string(attention.num_heads - 1));
  }
  if (attention.length == 0) throw ShapeError("layer_pair_divergence: empty attention record");
  if (layer_i == layer_j) return 0.0;
  // Order the pair so the value is exactly symmetric.
  const auto [a, b] = std::minmax(layer_i, layer_j);
  double total = 0.0;
  for (std::size_t t = 0; t < attention.length; ++t) {
    total += jsd_checked(attention.row(a, head, t), attention.row(b, head, t));
  }
  return total / static_cast<double>(attention.length);
}

std::string JSMatrix::to_csv() const {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < num_layers; ++i) {
    for (std::size_t j = 0; j < num_layers; ++j) {
      std::snprintf(buf, sizeof(buf), "%s%.9g", j ? "," : "", at(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string JSMatrix::file_name() const {
  return "js_matrix_" + (head ? std::to_string(*head) : std::string("avg")) + ".csv";
}

AttentionAnalysis build_js_matrices(const EncoderWeights<float>& encoder,
                                    const std::vector<UtteranceFeatures>& corpus,
                                    const AttentionAnalysisSettings& settings) {
  const auto& config = encoder.config;
  if (corpus.empty() || settings.sample_size == 0) throw ConfigError("attention analysis: empty evaluation sample");
  std::vector<std::size_t> heads = settings.heads;
  if (heads.empty()) {
    heads.resize(config.num_heads);
    std::iota(heads.begin(), heads.end(), 0);
  }
  for (auto h : heads) {
    if (h >= config.num_heads) {
      throw ConfigError("attention analysis: head " + std::to_string(h) + " outside 0.." +
                        std::to_string(config.num_heads - 1));
    }
  }

  // Rank by id first so the draw ignores the corpus order.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return corpus[a].id < corpus[b].id; });
  Rng rng(derive_seed(settings.seed, {0xA77E}));
  rng.shuffle(order);
  order.resize(std::min(settings.sample_size, order.size()));
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return corpus[a].id < corpus[b].id; });

  std::vector<Tensor<float>> inputs(order.size());
  parallel_for(order.size(), settings.threads, [&](std::size_t k) {
    inputs[k] = downsample(model_input(corpus[order[k]]), settings.downsample_factor).to_tensor();
  });
  if (inputs.front().cols() != config.input_dim) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      "encoder expects input width " + std::to_string(config.input_dim) + ", corpus provides " +
                          std::to_string(inputs.front().cols()));
  }

  const std::size_t L = config.num_layers;
  const std::size_t H = heads.size();
  // per utterance: [head][i][j] for i < j
  std::vector<std::vector<double>> contributions(order.size(), std::vector<double>(H * L * L, 0.0));
  std::vector<std::size_t> frames(order.size());
  parallel_for(order.size(), settings.threads, [&](std::size_t k) {
    NoGradGuard guard;
    ForwardOptions options;
    options.capture_attention = true;
    const auto out = forward<float>(encoder, inputs[k], options);
    frames[k] = inputs[k].rows();
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = i + 1; j < L; ++j)
          contributions[k][(h * L + i) * L + j] = layer_pair_divergence(*out.attention, i, j, heads[h]);
  });

  const double total_frames = static_cast<double>(std::accumulate(frames.begin(), frames.end(), std::size_t{0}));
  AttentionAnalysis result;
  for (auto i : order) result.utterance_ids.push_back(corpus[i].id);
  for (std::size_t h = 0; h < H; ++h) {
    JSMatrix m{heads[h], L, std::vector<double>(L * L, 0.0)};
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = i + 1; j < L; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
          acc += static_cast<double>(frames[k]) * contributions[k][(h * L + i) * L + j];
        }
        m.values[i * L + j] = m.values[j * L + i] = acc / total_frames;
      }
    }
    result.per_head.push_back(std::move(m));
  }
  result.average = JSMatrix{std::nullopt, L, std::vector<double>(L * L, 0.0)};
  for (const auto& m : result.per_head)
    for (std::size_t e = 0; e < L * L; ++e) result.average.values[e] += m.values[e] / static_cast<double>(H);
  return result;
}

std::vector<std::filesystem::path> write_js_matrices(const AttentionAnalysis& analysis,
                                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const JSMatrix& m) {
    written.push_back(dir / m.file_name());
    write_text_atomic(written.back(), m.to_csv());
  };
  for (const auto& m : analysis.per_head) emit(m);
  emit(analysis.average);
  return written;
}

template double layer_pair_divergence<float>(const AttentionRecord<float>&, std::size_t, std::size_t, std::size_t);
template double layer_pair_divergence<double>(const AttentionRecord<double>&, std::size_t, std::size_t, std::size_t);

}  // namespace aalbert
