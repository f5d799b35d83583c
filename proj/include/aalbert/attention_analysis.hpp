// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Jensen-Shannon divergence between the attention distributions of different
// layers, per head and averaged over heads.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aalbert/data.hpp"
#include "aalbert/encoder.hpp"

namespace aalbert {

// Base-2 JSD, so the result lies in [0, 1]. Both inputs must be nonnegative
// and sum to 1 within 1e-5; otherwise ShapeError (lengths) or ConfigError.
double js_divergence(std::span<const double> p, std::span<const double> q);
double js_divergence(std::span<const float> p, std::span<const float> q);

// Mean over query positions of the JSD between the two layers' attention rows
// for one head. Layers and head are 0-based; ShapeError when out of range.
template <typename T>
double layer_pair_divergence(const AttentionRecord<T>& attention, std::size_t layer_i, std::size_t layer_j,
                             std::size_t head);

struct JSMatrix {
  std::optional<std::size_t> head;  // empty for the head average
  std::size_t num_layers = 0;
  std::vector<double> values;       // row-major L x L

  double at(std::size_t i, std::size_t j) const { return values[i * num_layers + j]; }
  // L lines of L comma-separated values, %.9g.
  std::string to_csv() const;
  // `js_matrix_<head>.csv` or `js_matrix_avg.csv`
  std::string file_name() const;
};

struct AttentionAnalysisSettings {
  std::size_t sample_size = 32;
  // 0-based heads to analyze; empty means all. The average covers these only.
  std::vector<std::size_t> heads;
  std::size_t downsample_factor = 3;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct AttentionAnalysis {
  std::vector<JSMatrix> per_head;
  JSMatrix average;
  std::vector<std::string> utterance_ids;  // the evaluated sample, sorted
};

// Fixed-seed draw of min(sample_size, corpus size) utterances. Utterances
// contribute in proportion to their frame count, and the result does not
// depend on the order of `corpus`. Throws ConfigError for an empty sample.
AttentionAnalysis build_js_matrices(const EncoderWeights<float>& encoder,
                                    const std::vector<UtteranceFeatures>& corpus,
                                    const AttentionAnalysisSettings& settings);

// Writes every matrix into `dir` (created if needed) and returns the paths.
std::vector<std::filesystem::path> write_js_matrices(const AttentionAnalysis& analysis,
                                                     const std::filesystem::path& dir);

}  // namespace aalbert
