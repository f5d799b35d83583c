// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Feature ingestion, corpus splits and the synthetic corpus generator.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aalbert/tensor.hpp"

namespace aalbert {

inline constexpr std::size_t kMelDim = 80;
inline constexpr std::size_t kNumPhoneClasses = 72;

// Dense row-major float matrix used for stored features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}
  FeatureMatrix(std::size_t r, std::size_t c, std::vector<float> v);

  float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  Tensor<float> to_tensor() const { return Tensor<float>({rows, cols}, values); }
  bool operator==(const FeatureMatrix&) const = default;
};

struct UtteranceFeatures {
  std::string id;
  std::uint32_t speaker = 0;
  FeatureMatrix mel;     // T x 80 log mel, not normalized
  FeatureMatrix target;  // T x d_out, already CMVN-normalized
  std::optional<std::vector<std::uint16_t>> phonemes;  // length T, values < 72

  std::size_t frames() const { return mel.rows; }
  // Throws ShapeError if the fields disagree on T or a label is out of range.
  void validate() const;
  bool operator==(const UtteranceFeatures&) const = default;
};

// First-order regression deltas, window 2, edge frames replicated.
// Returns [T, 2d]: the input columns followed by their deltas.
FeatureMatrix add_deltas(const FeatureMatrix& features);

// Per-utterance, per-dimension mean and population-std normalization.
// Columns whose std falls below 1e-10 become zero.
FeatureMatrix cmvn(const FeatureMatrix& features);

// The encoder input for one utterance: cmvn(add_deltas(mel)).
FeatureMatrix model_input(const UtteranceFeatures& utterance);

struct SyntheticCorpusSpec {
  std::size_t num_speakers = 10;
  std::size_t num_phone_classes = 8;
  std::size_t utterances_per_speaker = 20;
  std::size_t min_frames = 90;
  std::size_t max_frames = 180;
  std::size_t min_segment = 24;
  std::size_t max_segment = 72;
  std::size_t target_dim = 201;
  double noise = 0.1;
  // Speaker offsets are scaled per phone: every third class is voiced.
  double voiced_gain = 1.5;
  double unvoiced_gain = 0.75;
  std::uint64_t seed = 1;

  void validate() const;
};

// Each phone class has a spectral template and a gain, each speaker a spectral
// offset. A frame's latent is template[p] + gain[p] * offset[s] + noise; mel is
// the latent and target is cmvn of a fixed random projection of it. Utterances
// are ordered speaker-major.
std::vector<UtteranceFeatures> generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

struct CorpusSplit {
  std::vector<std::size_t> train, dev, test;  // indices into the corpus
};

// Speaker-stratified 8:1:1 split. Within each speaker utterances are shuffled
// under `seed`; the highest within-speaker ranks go to test, then dev, so every
// speaker keeps its first utterance in train.
CorpusSplit split_corpus(const std::vector<UtteranceFeatures>& corpus, std::uint64_t seed);

// Sorted distinct speaker ids; a speaker's position is its class index.
std::vector<std::uint32_t> speaker_inventory(const std::vector<UtteranceFeatures>& corpus);

// Feature file, version 1, little-endian:
//   "AALB" | u32 version | u32 id_length | id bytes | u32 speaker | u32 T |
//   u32 d_mel | u32 d_out | u8 has_labels | f32 mel[T*d_mel] |
//   f32 target[T*d_out] | (has_labels: u32 label_count | u16 labels[count])
inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr const char* kFeatureExtension = ".aalb";

void write_feature_file(const std::filesystem::path& path, const UtteranceFeatures& utterance);
UtteranceFeatures read_feature_file(const std::filesystem::path& path);

struct IngestResult {
  std::vector<UtteranceFeatures> utterances;  // sorted by file name
  std::vector<std::filesystem::path> skipped;
};

// Reads every *.aalb file in `dir`. Other files and unreadable feature files
// are skipped with a warning.
IngestResult ingest_directory(const std::filesystem::path& dir);

// Manifest CSV with header `utterance_id,path,speaker_id`. Relative paths are
// resolved against the manifest's directory.
struct ManifestEntry {
  std::string utterance_id;
  std::filesystem::path path;
  std::uint32_t speaker = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
// Loads every manifest entry; a file whose id or speaker disagrees with the
// manifest is rejected.
std::vector<UtteranceFeatures> load_manifest_corpus(const std::filesystem::path& manifest);

// Writes one feature file per utterance into `dir` plus `dir/manifest.csv`.
std::filesystem::path export_corpus(const std::vector<UtteranceFeatures>& corpus,
                                    const std::filesystem::path& dir);

}  // namespace aalbert
