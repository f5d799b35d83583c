// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "aalbert/binary_io.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/log.hpp"
#include "aalbert/rng.hpp"

namespace aalbert {

FeatureMatrix::FeatureMatrix(std::size_t r, std::size_t c, std::vector<float> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != rows * cols) {
    throw ShapeError("FeatureMatrix: " + std::to_string(values.size()) + " values for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
}

void UtteranceFeatures::validate() const {
  if (mel.rows == 0) throw ShapeError("utterance " + id + ": no frames");
  if (target.rows != mel.rows) {
    throw ShapeError("utterance " + id + ": target has " + std::to_string(target.rows) +
                     " frames, mel has " + std::to_string(mel.rows));
  }
  if (phonemes) {
    if (phonemes->size() != mel.rows) {
      throw ShapeError("utterance " + id + ": label sequence length " + std::to_string(phonemes->size()) +
                       " != frame count " + std::to_string(mel.rows));
    }
    for (auto p : *phonemes) {
      if (p >= kNumPhoneClasses) {
        throw ShapeError("utterance " + id + ": phoneme label " + std::to_string(p) + " out of range");
      }
    }
  }
}

FeatureMatrix add_deltas(const FeatureMatrix& x) {
  if (x.rows == 0) throw ShapeError("add_deltas: empty input");
  constexpr int kWindow = 2;
  constexpr float kDenominator = 10.0f;  // 2 * (1^2 + 2^2)
  const auto last = static_cast<long>(x.rows) - 1;
  auto clamp = [last](long t) { return static_cast<std::size_t>(std::clamp(t, 0L, last)); };

  FeatureMatrix out(x.rows, 2 * x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    for (std::size_t d = 0; d < x.cols; ++d) {
      out.at(t, d) = x.at(t, d);
      float acc = 0.0f;
      for (int n = 1; n <= kWindow; ++n) {
        const long ti = static_cast<long>(t);
        acc += static_cast<float>(n) * (x.at(clamp(ti + n), d) - x.at(clamp(ti - n), d));
      }
      out.at(t, x.cols + d) = acc / kDenominator;
    }
  }
  return out;
}

FeatureMatrix cmvn(const FeatureMatrix& x) {
  if (x.rows == 0) throw ShapeError("cmvn: empty input");
  FeatureMatrix out(x.rows, x.cols);
  const double n = static_cast<double>(x.rows);
  for (std::size_t d = 0; d < x.cols; ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < x.rows; ++t) mean += x.at(t, d);
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < x.rows; ++t) {
      const double c = x.at(t, d) - mean;
      var += c * c;
    }
    const double sd = std::sqrt(var / n);
    if (sd < 1e-10) continue;
    for (std::size_t t = 0; t < x.rows; ++t) out.at(t, d) = static_cast<float>((x.at(t, d) - mean) / sd);
  }
  return out;
}

FeatureMatrix model_input(const UtteranceFeatures& u) { return cmvn(add_deltas(u.mel)); }

void SyntheticCorpusSpec::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("synthetic corpus: ") + name + " must be positive");
  };
  positive(num_speakers, "num_speakers");
  positive(num_phone_classes, "num_phone_classes");
  positive(utterances_per_speaker, "utterances_per_speaker");
  positive(min_frames, "min_frames");
  positive(min_segment, "min_segment");
  positive(target_dim, "target_dim");
  if (max_frames < min_frames) throw ConfigError("synthetic corpus: max_frames < min_frames");
  if (max_segment < min_segment) throw ConfigError("synthetic corpus: max_segment < min_segment");
  if (num_phone_classes > kNumPhoneClasses) {
    throw ConfigError("synthetic corpus: at most " + std::to_string(kNumPhoneClasses) + " phone classes");
  }
  if (!(noise >= 0.0)) throw ConfigError("synthetic corpus: noise must be non-negative");
}

std::vector<UtteranceFeatures> generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0}));
  std::vector<double> templates(spec.num_phone_classes * kMelDim);
  for (auto& v : templates) v = rng.normal();
  std::vector<double> gains(spec.num_phone_classes);
  for (std::size_t p = 0; p < gains.size(); ++p) gains[p] = p % 3 == 0 ? spec.voiced_gain : spec.unvoiced_gain;
  std::vector<double> offsets(spec.num_speakers * kMelDim);
  for (auto& v : offsets) v = rng.normal();
  std::vector<double> projection(spec.target_dim * kMelDim);
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(kMelDim));
  for (auto& v : projection) v = rng.normal() * proj_scale;

  std::vector<UtteranceFeatures> corpus;
  corpus.reserve(spec.num_speakers * spec.utterances_per_speaker);
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
      Rng local(derive_seed(spec.seed, {1, s, u}));
      const std::size_t length = spec.min_frames + local.below(spec.max_frames - spec.min_frames + 1);

      std::vector<std::uint16_t> labels;
      labels.reserve(length);
      std::size_t previous = spec.num_phone_classes;
      while (labels.size() < length) {
        std::size_t phone = local.below(spec.num_phone_classes);
        if (spec.num_phone_classes > 1) {
          while (phone == previous) phone = local.below(spec.num_phone_classes);
        }
        previous = phone;
        const std::size_t duration = spec.min_segment + local.below(spec.max_segment - spec.min_segment + 1);
        for (std::size_t k = 0; k < duration && labels.size() < length; ++k) {
          labels.push_back(static_cast<std::uint16_t>(phone));
        }
      }

      UtteranceFeatures utt;
      char id[64];
      std::snprintf(id, sizeof(id), "spk%03zu_utt%03zu", s, u);
      utt.id = id;
      utt.speaker = static_cast<std::uint32_t>(s);
      utt.mel = FeatureMatrix(length, kMelDim);
      FeatureMatrix raw_target(length, spec.target_dim);
      std::vector<double> latent(kMelDim);
      for (std::size_t t = 0; t < length; ++t) {
        const std::size_t p = labels[t];
        for (std::size_t d = 0; d < kMelDim; ++d) {
          latent[d] = templates[p * kMelDim + d] + gains[p] * offsets[s * kMelDim + d] +
                      spec.noise * local.normal();
          utt.mel.at(t, d) = static_cast<float>(latent[d]);
        }
        for (std::size_t o = 0; o < spec.target_dim; ++o) {
          double acc = 0.0;
          for (std::size_t d = 0; d < kMelDim; ++d) acc += projection[o * kMelDim + d] * latent[d];
          raw_target.at(t, o) = static_cast<float>(acc);
        }
      }
      utt.target = cmvn(raw_target);
      utt.phonemes = std::move(labels);
      corpus.push_back(std::move(utt));
    }
  }
  return corpus;
}

CorpusSplit split_corpus(const std::vector<UtteranceFeatures>& corpus, std::uint64_t seed) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_speaker[corpus[i].speaker].push_back(i);

  struct Ranked {
    std::size_t rank, speaker_pos, index;
  };
  std::vector<Ranked> ranked;
  std::size_t speaker_pos = 0;
  CorpusSplit split;
  for (auto& [speaker, indices] : by_speaker) {
    Rng rng(derive_seed(seed, {speaker}));
    rng.shuffle(indices);
    split.train.push_back(indices[0]);
    for (std::size_t r = 1; r < indices.size(); ++r) ranked.push_back({r, speaker_pos, indices[r]});
    ++speaker_pos;
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    return a.rank != b.rank ? a.rank < b.rank : a.speaker_pos < b.speaker_pos;
  });

  const std::size_t tenth = (corpus.size() + 5) / 10;
  const std::size_t n_test = std::min(tenth, ranked.size());
  const std::size_t n_dev = std::min(tenth, ranked.size() - n_test);
  const std::size_t n_train = ranked.size() - n_test - n_dev;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    auto& bucket = i < n_train ? split.train : (i < n_train + n_dev ? split.dev : split.test);
    bucket.push_back(ranked[i].index);
  }
  for (auto* part : {&split.train, &split.dev, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

std::vector<std::uint32_t> speaker_inventory(const std::vector<UtteranceFeatures>& corpus) {
  std::vector<std::uint32_t> speakers;
  for (const auto& u : corpus) speakers.push_back(u.speaker);
  std::sort(speakers.begin(), speakers.end());
  speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
  return speakers;
}

namespace {
constexpr char kFeatureMagic[] = "AALB";
constexpr std::size_t kMaxIdLength = 4096;
}  // namespace

void write_feature_file(const std::filesystem::path& path, const UtteranceFeatures& u) {
  u.validate();
  ByteWriter out;
  out.raw(std::string_view(kFeatureMagic, 4));
  out.u32(kFeatureFormatVersion);
  out.u32(static_cast<std::uint32_t>(u.id.size()));
  out.raw(u.id);
  out.u32(u.speaker);
  out.u32(static_cast<std::uint32_t>(u.frames()));
  out.u32(static_cast<std::uint32_t>(u.mel.cols));
  out.u32(static_cast<std::uint32_t>(u.target.cols));
  out.u8(u.phonemes ? 1 : 0);
  for (float v : u.mel.values) out.f32(v);
  for (float v : u.target.values) out.f32(v);
  if (u.phonemes) {
    out.u32(static_cast<std::uint32_t>(u.phonemes->size()));
    for (auto p : *u.phonemes) out.u16(p);
  }
  write_file_atomic(path, out.bytes());
}

UtteranceFeatures read_feature_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string name = path.string();
  ByteReader in(bytes, name);
  if (in.remaining() < 4 || in.raw(4) != std::string_view(kFeatureMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, name + ": not a feature file (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kFeatureFormatVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      name + ": feature format version " + std::to_string(version) + ", expected " +
                          std::to_string(kFeatureFormatVersion));
  }
  const std::uint32_t id_length = in.u32();
  if (id_length > kMaxIdLength) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      name + ": utterance id length " + std::to_string(id_length) + " is implausible");
  }
  UtteranceFeatures u;
  u.id = in.raw(id_length);
  u.speaker = in.u32();
  const std::size_t frames = in.u32();
  const std::size_t d_mel = in.u32();
  const std::size_t d_out = in.u32();
  const bool has_labels = in.u8() != 0;
  if (frames == 0 || d_mel == 0 || d_out == 0) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      name + ": invalid shape T=" + std::to_string(frames) + " d_mel=" + std::to_string(d_mel) +
                          " d_out=" + std::to_string(d_out));
  }
  auto read_matrix = [&](std::size_t cols) {
    if (cols > in.remaining() / 4 / frames) {
      throw FormatError(FormatError::Kind::kTruncated,
                        name + ": truncated, a " + std::to_string(frames) + "x" + std::to_string(cols) +
                            " matrix needs more than the " + std::to_string(in.remaining()) + " bytes left");
    }
    FeatureMatrix m(frames, cols);
    for (auto& v : m.values) v = in.f32();
    return m;
  };
  u.mel = read_matrix(d_mel);
  u.target = read_matrix(d_out);
  if (has_labels) {
    const std::size_t count = in.u32();
    if (count != frames) {
      throw FormatError(FormatError::Kind::kLabelMismatch,
                        name + ": label sequence length " + std::to_string(count) + " does not match frame count " +
                            std::to_string(frames));
    }
    std::vector<std::uint16_t> labels(count);
    for (auto& p : labels) {
      p = in.u16();
      if (p >= kNumPhoneClasses) {
        throw FormatError(FormatError::Kind::kLabelMismatch,
                          name + ": phoneme label " + std::to_string(p) + " outside [0," +
                              std::to_string(kNumPhoneClasses) + ")");
      }
    }
    u.phonemes = std::move(labels);
  }
  if (in.remaining() != 0) {
    throw FormatError(FormatError::Kind::kTrailingData,
                      name + ": " + std::to_string(in.remaining()) + " unexpected trailing bytes");
  }
  return u;
}

IngestResult ingest_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw FormatError(FormatError::Kind::kIo, dir.string() + ": not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  IngestResult result;
  for (const auto& file : files) {
    if (file.extension() != kFeatureExtension) {
      if (file.filename() != "manifest.csv") {
        log::warn("skipping " + file.string() + ": not a " + kFeatureExtension + " feature file");
        result.skipped.push_back(file);
      }
      continue;
    }
    try {
      result.utterances.push_back(read_feature_file(file));
    } catch (const FormatError& e) {
      log::warn(std::string("skipping ") + e.what());
      result.skipped.push_back(file);
    }
  }
  return result;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::kIo, path.string() + ": cannot open manifest");
  const auto base = path.parent_path();
  std::string line;
  if (!std::getline(in, line) || line != "utterance_id,path,speaker_id") {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      path.string() + ": manifest header must be 'utterance_id,path,speaker_id'");
  }
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3) {
      throw FormatError(FormatError::Kind::kShapeMismatch, where + ": expected 3 fields, got " +
                                                               std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.utterance_id = fields[0];
    e.path = std::filesystem::path(fields[1]).is_absolute() ? std::filesystem::path(fields[1]) : base / fields[1];
    try {
      std::size_t used = 0;
      const unsigned long speaker = std::stoul(fields[2], &used);
      if (used != fields[2].size() || speaker > UINT32_MAX) throw std::invalid_argument("range");
      e.speaker = static_cast<std::uint32_t>(speaker);
    } catch (const std::logic_error&) {
      throw FormatError(FormatError::Kind::kShapeMismatch, where + ": invalid speaker_id '" + fields[2] + "'");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text = "utterance_id,path,speaker_id\n";
  for (const auto& e : entries) {
    if (e.utterance_id.find(',') != std::string::npos || e.path.string().find(',') != std::string::npos) {
      throw FormatError(FormatError::Kind::kShapeMismatch, "manifest fields may not contain commas: " + e.utterance_id);
    }
    text += e.utterance_id + "," + e.path.generic_string() + "," + std::to_string(e.speaker) + "\n";
  }
  write_text_atomic(path, text);
}

std::vector<UtteranceFeatures> load_manifest_corpus(const std::filesystem::path& manifest) {
  std::vector<UtteranceFeatures> corpus;
  for (const auto& entry : read_manifest(manifest)) {
    auto u = read_feature_file(entry.path);
    if (u.id != entry.utterance_id || u.speaker != entry.speaker) {
      throw FormatError(FormatError::Kind::kLabelMismatch,
                        entry.path.string() + ": file holds " + u.id + " (speaker " + std::to_string(u.speaker) +
                            "), manifest expects " + entry.utterance_id + " (speaker " +
                            std::to_string(entry.speaker) + ")");
    }
    corpus.push_back(std::move(u));
  }
  return corpus;
}

std::filesystem::path export_corpus(const std::vector<UtteranceFeatures>& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& u : corpus) {
    const std::string file = u.id + kFeatureExtension;
    write_feature_file(dir / file, u);
    entries.push_back({u.id, file, u.speaker});
  }
  const auto manifest = dir / "manifest.csv";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace aalbert
