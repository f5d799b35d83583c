// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "aalbert/binary_io.hpp"
#include "aalbert/data.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/log.hpp"
#include "aalbert/rng.hpp"

namespace aalbert {
namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "aalbert_data_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

FeatureMatrix column(std::vector<float> v) {
  const std::size_t n = v.size();
  return FeatureMatrix(n, 1, std::move(v));
}

SyntheticCorpusSpec small_spec(double noise = 0.1) {
  SyntheticCorpusSpec s;
  s.num_speakers = 5;
  s.num_phone_classes = 8;
  s.utterances_per_speaker = 10;
  s.min_frames = 20;
  s.max_frames = 40;
  s.target_dim = 12;
  s.noise = noise;
  s.seed = 3;
  return s;
}

TEST(Deltas, ConstantInputGivesZeroDelta) {
  FeatureMatrix x(6, 3);
  std::fill(x.values.begin(), x.values.end(), 2.5f);
  const auto out = add_deltas(x);
  ASSERT_EQ(out.rows, 6u);
  ASSERT_EQ(out.cols, 6u);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_EQ(out.at(t, d), 2.5f);
      EXPECT_EQ(out.at(t, 3 + d), 0.0f);
    }
  }
}

TEST(Deltas, RampHasUnitDeltaInInterior) {
  // (1*(1) + 2*(2)) * 2 / 10 = 1 for every frame with two neighbours each side.
  const auto out = add_deltas(column({0, 1, 2, 3, 4, 5, 6}));
  for (std::size_t t = 2; t <= 4; ++t) EXPECT_FLOAT_EQ(out.at(t, 1), 1.0f);
  // Edge replication: frame 0 sees x[-1] = x[-2] = 0 -> (1*1 + 2*2) / 10.
  EXPECT_FLOAT_EQ(out.at(0, 1), 0.5f);
  EXPECT_FLOAT_EQ(out.at(1, 1), 0.8f);  // (1*(2-0) + 2*(3-0)) / 10
}

TEST(Deltas, SingleFrameGivesZero) {
  const auto out = add_deltas(column({4.0f}));
  EXPECT_EQ(out.at(0, 1), 0.0f);
}

TEST(Cmvn, HandComputedColumn) {
  const auto out = cmvn(column({1, 2, 3}));
  EXPECT_NEAR(out.at(0, 0), -1.2247449f, 1e-5);
  EXPECT_NEAR(out.at(1, 0), 0.0f, 1e-6);
  EXPECT_NEAR(out.at(2, 0), 1.2247449f, 1e-5);
}

TEST(Cmvn, ConstantColumnBecomesZero) {
  const auto out = cmvn(column({0.1f, 0.1f, 0.1f, 0.1f, 0.1f}));
  for (float v : out.values) EXPECT_EQ(v, 0.0f);
}

TEST(Cmvn, StandardizedColumnUnchanged) {
  const auto once = cmvn(column({3, -1, 4, 1, -5, 9, 2}));
  const auto twice = cmvn(once);
  for (std::size_t i = 0; i < once.values.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-5);
}

TEST(Cmvn, ColumnsHaveZeroMeanUnitStd) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng.below(50), cols = 1 + rng.below(8);
    FeatureMatrix x(rows, cols);
    for (auto& v : x.values) v = static_cast<float>(rng.normal(3.0, 10.0));
    const auto out = cmvn(x);
    for (std::size_t d = 0; d < cols; ++d) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t t = 0; t < rows; ++t) mean += out.at(t, d);
      mean /= static_cast<double>(rows);
      for (std::size_t t = 0; t < rows; ++t) sq += (out.at(t, d) - mean) * (out.at(t, d) - mean);
      EXPECT_NEAR(mean, 0.0, 1e-5);
      EXPECT_NEAR(std::sqrt(sq / static_cast<double>(rows)), 1.0, 1e-4);
    }
  }
}

TEST(Pipeline, DeterministicAndShapePreserving) {
  const auto corpus = generate_synthetic_corpus(small_spec());
  for (const auto& u : corpus) {
    const auto a = model_input(u);
    EXPECT_EQ(a.rows, u.frames());
    EXPECT_EQ(a.cols, 2 * kMelDim);
    EXPECT_EQ(a, model_input(u));
  }
}

TEST(Synthetic, SameSpecGivesIdenticalCorpus) {
  EXPECT_EQ(generate_synthetic_corpus(small_spec()), generate_synthetic_corpus(small_spec()));
  auto other = small_spec();
  other.seed = 4;
  EXPECT_NE(generate_synthetic_corpus(small_spec())[0].mel, generate_synthetic_corpus(other)[0].mel);
}

TEST(Synthetic, ShapesAndLabels) {
  const auto spec = small_spec();
  const auto corpus = generate_synthetic_corpus(spec);
  ASSERT_EQ(corpus.size(), 50u);
  for (const auto& u : corpus) {
    EXPECT_NO_THROW(u.validate());
    EXPECT_GE(u.frames(), spec.min_frames);
    EXPECT_LE(u.frames(), spec.max_frames);
    EXPECT_EQ(u.mel.cols, kMelDim);
    EXPECT_EQ(u.target.cols, spec.target_dim);
    ASSERT_TRUE(u.phonemes.has_value());
    for (auto p : *u.phonemes) EXPECT_LT(p, spec.num_phone_classes);
  }
}

// Frames of the raw (un-normalized) mel, one row per frame.
Eigen::MatrixXd raw_frames(const std::vector<UtteranceFeatures>& corpus, std::vector<int>& speakers) {
  std::size_t total = 0;
  for (const auto& u : corpus) total += u.frames();
  Eigen::MatrixXd x(total, kMelDim + 1);
  speakers.clear();
  std::size_t row = 0;
  for (const auto& u : corpus) {
    for (std::size_t t = 0; t < u.frames(); ++t, ++row) {
      for (std::size_t d = 0; d < kMelDim; ++d) x(row, d) = u.mel.at(t, d);
      x(row, kMelDim) = 1.0;
      speakers.push_back(static_cast<int>(u.speaker));
    }
  }
  return x;
}

double accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

// Multiclass perceptron: converges to zero training errors on separable data.
TEST(Synthetic, NoiselessSpeakersAreLinearlySeparable) {
  const auto spec = small_spec(0.0);
  std::vector<int> speakers;
  const auto x = raw_frames(generate_synthetic_corpus(spec), speakers);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(x.cols(), static_cast<Eigen::Index>(spec.num_speakers));
  for (int epoch = 0; epoch < 2000; ++epoch) {
    std::size_t mistakes = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index best = 0;
      (x.row(i) * w).maxCoeff(&best);
      const int truth = speakers[static_cast<std::size_t>(i)];
      if (best != truth) {
        w.col(truth) += x.row(i).transpose();
        w.col(best) -= x.row(i).transpose();
        ++mistakes;
      }
    }
    if (mistakes == 0) break;
  }
  EXPECT_EQ(accuracy(x * w, speakers), 1.0);
}

// Least-squares one-hot regression as a depth-0 probe on raw frames.
TEST(Synthetic, LinearProbeRecoversSpeakerAtNoiseTenth) {
  auto spec = small_spec(0.1);
  spec.num_speakers = 10;
  spec.num_phone_classes = 12;
  std::vector<int> speakers;
  const auto x = raw_frames(generate_synthetic_corpus(spec), speakers);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(spec.num_speakers));
  for (Eigen::Index i = 0; i < x.rows(); ++i) y(i, speakers[static_cast<std::size_t>(i)]) = 1.0;
  const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
  EXPECT_GT(accuracy(x * w, speakers), 0.9);
}

TEST(Split, FiveSpeakersTenUtterances) {
  const auto corpus = generate_synthetic_corpus(small_spec());
  const auto split = split_corpus(corpus, 9);
  EXPECT_EQ(split.train.size(), 40u);
  EXPECT_EQ(split.dev.size(), 5u);
  EXPECT_EQ(split.test.size(), 5u);
}

TEST(Split, DisjointCompleteStratifiedReproducible) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto spec = small_spec();
    spec.num_speakers = 3 + seed;
    spec.utterances_per_speaker = 3 + 4 * seed;
    const auto corpus = generate_synthetic_corpus(spec);
    const auto split = split_corpus(corpus, seed);
    std::set<std::size_t> seen;
    for (const auto* part : {&split.train, &split.dev, &split.test}) {
      for (auto i : *part) EXPECT_TRUE(seen.insert(i).second) << "index " << i << " in two splits";
    }
    EXPECT_EQ(seen.size(), corpus.size());
    std::set<std::uint32_t> train_speakers;
    for (auto i : split.train) train_speakers.insert(corpus[i].speaker);
    EXPECT_EQ(train_speakers.size(), spec.num_speakers);
    const double n = static_cast<double>(corpus.size());
    EXPECT_LE(std::abs(static_cast<double>(split.test.size()) - n / 10), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(split.dev.size()) - n / 10), 1.0);

    const auto again = split_corpus(corpus, seed);
    EXPECT_EQ(again.train, split.train);
    EXPECT_EQ(again.test, split.test);
  }
}

TEST(Split, SingletonSpeakersStayInTrain) {
  auto spec = small_spec();
  spec.num_speakers = 12;
  spec.utterances_per_speaker = 1;
  const auto split = split_corpus(generate_synthetic_corpus(spec), 1);
  EXPECT_EQ(split.train.size(), 12u);
  EXPECT_TRUE(split.test.empty());
}

TEST(FeatureFile, RoundTrip) {
  const auto dir = fresh_dir("roundtrip");
  auto corpus = generate_synthetic_corpus(small_spec());
  corpus[1].phonemes.reset();
  for (std::size_t i = 0; i < 2; ++i) {
    write_feature_file(dir / "u.aalb", corpus[i]);
    EXPECT_EQ(read_feature_file(dir / "u.aalb"), corpus[i]);
  }
}

std::vector<std::uint8_t> encode_with_labels(std::uint32_t frames, std::uint32_t label_count) {
  ByteWriter w;
  w.raw("AALB");
  w.u32(kFeatureFormatVersion);
  w.u32(2);
  w.raw("ab");
  w.u32(7);
  w.u32(frames);
  w.u32(1);
  w.u32(1);
  w.u8(1);
  for (std::uint32_t i = 0; i < 2 * frames; ++i) w.f32(0.5f);
  w.u32(label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) w.u16(3);
  return w.bytes();
}

FormatError::Kind read_error(const std::filesystem::path& p, std::string* message = nullptr) {
  try {
    read_feature_file(p);
  } catch (const FormatError& e) {
    if (message != nullptr) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "read succeeded unexpectedly";
  return FormatError::Kind::kIo;
}

TEST(FeatureFile, LabelLengthMismatchNamesBothLengths) {
  const auto path = fresh_dir("labels") / "bad.aalb";
  write_file_atomic(path, encode_with_labels(5, 4));
  std::string message;
  EXPECT_EQ(read_error(path, &message), FormatError::Kind::kLabelMismatch);
  EXPECT_NE(message.find('4'), std::string::npos) << message;
  EXPECT_NE(message.find('5'), std::string::npos) << message;

  write_file_atomic(path, encode_with_labels(5, 5));
  EXPECT_EQ(read_feature_file(path).phonemes->size(), 5u);
}

TEST(FeatureFile, DistinctDiagnostics) {
  const auto path = fresh_dir("diag") / "x.aalb";
  const auto good = encode_with_labels(4, 4);

  auto bytes = good;
  bytes[1] = 'X';
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_error(path), FormatError::Kind::kBadMagic);

  bytes = good;
  bytes[4] = 2;
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_error(path), FormatError::Kind::kVersionMismatch);

  bytes = good;
  bytes.resize(bytes.size() - 3);
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_error(path), FormatError::Kind::kTruncated);

  bytes = good;
  bytes.resize(30);
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_error(path), FormatError::Kind::kTruncated);

  bytes = good;
  bytes.push_back(1);
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_error(path), FormatError::Kind::kTrailingData);

  bytes = encode_with_labels(0, 0);
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_error(path), FormatError::Kind::kShapeMismatch);
}

TEST(FeatureFile, WriterRejectsInconsistentUtterance) {
  auto u = generate_synthetic_corpus(small_spec())[0];
  u.phonemes->pop_back();
  EXPECT_THROW(write_feature_file(fresh_dir("reject") / "u.aalb", u), ShapeError);
}

TEST(Ingest, SkipsNonMatchingFilesWithWarnings) {
  const auto dir = fresh_dir("ingest");
  const auto corpus = generate_synthetic_corpus(small_spec());
  write_feature_file(dir / "b.aalb", corpus[1]);
  write_feature_file(dir / "a.aalb", corpus[0]);
  write_text_atomic(dir / "notes.txt", "hello");
  write_text_atomic(dir / "broken.aalb", "AALBgarbage");

  log::ScopedCapture capture;
  const auto result = ingest_directory(dir);
  ASSERT_EQ(result.utterances.size(), 2u);
  EXPECT_EQ(result.utterances[0], corpus[0]);
  EXPECT_EQ(result.utterances[1], corpus[1]);
  EXPECT_EQ(result.skipped.size(), 2u);
  EXPECT_EQ(capture.warnings(), 2);
}

TEST(Manifest, ExportAndReload) {
  const auto dir = fresh_dir("manifest");
  const auto corpus = generate_synthetic_corpus(small_spec());
  const auto manifest = export_corpus(corpus, dir);
  const auto entries = read_manifest(manifest);
  ASSERT_EQ(entries.size(), corpus.size());
  EXPECT_EQ(entries[3].utterance_id, corpus[3].id);
  EXPECT_EQ(load_manifest_corpus(manifest), corpus);
}

TEST(Manifest, SpeakerDisagreementRejected) {
  const auto dir = fresh_dir("manifest_bad");
  const auto corpus = generate_synthetic_corpus(small_spec());
  write_feature_file(dir / "u.aalb", corpus[0]);
  write_manifest(dir / "manifest.csv", {{corpus[0].id, "u.aalb", corpus[0].speaker + 1}});
  try {
    load_manifest_corpus(dir / "manifest.csv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kLabelMismatch);
  }
}

TEST(Manifest, BadHeaderRejected) {
  const auto dir = fresh_dir("manifest_header");
  write_text_atomic(dir / "m.csv", "id,file,spk\n");
  EXPECT_THROW(read_manifest(dir / "m.csv"), FormatError);
}

}  // namespace
}  // namespace aalbert
