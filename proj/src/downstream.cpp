// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>

#include "aalbert/binary_io.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/log.hpp"
#include "aalbert/ops.hpp"
#include "aalbert/parallel.hpp"
#include "aalbert/pretraining.hpp"

namespace aalbert {

const char* to_string(DownstreamTask task) {
  return task == DownstreamTask::kPhoneme ? "phoneme" : "speaker";
}
const char* to_string(TrainMode mode) {
  return mode == TrainMode::kFeatureExtraction ? "feature_extraction" : "fine_tune";
}
const char* to_string(FusionMode mode) {
  return mode == FusionMode::kLastLayer ? "last_layer" : "weighted_sum";
}

DownstreamTask parse_task(const std::string& name) {
  if (name == "phoneme") return DownstreamTask::kPhoneme;
  if (name == "speaker") return DownstreamTask::kSpeaker;
  throw ConfigError("unknown task '" + name + "' (expected phoneme or speaker)");
}
TrainMode parse_train_mode(const std::string& name) {
  if (name == "feature_extraction") return TrainMode::kFeatureExtraction;
  if (name == "fine_tune") return TrainMode::kFineTune;
  throw ConfigError("unknown mode '" + name + "' (expected feature_extraction or fine_tune)");
}
FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "last_layer") return FusionMode::kLastLayer;
  if (name == "weighted_sum") return FusionMode::kWeightedSum;
  throw ConfigError("unknown fusion '" + name + "' (expected last_layer or weighted_sum)");
}

template <typename T>
FusionHead<T> FusionHead<T>::last_layer() {
  return FusionHead{FusionMode::kLastLayer, {}};
}

template <typename T>
FusionHead<T> FusionHead<T>::weighted_sum(std::size_t num_layers) {
  if (num_layers == 0) throw ShapeError("weighted-sum fusion needs at least one layer");
  return FusionHead{FusionMode::kWeightedSum, Tensor<T>::zeros({num_layers}, true)};
}

template <typename T>
std::vector<T> FusionHead<T>::layer_weights() const {
  if (mode == FusionMode::kLastLayer) return {};
  NoGradGuard guard;
  const auto w = softmax(raw_weights);
  return {w.values().begin(), w.values().end()};
}

template <typename T>
std::vector<Tensor<T>> FusionHead<T>::parameters() const {
  if (mode == FusionMode::kLastLayer) return {};
  return {raw_weights};
}

template <typename T>
Tensor<T> fuse(std::span<const Tensor<T>> layers, const FusionHead<T>& head) {
  if (layers.empty()) throw ShapeError("fuse: no layer representations");
  if (head.mode == FusionMode::kLastLayer) return layers.back();
  if (head.raw_weights.numel() != layers.size()) {
    throw ShapeError("fuse: " + std::to_string(head.raw_weights.numel()) + " fusion weights for " +
                     std::to_string(layers.size()) + " layers");
  }
  return weighted_sum(layers, softmax(head.raw_weights));
}

namespace {

template <typename T>
Tensor<T> init_weight(std::size_t in, std::size_t out, Rng& rng) {
  std::vector<T> v(in * out);
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(0.02));
  return Tensor<T>({in, out}, std::move(v), true);
}

}  // namespace

template <typename T>
PhonemeHead<T> PhonemeHead<T>::init(std::size_t rep_dim, std::size_t hidden_dim, Rng& rng) {
  PhonemeHead h;
  h.hidden_weight = init_weight<T>(rep_dim, hidden_dim, rng);
  h.hidden_bias = Tensor<T>::zeros({hidden_dim}, true);
  h.output_weight = init_weight<T>(hidden_dim, kNumPhoneClasses, rng);
  h.output_bias = Tensor<T>::zeros({kNumPhoneClasses}, true);
  return h;
}

template <typename T>
Tensor<T> PhonemeHead<T>::logits(const Tensor<T>& reps) const {
  return linear(gelu(linear(reps, hidden_weight, hidden_bias)), output_weight, output_bias);
}

template <typename T>
std::vector<Tensor<T>> PhonemeHead<T>::parameters() const {
  return {hidden_weight, hidden_bias, output_weight, output_bias};
}

template <typename T>
SpeakerHead<T> SpeakerHead<T>::init(std::size_t rep_dim, std::size_t num_speakers, Rng& rng) {
  return SpeakerHead{init_weight<T>(rep_dim, num_speakers, rng), Tensor<T>::zeros({num_speakers}, true)};
}

template <typename T>
Tensor<T> SpeakerHead<T>::logits(const Tensor<T>& reps) const {
  return mean(linear(reps, weight, bias), 0);
}

template <typename T>
std::vector<Tensor<T>> SpeakerHead<T>::parameters() const {
  return {weight, bias};
}

double DownstreamSettings::resolved_learning_rate() const {
  if (learning_rate > 0.0) return learning_rate;
  return mode == TrainMode::kFineTune ? 1e-4 : 1e-3;
}

namespace {

struct TaskData {
  std::vector<Tensor<float>> inputs;             // decimated model input per utterance
  std::vector<std::vector<int>> frame_labels;    // phoneme task
  std::vector<int> speaker_labels;
  std::size_t num_speakers = 0;
  CorpusSplit split;
};

TaskData prepare_task(const std::vector<UtteranceFeatures>& corpus, const DownstreamSettings& s) {
  if (corpus.empty()) throw ConfigError(std::string(to_string(s.task)) + " task: corpus is empty");
  if (s.downsample_factor == 0) throw ConfigError("downstream: downsample_factor must be at least 1");
  TaskData d;
  const auto speakers = speaker_inventory(corpus);
  d.num_speakers = speakers.size();
  d.inputs.resize(corpus.size());
  d.frame_labels.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& u = corpus[i];
    u.validate();
    if (s.task == DownstreamTask::kPhoneme) {
      if (!u.phonemes) {
        throw FormatError(FormatError::Kind::kLabelMismatch,
                          "phoneme task: utterance " + u.id + " has no phoneme labels");
      }
      const auto labels = downsample_labels(*u.phonemes, s.downsample_factor);
      d.frame_labels[i].assign(labels.begin(), labels.end());
    }
    d.speaker_labels.push_back(static_cast<int>(
        std::lower_bound(speakers.begin(), speakers.end(), u.speaker) - speakers.begin()));
  }
  parallel_for(corpus.size(), s.threads, [&](std::size_t i) {
    d.inputs[i] = downsample(model_input(corpus[i]), s.downsample_factor).to_tensor();
  });
  d.split = split_corpus(corpus, s.seed);
  if (d.split.train.empty() || d.split.dev.empty() || d.split.test.empty()) {
    throw ConfigError("downstream: corpus of " + std::to_string(corpus.size()) +
                      " utterances leaves an empty train, dev or test split");
  }
  return d;
}

// Produces per-layer representations for a set of utterances. `train` turns on
// dropout where the source has any.
using RepresentationFn =
    std::function<std::vector<std::vector<Tensor<float>>>(std::span<const std::size_t>, bool, std::uint64_t)>;

std::vector<std::vector<float>> snapshot(const std::vector<Tensor<float>>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

void restore(const std::vector<Tensor<float>>& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    std::copy(values[i].begin(), values[i].end(), p.mutable_values().begin());
  }
}

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
  const auto v = logits.values().subspan(row * logits.cols(), logits.cols());
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Trainer {
  const TaskData& data;
  const DownstreamSettings& settings;
  RepresentationFn representations;
  std::vector<Tensor<float>> extra_params;  // encoder parameters when fine-tuning
  std::size_t rep_dim = 0;
  std::size_t num_layers = 0;

  DownstreamResult run() {
    const auto& s = settings;
    DownstreamResult result;
    result.fusion = s.fusion == FusionMode::kWeightedSum ? FusionHead<float>::weighted_sum(num_layers)
                                                         : FusionHead<float>::last_layer();
    Rng init_rng(derive_seed(s.seed, {0x4EAD}));
    std::vector<Tensor<float>> params = result.fusion.parameters();
    if (s.task == DownstreamTask::kPhoneme) {
      result.phoneme_head = PhonemeHead<float>::init(rep_dim, s.phoneme_hidden ? s.phoneme_hidden : rep_dim, init_rng);
      for (auto& p : result.phoneme_head->parameters()) params.push_back(p);
    } else {
      result.speaker_head = SpeakerHead<float>::init(rep_dim, data.num_speakers, init_rng);
      for (auto& p : result.speaker_head->parameters()) params.push_back(p);
    }
    for (auto& p : extra_params) params.push_back(p);

    AdamWSettings opt;
    opt.learning_rate = s.resolved_learning_rate();
    opt.weight_decay = s.weight_decay;
    AdamW<float> optimizer(params, opt);

    auto logits_for = [&](const Tensor<float>& fused) {
      return s.task == DownstreamTask::kPhoneme ? result.phoneme_head->logits(fused)
                                                : result.speaker_head->logits(fused);
    };

    std::vector<std::vector<float>> best = snapshot(params);
    double best_dev = -1.0;
    std::size_t stale = 0;
    std::vector<std::size_t> order = data.split.train;
    const std::size_t batch_size = std::max<std::size_t>(s.batch_size, 1);

    for (std::size_t epoch = 1; epoch <= s.epochs; ++epoch) {
      Rng shuffler(derive_seed(s.seed, {0x5EED, epoch}));
      shuffler.shuffle(order);
      double loss_total = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::span<const std::size_t> batch(order.data() + start, std::min(batch_size, order.size() - start));
        ++result.steps;
        const auto reps = representations(batch, true, result.steps);
        std::vector<Tensor<float>> logits;
        std::vector<int> labels;
        for (std::size_t k = 0; k < batch.size(); ++k) {
          logits.push_back(logits_for(fuse<float>(reps[k], result.fusion)));
          if (s.task == DownstreamTask::kPhoneme) {
            const auto& l = data.frame_labels[batch[k]];
            labels.insert(labels.end(), l.begin(), l.end());
          } else {
            labels.push_back(data.speaker_labels[batch[k]]);
          }
        }
        const auto all = logits.size() == 1 ? logits[0] : concat<float>(logits, 0);
        const auto loss = cross_entropy(all, labels);
        optimizer.zero_grad();
        backward(loss);
        optimizer.step();
        loss_total += loss.item();
        ++batches;
        if (s.fusion == FusionMode::kWeightedSum) {
          const auto w = result.fusion.layer_weights();
          const double total = std::accumulate(w.begin(), w.end(), 0.0);
          result.max_fusion_weight_error = std::max(result.max_fusion_weight_error, std::abs(total - 1.0));
        }
      }
      result.train_loss.push_back(loss_total / static_cast<double>(std::max<std::size_t>(batches, 1)));
      const double dev = evaluate(result, data.split.dev);
      result.dev_accuracy.push_back(dev);
      if (dev > best_dev) {
        best_dev = dev;
        best = snapshot(params);
        result.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= s.patience) {
        break;
      }
    }
    restore(params, best);
    result.test_accuracy = evaluate(result, data.split.test);
    return result;
  }

  double evaluate(const DownstreamResult& r, std::span<const std::size_t> items) const {
    NoGradGuard guard;
    const auto reps = representations(items, false, 0);
    std::size_t correct = 0, total = 0;
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto fused = fuse<float>(reps[k], r.fusion);
      if (settings.task == DownstreamTask::kPhoneme) {
        const auto logits = r.phoneme_head->logits(fused);
        const auto& labels = data.frame_labels[items[k]];
        for (std::size_t t = 0; t < labels.size(); ++t) {
          correct += argmax_row(logits, t) == static_cast<std::size_t>(labels[t]);
        }
        total += labels.size();
      } else {
        const auto logits = r.speaker_head->logits(fused);
        correct += argmax_row(logits, 0) == static_cast<std::size_t>(data.speaker_labels[items[k]]);
        ++total;
      }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

std::vector<std::vector<Tensor<float>>> frozen_layers(const EncoderWeights<float>& encoder,
                                                      const std::vector<Tensor<float>>& inputs, int threads) {
  NoGradGuard guard;
  auto outputs = forward_batch<float>(encoder, inputs, false, std::nullopt, threads);
  std::vector<std::vector<Tensor<float>>> out;
  out.reserve(outputs.size());
  for (auto& o : outputs) out.push_back(std::move(o.layers));
  return out;
}

void check_encoder_input(const EncoderWeights<float>& encoder, const TaskData& data) {
  const std::size_t width = data.inputs.front().cols();
  if (width != encoder.config.input_dim) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      "encoder expects input width " + std::to_string(encoder.config.input_dim) +
                          ", corpus provides " + std::to_string(width));
  }
}

}  // namespace

DownstreamResult train_downstream(const EncoderWeights<float>& encoder,
                                  const std::vector<UtteranceFeatures>& corpus,
                                  const DownstreamSettings& settings) {
  const auto data = prepare_task(corpus, settings);
  check_encoder_input(encoder, data);
  Trainer trainer{data, settings, {}, {}, encoder.config.hidden_dim, encoder.config.num_layers};

  if (settings.mode == TrainMode::kFeatureExtraction) {
    const auto cached = frozen_layers(encoder, data.inputs, settings.threads);
    trainer.representations = [&cached](std::span<const std::size_t> items, bool, std::uint64_t) {
      std::vector<std::vector<Tensor<float>>> out;
      for (auto i : items) out.push_back(cached[i]);
      return out;
    };
    return trainer.run();
  }

  auto tuned = encoder.clone();
  trainer.extra_params = tuned.parameters();
  trainer.representations = [&](std::span<const std::size_t> items, bool train, std::uint64_t step) {
    std::vector<Tensor<float>> inputs;
    for (auto i : items) inputs.push_back(data.inputs[i]);
    std::optional<std::uint64_t> dropout;
    if (train) dropout = derive_seed(settings.seed, {0xD80, step});
    auto outputs = forward_batch<float>(tuned, inputs, false, dropout, settings.threads);
    std::vector<std::vector<Tensor<float>>> out;
    for (auto& o : outputs) out.push_back(std::move(o.layers));
    return out;
  };
  auto result = trainer.run();
  result.encoder = std::move(tuned);
  return result;
}

DownstreamResult train_raw_baseline(const std::vector<UtteranceFeatures>& corpus,
                                    const DownstreamSettings& settings) {
  auto s = settings;
  s.mode = TrainMode::kFeatureExtraction;
  s.fusion = FusionMode::kLastLayer;
  const auto data = prepare_task(corpus, s);
  Trainer trainer{data, s, {}, {}, data.inputs.front().cols(), 1};
  trainer.representations = [&data](std::span<const std::size_t> items, bool, std::uint64_t) {
    std::vector<std::vector<Tensor<float>>> out;
    for (auto i : items) out.push_back({data.inputs[i]});
    return out;
  };
  return trainer.run();
}

double majority_baseline(const std::vector<UtteranceFeatures>& corpus, DownstreamTask task,
                         std::uint64_t split_seed, std::size_t downsample_factor) {
  DownstreamSettings s;
  s.task = task;
  s.seed = split_seed;
  s.downsample_factor = downsample_factor;
  const auto data = prepare_task(corpus, s);
  std::map<int, std::size_t> counts;
  auto labels_of = [&](std::size_t i) {
    return task == DownstreamTask::kPhoneme ? data.frame_labels[i] : std::vector<int>{data.speaker_labels[i]};
  };
  for (auto i : data.split.train)
    for (int l : labels_of(i)) ++counts[l];
  const int majority =
      std::max_element(counts.begin(), counts.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  std::size_t hit = 0, total = 0;
  for (auto i : data.split.test) {
    for (int l : labels_of(i)) {
      hit += l == majority;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

void export_pooled_embeddings(const EncoderWeights<float>& encoder, const FusionHead<float>& fusion,
                              const std::vector<UtteranceFeatures>& corpus, const std::filesystem::path& path,
                              std::size_t downsample_factor, int threads) {
  const std::size_t dim = encoder.config.hidden_dim;
  std::string out = "utterance_id,speaker";
  for (std::size_t j = 0; j < dim; ++j) out += ",e" + std::to_string(j);
  out += '\n';

  std::vector<Tensor<float>> inputs(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    inputs[i] = downsample(model_input(corpus[i]), downsample_factor).to_tensor();
  });
  if (!inputs.empty() && inputs.front().cols() != encoder.config.input_dim) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      "encoder expects input width " + std::to_string(encoder.config.input_dim) +
                          ", corpus provides " + std::to_string(inputs.front().cols()));
  }
  const auto layers = frozen_layers(encoder, inputs, threads);
  NoGradGuard guard;
  char buf[32];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto pooled = mean(fuse<float>(layers[i], fusion), 0);
    out += corpus[i].id + "," + std::to_string(corpus[i].speaker);
    for (float v : pooled.values()) {
      std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
      out += buf;
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

void append_metrics_row(const std::filesystem::path& path, const MetricsRow& row) {
  std::string existing;
  if (std::filesystem::exists(path)) {
    const auto bytes = read_file_bytes(path);
    existing.assign(bytes.begin(), bytes.end());
  }
  if (existing.empty()) existing = std::string(kMetricsHeader) + "\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%s,%s,%s,%zu,%.6f\n", to_string(row.task), to_string(row.mode),
                to_string(row.fusion), row.layer_count, row.test_accuracy);
  write_text_atomic(path, existing + line);
}

#define AALBERT_INSTANTIATE(T)                                                              \
  template struct FusionHead<T>;                                                            \
  template struct PhonemeHead<T>;                                                           \
  template struct SpeakerHead<T>;                                                           \
  template Tensor<T> fuse<T>(std::span<const Tensor<T>>, const FusionHead<T>&);
AALBERT_INSTANTIATE(float)
AALBERT_INSTANTIATE(double)
#undef AALBERT_INSTANTIATE

}  // namespace aalbert
