// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/probing.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>

#include "aalbert/adamw.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/ops.hpp"
#include "aalbert/parallel.hpp"
#include "aalbert/pretraining.hpp"
#include "aalbert/rng.hpp"

namespace aalbert {

const char* to_string(ProbeDepth depth) {
  switch (depth) {
    case ProbeDepth::kLinear: return "linear";
    case ProbeDepth::kOneHidden: return "one_hidden";
    case ProbeDepth::kTwoHidden: return "two_hidden";
  }
  return "?";
}

const char* to_string(ProbeTask task) {
  return task == ProbeTask::kPhoneme ? "phoneme" : "speaker";
}

ProbeDepth parse_probe_depth(const std::string& name) {
  for (auto d : {ProbeDepth::kLinear, ProbeDepth::kOneHidden, ProbeDepth::kTwoHidden}) {
    if (name == to_string(d)) return d;
  }
  throw ConfigError("unknown probe depth '" + name + "' (expected linear, one_hidden or two_hidden)");
}

ProbeTask parse_probe_task(const std::string& name) {
  if (name == "phoneme") return ProbeTask::kPhoneme;
  if (name == "speaker") return ProbeTask::kSpeaker;
  throw ConfigError("unknown probe task '" + name + "' (expected phoneme or speaker)");
}

namespace {

enum Split { kTrain = 0, kDev = 1, kTest = 2 };

struct FrameSplit {
  std::size_t rows = 0;
  std::vector<std::vector<float>> layers;  // per layer, rows x dim
  std::vector<int> phonemes;
  std::vector<int> speakers;
};

// Frozen representations of every kept frame, shared by all probe cells.
struct FrameBank {
  std::size_t dim = 0;
  std::size_t num_layers = 0;
  std::size_t num_speakers = 0;
  bool has_phonemes = true;
  std::array<FrameSplit, 3> splits;
};

FrameBank collect_frames(const EncoderWeights<float>& encoder, const std::vector<UtteranceFeatures>& corpus,
                         const ProbeSettings& s) {
  if (corpus.empty()) throw ConfigError("probe: corpus is empty");
  if (s.downsample_factor == 0) throw ConfigError("probe: downsample_factor must be at least 1");
  FrameBank bank;
  bank.dim = encoder.config.hidden_dim;
  bank.num_layers = encoder.config.num_layers;
  const auto speakers = speaker_inventory(corpus);
  bank.num_speakers = speakers.size();

  std::vector<Tensor<float>> inputs(corpus.size());
  parallel_for(corpus.size(), s.threads, [&](std::size_t i) {
    inputs[i] = downsample(model_input(corpus[i]), s.downsample_factor).to_tensor();
  });
  if (inputs.front().cols() != encoder.config.input_dim) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      "encoder expects input width " + std::to_string(encoder.config.input_dim) +
                          ", corpus provides " + std::to_string(inputs.front().cols()));
  }
  std::vector<EncoderOutput<float>> outputs;
  {
    NoGradGuard guard;
    outputs = forward_batch<float>(encoder, inputs, false, std::nullopt, s.threads);
  }

  const auto split = split_corpus(corpus, s.seed);
  const std::array<const std::vector<std::size_t>*, 3> members{&split.train, &split.dev, &split.test};
  for (std::size_t k = 0; k < 3; ++k) {
    // (utterance, frame) pairs, subsampled under the seed when over the cap.
    std::vector<std::pair<std::size_t, std::size_t>> frames;
    for (auto u : *members[k])
      for (std::size_t t = 0; t < inputs[u].rows(); ++t) frames.emplace_back(u, t);
    if (frames.size() > s.max_frames) {
      Rng rng(derive_seed(s.seed, {0xCA9, k}));
      rng.shuffle(frames);
      frames.resize(s.max_frames);
      std::sort(frames.begin(), frames.end());
    }
    auto& out = bank.splits[k];
    out.rows = frames.size();
    out.layers.assign(bank.num_layers, std::vector<float>(frames.size() * bank.dim));
    for (std::size_t r = 0; r < frames.size(); ++r) {
      const auto [u, t] = frames[r];
      for (std::size_t l = 0; l < bank.num_layers; ++l) {
        const auto row = outputs[u].layers[l].values().subspan(t * bank.dim, bank.dim);
        std::copy(row.begin(), row.end(), out.layers[l].begin() + static_cast<std::ptrdiff_t>(r * bank.dim));
      }
      const auto& utt = corpus[u];
      out.speakers.push_back(static_cast<int>(std::lower_bound(speakers.begin(), speakers.end(), utt.speaker) -
                                              speakers.begin()));
      if (utt.phonemes) {
        out.phonemes.push_back((*utt.phonemes)[t * s.downsample_factor]);
      } else {
        bank.has_phonemes = false;
      }
    }
  }
  return bank;
}

struct Probe {
  std::vector<Tensor<float>> weights, biases;

  Tensor<float> logits(const Tensor<float>& x) const {
    Tensor<float> h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      h = linear(h, weights[i], biases[i]);
      if (i + 1 < weights.size()) h = gelu(h);
    }
    return h;
  }

  std::vector<Tensor<float>> parameters() const {
    std::vector<Tensor<float>> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.push_back(weights[i]);
      out.push_back(biases[i]);
    }
    return out;
  }
};

Probe make_probe(ProbeDepth depth, std::size_t in, std::size_t width, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> dims{in};
  const std::size_t hidden = depth == ProbeDepth::kLinear ? 0 : depth == ProbeDepth::kOneHidden ? 1 : 2;
  for (std::size_t i = 0; i < hidden; ++i) dims.push_back(width);
  dims.push_back(classes);
  Probe p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    std::vector<float> w(dims[i] * dims[i + 1]);
    for (auto& v : w) v = static_cast<float>(rng.truncated_normal(0.02));
    p.weights.emplace_back(Shape{dims[i], dims[i + 1]}, std::move(w), true);
    p.biases.push_back(Tensor<float>::zeros({dims[i + 1]}, true));
  }
  return p;
}

Tensor<float> gather_rows(const std::vector<float>& data, std::size_t dim, std::span<const std::size_t> rows) {
  std::vector<float> out(rows.size() * dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(rows[r] * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return Tensor<float>({rows.size(), dim}, std::move(out));
}

double accuracy(const Probe& probe, const std::vector<float>& features, std::size_t dim,
                const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  NoGradGuard guard;
  constexpr std::size_t kChunk = 4096;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < labels.size(); start += kChunk) {
    rows.resize(std::min(kChunk, labels.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto logits = probe.logits(gather_rows(features, dim, rows));
    const std::size_t c = logits.cols();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto v = logits.values().subspan(r * c, c);
      correct += static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()) == labels[start + r];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<float> gaussian_like(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

ProbeResult run_cell(const FrameBank& bank, const ProbeConfig& config, const ProbeSettings& s) {
  if (config.layer < 1 || config.layer > bank.num_layers) {
    throw ConfigError("probe: layer " + std::to_string(config.layer) + " outside 1.." +
                      std::to_string(bank.num_layers));
  }
  if (config.task == ProbeTask::kPhoneme && !bank.has_phonemes) {
    throw FormatError(FormatError::Kind::kLabelMismatch, "phoneme probe: corpus lacks phoneme labels");
  }
  if (config.depth != ProbeDepth::kLinear && config.hidden_width == 0) {
    throw ConfigError("probe: hidden_width must be positive");
  }
  const std::size_t dim = bank.dim;
  const std::size_t classes = config.task == ProbeTask::kPhoneme ? kNumPhoneClasses : bank.num_speakers;
  auto labels = [&](Split k) -> const std::vector<int>& {
    return config.task == ProbeTask::kPhoneme ? bank.splits[k].phonemes : bank.splits[k].speakers;
  };
  std::array<std::vector<float>, 3> noise;
  auto features = [&](Split k) -> const std::vector<float>& {
    if (config.input == ProbeInput::kGaussianNoise) {
      if (noise[k].empty()) noise[k] = gaussian_like(bank.splits[k].rows * dim, derive_seed(s.seed, {0x4015E, k}));
      return noise[k];
    }
    return bank.splits[k].layers[config.layer - 1];
  };

  ProbeResult result;
  result.train_frames = bank.splits[kTrain].rows;
  {
    std::map<int, std::size_t> counts;
    for (int l : labels(kTrain)) ++counts[l];
    if (!counts.empty()) {
      const int majority =
          std::max_element(counts.begin(), counts.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
      const auto& test = labels(kTest);
      if (!test.empty()) {
        result.majority_accuracy =
            static_cast<double>(std::count(test.begin(), test.end(), majority)) / static_cast<double>(test.size());
      }
    }
  }

  const std::uint64_t cell_seed =
      derive_seed(s.seed, {config.layer, static_cast<std::uint64_t>(config.depth), static_cast<std::uint64_t>(config.task)});
  Rng init_rng(derive_seed(cell_seed, {0x1217}));
  auto probe = make_probe(config.depth, dim, config.hidden_width, classes, init_rng);
  const auto params = probe.parameters();
  AdamWSettings opt;
  opt.learning_rate = s.learning_rate;
  AdamW<float> optimizer(params, opt);

  const auto& train_x = features(kTrain);
  const auto& train_y = labels(kTrain);
  std::vector<std::size_t> order(train_y.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<float>> best;
  double best_dev = -1.0;
  std::size_t stale = 0;
  const std::size_t batch = std::max<std::size_t>(s.batch_size, 1);

  for (std::size_t epoch = 1; epoch <= s.epochs && !order.empty(); ++epoch) {
    Rng shuffler(derive_seed(cell_seed, {0x5EED, epoch}));
    shuffler.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, order.size() - start));
      std::vector<int> y;
      for (auto r : rows) y.push_back(train_y[r]);
      const auto loss = cross_entropy(probe.logits(gather_rows(train_x, dim, rows)), y);
      optimizer.zero_grad();
      backward(loss);
      optimizer.step();
    }
    const double dev = accuracy(probe, features(kDev), dim, labels(kDev));
    result.dev_accuracy.push_back(dev);
    if (dev > best_dev) {
      best_dev = dev;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.values().begin(), p.values().end());
      stale = 0;
    } else if (++stale >= s.patience) {
      break;
    }
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i];
      std::copy(best[i].begin(), best[i].end(), p.mutable_values().begin());
    }
  }
  result.test_accuracy = accuracy(probe, features(kTest), dim, labels(kTest));
  return result;
}

}  // namespace

ProbeResult run_probe(const EncoderWeights<float>& encoder, const ProbeConfig& config,
                      const std::vector<UtteranceFeatures>& corpus, const ProbeSettings& settings) {
  if (config.layer < 1 || config.layer > encoder.config.num_layers) {
    throw ConfigError("probe: layer " + std::to_string(config.layer) + " outside 1.." +
                      std::to_string(encoder.config.num_layers));
  }
  const auto bank = collect_frames(encoder, corpus, settings);
  return run_cell(bank, config, settings);
}

std::string ProbeReport::to_csv() const {
  std::string out = "layer,depth,task,accuracy,seed\n";
  char line[128];
  for (const auto& c : cells) {
    std::snprintf(line, sizeof(line), "%zu,%s,%s,%.6f,%llu\n", c.layer, to_string(c.depth), to_string(c.task),
                  c.accuracy, static_cast<unsigned long long>(c.seed));
    out += line;
  }
  return out;
}

ProbeReport probe_sweep(const EncoderWeights<float>& encoder, const std::vector<UtteranceFeatures>& corpus,
                        const std::vector<ProbeDepth>& depths, const std::vector<ProbeTask>& tasks,
                        const ProbeSettings& settings, std::size_t hidden_width, const std::string& model_id) {
  if (depths.empty() || tasks.empty()) throw ConfigError("probe sweep: depth and task lists must be nonempty");
  auto cell_settings = settings;
  cell_settings.threads = 1;
  const auto bank = collect_frames(encoder, corpus, settings);

  ProbeReport report;
  report.model_id = model_id;
  for (std::size_t layer = 1; layer <= encoder.config.num_layers; ++layer)
    for (auto task : tasks)
      for (auto depth : depths) report.cells.push_back({layer, depth, task, 0.0, settings.seed});

  parallel_for(report.cells.size(), settings.threads, [&](std::size_t i) {
    auto& cell = report.cells[i];
    ProbeConfig config{cell.depth, cell.task, cell.layer, hidden_width, ProbeInput::kEncoder};
    try {
      cell.accuracy = run_cell(bank, config, cell_settings).test_accuracy;
    } catch (const std::exception& e) {
      throw std::runtime_error("probe cell layer=" + std::to_string(cell.layer) + " depth=" + to_string(cell.depth) +
                               " task=" + to_string(cell.task) + ": " + e.what());
    }
  });
  return report;
}

}  // namespace aalbert
