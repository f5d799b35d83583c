// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/pretraining.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "aalbert/binary_io.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/log.hpp"
#include "aalbert/ops.hpp"
#include "aalbert/parallel.hpp"

namespace aalbert {

FeatureMatrix downsample(const FeatureMatrix& x, std::size_t factor, DownsampleMode mode) {
  if (factor == 0) throw ConfigError("downsample: factor must be at least 1");
  const std::size_t out_rows = (x.rows + factor - 1) / factor;
  if (mode == DownsampleMode::kDecimate) {
    FeatureMatrix out(out_rows, x.cols);
    for (std::size_t r = 0; r < out_rows; ++r) {
      std::copy_n(x.values.begin() + static_cast<std::ptrdiff_t>(r * factor * x.cols), x.cols,
                  out.values.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
    }
    return out;
  }
  FeatureMatrix out(out_rows, x.cols * factor);
  for (std::size_t r = 0; r < out_rows; ++r) {
    for (std::size_t k = 0; k < factor; ++k) {
      const std::size_t src = std::min(r * factor + k, x.rows - 1);
      std::copy_n(x.values.begin() + static_cast<std::ptrdiff_t>(src * x.cols), x.cols,
                  out.values.begin() + static_cast<std::ptrdiff_t>((r * factor + k) * x.cols));
    }
  }
  return out;
}

std::vector<std::uint16_t> downsample_labels(std::span<const std::uint16_t> labels, std::size_t factor) {
  if (factor == 0) throw ConfigError("downsample: factor must be at least 1");
  std::vector<std::uint16_t> out;
  for (std::size_t i = 0; i < labels.size(); i += factor) out.push_back(labels[i]);
  return out;
}

void MaskPolicy::validate() const {
  if (!(select_fraction > 0.0 && select_fraction < 1.0)) {
    throw ConfigError("mask policy: select_fraction must lie in (0,1)");
  }
  for (double p : {zero_prob, replace_prob, keep_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mask policy: action probabilities must lie in [0,1]");
  }
  if (std::abs(zero_prob + replace_prob + keep_prob - 1.0) > 1e-9) {
    throw ConfigError("mask policy: zero_prob + replace_prob + keep_prob must equal 1");
  }
  if (downsample_factor == 0) throw ConfigError("mask policy: downsample_factor must be at least 1");
}

std::size_t MaskPolicy::selected_count(std::size_t frames) const {
  return static_cast<std::size_t>(std::lround(select_fraction * static_cast<double>(frames)));
}

MaskedFeatures apply_mask(const FeatureMatrix& features, const MaskPolicy& policy, Rng& rng) {
  policy.validate();
  const std::size_t n = features.rows;
  MaskedFeatures out{features, {}};
  out.spec.selected.assign(n, 0);
  const std::size_t count = std::min(policy.selected_count(n), n);

  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  const std::size_t width = features.cols;
  for (std::size_t idx : chosen) {
    MaskedFrame frame{idx, MaskAction::kKeep, 0};
    const double u = rng.uniform();
    auto row = out.corrupted.values.begin() + static_cast<std::ptrdiff_t>(idx * width);
    if (u < policy.zero_prob) {
      frame.action = MaskAction::kZero;
      std::fill_n(row, width, 0.0f);
    } else if (u < policy.zero_prob + policy.replace_prob) {
      frame.action = MaskAction::kReplace;
      std::size_t source = idx;
      if (n > 1) {
        source = rng.below(n - 1);
        if (source >= idx) ++source;
      }
      frame.source = source;
      std::copy_n(features.values.begin() + static_cast<std::ptrdiff_t>(source * width), width, row);
    }
    out.spec.selected[idx] = 1;
    out.spec.frames.push_back(frame);
  }
  return out;
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                              std::span<const std::uint8_t> mask) {
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    log::warn("reconstruction loss: no masked frames, contributing 0");
  }
  return l1_loss(predicted, target, mask);
}

template Tensor<float> reconstruction_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                                  std::span<const std::uint8_t>);
template Tensor<double> reconstruction_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                    std::span<const std::uint8_t>);

std::vector<PretrainExample> prepare_pretraining_data(const std::vector<UtteranceFeatures>& corpus,
                                                      const MaskPolicy& policy) {
  policy.validate();
  std::vector<PretrainExample> out(corpus.size());
  parallel_for(corpus.size(), 1, [&](std::size_t i) {
    const auto& u = corpus[i];
    u.validate();
    out[i].id = u.id;
    out[i].input = downsample(model_input(u), policy.downsample_factor, policy.downsample_mode);
    out[i].target = downsample(u.target, policy.downsample_factor);
  });
  return out;
}

std::size_t PretrainBatch::masked_frames() const {
  std::size_t n = 0;
  for (const auto& m : masks) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
  return n;
}

namespace {
std::uint64_t id_hash(const std::string& id) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(id.data()), id.size()));
}
}  // namespace

PretrainBatch build_batch(std::span<const PretrainExample> examples, std::span<const std::size_t> indices,
                          const MaskPolicy& policy, std::uint64_t step, int threads) {
  const std::size_t b = indices.size();
  std::vector<MaskedFeatures> masked(b);
  parallel_for(b, threads, [&](std::size_t i) {
    const auto& ex = examples[indices[i]];
    Rng rng(derive_seed(policy.seed, {step, id_hash(ex.id)}));
    masked[i] = apply_mask(ex.input, policy, rng);
  });
  PretrainBatch batch;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& ex = examples[indices[i]];
    batch.inputs.push_back(masked[i].corrupted.to_tensor());
    batch.targets.push_back(ex.target.to_tensor());
    batch.masks.push_back(std::move(masked[i].spec.selected));
    batch.lengths.push_back(ex.input.rows);
  }
  return batch;
}

Tensor<float> batch_loss(const std::vector<EncoderOutput<float>>& outputs, const PretrainBatch& batch) {
  const std::size_t frames = std::accumulate(batch.lengths.begin(), batch.lengths.end(), std::size_t{0});
  if (outputs.empty() || frames == 0) throw ShapeError("batch loss: batch holds no frames");
  if (outputs.size() != batch.targets.size()) {
    throw ShapeError("batch loss: " + std::to_string(outputs.size()) + " outputs for " +
                     std::to_string(batch.targets.size()) + " utterances");
  }
  std::vector<Tensor<float>> predicted;
  std::vector<std::uint8_t> mask;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    predicted.push_back(outputs[i].reconstruction);
    mask.insert(mask.end(), batch.masks[i].begin(), batch.masks[i].end());
  }
  const auto all_predicted = predicted.size() == 1 ? predicted[0] : concat<float>(predicted, 0);
  const auto all_targets = batch.targets.size() == 1 ? batch.targets[0] : concat<float>(batch.targets, 0);
  return reconstruction_loss(all_predicted, all_targets, mask);
}

std::string format_loss_csv(std::span<const double> losses) {
  std::string out = "step,loss\n";
  char line[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.9g\n", i + 1, losses[i]);
    out += line;
  }
  return out;
}

PretrainResult pretrain(const std::vector<UtteranceFeatures>& corpus, const EncoderConfig& config,
                        const MaskPolicy& policy, const PretrainSettings& settings) {
  if (corpus.empty()) throw ConfigError("pretrain: corpus is empty");
  const auto examples = prepare_pretraining_data(corpus, policy);
  if (examples[0].input.cols != config.input_dim || examples[0].target.cols != config.target_dim) {
    throw ConfigError("pretrain: corpus gives input/target widths " + std::to_string(examples[0].input.cols) + "/" +
                      std::to_string(examples[0].target.cols) + ", encoder expects " +
                      std::to_string(config.input_dim) + "/" + std::to_string(config.target_dim));
  }
  return pretrain(examples, init_encoder<float>(config, settings.seed), policy, settings);
}

PretrainResult pretrain(std::span<const PretrainExample> examples, EncoderWeights<float> initial,
                        const MaskPolicy& policy, const PretrainSettings& settings) {
  if (examples.empty()) throw ConfigError("pretrain: corpus is empty");
  if (settings.batch_size == 0) throw ConfigError("pretrain: batch_size must be positive");
  policy.validate();

  PretrainResult result{std::move(initial), {}, {}};
  auto& weights = result.weights;
  AdamW<float> optimizer(weights.parameters(), settings.optimizer);
  if (!settings.checkpoint_dir.empty()) std::filesystem::create_directories(settings.checkpoint_dir);

  auto save_checkpoint = [&](std::size_t step) {
    if (settings.checkpoint_dir.empty()) return;
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06zu", step);
    const auto path = settings.checkpoint_dir / (std::string(name) + ".aalw");
    save_weights(weights, path);
    optimizer.save_state(settings.checkpoint_dir / (std::string(name) + ".aalo"));
    result.last_checkpoint = path;
  };
  auto save_losses = [&] {
    if (!settings.loss_csv.empty()) write_text_atomic(settings.loss_csv, format_loss_csv(result.losses));
  };

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  std::vector<std::size_t> indices;

  for (std::size_t step = 1; step <= settings.steps; ++step) {
    indices.clear();
    while (indices.size() < settings.batch_size) {
      if (cursor == order.size()) {
        Rng shuffler(derive_seed(settings.seed, {0x5EED, epoch++}));
        std::iota(order.begin(), order.end(), 0);
        shuffler.shuffle(order);
        cursor = 0;
      }
      indices.push_back(order[cursor++]);
    }
    if (settings.warmup_steps > 0) {
      const double scale = std::min(1.0, static_cast<double>(step) / static_cast<double>(settings.warmup_steps));
      optimizer.set_learning_rate(settings.optimizer.learning_rate * scale);
    }

    const auto batch = build_batch(examples, indices, policy, step, settings.threads);
    optimizer.zero_grad();
    const auto outputs = forward_batch<float>(weights, batch.inputs, false,
                                              derive_seed(settings.seed, {0xD80, step}), settings.threads);
    const auto loss = batch_loss(outputs, batch);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      save_losses();
      throw NumericError(static_cast<long>(step),
                         "pretrain: non-finite loss at step " + std::to_string(step) +
                             (result.last_checkpoint.empty() ? std::string()
                                                             : "; last good checkpoint " + result.last_checkpoint.string()));
    }
    if (batch.masked_frames() > 0) {
      backward(loss);
      optimizer.step();
    }
    result.losses.push_back(value);

    const bool last = step == settings.steps;
    if (last || (settings.checkpoint_every > 0 && step % settings.checkpoint_every == 0)) {
      save_checkpoint(step);
      save_losses();
    }
  }
  if (settings.steps == 0) {
    save_checkpoint(0);
    save_losses();
  }
  return result;
}

}  // namespace aalbert
