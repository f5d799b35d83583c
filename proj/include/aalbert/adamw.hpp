// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aalbert/tensor.hpp"

namespace aalbert {

struct AdamWSettings {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Each parameter tensor is its own group:
// a non-finite gradient skips that tensor for the step (with a warning) while
// the step counter still advances.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWSettings settings);

  // Applies one update from the gradients currently stored on the parameters.
  // Parameters without a gradient are left untouched.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamWSettings& settings() const { return settings_; }
  void set_learning_rate(double lr) { settings_.learning_rate = lr; }
  const std::vector<Tensor<T>>& params() const { return params_; }

  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  // Sidecar state file: step counter and both moment arrays per parameter,
  // little-endian f32.
  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

 private:
  std::vector<Tensor<T>> params_;
  AdamWSettings settings_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t step_ = 0;
};

}  // namespace aalbert
