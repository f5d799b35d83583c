// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/adamw.hpp"

#include <bit>
#include <cmath>

#include "aalbert/binary_io.hpp"
#include "aalbert/log.hpp"

namespace aalbert {
namespace {
constexpr char kOptimMagic[] = "AALO";
constexpr std::uint32_t kOptimVersion = 1;
}  // namespace

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWSettings settings)
    : params_(std::move(params)), settings_(settings) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  ++step_;
  const T lr = static_cast<T>(settings_.learning_rate);
  const T b1 = static_cast<T>(settings_.beta1);
  const T b2 = static_cast<T>(settings_.beta2);
  const T eps = static_cast<T>(settings_.epsilon);
  const T decay = T(1) - lr * static_cast<T>(settings_.weight_decay);
  const T correction1 = T(1) - static_cast<T>(std::pow(settings_.beta1, static_cast<double>(step_)));
  const T correction2 = T(1) - static_cast<T>(std::pow(settings_.beta2, static_cast<double>(step_)));

  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T>& p = params_[k];
    if (!p.has_grad()) continue;
    const auto grad = p.grad();
    bool finite = true;
    for (T g : grad) finite = finite && std::isfinite(g);
    if (!finite) {
      log::warn("adamw: non-finite gradient in parameter " + std::to_string(k) + " " +
                shape_string(p.shape()) + " at step " + std::to_string(step_) + "; update skipped");
      continue;
    }
    auto value = p.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      // Decoupled decay: shrink the weight, then take the Adam step.
      value[i] *= decay;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void AdamW<T>::save_state(const std::filesystem::path& path) const {
  ByteWriter w;
  w.raw(std::string_view(kOptimMagic, 4));
  w.u32(kOptimVersion);
  w.u64(static_cast<std::uint64_t>(step_));
  for (double s : {settings_.learning_rate, settings_.beta1, settings_.beta2, settings_.epsilon,
                   settings_.weight_decay}) {
    w.u64(std::bit_cast<std::uint64_t>(s));
  }
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    w.u64(m_[k].size());
    for (T x : m_[k]) w.f32(static_cast<float>(x));
    for (T x : v_[k]) w.f32(static_cast<float>(x));
  }
  w.u64(fnv1a64(w.bytes()));
  write_file_atomic(path, w.bytes());
}

template <typename T>
void AdamW<T>::load_state(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes, path.string());
  if (r.raw(4) != std::string_view(kOptimMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, path.string() + ": not an optimizer state file");
  }
  const std::uint32_t version = r.u32();
  if (version != kOptimVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      path.string() + ": optimizer state version " + std::to_string(version) +
                          ", expected " + std::to_string(kOptimVersion));
  }
  const auto step = static_cast<std::int64_t>(r.u64());
  AdamWSettings settings;
  for (double* s : {&settings.learning_rate, &settings.beta1, &settings.beta2, &settings.epsilon,
                    &settings.weight_decay}) {
    *s = std::bit_cast<double>(r.u64());
  }
  const std::uint32_t count = r.u32();
  if (count != params_.size()) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      path.string() + ": state holds " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params_.size()));
  }
  std::vector<std::vector<T>> m(count), v(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::uint64_t n = r.u64();
    if (n != params_[k].numel()) {
      throw FormatError(FormatError::Kind::kShapeMismatch,
                        path.string() + ": parameter " + std::to_string(k) + " has " + std::to_string(n) +
                            " elements in state, " + std::to_string(params_[k].numel()) + " in model");
    }
    r.need(8 * n);
    m[k].resize(n);
    v[k].resize(n);
    for (auto& x : m[k]) x = static_cast<T>(r.f32());
    for (auto& x : v[k]) x = static_cast<T>(r.f32());
  }
  const std::size_t payload = r.position();
  const std::uint64_t stored = r.u64();
  if (stored != fnv1a64(std::span(bytes).first(payload))) {
    throw FormatError(FormatError::Kind::kChecksum, path.string() + ": checksum mismatch");
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::kTrailingData, path.string() + ": unexpected trailing bytes");
  }
  step_ = step;
  settings_ = settings;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace aalbert
