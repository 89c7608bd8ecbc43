// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irene/tape.hpp"

namespace irene {

struct AdamOptions {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t t = 0;
  AdamOptions options;

  AdamState() = default;
  AdamState(std::size_t n, AdamOptions opt) : m(n, T(0)), v(n, T(0)), options(opt) {}
};

/// One bias-corrected Adam update. Entries with `frozen[i] != 0` are skipped
/// entirely (value and moments untouched). Throws NanError naming `block` on a
/// non-finite gradient, before any entry is modified.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
               std::string_view block, std::span<const std::uint8_t> frozen = {}) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: params/grads length mismatch in " + std::string(block));
  }
  if (!frozen.empty() && frozen.size() != params.size()) {
    throw DimensionError("adam_step: freeze mask length mismatch in " + std::string(block));
  }
  if (!(state.options.lr > 0)) throw UsageError("adam_step: lr must be positive");
  if (state.m.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: moment length mismatch in " + std::string(block));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NanError("non-finite gradient in parameter block '" + std::string(block) + "' at entry " +
                     std::to_string(i));
    }
  }
  state.t += 1;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T step = static_cast<T>(o.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(o.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    params[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_bc2) + eps);
  }
}

/// Adam over a Param: frozen params are left alone, frozen columns are masked.
/// A param without a gradient entry is treated as g = 0.
template <class T>
void adam_step(Param<T>& p, AdamState<T>& state) {
  if (p.frozen) return;
  if (!p.has_grad()) p.grad = Tensor2<T>(p.value.rows(), p.value.cols());
  if (p.frozen_cols.empty()) {
    adam_step<T>(p.value.span(), p.grad.span(), state, p.name);
    return;
  }
  std::vector<std::uint8_t> mask(p.value.size());
  for (std::size_t r = 0; r < p.value.rows(); ++r)
    for (std::size_t c = 0; c < p.value.cols(); ++c) mask[r * p.value.cols() + c] = p.frozen_cols[c];
  adam_step<T>(p.value.span(), p.grad.span(), state, p.name, mask);
}

}  // namespace irene
