// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/model.hpp"

#include <algorithm>
#include <cmath>

namespace irene {

template <class T>
void check_finite(const Tensor2<T>& t, const char* what) {
  if (!t.all_finite()) throw NanError(std::string("non-finite activation in ") + what);
}

template <class T>
void DenseLayer<T>::initialize(std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim() + out_dim()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : weight.value.storage()) v = static_cast<T>(dist(rng));
  bias.value.fill(T(0));
}

template <class T>
Tensor2<T> DenseLayer<T>::forward(const Tensor2<T>& x) const {
  Tensor2<T> y = matmul_nt(x, weight.value);
  as_eigen(y).rowwise() += as_row(bias.value.data(), out_dim());
  return y;
}

template <class T>
FieldModel<T>::FieldModel(ModelConfig cfg) : grid(cfg.grid), cfg_(cfg) {
  if (cfg_.grid.output_dim() != 32) {
    throw UsageError("hash grid output width must be 32 to feed the density and segmentation MLPs");
  }
  const auto feat = static_cast<std::size_t>(cfg_.grid.output_dim());
  density.l0 = DenseLayer<T>("density.l0", feat, kHiddenWidth);
  density.l1 = DenseLayer<T>("density.l1", kHiddenWidth, kGeoFeatures + 1);
  color.l0 = DenseLayer<T>("color.l0", kColorInput, kHiddenWidth);
  color.l1 = DenseLayer<T>("color.l1", kHiddenWidth, kHiddenWidth);
  color.last = DenseLayer<T>("color.last", kHiddenWidth, 3);
  seg.l0 = DenseLayer<T>("seg.l0", feat, kHiddenWidth);
  seg.l1 = DenseLayer<T>("seg.l1", kHiddenWidth, 1);
}

template <class T>
void FieldModel<T>::initialize() {
  std::mt19937_64 rng(cfg_.seed);
  grid.initialize(rng);
  for (auto* layer : {&density.l0, &density.l1, &color.l0, &color.l1, &color.last, &seg.l0, &seg.l1}) {
    layer->initialize(rng);
  }
}

template <class T>
std::vector<Param<T>*> FieldModel<T>::backbone_params() {
  return {&grid.tables(),       &density.l0.weight, &density.l0.bias, &density.l1.weight,
          &density.l1.bias,     &color.l0.weight,   &color.l0.bias,   &color.l1.weight,
          &color.l1.bias,       &color.last.weight, &color.last.bias};
}

template <class T>
std::vector<const Param<T>*> FieldModel<T>::backbone_params() const {
  auto ps = const_cast<FieldModel*>(this)->backbone_params();
  return {ps.begin(), ps.end()};
}

template <class T>
std::array<T, 3> FieldModel<T>::normalize(const std::array<T, 3>& world) const {
  std::array<T, 3> out{};
  for (int d = 0; d < 3; ++d) {
    const auto lo = static_cast<T>(cfg_.bounds.min[static_cast<std::size_t>(d)]);
    const auto hi = static_cast<T>(cfg_.bounds.max[static_cast<std::size_t>(d)]);
    out[static_cast<std::size_t>(d)] = (world[static_cast<std::size_t>(d)] - lo) / (hi - lo);
  }
  return out;
}

namespace {

template <class U, class T>
void copy_param(Param<U>& dst, const Param<T>& src) {
  dst.name = src.name;
  dst.value = src.value.template cast<U>();
  dst.frozen = src.frozen;
  dst.frozen_cols = src.frozen_cols;
}

template <class U, class T>
void copy_layer(DenseLayer<U>& dst, const DenseLayer<T>& src) {
  copy_param(dst.weight, src.weight);
  copy_param(dst.bias, src.bias);
}

}  // namespace

template <class T>
template <class U>
FieldModel<U> FieldModel<T>::cast() const {
  FieldModel<U> out(cfg_);
  copy_param(out.grid.tables(), grid.tables());
  copy_layer(out.density.l0, density.l0);
  copy_layer(out.density.l1, density.l1);
  copy_layer(out.color.l0, color.l0);
  copy_layer(out.color.l1, color.l1);
  copy_layer(out.color.last, color.last);
  copy_layer(out.seg.l0, seg.l0);
  copy_layer(out.seg.l1, seg.l1);
  out.occupancy = occupancy;
  return out;
}

template <class T>
DensityOutput<T> density_forward(const DensityMlp<T>& mlp, const Tensor2<T>& features) {
  Tensor2<T> hidden = mlp.l0.forward(features);
  for (auto& v : hidden.storage()) v = v > T(0) ? v : T(0);
  const Tensor2<T> out = mlp.l1.forward(hidden);
  check_finite(out, "density MLP");
  DensityOutput<T> res{Tensor2<T>(out.rows(), 1), Tensor2<T>(out.rows(), kGeoFeatures)};
  const T clamp = static_cast<T>(kDensityClamp);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    res.sigma(i, 0) = std::exp(std::clamp(out(i, 0), -clamp, clamp));
    std::copy_n(out.row(i).data() + 1, kGeoFeatures, res.h.row(i).data());
  }
  return res;
}

template <class T>
Tensor2<T> penultimate_forward(const ColorMlp<T>& mlp, const Tensor2<T>& h, const Tensor2<T>& sh) {
  if (h.rows() != sh.rows() || h.cols() != kGeoFeatures || sh.cols() != kShCoeffs) {
    throw DimensionError("color MLP input shapes");
  }
  Tensor2<T> in(h.rows(), kColorInput);
  as_eigen(in).leftCols(kGeoFeatures) = as_eigen(h);
  as_eigen(in).rightCols(kShCoeffs) = as_eigen(sh);
  Tensor2<T> a = mlp.l0.forward(in);
  for (auto& v : a.storage()) v = v > T(0) ? v : T(0);
  Tensor2<T> hbar = mlp.l1.forward(a);
  for (auto& v : hbar.storage()) v = v > T(0) ? v : T(0);
  return hbar;
}

template <class T>
Tensor2<T> last_layer_forward(const Tensor2<T>& hbar, const Tensor2<T>& weight, const Tensor2<T>& bias) {
  if (hbar.cols() != weight.cols() || bias.size() != weight.rows()) {
    throw DimensionError("last layer shapes");
  }
  Tensor2<T> rgb = matmul_nt(hbar, weight);
  as_eigen(rgb).rowwise() += as_row(bias.data(), bias.size());
  for (auto& v : rgb.storage()) v = sigmoid(v);
  return rgb;
}

template <class T>
ColorOutput<T> color_forward(const ColorMlp<T>& mlp, const Tensor2<T>& h, const Tensor2<T>& sh) {
  ColorOutput<T> out;
  out.hbar = penultimate_forward(mlp, h, sh);
  out.rgb = last_layer_forward(out.hbar, mlp.last.weight.value, mlp.last.bias.value);
  check_finite(out.rgb, "color MLP");
  return out;
}

template <class T>
Tensor2<T> seg_forward(const SegMlp<T>& mlp, const Tensor2<T>& features) {
  Tensor2<T> a = mlp.l0.forward(features);
  for (auto& v : a.storage()) v = v > T(0) ? v : T(0);
  Tensor2<T> alpha = mlp.l1.forward(a);
  for (auto& v : alpha.storage()) v = sigmoid(v);
  check_finite(alpha, "segmentation MLP");
  return alpha;
}

template <class T>
LastLayerClone<T> clone_last_layer(const ColorMlp<T>& mlp) {
  LastLayerClone<T> c;
  c.frozen_weight = mlp.last.weight.value;
  c.frozen_bias = mlp.last.bias.value;
  c.trainable = mlp.last;
  c.trainable.weight.name = "edit.lastW";
  c.trainable.bias.name = "edit.lastb";
  c.trainable.set_frozen(false);
  return c;
}

#define IRENE_INSTANTIATE(T)                                                                    \
  template struct DenseLayer<T>;                                                                \
  template class FieldModel<T>;                                                                 \
  template void check_finite<T>(const Tensor2<T>&, const char*);                                \
  template DensityOutput<T> density_forward<T>(const DensityMlp<T>&, const Tensor2<T>&);        \
  template ColorOutput<T> color_forward<T>(const ColorMlp<T>&, const Tensor2<T>&,               \
                                           const Tensor2<T>&);                                  \
  template Tensor2<T> penultimate_forward<T>(const ColorMlp<T>&, const Tensor2<T>&,             \
                                             const Tensor2<T>&);                                \
  template Tensor2<T> last_layer_forward<T>(const Tensor2<T>&, const Tensor2<T>&,               \
                                            const Tensor2<T>&);                                 \
  template Tensor2<T> seg_forward<T>(const SegMlp<T>&, const Tensor2<T>&);                      \
  template LastLayerClone<T> clone_last_layer<T>(const ColorMlp<T>&);

IRENE_INSTANTIATE(float)
IRENE_INSTANTIATE(double)
#undef IRENE_INSTANTIATE

template FieldModel<double> FieldModel<float>::cast<double>() const;
template FieldModel<float> FieldModel<double>::cast<float>() const;
template FieldModel<float> FieldModel<float>::cast<float>() const;

}  // namespace irene
