// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "../common/fixtures.hpp"
#include "../common/gradcheck.hpp"
#include "irene/hash_grid.hpp"
#include "irene/model.hpp"
#include "irene/sh.hpp"

using namespace irene;
using irene::test::random_tensor;

namespace {

HashGrid<double> small_grid(std::uint64_t seed) {
  HashGridConfig cfg;
  cfg.levels = 3;
  cfg.features_per_level = 2;
  cfg.log2_table_size = 12;
  cfg.base_resolution = 4;
  cfg.finest_resolution = 16;
  HashGrid<double> g(cfg);
  std::mt19937_64 rng(seed);
  g.initialize(rng, 1.0);
  return g;
}

}  // namespace

TEST_CASE("hash grid resolutions grow geometrically to the finest level") {
  HashGridConfig cfg;
  HashGrid<float> g(cfg);
  CHECK(g.resolution(0) == 16);
  CHECK(g.resolution(15) == 256);
  for (int l = 1; l < 16; ++l) CHECK(g.resolution(l) >= g.resolution(l - 1));
  CHECK(hash_corner(7, 9, 11, 1024) < 1024u);
  HashGridConfig bad;
  bad.log2_table_size = 2;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("encode at a lattice vertex returns that vertex's feature") {
  auto g = small_grid(1);
  const std::array<double, 3> p{0.25, 0.5, 0.75};  // vertex at every level (4, 8, 16)
  std::vector<double> f(6);
  CHECK(g.encode(std::span<const double, 3>(p), f));
  for (int l = 0; l < 3; ++l) {
    const auto res = static_cast<std::uint32_t>(g.resolution(l));
    const std::uint32_t row = static_cast<std::uint32_t>(l) * 4096u +
                              hash_corner(static_cast<std::uint32_t>(0.25 * res), static_cast<std::uint32_t>(0.5 * res),
                                          static_cast<std::uint32_t>(0.75 * res), 4096u);
    CHECK(f[2 * l] == doctest::Approx(g.tables().value(row, 0)).epsilon(1e-12));
    CHECK(f[2 * l + 1] == doctest::Approx(g.tables().value(row, 1)).epsilon(1e-12));
  }
}

TEST_CASE("encode at a cell center averages the 8 corners") {
  auto g = small_grid(2);
  const double h = 0.5 / 4;  // center of cell (0,1,2) at level 0
  const std::array<double, 3> p{0 * 0.25 + h, 1 * 0.25 + h, 2 * 0.25 + h};
  std::vector<double> f(6);
  g.encode(std::span<const double, 3>(p), f);
  double mean[2] = {0, 0};
  for (std::uint32_t c = 0; c < 8; ++c) {
    const auto row = hash_corner(0 + (c & 1), 1 + ((c >> 1) & 1), 2 + ((c >> 2) & 1), 4096u);
    mean[0] += g.tables().value(row, 0) / 8;
    mean[1] += g.tables().value(row, 1) / 8;
  }
  CHECK(f[0] == doctest::Approx(mean[0]).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(mean[1]).epsilon(1e-12));
  // backward: upstream / 8 per corner
  Tensor2<double> grad(g.tables().value.rows(), 2);
  std::vector<double> up(6, 0.0);
  up[0] = 1.0;
  g.encode_backward(std::span<const double, 3>(p), up, grad);
  for (std::uint32_t c = 0; c < 8; ++c) {
    const auto row = hash_corner(0 + (c & 1), 1 + ((c >> 1) & 1), 2 + ((c >> 2) & 1), 4096u);
    CHECK(grad(row, 0) == doctest::Approx(1.0 / 8));
  }
}

TEST_CASE("vertex-aligned backward puts the full upstream on one corner per level") {
  auto g = small_grid(3);
  const std::array<double, 3> p{0.5, 0.25, 0.0};
  Tensor2<double> grad(g.tables().value.rows(), 2);
  const std::vector<double> up{1, 2, 3, 4, 5, 6};
  g.encode_backward(std::span<const double, 3>(p), up, grad);
  std::size_t touched = 0;
  for (std::size_t r = 0; r < grad.rows(); ++r)
    if (grad(r, 0) != 0.0 || grad(r, 1) != 0.0) ++touched;
  CHECK(touched == 3);
}

TEST_CASE("points outside the unit cube are clamped and reported") {
  auto g = small_grid(4);
  const std::array<double, 3> out{1.5, 0.5, 0.5}, edge{1.0, 0.5, 0.5};
  std::vector<double> a(6), b(6);
  CHECK_FALSE(g.encode(std::span<const double, 3>(out), a));
  CHECK(g.encode(std::span<const double, 3>(edge), b));
  CHECK(a == b);
}

// Real SH with the Condon–Shortley phase, from std::assoc_legendre (which omits it).
double sh_reference(int l, int m, double x, double y, double z) {
  const double theta = std::acos(z), phi = std::atan2(y, x);
  const int am = std::abs(m);
  double fact = 1;
  for (int i = l - am + 1; i <= l + am; ++i) fact *= i;  // (l+|m|)!/(l−|m|)!
  const double k = std::sqrt((2 * l + 1) / (4 * std::numbers::pi) / fact);
  const double p = std::assoc_legendre(static_cast<unsigned>(l), static_cast<unsigned>(am), std::cos(theta));
  if (m == 0) return k * p;
  const double sign = (am % 2) ? -1.0 : 1.0;
  return sign * std::sqrt(2.0) * k * p * (m > 0 ? std::cos(am * phi) : std::sin(am * phi));
}

TEST_CASE("spherical harmonics match the Legendre closed form") {
  const auto z = sh_encode<double>(0.0, 0.0, 1.0);
  CHECK(z[0] == doctest::Approx(0.5 / std::sqrt(std::numbers::pi)).epsilon(1e-12));
  CHECK(z[2] == doctest::Approx(std::sqrt(3 / (4 * std::numbers::pi))).epsilon(1e-12));
  CHECK(z[1] == 0.0);
  CHECK(z[3] == 0.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    double d[3] = {n(rng), n(rng), n(rng)};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    const auto y = sh_encode<double>(d[0], d[1], d[2]);
    for (int l = 0; l < 4; ++l)
      for (int m = -l; m <= l; ++m)
        CHECK(std::abs(y[static_cast<std::size_t>(l * l + l + m)] -
                       sh_reference(l, m, d[0] / len, d[1] / len, d[2] / len)) < 1e-6);
  }
  CHECK_THROWS_AS(sh_encode<double>(0.0, 0.0, 0.0), UsageError);
}

TEST_CASE("density head: zero parameters give sigma 1, clamp at 15") {
  DensityMlp<double> mlp{DenseLayer<double>("d0", 32, 64), DenseLayer<double>("d1", 64, 16)};
  const auto out = density_forward(mlp, Tensor2<double>(2, 32, 0.3));
  CHECK(out.sigma(0, 0) == 1.0);
  CHECK(out.h.cols() == 15u);
  mlp.l1.bias.value(0, 0) = 20;
  CHECK(density_forward(mlp, Tensor2<double>(1, 32)).sigma(0, 0) == doctest::Approx(std::exp(15.0)));
}

TEST_CASE("color head: zero last layer gives grey; matches a loop oracle") {
  auto m = irene::test::tiny_model<double>(6);
  std::mt19937_64 rng(7);
  const auto h = random_tensor(rng, 5, kGeoFeatures), sh = random_tensor(rng, 5, kShCoeffs);
  const auto out = color_forward(m.color, h, sh);
  // loop oracle
  for (std::size_t n = 0; n < 5; ++n) {
    std::vector<double> x(h.row(n).begin(), h.row(n).end());
    x.insert(x.end(), sh.row(n).begin(), sh.row(n).end());
    for (const DenseLayer<double>* l : {&m.color.l0, &m.color.l1, &m.color.last}) {
      std::vector<double> y(l->out_dim());
      for (std::size_t o = 0; o < y.size(); ++o) {
        double s = l->bias.value(0, o);
        for (std::size_t i = 0; i < x.size(); ++i) s += l->weight.value(o, i) * x[i];
        y[o] = l == &m.color.last ? 1 / (1 + std::exp(-s)) : std::max(0.0, s);
      }
      if (l == &m.color.l1)
        for (std::size_t k = 0; k < 64; ++k) CHECK(std::abs(out.hbar(n, k) - y[k]) < 1e-6);
      x = y;
    }
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.rgb(n, c) - x[c]) < 1e-6);
  }
  // h̄ does not depend on W
  auto m2 = m;
  m2.color.last.weight.value.fill(0.0);
  m2.color.last.bias.value.fill(0.0);
  const auto out2 = color_forward(m2.color, h, sh);
  CHECK(out2.hbar == out.hbar);
  for (double v : out2.rgb.storage()) CHECK(v == 0.5);
}

TEST_CASE("segmentation head: zero parameters give alpha 0.5, range is open") {
  SegMlp<double> seg{DenseLayer<double>("s0", 32, 64), DenseLayer<double>("s1", 64, 1)};
  CHECK(seg_forward(seg, Tensor2<double>(3, 32, 1.0))(1, 0) == 0.5);
  std::mt19937_64 rng(8);
  seg.l0.initialize(rng);
  seg.l1.initialize(rng);
  const auto a = seg_forward(seg, random_tensor(rng, 50, 32, 5.0));
  for (double v : a.storage()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("last-layer clone starts equal and stays independent") {
  auto m = irene::test::tiny_model<float>(9);
  auto clone = clone_last_layer(m.color);
  CHECK(clone.trainable.weight.value == m.color.last.weight.value);
  clone.trainable.weight.value(0, 0) += 1.0f;
  CHECK(clone.frozen_weight == m.color.last.weight.value);
  CHECK(m.color.last.weight.value(0, 0) != clone.trainable.weight.value(0, 0));
}

TEST_CASE("f32 and f64 models agree after a cast") {
  const auto mf = irene::test::tiny_model<float>(10);
  const auto md = mf.cast<double>();
  std::mt19937_64 rng(11);
  Tensor2<double> pos = random_tensor(rng, 8, 3, 0.5);
  for (auto& v : pos.storage()) v += 0.5;
  const auto fd = density_forward(md.density, md.grid.encode_batch(pos));
  const auto ff = density_forward(mf.density, mf.grid.encode_batch(pos.cast<float>()));
  for (std::size_t i = 0; i < 8; ++i) CHECK(ff.sigma(i, 0) == doctest::Approx(fd.sigma(i, 0)).epsilon(1e-4));
}
