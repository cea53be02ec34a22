// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msfc/backbone.hpp"
#include "msfc/checkpoint.hpp"
#include "msfc/error.hpp"
#include "msfc/generator.hpp"
#include "msfc/microshape.hpp"
#include "test_support.hpp"

using namespace msfc;
using msfc::testing::random_cloud;
using msfc::testing::random_tensor;

namespace {

ClusterCenters centers_of(Tensor2 c) {
  ClusterCenters cc;
  cc.m = c.cols();
  cc.centers = std::move(c);
  return cc;
}

// Best contiguous split of sorted 1-D values into two groups.
std::pair<double, double> best_1d_split(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double best = INFINITY;
  std::pair<double, double> centers;
  for (std::size_t cut = 1; cut < v.size(); ++cut) {
    const double a = std::accumulate(v.begin(), v.begin() + static_cast<long>(cut), 0.0) / static_cast<double>(cut);
    const double b = std::accumulate(v.begin() + static_cast<long>(cut), v.end(), 0.0) /
                     static_cast<double>(v.size() - cut);
    double sse = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) sse += std::pow(v[i] - (i < cut ? a : b), 2);
    if (sse < best) {
      best = sse;
      centers = {a, b};
    }
  }
  return centers;
}

std::vector<double> double_loop_feature(const Tensor2& f, const Tensor2& P) {
  std::vector<double> e(P.cols(), 0.0);
  for (std::size_t b = 0; b < f.rows(); ++b)
    for (std::size_t k = 0; k < P.cols(); ++k) {
      long double dot = 0.0L;
      for (std::size_t r = 0; r < f.cols(); ++r) dot += static_cast<long double>(f(b, r)) * P(r, k);
      e[k] += static_cast<double>(dot);
    }
  for (double& v : e) v /= static_cast<double>(f.rows());
  return e;
}

MicroshapeBasis random_basis(std::size_t q, std::size_t m, std::mt19937_64& rng) {
  return build_basis(centers_of(random_tensor(q, m, rng)), 0.95);
}

}  // namespace

TEST_CASE("feature collection") {
  BackboneParams b = make_backbone(std::vector<std::size_t>{5, 4}, 1);
  b.mlp.frozen = true;
  std::mt19937_64 rng(2);
  std::vector<LabeledInstance> base(2);
  base[0].cloud = random_cloud(3, rng);
  base[1].cloud = random_cloud(3, rng);
  const Tensor2 full = collect_base_features(b, base, 100, 7);
  REQUIRE(full.rows() == 6);
  const Tensor2 f0 = extract_point_features(b, base[0].cloud);
  const Tensor2 f1 = extract_point_features(b, base[1].cloud);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(full(0, k) == f0(0, k));
    CHECK(full(5, k) == f1(2, k));
  }
  const Tensor2 sub = collect_base_features(b, base, 4, 7);
  REQUIRE(sub.rows() == 4);
  for (std::size_t r = 0; r < 4; ++r) {
    bool found = false;
    for (std::size_t s = 0; s < 6 && !found; ++s)
      found = std::equal(sub.row(r).begin(), sub.row(r).end(), full.row(s).begin());
    CHECK(found);
  }
  CHECK(collect_base_features(b, base, 4, 7) == sub);
  CHECK_THROWS_AS(collect_base_features(b, std::span<const LabeledInstance>{}, 4, 7), ProtocolError);
  b.mlp.frozen = false;
  CHECK_THROWS_AS(collect_base_features(b, base, 4, 7), ProtocolError);
}

TEST_CASE("kmeans") {
  SUBCASE("distinct rows with m = n are their own centers") {
    std::mt19937_64 rng(3);
    const Tensor2 x = random_tensor(6, 3, rng);
    const ClusterCenters c = kmeans(x, {6, 1, 50, 1e-9});
    CHECK(c.inertia_history.back() == 0.0);
    for (std::size_t r = 0; r < 6; ++r) {
      bool found = false;
      for (std::size_t j = 0; j < 6; ++j) {
        bool same = true;
        for (std::size_t k = 0; k < 3; ++k) same = same && c.centers(k, j) == x(r, k);
        found = found || same;
      }
      CHECK(found);
    }
  }
  SUBCASE("1-D four points") {
    const Tensor2 x = Tensor2::from_rows({{0}, {1}, {10}, {11}});
    const auto oracle = best_1d_split({0, 1, 10, 11});
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const ClusterCenters c = kmeans(x, {2, seed, 100, 1e-12});
      std::vector<double> got{c.centers(0, 0), c.centers(0, 1)};
      std::sort(got.begin(), got.end());
      CHECK(got[0] == 0.5);
      CHECK(got[1] == 10.5);
      CHECK(got[0] == oracle.first);
      CHECK(got[1] == oracle.second);
    }
  }
  SUBCASE("inertia never increases") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const Tensor2 x = random_tensor(200, 5, rng);
      const ClusterCenters c = kmeans(x, {12, seed, 30, 1e-9});
      CHECK(c.centers.rows() == 5);
      CHECK(c.centers.cols() == 12);
      for (std::size_t i = 1; i < c.inertia_history.size(); ++i)
        CHECK(c.inertia_history[i] <= c.inertia_history[i - 1] * (1 + 1e-12));
    }
  }
  SUBCASE("centers are the means of their members at convergence") {
    std::mt19937_64 rng(4);
    const Tensor2 x = random_tensor(60, 2, rng);
    const ClusterCenters c = kmeans(x, {4, 4, 500, 0.0});
    std::vector<std::vector<double>> sum(4, std::vector<double>(2, 0.0));
    std::vector<int> n(4, 0);
    for (std::size_t i = 0; i < 60; ++i) {
      std::size_t best = 0;
      double bd = INFINITY;
      for (std::size_t j = 0; j < 4; ++j) {
        const double d = std::pow(x(i, 0) - c.centers(0, j), 2) + std::pow(x(i, 1) - c.centers(1, j), 2);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      sum[best][0] += x(i, 0);
      sum[best][1] += x(i, 1);
      ++n[best];
    }
    for (std::size_t j = 0; j < 4; ++j) {
      REQUIRE(n[j] > 0);
      CHECK(sum[j][0] / n[j] == doctest::Approx(c.centers(0, j)).epsilon(1e-12));
      CHECK(sum[j][1] / n[j] == doctest::Approx(c.centers(1, j)).epsilon(1e-12));
    }
  }
  SUBCASE("duplicate rows leave no empty cluster behind") {
    const Tensor2 x = Tensor2::from_rows({{0, 0}, {0, 0}, {0, 0}, {5, 5}});
    const ClusterCenters c = kmeans(x, {3, 0, 20, 1e-9});
    CHECK(c.centers.all_finite());
  }
  SUBCASE("too few rows") {
    CHECK_THROWS_AS(kmeans(Tensor2(3, 2), {4, 0, 10, 1e-6}), InputError);
  }
}

TEST_CASE("energy threshold") {
  const std::vector<double> a{10, 1}, b{3, 1};
  CHECK(basis_size(a, 0.95) == 1);
  CHECK(basis_size(b, 0.95) == 2);
  CHECK(basis_size(a, 0.95, EnergyMode::linear) == 2);
  const MicroshapeBasis id = build_basis(centers_of(Tensor2::identity(2)), 0.95);
  CHECK(id.u() == 2);
  CHECK(orthonormality_error(id.P) < 1e-15);
  const MicroshapeBasis diag = build_basis(centers_of(Tensor2::from_rows({{10, 0}, {0, 1}})), 0.95);
  CHECK(diag.u() == 1);
  CHECK(std::abs(std::abs(diag.P(0, 0)) - 1.0) < 1e-15);
  CHECK(build_basis(centers_of(Tensor2::from_rows({{3, 0}, {0, 1}})), 0.95).u() == 2);
  CHECK_THROWS_AS(build_basis(centers_of(Tensor2(3, 3)), 0.95), DegenerateInputError);
  CHECK_THROWS_AS(basis_size(a, 0.0), ConfigError);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 c = random_tensor(8, 10, rng);
    std::size_t last = 0;
    for (double t : {0.3, 0.5, 0.8, 0.9, 0.95, 0.99, 1.0}) {
      const std::size_t u = build_basis(centers_of(c), t).u();
      CHECK(u >= last);
      CHECK(u <= 8);
      last = u;
    }
  }
}

TEST_CASE("bases are orthonormal and obey Bessel's inequality") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t q = 4 + seed % 13, m = 3 + seed % 17;
    const MicroshapeBasis b = random_basis(q, m, rng);
    CHECK(orthonormality_error(b.P) < 1e-10);
    CHECK(b.u() <= std::min(q, m));
    const Tensor2 f = random_tensor(1, q, rng);
    double n2 = 0.0;
    for (double v : f.data()) n2 += v * v;
    double s = 0.0;
    for (std::size_t k = 0; k < b.u(); ++k) {
      double dot = 0.0;
      for (std::size_t r = 0; r < q; ++r) dot += f(0, r) * b.P(r, k);
      s += dot * dot / n2;
    }
    CHECK(s <= 1.0 + 1e-12);
  }
}

TEST_CASE("microshape feature") {
  std::mt19937_64 rng(6);
  SUBCASE("single point equal to the first microshape") {
    const MicroshapeBasis b = random_basis(6, 8, rng);
    Tensor2 f(1, 6);
    for (std::size_t r = 0; r < 6; ++r) f(0, r) = b.P(r, 0);
    const auto e = microshape_feature(f, b);
    CHECK(e[0] == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t k = 1; k < e.size(); ++k) CHECK(std::abs(e[k]) < 1e-14);
  }
  SUBCASE("identical rows give f^T P for any l") {
    const MicroshapeBasis b = random_basis(5, 7, rng);
    const Tensor2 one = random_tensor(1, 5, rng);
    const auto ref = microshape_feature(one, b);
    for (std::size_t l : {2u, 9u, 33u}) {
      Tensor2 f(l, 5);
      for (std::size_t r = 0; r < l; ++r) std::copy(one.row(0).begin(), one.row(0).end(), f.row(r).begin());
      const auto e = microshape_feature(f, b);
      for (std::size_t k = 0; k < e.size(); ++k) CHECK(std::abs(e[k] - ref[k]) < 1e-14);
    }
  }
  SUBCASE("double-loop oracle on random clouds") {
    for (int trial = 0; trial < 100; ++trial) {
      const MicroshapeBasis b = random_basis(12, 10, rng);
      const Tensor2 f = random_tensor(5 + trial % 40, 12, rng);
      const auto e = microshape_feature(f, b);
      const auto ref = double_loop_feature(f, b.P);
      for (std::size_t k = 0; k < e.size(); ++k) CHECK(std::abs(e[k] - ref[k]) < 1e-10);
    }
  }
  SUBCASE("point order does not matter") {
    const BackboneParams bb = make_backbone(std::vector<std::size_t>{16, 12}, 3);
    const MicroshapeBasis b = random_basis(12, 20, rng);
    for (int c = 0; c < 5; ++c) {
      PointCloud cloud = random_cloud(64, rng);
      const auto ref = microshape_feature(cloud, bb, b);
      for (int p = 0; p < 20; ++p) {
        std::shuffle(cloud.points.begin(), cloud.points.end(), rng);
        const auto e = microshape_feature(cloud, bb, b);
        for (std::size_t k = 0; k < e.size(); ++k)
          CHECK(std::abs(e[k] - ref[k]) <= 1e-9 * std::max(1.0, std::abs(ref[k])));
      }
    }
  }
  SUBCASE("width mismatch") {
    const MicroshapeBasis b = random_basis(5, 6, rng);
    CHECK_THROWS_AS(microshape_feature(Tensor2(3, 4), b), ConfigError);
  }
}

TEST_CASE("projection W") {
  std::mt19937_64 rng(7);
  MlpParams w = make_projection(3, 5, 1);
  REQUIRE(w.layers.size() == 1);
  CHECK(w.layers[0].activation == Activation::relu);
  const std::vector<double> e{0.4, 1.5, 0.2};
  SUBCASE("zero weights") {
    w.layers[0].weight.fill(0.0);
    for (double v : embed(e, w)) CHECK(v == 0.0);
  }
  SUBCASE("identity padded") {
    w.layers[0].weight.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) w.layers[0].weight(i, i) = 1.0;
    const auto z = embed(e, w);
    CHECK(z == std::vector<double>{0.4, 1.5, 0.2, 0.0, 0.0});
  }
  SUBCASE("non-negative output and finite differences") {
    for (int t = 0; t < 10; ++t) {
      MlpParams p = make_projection(4, 6, 10 + t);
      for (double& b : p.layers[0].bias) b = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
      const Tensor2 x = random_tensor(3, 4, rng);
      const Tensor2 g = random_tensor(3, 6, rng);
      const auto [z, cache] = mlp_forward(p, x);
      for (double v : z.data()) CHECK(v >= 0.0);
      const MlpGrads grads = mlp_backward(p, cache, g, false);
      auto loss = [&] {
        const Tensor2 y = mlp_infer(p, x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * g.data()[i];
        return s;
      };
      CHECK(msfc::testing::fd_check_mlp(p, grads, loss) < 1e-3);
    }
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(embed(std::vector<double>{1.0}, w), ConfigError); }
}

TEST_CASE("basis persistence") {
  std::mt19937_64 rng(8);
  MicroshapeBasis b = random_basis(6, 9, rng);
  b.provenance.backbone_checksum = 123456789012345ULL;
  b.provenance.feature_rows = 77;
  Checkpoint c;
  store_basis(c, b);
  const BasisProvenance p = parse_provenance(format_provenance(b.provenance));
  CHECK(p.backbone_checksum == b.provenance.backbone_checksum);
  CHECK(p.feature_rows == 77);
  CHECK(p.energy_threshold == b.provenance.energy_threshold);
  const MicroshapeBasis back = restore_basis(Checkpoint::deserialize(c.serialize()), p);
  CHECK(back.u() == b.u());
  CHECK(max_abs_diff(back.P, b.P) < 1e-6);
  CHECK_THROWS_AS(parse_provenance("m = 3\n"), FormatError);
}

TEST_CASE("raw-center basis keeps every normalized center") {
  const MicroshapeBasis b = raw_center_basis(centers_of(Tensor2::from_rows({{3, 0}, {4, 2}})));
  CHECK(b.u() == 2);
  CHECK(b.P(0, 0) == doctest::Approx(0.6));
  CHECK(b.P(1, 0) == doctest::Approx(0.8));
  CHECK(b.P(1, 1) == doctest::Approx(1.0));
}
