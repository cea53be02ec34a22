// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "msfc/error.hpp"
#include "msfc/prototypes.hpp"

using namespace msfc;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "msfc_test_prototypes";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<double> random_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

}  // namespace

TEST_CASE("language prototype files") {
  std::mt19937_64 rng(1);
  const auto path = temp_file("vectors.txt");
  {
    std::ofstream out(path);
    out << "chair";
    for (int i = 0; i < 300; ++i) out << " " << 0.001 * i;
    out << "\nlamp";
    for (int i = 0; i < 300; ++i) out << " 1";
    out << "\n";
  }
  SUBCASE("one requested class") {
    const std::vector<ClassRef> want{{4, "chair"}};
    const PrototypeTable t = load_language_prototypes(path, want);
    CHECK(t.entries.size() == 1);
    CHECK(t.dim == 300);
    CHECK(t.mode == PrototypeMode::language);
    CHECK(t.at(4)[10] == doctest::Approx(0.01));
  }
  SUBCASE("missing class is named") {
    const std::vector<ClassRef> want{{0, "chair"}, {1, "sofa"}};
    try {
      load_language_prototypes(path, want);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find("sofa") != std::string::npos);
    }
  }
  SUBCASE("inconsistent dimension") {
    const auto bad = temp_file("bad.txt");
    std::ofstream(bad) << "a 1 2 3\nb 1 2\n";
    const std::vector<ClassRef> want{{0, "a"}, {1, "b"}};
    CHECK_THROWS_AS(load_language_prototypes(bad, want), FormatError);
  }
  SUBCASE("round trip") {
    PrototypeTable t;
    t.mode = PrototypeMode::language;
    t.dim = 7;
    t.set(0, random_vector(7, rng));
    t.set(3, random_vector(7, rng));
    const std::vector<ClassRef> refs{{0, "mug"}, {3, "bowl"}};
    const auto out = temp_file("rt.txt");
    write_language_prototypes(t, refs, out);
    const PrototypeTable back = load_language_prototypes(out, refs);
    CHECK(back.entries == t.entries);
  }
}

TEST_CASE("feature prototypes are class means") {
  std::mt19937_64 rng(2);
  SUBCASE("single instance") {
    const auto z = random_vector(5, rng);
    const PrototypeTable t = mean_prototypes({{2, {z}}});
    CHECK(t.at(2) == z);
  }
  SUBCASE("two identical instances") {
    const auto z = random_vector(5, rng);
    CHECK(mean_prototypes({{2, {z, z}}}).at(2) == z);
  }
  SUBCASE("mean oracle") {
    std::vector<std::vector<double>> zs;
    for (int i = 0; i < 5; ++i) zs.push_back(random_vector(6, rng));
    const PrototypeTable t = mean_prototypes({{9, zs}});
    for (std::size_t k = 0; k < 6; ++k) {
      long double s = 0.0L;
      for (const auto& z : zs) s += z[k];
      CHECK(std::abs(t.at(9)[k] - static_cast<double>(s / 5.0L)) < 1e-12);
    }
  }
  SUBCASE("empty class") { CHECK_THROWS_AS(mean_prototypes({{1, {}}}), ProtocolError); }
}

TEST_CASE("synthetic prototypes") {
  const std::vector<ClassSpec> specs{{0, "ball", "round"}, {1, "disc", "round"}, {2, "cube", "box"}, {3, "plank", "box"}};
  SUBCASE("zero noise merges a family") {
    const PrototypeTable t = synth_prototypes(specs, 16, 3, 0.0);
    CHECK(t.at(0) == t.at(1));
    CHECK(t.at(2) == t.at(3));
    CHECK(t.at(0) != t.at(2));
  }
  SUBCASE("family structure holds over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const PrototypeTable t = synth_prototypes(specs, 32, seed, 0.3);
      const double within = (cosine_similarity(t.at(0), t.at(1)) + cosine_similarity(t.at(2), t.at(3))) / 2;
      const double across = (cosine_similarity(t.at(0), t.at(2)) + cosine_similarity(t.at(0), t.at(3)) +
                             cosine_similarity(t.at(1), t.at(2)) + cosine_similarity(t.at(1), t.at(3))) /
                            4;
      CHECK(within > across);
      for (const auto& [id, v] : t.entries) {
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
  SUBCASE("replay") {
    CHECK(synth_prototypes(specs, 8, 5).entries == synth_prototypes(specs, 8, 5).entries);
    CHECK(synth_prototypes(specs, 8, 5).entries != synth_prototypes(specs, 8, 6).entries);
  }
}

TEST_CASE("table invariants") {
  PrototypeTable t;
  t.dim = 3;
  t.set(1, {1, 2, 3});
  CHECK_THROWS_AS(t.set(2, {1, 2}), FormatError);
  CHECK_THROWS_AS(t.set(2, {1, 2, std::nan("")}), FormatError);
  CHECK_THROWS_AS(t.at(5), ProtocolError);
  CHECK(parse_prototype_mode("feature") == PrototypeMode::feature);
  CHECK_THROWS_AS(parse_prototype_mode("bert"), ConfigError);
}
