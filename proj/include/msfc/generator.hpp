// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msfc/pointcloud.hpp"

namespace msfc {

enum class Family {
  sphere,
  cuboid,
  cylinder,
  cone,
  torus,
  ellipsoid,
  capsule,
  pyramid,
  composite_legged,
  composite_stacked,
};

std::string to_string(Family f);
Family parse_family(const std::string& s);

struct Range {
  double lo = 1.0;
  double hi = 1.0;
};

/// Corruption applied to the "real-scan" domain.
struct CorruptionProfile {
  double jitter_sigma = 0.02;
  double occlusion_fraction = 0.25;  // removed by a half-space cut
  double clutter_fraction = 0.10;    // extra uniform-box points, relative to surviving count
  double density_bias = 0.5;         // drop probability in the disfavoured hemisphere

  void validate() const;
};

/// One generated class. The meaning of a/b/c depends on the family:
///   sphere            unused
///   ellipsoid         semi-axes a, b, c
///   cuboid            half-extents a, b, c
///   cylinder          radius a, half-height b
///   cone              base radius a, height b
///   torus             major radius a, minor radius b
///   capsule           radius a, half-length of the straight part b
///   pyramid           half base a, height b
///   composite_legged  tabletop half-extent a, leg length b, leg count c
///   composite_stacked radius decay a, sphere count c
struct ShapeFamily {
  std::string class_name;
  Family family = Family::sphere;
  Range a, b, c;
  CorruptionProfile corruption;

  void validate() const;
};

/// Named class presets used by the desk-scale benchmark. Throws ConfigError
/// for unknown names.
ShapeFamily preset_family(const std::string& class_name);
std::vector<std::string> preset_names();

/// Samples n points on the surface of one random instance of the family.
PointCloud sample_surface(const ShapeFamily& family, std::size_t n, std::mt19937_64& rng);

/// Jitter, half-space occlusion, hemisphere density bias, then clutter.
PointCloud corrupt(const PointCloud& cloud, const CorruptionProfile& profile, std::mt19937_64& rng);

struct ManifestEntry {
  std::string path;
  std::string class_name;
  int class_id = 0;
  Domain domain = Domain::synthetic;
  Split split = Split::train;
};

/// Instances and their manifest rows, index-aligned.
struct Dataset {
  std::vector<LabeledInstance> instances;
  std::vector<ManifestEntry> manifest;
};

struct SplitCounts {
  std::size_t train = 20;
  std::size_t test = 10;
};

/// Every class gets `counts` instances per split in both domains. class_id
/// is the index in `families`; each instance is seeded from
/// (seed, class, domain, split, index) so output does not depend on order.
Dataset generate_dataset(std::span<const ShapeFamily> families, SplitCounts counts, std::size_t points,
                         std::uint64_t seed);

void write_manifest(const std::vector<ManifestEntry>& manifest, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Writes clouds under <dir>/clouds/... and <dir>/manifest.csv.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace msfc
