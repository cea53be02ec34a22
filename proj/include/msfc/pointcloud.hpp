// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace msfc {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

enum class Domain { synthetic, real };
enum class Split { train, test };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain parse_domain(const std::string& s);
Split parse_split(const std::string& s);

struct LabeledInstance {
  PointCloud cloud;
  int class_id = 0;
  std::string class_name;
  Domain domain = Domain::synthetic;
  Split split = Split::train;
};

/// Centroid to the origin, farthest point at distance 1. A cloud whose
/// points all coincide collapses to the origin.
PointCloud normalize(const PointCloud& cloud);

/// Greedy farthest point sampling. Each pick maximizes the distance to the
/// nearest already-picked point, ties to the lowest index. Returns the
/// picked indices in pick order.
std::vector<std::size_t> fps_indices(const PointCloud& cloud, std::size_t k, std::size_t start_index = 0);

/// min(k, l) points chosen by FPS, emitted in their original order.
PointCloud fps_sample(const PointCloud& cloud, std::size_t k, std::size_t start_index = 0);

/// Exactly k points: FPS when the cloud is larger, cyclic repetition when
/// it is smaller.
PointCloud resample(const PointCloud& cloud, std::size_t k);

/// Max over cloud points of the distance to the nearest sample point.
double coverage_radius(const PointCloud& cloud, const PointCloud& samples);

struct AugmentConfig {
  double shift_range = 0.1;
  double scale_min = 0.8;
  double scale_max = 1.25;
  double dropout_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Shared random shift, then shared random scale, then independent point
/// dropout keeping at least one point.
LabeledInstance augment(const LabeledInstance& instance, const AugmentConfig& cfg);
PointCloud augment_cloud(const PointCloud& cloud, const AugmentConfig& cfg);

PointCloud parse_cloud(std::istream& in, const std::string& source = "<stream>");
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const PointCloud& cloud, std::ostream& out);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace msfc
