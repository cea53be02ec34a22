// SPDX-License-Identifier: Apache-2.0
#include "msfc/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "msfc/error.hpp"

namespace msfc {

std::string to_string(Domain d) { return d == Domain::synthetic ? "synthetic" : "real"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Domain parse_domain(const std::string& s) {
  if (s == "synthetic") return Domain::synthetic;
  if (s == "real") return Domain::real;
  throw ParseError("unknown domain '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "'");
}

namespace {

double dist2(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

PointCloud normalize(const PointCloud& cloud) {
  if (cloud.empty()) throw InputError("cannot normalize an empty cloud");
  Point3 c{0.0, 0.0, 0.0};
  for (const auto& p : cloud.points)
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  const double inv = 1.0 / static_cast<double>(cloud.size());
  for (double& v : c) v *= inv;
  PointCloud out = cloud;
  double max_r2 = 0.0;
  for (auto& p : out.points) {
    for (int a = 0; a < 3; ++a) p[a] -= c[a];
    max_r2 = std::max(max_r2, p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  }
  if (max_r2 > 0.0) {
    const double s = 1.0 / std::sqrt(max_r2);
    for (auto& p : out.points)
      for (double& v : p) v *= s;
  }
  return out;
}

std::vector<std::size_t> fps_indices(const PointCloud& cloud, std::size_t k, std::size_t start_index) {
  const std::size_t l = cloud.size();
  if (l == 0) throw InputError("farthest point sampling on an empty cloud");
  if (k == 0) throw InputError("farthest point sampling needs k >= 1");
  if (start_index >= l) throw InputError("FPS start index out of range");
  const std::size_t count = std::min(k, l);
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::vector<double> nearest(l, std::numeric_limits<double>::infinity());
  std::vector<char> taken(l, 0);
  std::size_t last = start_index;
  picked.push_back(last);
  taken[last] = 1;
  while (picked.size() < count) {
    std::size_t best = l;
    double best_d = -1.0;
    for (std::size_t i = 0; i < l; ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], dist2(cloud.points[i], cloud.points[last]));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    last = best;
    taken[last] = 1;
    picked.push_back(last);
  }
  return picked;
}

PointCloud fps_sample(const PointCloud& cloud, std::size_t k, std::size_t start_index) {
  auto idx = fps_indices(cloud, k, start_index);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.points.reserve(idx.size());
  for (auto i : idx) out.points.push_back(cloud.points[i]);
  return out;
}

PointCloud resample(const PointCloud& cloud, std::size_t k) {
  if (cloud.empty()) throw InputError("cannot resample an empty cloud");
  if (cloud.size() >= k) return fps_sample(cloud, k, 0);
  PointCloud out = cloud;
  for (std::size_t i = 0; out.size() < k; ++i) out.points.push_back(cloud.points[i % cloud.size()]);
  return out;
}

double coverage_radius(const PointCloud& cloud, const PointCloud& samples) {
  if (samples.empty()) throw InputError("coverage radius of an empty sample set");
  double worst = 0.0;
  for (const auto& p : cloud.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : samples.points) best = std::min(best, dist2(p, s));
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

void AugmentConfig::validate() const {
  if (!(shift_range >= 0.0)) throw ConfigError("augment shift_range must be >= 0");
  if (!(scale_min > 0.0) || !(scale_max >= scale_min)) throw ConfigError("augment scale range invalid");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw ConfigError("augment dropout_prob must lie in [0,1)");
}

PointCloud augment_cloud(const PointCloud& cloud, const AugmentConfig& cfg) {
  cfg.validate();
  if (cloud.empty()) throw InputError("cannot augment an empty cloud");
  std::mt19937_64 rng(cfg.seed);
  Point3 shift{0.0, 0.0, 0.0};
  if (cfg.shift_range > 0.0) {
    std::uniform_real_distribution<double> u(-cfg.shift_range, cfg.shift_range);
    for (double& s : shift) s = u(rng);
  }
  double scale = cfg.scale_min;
  if (cfg.scale_max > cfg.scale_min) scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);

  PointCloud out;
  out.points.reserve(cloud.size());
  std::uniform_real_distribution<double> keep(0.0, 1.0);
  for (const auto& p : cloud.points) {
    if (cfg.dropout_prob > 0.0 && keep(rng) < cfg.dropout_prob) continue;
    out.points.push_back({(p[0] + shift[0]) * scale, (p[1] + shift[1]) * scale, (p[2] + shift[2]) * scale});
  }
  if (out.empty()) {
    const auto& p = cloud.points.front();
    out.points.push_back({(p[0] + shift[0]) * scale, (p[1] + shift[1]) * scale, (p[2] + shift[2]) * scale});
  }
  return out;
}

LabeledInstance augment(const LabeledInstance& instance, const AugmentConfig& cfg) {
  LabeledInstance out = instance;
  out.cloud = augment_cloud(instance.cloud, cfg);
  return out;
}

PointCloud parse_cloud(std::istream& in, const std::string& source) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    Point3 p{};
    std::string extra;
    if (!(ls >> p[0] >> p[1] >> p[2]) || (ls >> extra))
      throw ParseError(source + ": malformed point on line " + std::to_string(line_no));
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw ParseError(source + ": non-finite coordinate on line " + std::to_string(line_no));
    cloud.points.push_back(p);
  }
  if (cloud.empty()) throw InputError(source + ": cloud file has no points");
  return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing cloud file " + path.string());
  return parse_cloud(in, path.string());
}

void write_cloud(const PointCloud& cloud, std::ostream& out) {
  char buf[96];
  for (const auto& p : cloud.points) {
    const int n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
    out.write(buf, n);
  }
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write cloud file " + path.string());
  write_cloud(cloud, out);
}

}  // namespace msfc
