// SPDX-License-Identifier: Apache-2.0
#include "msfc/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "msfc/error.hpp"
#include "msfc/seed.hpp"

namespace msfc {

namespace {

constexpr double kPi = std::numbers::pi;

const std::map<std::string, Family>& family_names() {
  static const std::map<std::string, Family> names = {
      {"sphere", Family::sphere},
      {"cuboid", Family::cuboid},
      {"cylinder", Family::cylinder},
      {"cone", Family::cone},
      {"torus", Family::torus},
      {"ellipsoid", Family::ellipsoid},
      {"capsule", Family::capsule},
      {"pyramid", Family::pyramid},
      {"composite-legged", Family::composite_legged},
      {"composite-stacked", Family::composite_stacked},
  };
  return names;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double draw(const Range& r, std::mt19937_64& rng) { return uniform(rng, r.lo, r.hi); }

Point3 unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Point3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-12) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

Point3 add(Point3 a, Point3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Point3 scale(Point3 a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

struct Component {
  double area;
  std::function<Point3(std::mt19937_64&)> sample;
};

PointCloud sample_components(const std::vector<Component>& parts, std::size_t n, std::mt19937_64& rng) {
  std::vector<double> weights;
  for (const auto& p : parts) weights.push_back(p.area);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) cloud.points.push_back(parts[pick(rng)].sample(rng));
  return cloud;
}

// Axis-aligned box surface centred at `c` with half-extents h.
void box_parts(std::vector<Component>& parts, Point3 c, Point3 h) {
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    const double area = 4.0 * h[u] * h[v];
    for (double side : {-1.0, 1.0}) {
      parts.push_back({area, [=](std::mt19937_64& rng) {
                         Point3 p = c;
                         p[axis] += side * h[axis];
                         p[u] += uniform(rng, -h[u], h[u]);
                         p[v] += uniform(rng, -h[v], h[v]);
                         return p;
                       }});
    }
  }
}

// Open cylinder side along z from z0 to z1, centred at (cx, cy).
void tube_part(std::vector<Component>& parts, double cx, double cy, double r, double z0, double z1) {
  parts.push_back({2.0 * kPi * r * (z1 - z0), [=](std::mt19937_64& rng) {
                     const double t = uniform(rng, 0.0, 2.0 * kPi);
                     return Point3{cx + r * std::cos(t), cy + r * std::sin(t), uniform(rng, z0, z1)};
                   }});
}

void disk_part(std::vector<Component>& parts, double r, double z) {
  parts.push_back({kPi * r * r, [=](std::mt19937_64& rng) {
                     const double rr = r * std::sqrt(uniform(rng, 0.0, 1.0));
                     const double t = uniform(rng, 0.0, 2.0 * kPi);
                     return Point3{rr * std::cos(t), rr * std::sin(t), z};
                   }});
}

void sphere_part(std::vector<Component>& parts, Point3 c, double r) {
  parts.push_back({4.0 * kPi * r * r, [=](std::mt19937_64& rng) { return add(c, scale(unit_vector(rng), r)); }});
}

void triangle_part(std::vector<Component>& parts, Point3 a, Point3 b, Point3 c) {
  const Point3 ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Point3 ac{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Point3 cr{ab[1] * ac[2] - ab[2] * ac[1], ab[2] * ac[0] - ab[0] * ac[2], ab[0] * ac[1] - ab[1] * ac[0]};
  const double area = 0.5 * std::sqrt(dot(cr, cr));
  parts.push_back({area, [=](std::mt19937_64& rng) {
                     double s = uniform(rng, 0.0, 1.0);
                     double t = uniform(rng, 0.0, 1.0);
                     if (s + t > 1.0) {
                       s = 1.0 - s;
                       t = 1.0 - t;
                     }
                     return add(a, add(scale(ab, s), scale(ac, t)));
                   }});
}

// Unit sphere with a zero-sum point set: antithetic pairs plus one
// three-point star when n is odd.
PointCloud balanced_sphere(std::size_t n, std::mt19937_64& rng) {
  PointCloud cloud;
  cloud.points.reserve(n);
  if (n % 2 == 1) {
    const Point3 u = unit_vector(rng);
    Point3 w = unit_vector(rng);
    const double d = dot(u, w);
    w = {w[0] - d * u[0], w[1] - d * u[1], w[2] - d * u[2]};
    const double len = std::sqrt(dot(w, w));
    if (len < 1e-9) {
      w = std::abs(u[0]) < 0.9 ? Point3{0.0, -u[2], u[1]} : Point3{-u[2], 0.0, u[0]};
    }
    const double wl = std::sqrt(dot(w, w));
    w = scale(w, 1.0 / wl);
    const double s = std::sqrt(3.0) / 2.0;
    cloud.points.push_back(u);
    cloud.points.push_back(add(scale(u, -0.5), scale(w, s)));
    if (n >= 3) cloud.points.push_back(add(scale(u, -0.5), scale(w, -s)));
    else cloud.points.resize(1);
  }
  while (cloud.size() + 1 < n) {
    const Point3 v = unit_vector(rng);
    cloud.points.push_back(v);
    cloud.points.push_back(scale(v, -1.0));
  }
  cloud.points.resize(std::min(cloud.size(), n));
  return cloud;
}

}  // namespace

std::string to_string(Family f) {
  for (const auto& [name, fam] : family_names())
    if (fam == f) return name;
  return "sphere";
}

Family parse_family(const std::string& s) {
  auto it = family_names().find(s);
  if (it == family_names().end()) throw ConfigError("unknown shape family '" + s + "'");
  return it->second;
}

void CorruptionProfile::validate() const {
  if (!(jitter_sigma >= 0.0)) throw ConfigError("corruption.jitter must be >= 0");
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0))
    throw ConfigError("corruption.occlusion must lie in [0,1)");
  if (!(clutter_fraction >= 0.0 && clutter_fraction <= 1.0))
    throw ConfigError("corruption.clutter must lie in [0,1]");
  if (!(density_bias >= 0.0 && density_bias < 1.0)) throw ConfigError("corruption.density_bias must lie in [0,1)");
}

void ShapeFamily::validate() const {
  auto positive = [&](const Range& r, const char* what) {
    if (!(r.lo > 0.0) || !(r.hi >= r.lo) || !std::isfinite(r.hi))
      throw ConfigError("degenerate parameter range '" + std::string(what) + "' for class '" + class_name + "'");
  };
  if (class_name.empty()) throw ConfigError("shape family needs a class name");
  switch (family) {
    case Family::sphere: break;
    case Family::ellipsoid:
    case Family::cuboid:
      positive(a, "a");
      positive(b, "b");
      positive(c, "c");
      break;
    case Family::cylinder:
    case Family::cone:
    case Family::capsule:
    case Family::pyramid:
      positive(a, "a");
      positive(b, "b");
      break;
    case Family::torus:
      positive(a, "a");
      positive(b, "b");
      if (b.hi >= a.lo) throw ConfigError("torus minor radius must be below major radius for '" + class_name + "'");
      break;
    case Family::composite_legged:
      positive(a, "a");
      positive(b, "b");
      if (c.lo < 3.0 || c.hi > 4.0) throw ConfigError("legged family needs 3 or 4 legs for '" + class_name + "'");
      break;
    case Family::composite_stacked:
      positive(a, "a");
      if (a.hi > 1.0) throw ConfigError("stacked radius decay must be <= 1 for '" + class_name + "'");
      if (c.lo < 2.0) throw ConfigError("stacked family needs at least 2 parts for '" + class_name + "'");
      break;
  }
  corruption.validate();
}

ShapeFamily preset_family(const std::string& class_name) {
  auto make = [&](Family f, Range a = {}, Range b = {}, Range c = {}) {
    ShapeFamily s;
    s.class_name = class_name;
    s.family = f;
    s.a = a;
    s.b = b;
    s.c = c;
    return s;
  };
  const std::map<std::string, std::function<ShapeFamily()>> catalog = {
      {"ball", [&] { return make(Family::sphere); }},
      {"cube", [&] { return make(Family::cuboid, {0.9, 1.1}, {0.9, 1.1}, {0.9, 1.1}); }},
      {"plank", [&] { return make(Family::cuboid, {1.6, 2.0}, {0.7, 0.9}, {0.08, 0.15}); }},
      {"pillar", [&] { return make(Family::cuboid, {0.3, 0.4}, {0.3, 0.4}, {1.6, 2.0}); }},
      {"can", [&] { return make(Family::cylinder, {0.5, 0.6}, {0.5, 0.65}); }},
      {"pipe", [&] { return make(Family::cylinder, {0.15, 0.22}, {1.4, 1.8}); }},
      {"disc", [&] { return make(Family::cylinder, {1.0, 1.2}, {0.06, 0.12}); }},
      {"cone", [&] { return make(Family::cone, {0.55, 0.7}, {1.0, 1.3}); }},
      {"spike", [&] { return make(Family::cone, {0.2, 0.3}, {2.0, 2.6}); }},
      {"donut", [&] { return make(Family::torus, {1.0, 1.1}, {0.35, 0.45}); }},
      {"ring", [&] { return make(Family::torus, {1.0, 1.1}, {0.08, 0.14}); }},
      {"egg", [&] { return make(Family::ellipsoid, {0.6, 0.7}, {0.6, 0.7}, {0.95, 1.1}); }},
      {"lens", [&] { return make(Family::ellipsoid, {0.95, 1.05}, {0.95, 1.05}, {0.25, 0.35}); }},
      {"pill", [&] { return make(Family::capsule, {0.3, 0.4}, {0.6, 0.8}); }},
      {"pyramid", [&] { return make(Family::pyramid, {0.6, 0.7}, {0.9, 1.1}); }},
      {"obelisk", [&] { return make(Family::pyramid, {0.2, 0.3}, {2.0, 2.5}); }},
      {"table", [&] { return make(Family::composite_legged, {0.9, 1.1}, {0.9, 1.1}, {4.0, 4.0}); }},
      {"stool", [&] { return make(Family::composite_legged, {0.4, 0.5}, {0.9, 1.1}, {3.0, 3.0}); }},
      {"snowman", [&] { return make(Family::composite_stacked, {0.65, 0.75}, {}, {3.0, 3.0}); }},
      {"tower", [&] { return make(Family::composite_stacked, {0.92, 0.98}, {}, {4.0, 4.0}); }},
  };
  auto it = catalog.find(class_name);
  if (it == catalog.end()) throw ConfigError("unknown class preset '" + class_name + "'");
  ShapeFamily s = it->second();
  s.validate();
  return s;
}

std::vector<std::string> preset_names() {
  return {"ball", "cube", "plank", "pillar", "can",  "pipe",    "disc",    "cone",  "spike", "donut",
          "ring", "egg",  "lens",  "pill",   "pyramid", "obelisk", "table", "stool", "snowman", "tower"};
}

PointCloud sample_surface(const ShapeFamily& fam, std::size_t n, std::mt19937_64& rng) {
  fam.validate();
  if (n == 0) throw ConfigError("sample_surface needs at least one point");
  if (fam.family == Family::sphere) return balanced_sphere(n, rng);

  std::vector<Component> parts;
  const double a = draw(fam.a, rng);
  const double b = draw(fam.b, rng);
  const double c = draw(fam.c, rng);
  switch (fam.family) {
    case Family::sphere: break;
    case Family::ellipsoid:
      parts.push_back({1.0, [=](std::mt19937_64& r) {
                         const Point3 u = unit_vector(r);
                         return Point3{a * u[0], b * u[1], c * u[2]};
                       }});
      break;
    case Family::cuboid: box_parts(parts, {0.0, 0.0, 0.0}, {a, b, c}); break;
    case Family::cylinder:
      tube_part(parts, 0.0, 0.0, a, -b, b);
      disk_part(parts, a, -b);
      disk_part(parts, a, b);
      break;
    case Family::cone: {
      const double slant = std::sqrt(a * a + b * b);
      parts.push_back({kPi * a * slant, [=](std::mt19937_64& r) {
                         const double t = std::sqrt(uniform(r, 0.0, 1.0));
                         const double th = uniform(r, 0.0, 2.0 * kPi);
                         return Point3{a * t * std::cos(th), a * t * std::sin(th), b * (1.0 - t)};
                       }});
      disk_part(parts, a, 0.0);
      break;
    }
    case Family::torus:
      parts.push_back({1.0, [=](std::mt19937_64& r) {
                         for (;;) {
                           const double th = uniform(r, 0.0, 2.0 * kPi);
                           const double ph = uniform(r, 0.0, 2.0 * kPi);
                           if (uniform(r, 0.0, 1.0) * (a + b) > a + b * std::cos(ph)) continue;
                           const double rr = a + b * std::cos(ph);
                           return Point3{rr * std::cos(th), rr * std::sin(th), b * std::sin(ph)};
                         }
                       }});
      break;
    case Family::capsule:
      tube_part(parts, 0.0, 0.0, a, -b, b);
      parts.push_back({4.0 * kPi * a * a, [=](std::mt19937_64& r) {
                         Point3 u = scale(unit_vector(r), a);
                         u[2] += u[2] >= 0.0 ? b : -b;
                         return u;
                       }});
      break;
    case Family::pyramid: {
      const Point3 apex{0.0, 0.0, b};
      const Point3 c00{-a, -a, 0.0}, c10{a, -a, 0.0}, c11{a, a, 0.0}, c01{-a, a, 0.0};
      triangle_part(parts, c00, c10, apex);
      triangle_part(parts, c10, c11, apex);
      triangle_part(parts, c11, c01, apex);
      triangle_part(parts, c01, c00, apex);
      triangle_part(parts, c00, c10, c11);
      triangle_part(parts, c00, c11, c01);
      break;
    }
    case Family::composite_legged: {
      const double top_t = 0.05;
      box_parts(parts, {0.0, 0.0, b + top_t}, {a, a, top_t});
      const int legs = static_cast<int>(std::lround(c));
      const double leg_r = 0.06;
      for (int k = 0; k < legs; ++k) {
        double x, y;
        if (legs == 4) {
          x = (k & 1 ? 0.8 : -0.8) * a;
          y = (k & 2 ? 0.8 : -0.8) * a;
        } else {
          const double ang = kPi / 2.0 + 2.0 * kPi * k / legs;
          x = 0.8 * a * std::cos(ang);
          y = 0.8 * a * std::sin(ang);
        }
        tube_part(parts, x, y, leg_r, 0.0, b);
      }
      break;
    }
    case Family::composite_stacked: {
      const int count = static_cast<int>(std::lround(c));
      double r = 1.0;
      double z = 0.0;
      for (int k = 0; k < count; ++k) {
        sphere_part(parts, {0.0, 0.0, z}, r);
        const double next = r * a;
        z += r + 0.8 * next;
        r = next;
      }
      break;
    }
  }
  return sample_components(parts, n, rng);
}

PointCloud corrupt(const PointCloud& cloud, const CorruptionProfile& profile, std::mt19937_64& rng) {
  profile.validate();
  if (cloud.empty()) throw InputError("cannot corrupt an empty cloud");
  PointCloud out = cloud;

  if (profile.jitter_sigma > 0.0) {
    std::normal_distribution<double> n(0.0, profile.jitter_sigma);
    for (auto& p : out.points)
      for (double& v : p) v += n(rng);
  }

  if (profile.occlusion_fraction > 0.0) {
    const Point3 dir = unit_vector(rng);
    const auto removed = static_cast<std::size_t>(std::floor(profile.occlusion_fraction * out.size()));
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return dot(out.points[i], dir) > dot(out.points[j], dir);
    });
    std::vector<char> drop(out.size(), 0);
    for (std::size_t i = 0; i < removed && i + 1 < order.size(); ++i) drop[order[i]] = 1;
    PointCloud kept;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (!drop[i]) kept.points.push_back(out.points[i]);
    out = std::move(kept);
  }

  if (profile.density_bias > 0.0) {
    const Point3 dir = unit_vector(rng);
    Point3 c{0.0, 0.0, 0.0};
    for (const auto& p : out.points) c = add(c, p);
    c = scale(c, 1.0 / static_cast<double>(out.size()));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointCloud kept;
    for (const auto& p : out.points) {
      const bool disfavoured = dot({p[0] - c[0], p[1] - c[1], p[2] - c[2]}, dir) < 0.0;
      const double roll = u(rng);
      if (disfavoured && roll < profile.density_bias) continue;
      kept.points.push_back(p);
    }
    if (kept.empty()) kept.points.push_back(out.points.front());
    out = std::move(kept);
  }

  if (profile.clutter_fraction > 0.0) {
    Point3 lo = out.points.front(), hi = out.points.front();
    for (const auto& p : out.points)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    for (int a = 0; a < 3; ++a) {
      const double pad = 0.1 * (hi[a] - lo[a]);
      lo[a] -= pad;
      hi[a] += pad;
    }
    const auto extra = static_cast<std::size_t>(std::lround(profile.clutter_fraction * out.size()));
    for (std::size_t i = 0; i < extra; ++i)
      out.points.push_back({uniform(rng, lo[0], hi[0]), uniform(rng, lo[1], hi[1]), uniform(rng, lo[2], hi[2])});
  }
  return out;
}

Dataset generate_dataset(std::span<const ShapeFamily> families, SplitCounts counts, std::size_t points,
                         std::uint64_t seed) {
  if (families.empty()) throw ConfigError("generate_dataset needs at least one family");
  if (counts.train == 0 || counts.test == 0) throw ConfigError("per-class counts must be >= 1");
  if (points == 0) throw ConfigError("points per cloud must be >= 1");
  for (const auto& f : families) f.validate();

  Dataset ds;
  for (std::size_t cls = 0; cls < families.size(); ++cls) {
    const ShapeFamily& fam = families[cls];
    for (Domain domain : {Domain::synthetic, Domain::real}) {
      for (Split split : {Split::train, Split::test}) {
        const std::size_t n = split == Split::train ? counts.train : counts.test;
        for (std::size_t i = 0; i < n; ++i) {
          std::mt19937_64 rng(derive_seed(seed, {cls, static_cast<std::uint64_t>(domain),
                                                  static_cast<std::uint64_t>(split), i}));
          PointCloud cloud;
          if (domain == Domain::synthetic) {
            cloud = normalize(sample_surface(fam, points, rng));
          } else {
            PointCloud raw = normalize(sample_surface(fam, 2 * points, rng));
            cloud = normalize(resample(normalize(corrupt(raw, fam.corruption, rng)), points));
          }
          LabeledInstance inst{std::move(cloud), static_cast<int>(cls), fam.class_name, domain, split};
          std::ostringstream path;
          path << "clouds/" << to_string(domain) << "/" << fam.class_name << "/" << to_string(split) << "_"
               << i << ".xyz";
          ds.manifest.push_back({path.str(), fam.class_name, static_cast<int>(cls), domain, split});
          ds.instances.push_back(std::move(inst));
        }
      }
    }
  }
  return ds;
}

void write_manifest(const std::vector<ManifestEntry>& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write manifest " + path.string());
  out << "path,class_name,class_id,domain,split\n";
  for (const auto& e : manifest)
    out << e.path << ',' << e.class_name << ',' << e.class_id << ',' << to_string(e.domain) << ','
        << to_string(e.split) << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,class_name,class_id,domain,split")
    throw ParseError(path.string() + ": unexpected manifest header '" + line + "'");
  std::vector<ManifestEntry> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() != 5) throw ParseError(path.string() + ": expected 5 columns on line " + std::to_string(line_no));
    ManifestEntry e;
    e.path = cols[0];
    e.class_name = cols[1];
    try {
      std::size_t used = 0;
      e.class_id = std::stoi(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
      e.domain = parse_domain(cols[3]);
      e.split = parse_split(cols[4]);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": malformed manifest row on line " + std::to_string(line_no));
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  if (dataset.instances.size() != dataset.manifest.size()) throw InternalError("dataset/manifest misaligned");
  for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
    const auto target = dir / dataset.manifest[i].path;
    std::filesystem::create_directories(target.parent_path());
    write_cloud(dataset.instances[i].cloud, target);
  }
  write_manifest(dataset.manifest, dir / "manifest.csv");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir / "manifest.csv");
  for (const auto& e : ds.manifest)
    ds.instances.push_back({read_cloud(dir / e.path), e.class_id, e.class_name, e.domain, e.split});
  return ds;
}

}  // namespace msfc
