// SPDX-License-Identifier: Apache-2.0
#include "msfc/prototypes.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "msfc/checkpoint.hpp"
#include "msfc/error.hpp"
#include "msfc/seed.hpp"

namespace msfc {

std::string to_string(PrototypeMode m) {
  switch (m) {
    case PrototypeMode::language: return "language";
    case PrototypeMode::feature: return "feature";
    case PrototypeMode::synthetic: return "synthetic";
  }
  return "synthetic";
}

PrototypeMode parse_prototype_mode(const std::string& s) {
  if (s == "language") return PrototypeMode::language;
  if (s == "feature") return PrototypeMode::feature;
  if (s == "synthetic") return PrototypeMode::synthetic;
  throw ConfigError("unknown prototype mode '" + s + "'");
}

const std::vector<double>& PrototypeTable::at(int class_id) const {
  auto it = entries.find(class_id);
  if (it == entries.end()) throw ProtocolError("no prototype for class " + std::to_string(class_id));
  return it->second;
}

void PrototypeTable::set(int class_id, std::vector<double> v) {
  if (dim == 0) dim = v.size();
  if (v.size() != dim) throw FormatError("prototype dimension " + std::to_string(v.size()) + " != " + std::to_string(dim));
  for (double x : v)
    if (!std::isfinite(x)) throw FormatError("non-finite prototype value for class " + std::to_string(class_id));
  entries[class_id] = std::move(v);
}

PrototypeTable load_language_prototypes(const std::filesystem::path& path, std::span<const ClassRef> classes) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing prototype file " + path.string());
  std::map<std::string, std::vector<double>> by_name;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    std::vector<double> v;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad value on line " + std::to_string(line_no));
      }
    }
    if (v.empty()) throw FormatError(path.string() + ": no values on line " + std::to_string(line_no));
    if (dim == 0) dim = v.size();
    if (v.size() != dim)
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(dim));
    by_name.emplace(name, std::move(v));
  }
  PrototypeTable table;
  table.mode = PrototypeMode::language;
  table.source = path.string();
  for (const auto& c : classes) {
    auto it = by_name.find(c.name);
    if (it == by_name.end()) throw LoadError("prototype file " + path.string() + " has no entry for class '" + c.name + "'");
    table.set(c.id, it->second);
  }
  return table;
}

void write_language_prototypes(const PrototypeTable& table, std::span<const ClassRef> classes,
                               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write prototype file " + path.string());
  char buf[40];
  for (const auto& c : classes) {
    out << c.name;
    for (double v : table.at(c.id)) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

PrototypeTable mean_prototypes(const std::map<int, std::vector<std::vector<double>>>& embedded_by_class) {
  PrototypeTable table;
  table.mode = PrototypeMode::feature;
  table.source = "feature-mean";
  for (const auto& [id, vectors] : embedded_by_class) {
    if (vectors.empty()) throw ProtocolError("class " + std::to_string(id) + " has no instances for a feature prototype");
    std::vector<double> mean(vectors.front().size(), 0.0);
    for (const auto& v : vectors) {
      if (v.size() != mean.size()) throw ConfigError("embedded vectors of mixed width");
      for (std::size_t k = 0; k < v.size(); ++k) mean[k] += v[k];
    }
    for (double& x : mean) x /= static_cast<double>(vectors.size());
    table.set(id, std::move(mean));
  }
  return table;
}

namespace {

std::vector<double> gaussian_vector(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

void normalize_in_place(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 <= 0.0) return;
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
}

}  // namespace

PrototypeTable synth_prototypes(std::span<const ClassSpec> classes, std::size_t d, std::uint64_t seed, double kappa) {
  if (d == 0) throw ConfigError("prototype dimension must be >= 1");
  PrototypeTable table;
  table.mode = PrototypeMode::synthetic;
  table.dim = d;
  table.source = "synthetic:seed=" + std::to_string(seed);
  const double noise_scale = kappa / std::sqrt(static_cast<double>(d));
  for (const auto& c : classes) {
    std::vector<double> base = gaussian_vector(d, derive_seed(seed, {1, fnv1a64(c.family)}));
    normalize_in_place(base);
    const std::vector<double> noise = gaussian_vector(d, derive_seed(seed, {2, fnv1a64(c.name)}));
    for (std::size_t k = 0; k < d; ++k) base[k] += noise_scale * noise[k];
    normalize_in_place(base);
    table.set(c.id, std::move(base));
  }
  return table;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace msfc
