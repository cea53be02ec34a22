// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace msfc {

enum class PrototypeMode { language, feature, synthetic };

std::string to_string(PrototypeMode m);
PrototypeMode parse_prototype_mode(const std::string& s);

/// Fixed per-class semantic vectors s_j. Prototypes are inputs to training
/// and are never updated by it.
struct PrototypeTable {
  PrototypeMode mode = PrototypeMode::synthetic;
  std::size_t dim = 0;
  std::map<int, std::vector<double>> entries;
  std::string source;

  bool contains(int class_id) const { return entries.count(class_id) != 0; }
  const std::vector<double>& at(int class_id) const;
  /// Adds an entry; dimension must match and values must be finite.
  void set(int class_id, std::vector<double> v);
};

struct ClassRef {
  int id = 0;
  std::string name;
};

/// Reads "name v1 ... vd" lines. Lines for classes that were not asked
/// for are ignored.
PrototypeTable load_language_prototypes(const std::filesystem::path& path, std::span<const ClassRef> classes);
void write_language_prototypes(const PrototypeTable& table, std::span<const ClassRef> classes,
                               const std::filesystem::path& path);

/// Per-class mean of already embedded vectors.
PrototypeTable mean_prototypes(const std::map<int, std::vector<std::vector<double>>>& embedded_by_class);

struct ClassSpec {
  int id = 0;
  std::string name;
  std::string family;  // classes sharing a family get nearby vectors
};

/// Each vector is unit-normalize(family_base + kappa * noise) with a seeded
/// unit family direction and seeded per-class noise of unit expected norm.
PrototypeTable synth_prototypes(std::span<const ClassSpec> classes, std::size_t d, std::uint64_t seed,
                                double kappa = 0.3);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace msfc
