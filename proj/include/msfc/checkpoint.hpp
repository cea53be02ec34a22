// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "msfc/mlp.hpp"
#include "msfc/tensor.hpp"

namespace msfc {

/// Named float32 arrays in the "MSFC" binary container:
///   magic "MSFC" | u32 version | u32 entry count |
///   per entry: u16 name length, UTF-8 name, u8 dim count, u64 dims, f32 values
/// Everything little-endian. Entry order is preserved on load.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> values;
  };

  void put(std::string name, std::vector<std::uint64_t> dims, std::vector<float> values);
  void put_tensor(std::string name, const Tensor2& t);
  void put_vector(std::string name, std::span<const double> v);

  bool contains(std::string_view name) const;
  const Entry& at(std::string_view name) const;
  Tensor2 tensor(std::string_view name) const;
  std::vector<double> vector(std::string_view name) const;
  const std::vector<Entry>& entries() const { return entries_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
};

/// Stores layer i as "<prefix>.<i>.weight" / "<prefix>.<i>.bias".
void store_mlp(Checkpoint& ckpt, const std::string& prefix, const MlpParams& params);
/// Fills an already-shaped MlpParams from the checkpoint; shapes must match.
void restore_mlp(const Checkpoint& ckpt, const std::string& prefix, MlpParams& params);

/// Bytes of the entries under `prefix`, in stored order, as they would be
/// written to disk. Used for freeze and provenance checks.
std::string serialize_mlp(const std::string& prefix, const MlpParams& params);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace msfc
