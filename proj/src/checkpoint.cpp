// SPDX-License-Identifier: Apache-2.0
#include "msfc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "msfc/error.hpp"

namespace msfc {

namespace {

template <typename T>
void write_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T read() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void append_entry(std::string& out, const Checkpoint::Entry& e) {
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
  out.append(e.name);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
  for (auto d : e.dims) write_le<std::uint64_t>(out, d);
  for (float f : e.values) write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> to_f32(std::span<const double> v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

}  // namespace

void Checkpoint::put(std::string name, std::vector<std::uint64_t> dims, std::vector<float> values) {
  if (name.empty() || name.size() > 0xFFFF) throw ConfigError("checkpoint entry name length out of range");
  if (dims.size() > 0xFF) throw ConfigError("checkpoint entry has too many dims");
  if (element_count(dims) != values.size())
    throw ConfigError("checkpoint entry '" + name + "' dims do not match value count");
  for (auto& e : entries_) {
    if (e.name == name) {
      e.dims = std::move(dims);
      e.values = std::move(values);
      return;
    }
  }
  entries_.push_back({std::move(name), std::move(dims), std::move(values)});
}

void Checkpoint::put_tensor(std::string name, const Tensor2& t) {
  put(std::move(name), {t.rows(), t.cols()}, to_f32(t.data()));
}

void Checkpoint::put_vector(std::string name, std::span<const double> v) {
  put(std::move(name), {v.size()}, to_f32(v));
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Checkpoint::Entry& Checkpoint::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw LoadError("checkpoint has no entry '" + std::string(name) + "'");
}

Tensor2 Checkpoint::tensor(std::string_view name) const {
  const Entry& e = at(name);
  if (e.dims.size() != 2) throw FormatError("entry '" + e.name + "' is not a matrix");
  std::vector<double> data(e.values.begin(), e.values.end());
  return Tensor2(e.dims[0], e.dims[1], std::move(data));
}

std::vector<double> Checkpoint::vector(std::string_view name) const {
  const Entry& e = at(name);
  if (e.dims.size() != 1) throw FormatError("entry '" + e.name + "' is not a vector");
  return {e.values.begin(), e.values.end()};
}

std::string Checkpoint::serialize() const {
  std::string out = "MSFC";
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) append_entry(out, e);
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "MSFC") throw FormatError("bad checkpoint magic");
  const auto version = r.read<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.read<std::uint32_t>();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto name_len = r.read<std::uint16_t>();
    e.name = std::string(r.take(name_len));
    const auto ndims = r.read<std::uint8_t>();
    for (std::uint8_t d = 0; d < ndims; ++d) e.dims.push_back(r.read<std::uint64_t>());
    const std::uint64_t n = element_count(e.dims);
    if (n > bytes.size()) throw FormatError("checkpoint entry '" + e.name + "' claims too many values");
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(r.read<std::uint32_t>());
    ckpt.entries_.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint entries");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void store_mlp(Checkpoint& ckpt, const std::string& prefix, const MlpParams& params) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    ckpt.put_tensor(prefix + "." + std::to_string(i) + ".weight", l.weight);
    ckpt.put_vector(prefix + "." + std::to_string(i) + ".bias", l.bias);
  }
}

void restore_mlp(const Checkpoint& ckpt, const std::string& prefix, MlpParams& params) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    Tensor2 w = ckpt.tensor(prefix + "." + std::to_string(i) + ".weight");
    std::vector<double> b = ckpt.vector(prefix + "." + std::to_string(i) + ".bias");
    if (w.rows() != l.weight.rows() || w.cols() != l.weight.cols() || b.size() != l.bias.size())
      throw LoadError("checkpoint layer '" + prefix + "." + std::to_string(i) +
                      "' does not match the configured architecture");
    l.weight = std::move(w);
    l.bias = std::move(b);
  }
}

std::string serialize_mlp(const std::string& prefix, const MlpParams& params) {
  Checkpoint ckpt;
  store_mlp(ckpt, prefix, params);
  return ckpt.serialize();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace msfc
