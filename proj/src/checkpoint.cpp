#include "fg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fg {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'T', '1'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 1;
constexpr uint8_t kDtypeF32 = 2;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

void put_u8(std::ostream& os, uint8_t v) {
  os.write(reinterpret_cast<const char*>(&v), 1);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw FormatError(str("truncated checkpoint '", path, "'"));
  return v;
}

uint8_t get_u8(std::istream& is, const std::string& path) {
  uint8_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 1))
    throw FormatError(str("truncated checkpoint '", path, "'"));
  return v;
}

}  // namespace

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw FormatError(str("checkpoint has no entry named '", name, "'"));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(ckpt.metadata.size()));
  os.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put_u32(os, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (numel(e.shape) != static_cast<int64_t>(e.data.size()))
      throw ContractError(str("checkpoint entry '", e.name,
                              "': buffer does not match shape ", shape_str(e.shape)));
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u8(os, kDtypeF64);
    put_u8(os, static_cast<uint8_t>(e.shape.size()));
    for (int d : e.shape) put_u32(os, static_cast<uint32_t>(d));
  }
  for (const auto& e : ckpt.entries) {
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(double)));
  }
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open checkpoint '", path, "'"));
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(str("'", path, "' is not a model checkpoint (bad magic)"));
  const uint32_t version = get_u32(is, path);
  if (version != kVersion)
    throw FormatError(str("unsupported checkpoint version ", version, " in '", path, "'"));
  const uint32_t meta_len = get_u32(is, path);
  Checkpoint ckpt;
  ckpt.metadata.resize(meta_len);
  if (meta_len && !is.read(ckpt.metadata.data(), meta_len))
    throw FormatError(str("truncated checkpoint '", path, "'"));
  const uint32_t count = get_u32(is, path);
  std::vector<uint8_t> dtypes;
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const uint32_t name_len = get_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw FormatError(str("truncated checkpoint '", path, "'"));
    const uint8_t dtype = get_u8(is, path);
    if (dtype != kDtypeF64 && dtype != kDtypeF32)
      throw FormatError(str("unknown dtype ", int(dtype), " in '", path, "'"));
    dtypes.push_back(dtype);
    const uint8_t ndim = get_u8(is, path);
    for (int d = 0; d < ndim; ++d)
      e.shape.push_back(static_cast<int>(get_u32(is, path)));
    ckpt.entries.push_back(std::move(e));
  }
  for (uint32_t i = 0; i < count; ++i) {
    auto& e = ckpt.entries[i];
    const int64_t n = numel(e.shape);
    e.data.resize(static_cast<size_t>(n));
    if (dtypes[i] == kDtypeF64) {
      if (!is.read(reinterpret_cast<char*>(e.data.data()),
                   static_cast<std::streamsize>(n * sizeof(double))))
        throw FormatError(str("truncated checkpoint '", path, "'"));
    } else {
      std::vector<float> tmp(static_cast<size_t>(n));
      if (!is.read(reinterpret_cast<char*>(tmp.data()),
                   static_cast<std::streamsize>(n * sizeof(float))))
        throw FormatError(str("truncated checkpoint '", path, "'"));
      for (int64_t j = 0; j < n; ++j) e.data[j] = tmp[j];
    }
  }
  return ckpt;
}

}  // namespace fg
