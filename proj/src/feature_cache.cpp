#include "fg/feature_cache.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace fg {

namespace {

constexpr char kMagic[4] = {'L', 'P', 'S', '1'};

static_assert(std::endian::native == std::endian::little,
              "cache io assumes a little-endian host");

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw FormatError(str("truncated feature cache '", path, "'"));
  return v;
}

}  // namespace

void write_feature_cache(const std::string& path, const FixedFeature& feat) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os.write(kMagic, 4);
  put_u32(os, static_cast<uint32_t>(feat.utterance_id.size()));
  os.write(feat.utterance_id.data(),
           static_cast<std::streamsize>(feat.utterance_id.size()));
  put_u32(os, static_cast<uint32_t>(feat.bins));
  put_u32(os, static_cast<uint32_t>(feat.frames));
  std::vector<float> buf(feat.m.size());
  for (size_t i = 0; i < feat.m.size(); ++i) buf[i] = static_cast<float>(feat.m[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

FixedFeature read_feature_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open feature cache '", path, "'"));
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(str("'", path, "' is not a feature cache (bad magic)"));
  FixedFeature f;
  const uint32_t id_len = get_u32(is, path);
  f.utterance_id.resize(id_len);
  if (id_len && !is.read(f.utterance_id.data(), id_len))
    throw FormatError(str("truncated feature cache '", path, "'"));
  f.bins = static_cast<int>(get_u32(is, path));
  f.frames = static_cast<int>(get_u32(is, path));
  if (f.bins < 1 || f.frames < 1)
    throw FormatError(str("'", path, "': bad dimensions ", f.bins, "x", f.frames));
  std::vector<float> buf(static_cast<size_t>(f.bins) * f.frames);
  if (!is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float))))
    throw FormatError(str("truncated feature cache '", path, "'"));
  f.m.resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) f.m[i] = buf[i];
  return f;
}

void write_norm_stats(const std::string& path, const NormStats& stats) {
  nlohmann::json j;
  j["source"] = stats.source;
  j["mean"] = stats.mean;
  j["stddev"] = stats.stddev;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << j.dump(2) << "\n";
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

NormStats read_norm_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open norm stats '", path, "'"));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(str("'", path, "': invalid stats file: ", e.what()));
  }
  NormStats stats;
  try {
    stats.source = j.at("source").get<std::string>();
    stats.mean = j.at("mean").get<std::vector<double>>();
    stats.stddev = j.at("stddev").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(str("'", path, "': missing stats field: ", e.what()));
  }
  if (stats.mean.size() != stats.stddev.size())
    throw FormatError(str("'", path, "': mean/stddev length mismatch"));
  for (double s : stats.stddev)
    if (!(s > 0.0)) throw FormatError(str("'", path, "': non-positive stddev"));
  return stats;
}

}  // namespace fg
