#include "fg/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fg {

namespace {

constexpr uint16_t kFormatPcm = 0x0001;
constexpr uint16_t kFormatFloat = 0x0003;

uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 4);
}

void wr_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip load_wav(const std::string& path, int expected_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open '", path, "'"));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(str("'", path, "' is not a RIFF/WAVE file"));

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  size_t data_off = 0, data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t len = rd_u32(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + len > bytes.size())
      throw FormatError(str("'", path, "': chunk '", std::string(id, 4),
                            "' overruns the file"));
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError(str("'", path, "': fmt chunk too short"));
      format = rd_u16(bytes.data() + body);
      channels = rd_u16(bytes.data() + body + 2);
      rate = rd_u32(bytes.data() + body + 4);
      bits = rd_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data_off == 0)
    throw FormatError(str("'", path, "': missing fmt or data chunk"));
  if (channels != 1)
    throw FormatError(str("'", path, "': expected mono audio, got ", channels,
                          " channels"));
  if (expected_rate > 0 && static_cast<int>(rate) != expected_rate)
    throw FormatError(str("'", path, "': sample rate ", rate,
                          " Hz does not match the configured ", expected_rate,
                          " Hz (resampling is not performed)"));

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  if (format == kFormatPcm && bits == 16) {
    const size_t n = data_len / 2;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const int16_t s = static_cast<int16_t>(rd_u16(bytes.data() + data_off + 2 * i));
      clip.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (format == kFormatFloat && bits == 32) {
    const size_t n = data_len / 4;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + data_off + 4 * i, 4);
      if (!std::isfinite(f))
        throw FormatError(str("'", path, "': non-finite sample at index ", i));
      clip.samples[i] = std::clamp(static_cast<double>(f), -1.0, 1.0);
    }
  } else {
    throw FormatError(str("'", path, "': unsupported codec (format tag ", format,
                          ", ", bits, "-bit); only 16-bit PCM and 32-bit float are read"));
  }
  if (clip.samples.empty())
    throw FormatError(str("'", path, "': empty data chunk"));
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  if (clip.samples.empty()) throw ContractError("write_wav: empty clip");
  if (clip.sample_rate <= 0) throw ContractError("write_wav: bad sample rate");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  const uint32_t data_len = static_cast<uint32_t>(clip.samples.size() * 2);
  os.write("RIFF", 4);
  wr_u32(os, 36 + data_len);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(os, 16);
  wr_u16(os, kFormatPcm);
  wr_u16(os, 1);
  wr_u32(os, static_cast<uint32_t>(clip.sample_rate));
  wr_u32(os, static_cast<uint32_t>(clip.sample_rate) * 2);
  wr_u16(os, 2);
  wr_u16(os, 16);
  os.write("data", 4);
  wr_u32(os, data_len);
  for (double v : clip.samples) {
    double s = std::round(v * 32768.0);
    s = std::clamp(s, -32768.0, 32767.0);
    wr_u16(os, static_cast<uint16_t>(static_cast<int16_t>(s)));
  }
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

}  // namespace fg
