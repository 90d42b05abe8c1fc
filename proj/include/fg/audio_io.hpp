#ifndef FG_AUDIO_IO_HPP
#define FG_AUDIO_IO_HPP

#include <string>
#include <vector>

#include "fg/common.hpp"

namespace fg {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

// Reads a mono RIFF/WAVE file, PCM 16-bit or IEEE float32. Integer samples
// are scaled by 1/32768; float data is clamped into [-1, 1]. When
// expected_rate > 0 a differing file rate is a FormatError: the toolkit
// never resamples silently.
AudioClip load_wav(const std::string& path, int expected_rate = 0);

// Writes mono 16-bit PCM (round-half-away, clamped to the int16 range).
void write_wav(const std::string& path, const AudioClip& clip);

}  // namespace fg

#endif  // FG_AUDIO_IO_HPP
