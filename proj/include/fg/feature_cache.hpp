#ifndef FG_FEATURE_CACHE_HPP
#define FG_FEATURE_CACHE_HPP

#include <string>

#include "fg/cqt.hpp"

namespace fg {

// Feature cache file: magic "LPS1", u32 utterance-id length + bytes, two u32
// dims (bins, frames), then row-major little-endian 32-bit floats.
void write_feature_cache(const std::string& path, const FixedFeature& feat);
FixedFeature read_feature_cache(const std::string& path);

// Normalization stats as a small JSON document {source, mean[], stddev[]}.
void write_norm_stats(const std::string& path, const NormStats& stats);
NormStats read_norm_stats(const std::string& path);

}  // namespace fg

#endif  // FG_FEATURE_CACHE_HPP
