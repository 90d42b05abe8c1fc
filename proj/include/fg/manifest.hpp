#ifndef FG_MANIFEST_HPP
#define FG_MANIFEST_HPP

#include <optional>
#include <string>
#include <vector>

#include "fg/metrics.hpp"

namespace fg {

enum class Subset { kTrain, kDev, kEval };

const char* subset_name(Subset s);
Subset subset_from_name(const std::string& name);

struct ManifestRow {
  std::string utterance_id;
  std::string audio_path;  // relative paths resolve against the manifest dir
  Key key = Key::kBonafide;
  Subset subset = Subset::kTrain;
  std::string speaker;  // protocol-format manifests only
};

struct ManifestOptions {
  // Protocol-format rows carry no path or subset; the path becomes
  // <audio_dir>/<utterance>.wav under these options.
  std::string audio_dir = "audio";
  Subset default_subset = Subset::kTrain;
};

// Native rows: `utterance_id audio_path key subset`.
// Alternate 5-field protocol rows: `speaker utterance sys1 sys2 key`.
// The format is detected per line by field count; blank lines and lines
// starting with '#' are skipped. Duplicate utterance ids and invalid enums
// are errors carrying the line number.
std::vector<ManifestRow> parse_manifest(const std::string& path,
                                        const ManifestOptions& opts = {});

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path);

// Speaker-disjointness cannot be enforced for arbitrary manifests; when
// speaker labels are present and one appears in several subsets this returns
// a human-readable warning.
std::optional<std::string> speaker_overlap_warning(const std::vector<ManifestRow>& rows);

std::vector<ManifestRow> filter_rows(const std::vector<ManifestRow>& rows,
                                     Subset subset);
std::vector<ManifestRow> filter_rows(const std::vector<ManifestRow>& rows,
                                     Subset subset, Key key);

}  // namespace fg

#endif  // FG_MANIFEST_HPP
