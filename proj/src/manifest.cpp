#include "fg/manifest.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fg {

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::kTrain: return "train";
    case Subset::kDev: return "dev";
    case Subset::kEval: return "eval";
  }
  return "?";
}

Subset subset_from_name(const std::string& name) {
  if (name == "train") return Subset::kTrain;
  if (name == "dev") return Subset::kDev;
  if (name == "eval") return Subset::kEval;
  throw FormatError(str("unknown subset '", name, "' (expected train|dev|eval)"));
}

std::vector<ManifestRow> parse_manifest(const std::string& path,
                                        const ManifestOptions& opts) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open manifest '", path, "'"));
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string f;
    while (ls >> f) fields.push_back(f);
    if (fields.empty()) continue;

    ManifestRow row;
    try {
      if (fields.size() == 4) {
        row.utterance_id = fields[0];
        row.audio_path = fields[1];
        row.key = key_from_name(fields[2]);
        row.subset = subset_from_name(fields[3]);
      } else if (fields.size() == 5) {
        row.speaker = fields[0];
        row.utterance_id = fields[1];
        row.key = key_from_name(fields[4]);
        row.subset = opts.default_subset;
        row.audio_path = opts.audio_dir.empty()
                             ? fields[1] + ".wav"
                             : opts.audio_dir + "/" + fields[1] + ".wav";
      } else {
        throw FormatError(str("expected 4 fields (utt path key subset) or 5 "
                              "protocol fields, got ", fields.size()));
      }
    } catch (const FormatError& e) {
      throw FormatError(str(path, ":", lineno, ": ", e.what()));
    }
    if (row.audio_path.empty())
      throw FormatError(str(path, ":", lineno, ": empty audio path"));
    if (!seen.insert(row.utterance_id).second)
      throw FormatError(str(path, ":", lineno, ": duplicate utterance id '",
                            row.utterance_id, "'"));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  for (const auto& r : rows)
    os << r.utterance_id << ' ' << r.audio_path << ' ' << key_name(r.key) << ' '
       << subset_name(r.subset) << '\n';
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

std::optional<std::string> speaker_overlap_warning(const std::vector<ManifestRow>& rows) {
  std::map<std::string, std::set<Subset>> by_speaker;
  for (const auto& r : rows)
    if (!r.speaker.empty()) by_speaker[r.speaker].insert(r.subset);
  std::string offenders;
  for (const auto& [spk, subsets] : by_speaker) {
    if (subsets.size() > 1) {
      if (!offenders.empty()) offenders += ", ";
      offenders += spk;
    }
  }
  if (offenders.empty()) return std::nullopt;
  return str("speakers appear in multiple subsets (", offenders,
             "); train/dev/eval speaker disjointness is expected for "
             "meaningful evaluation");
}

std::vector<ManifestRow> filter_rows(const std::vector<ManifestRow>& rows,
                                     Subset subset) {
  std::vector<ManifestRow> out;
  for (const auto& r : rows)
    if (r.subset == subset) out.push_back(r);
  return out;
}

std::vector<ManifestRow> filter_rows(const std::vector<ManifestRow>& rows,
                                     Subset subset, Key key) {
  std::vector<ManifestRow> out;
  for (const auto& r : rows)
    if (r.subset == subset && r.key == key) out.push_back(r);
  return out;
}

}  // namespace fg
