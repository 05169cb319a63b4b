#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ats {

enum class Provenance { matched, negative_audio, negative_text };

const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& s);

// One training/eval example. Matched records carry their own id as both
// source ids; records synthesized by the augmenter reference the two
// originals they were built from. Records loaded from disk without that
// information keep empty source ids.
struct PairRecord {
  std::string id;
  std::string audio_ref;
  std::string caption;
  std::optional<double> label;
  Provenance provenance = Provenance::matched;
  std::string source_audio_id;
  std::string source_text_id;

  static PairRecord matched(std::string id, std::string audio_ref, std::string caption,
                            std::optional<double> label = std::nullopt);
};

// Manifest: UTF-8 TSV with a required header row. Columns, in order:
//   id  audio_ref  caption  [label]  [provenance]
// An empty label cell means "no label". Duplicate ids are rejected.
std::vector<PairRecord> load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<PairRecord>& records);

}  // namespace ats
