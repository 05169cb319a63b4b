#include "ats/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ats/errors.hpp"

namespace ats {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::matched: return "matched";
    case Provenance::negative_audio: return "negative_audio";
    case Provenance::negative_text: return "negative_text";
  }
  return "?";
}

Provenance provenance_from_name(const std::string& s) {
  if (s == "matched") return Provenance::matched;
  if (s == "negative_audio") return Provenance::negative_audio;
  if (s == "negative_text") return Provenance::negative_text;
  throw ManifestError("unknown provenance '" + s + "'");
}

PairRecord PairRecord::matched(std::string id, std::string audio_ref,
                               std::string caption, std::optional<double> label) {
  PairRecord r;
  r.id = std::move(id);
  r.audio_ref = std::move(audio_ref);
  r.caption = std::move(caption);
  r.label = label;
  r.provenance = Provenance::matched;
  r.source_audio_id = r.id;
  r.source_text_id = r.id;
  return r;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::vector<PairRecord> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open manifest: " + path);

  std::string line;
  if (!std::getline(is, line)) throw ManifestError(path + ": empty manifest");
  const auto header = split_tabs(line);
  const std::vector<std::string> expected = {"id", "audio_ref", "caption", "label",
                                             "provenance"};
  if (header.size() < 3 || header.size() > 5) {
    throw ManifestError(path + ": header must name 3 to 5 columns");
  }
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] != expected[i]) {
      throw ManifestError(path + ": header column " + std::to_string(i + 1) +
                          " must be '" + expected[i] + "', got '" + header[i] + "'");
    }
  }
  const size_t ncols = header.size();

  std::vector<PairRecord> records;
  std::set<std::string> ids;
  size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != ncols) {
      throw ManifestError(path + " line " + std::to_string(line_no) + ": expected " +
                          std::to_string(ncols) + " columns, got " +
                          std::to_string(cells.size()));
    }
    PairRecord r;
    r.id = cells[0];
    r.audio_ref = cells[1];
    r.caption = cells[2];
    if (r.id.empty()) {
      throw ManifestError(path + " line " + std::to_string(line_no) + ": empty id");
    }
    if (r.audio_ref.empty()) {
      throw ManifestError(path + " line " + std::to_string(line_no) + ": empty audio_ref");
    }
    if (r.caption.empty()) {
      throw ManifestError(path + " line " + std::to_string(line_no) + ": missing caption");
    }
    if (ncols >= 4 && !cells[3].empty()) {
      try {
        size_t used = 0;
        r.label = std::stod(cells[3], &used);
        if (used != cells[3].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ManifestError(path + " line " + std::to_string(line_no) +
                            ": bad label value '" + cells[3] + "'");
      }
    }
    if (ncols == 5 && !cells[4].empty()) {
      try {
        r.provenance = provenance_from_name(cells[4]);
      } catch (const ManifestError&) {
        throw ManifestError(path + " line " + std::to_string(line_no) +
                            ": bad provenance '" + cells[4] + "'");
      }
    }
    if (r.provenance == Provenance::matched) {
      r.source_audio_id = r.id;
      r.source_text_id = r.id;
    }
    if (!ids.insert(r.id).second) {
      throw DuplicateIdError(path + " line " + std::to_string(line_no) +
                             ": duplicate id '" + r.id + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<PairRecord>& records) {
  std::ofstream os(path);
  if (!os) throw ManifestError("cannot open manifest for write: " + path);
  os << "id\taudio_ref\tcaption\tlabel\tprovenance\n";
  char buf[64];
  for (const auto& r : records) {
    os << r.id << '\t' << r.audio_ref << '\t' << r.caption << '\t';
    if (r.label) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.label);
      os << buf;
    }
    os << '\t' << provenance_name(r.provenance) << '\n';
  }
  if (!os) throw ManifestError("short write to manifest: " + path);
}

}  // namespace ats
