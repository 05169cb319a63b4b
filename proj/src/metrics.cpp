#include "ats/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ats/errors.hpp"
#include "ats/model.hpp"
#include "ats/rng.hpp"

namespace ats {

void ScoreList::validate(const char* what) const {
  if (ids.size() != values.size()) {
    throw ListError(std::string(what) + ": ids/values length mismatch");
  }
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      throw ListError(std::string(what) + ": duplicate id '" + id + "'");
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(what) + ": non-finite score");
    }
  }
}

ScoreList PredictionSet::to_score_list() const {
  ScoreList s;
  s.ids.reserve(scores.size());
  s.values.reserve(scores.size());
  for (const auto& [id, v] : scores) {
    s.ids.push_back(id);
    s.values.push_back(v);
  }
  return s;
}

PredictionSet PredictionSet::from_score_list(const ScoreList& s) {
  PredictionSet p;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!p.scores.emplace(s.ids[i], s.values[i]).second) {
      throw DuplicateIdError("duplicate id '" + s.ids[i] + "' in score list");
    }
  }
  return p;
}

PredictionSet read_prediction_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open prediction file: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "id\tscore") {
    throw ManifestError("prediction file " + path + ": missing 'id\\tscore' header");
  }
  PredictionSet out;
  size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ManifestError(path + " line " + std::to_string(line_no) + ": expected id<TAB>score");
    }
    const std::string id = line.substr(0, tab);
    double v = 0.0;
    try {
      size_t used = 0;
      v = std::stod(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ManifestError(path + " line " + std::to_string(line_no) + ": bad score value");
    }
    if (!out.scores.emplace(id, v).second) {
      throw DuplicateIdError(path + " line " + std::to_string(line_no) +
                             ": duplicate id '" + id + "'");
    }
  }
  return out;
}

void write_prediction_file(const std::string& path, const PredictionSet& preds) {
  std::ofstream os(path);
  if (!os) throw ManifestError("cannot open prediction file for write: " + path);
  os << "id\tscore\n";
  char buf[64];
  for (const auto& [id, v] : preds.scores) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << id << '\t' << buf << '\n';
  }
  if (!os) throw ManifestError("short write to prediction file: " + path);
}

std::vector<double> rank_transform(const std::vector<double>& values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the mean rank of their 1-based span
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw DegenerateError("correlation undefined for a constant list");
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double srcc(const ScoreList& a, const ScoreList& b) {
  a.validate("srcc");
  b.validate("srcc");
  if (a.size() < 2) throw ListError("srcc: need at least two examples");
  if (a.size() != b.size()) throw ListError("srcc: id sets differ in size");

  // Align b's values to a's id order.
  std::map<std::string, double> bmap;
  for (size_t i = 0; i < b.size(); ++i) bmap.emplace(b.ids[i], b.values[i]);
  std::vector<double> bv(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    auto it = bmap.find(a.ids[i]);
    if (it == bmap.end()) throw ListError("srcc: id '" + a.ids[i] + "' missing from b");
    bv[i] = it->second;
  }
  return pearson(rank_transform(a.values), rank_transform(bv));
}

PredictionSet rank_average_ensemble(const std::vector<PredictionSet>& members,
                                    double out_lo, double out_hi) {
  if (members.size() < 2) throw EnsembleError("ensemble: need at least two members");
  if (!(out_lo < out_hi)) throw EnsembleError("ensemble: need out_lo < out_hi");
  const auto& first = members.front();
  const size_t n = first.scores.size();
  if (n < 2) throw EnsembleError("ensemble: need at least two examples");
  for (const auto& m : members) {
    if (m.scores.size() != n) throw EnsembleError("ensemble: member id sets differ");
    for (const auto& [id, v] : first.scores) {
      (void)v;
      if (m.scores.find(id) == m.scores.end()) {
        throw EnsembleError("ensemble: member missing id '" + id + "'");
      }
    }
  }

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& [id, v] : first.scores) {
    (void)v;
    ids.push_back(id);
  }
  std::vector<double> mean_ranks(n, 0.0);
  for (const auto& m : members) {
    std::vector<double> vals(n);
    for (size_t i = 0; i < n; ++i) vals[i] = m.scores.at(ids[i]);
    const auto ranks = rank_transform(vals);
    for (size_t i = 0; i < n; ++i) mean_ranks[i] += ranks[i];
  }
  for (double& r : mean_ranks) r /= static_cast<double>(members.size());

  const double lo = *std::min_element(mean_ranks.begin(), mean_ranks.end());
  const double hi = *std::max_element(mean_ranks.begin(), mean_ranks.end());
  PredictionSet out;
  if (lo == hi) {
    const double mid = (out_lo + out_hi) / 2.0;
    for (const auto& id : ids) out.scores.emplace(id, mid);
    return out;
  }
  const double scale = (out_hi - out_lo) / (hi - lo);
  for (size_t i = 0; i < n; ++i) {
    out.scores.emplace(ids[i], out_lo + (mean_ranks[i] - lo) * scale);
  }
  return out;
}

std::vector<double> TrigramEmbedder::embed(const std::string& text) const {
  std::vector<double> v(static_cast<size_t>(dim_), 0.0);
  if (text.empty()) return v;

  std::map<std::string, int> counts;
  if (text.size() < 3) {
    counts[text] = 1;
  } else {
    for (size_t i = 0; i + 3 <= text.size(); ++i) counts[text.substr(i, 3)] += 1;
  }
  for (const auto& [gram, count] : counts) {
    CounterRng rng(seed_, "trigram." + gram);
    for (int d = 0; d < dim_; ++d) {
      v[static_cast<size_t>(d)] += static_cast<double>(count) * rng.normal();
    }
  }
  double norm_sq = 0.0;
  for (double x : v) norm_sq += x * x;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
  }
  return v;
}

double caption_similarity_score(const std::vector<int>& generated_tokens,
                                const std::vector<int>& reference_tokens,
                                const TrigramEmbedder& embedder) {
  const std::string gen = bytes_to_text(generated_tokens);
  const std::string ref = bytes_to_text(reference_tokens);
  if (gen.empty()) return 0.0;
  const auto a = embedder.embed(gen);
  const auto b = embedder.embed(ref);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace ats
