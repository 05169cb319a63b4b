#include "ats/teacher.hpp"

#include <cmath>
#include <sstream>

#include "ats/errors.hpp"
#include "ats/metrics.hpp"
#include "ats/rng.hpp"

namespace ats {

Tensor<double> teacher_weight_matrix(const TeacherSpec& spec) {
  const size_t l = static_cast<size_t>(spec.latent_dim);
  CounterRng rng(spec.seed, "teacher.W");
  const double scale = spec.gain / std::sqrt(static_cast<double>(spec.latent_dim));
  Tensor<double> w({l, l});
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * scale;
  return w;
}

double planted_teacher_score(const Tensor<double>& w, const std::vector<double>& u,
                             const std::vector<double>& v) {
  if (w.rows() != u.size() || w.cols() != v.size()) {
    throw ShapeError("planted teacher: latent dimensions do not match W");
  }
  double acc = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    const double* row = w.data() + i * w.cols();
    double inner = 0.0;
    for (size_t j = 0; j < v.size(); ++j) inner += row[j] * v[j];
    acc += u[i] * inner;
  }
  return 1.0 / (1.0 + std::exp(-acc));
}

std::vector<double> word_latent(const std::string& word, uint64_t seed, int latent_dim) {
  CounterRng rng(seed, "teacher.word." + word);
  return rng.unit_vector(latent_dim);
}

std::vector<double> caption_latent(const std::string& caption, uint64_t seed,
                                   int latent_dim) {
  std::vector<double> v(static_cast<size_t>(latent_dim), 0.0);
  std::istringstream is(caption);
  std::string word;
  int count = 0;
  while (is >> word) {
    const auto e = word_latent(word, seed, latent_dim);
    for (size_t i = 0; i < v.size(); ++i) v[i] += e[i];
    ++count;
  }
  if (count > 0) {
    for (double& x : v) x /= static_cast<double>(count);
  }
  return v;
}

std::vector<PairRecord> pseudo_label(std::vector<PairRecord> records,
                                     const TeacherSpec& teacher,
                                     const EmbedFn& audio_embed,
                                     const EmbedFn& text_embed) {
  if (teacher.kind == TeacherSpec::Kind::external_file) {
    const PredictionSet scores = read_prediction_file(teacher.path);
    for (auto& r : records) {
      auto it = scores.scores.find(r.id);
      if (it == scores.scores.end()) {
        throw TeacherCoverageError("teacher file " + teacher.path +
                                   " does not cover id '" + r.id + "'");
      }
      r.label = it->second;
    }
    return records;
  }

  const Tensor<double> w = teacher_weight_matrix(teacher);
  for (auto& r : records) {
    const auto u = audio_embed(r.audio_ref);
    const auto v = text_embed(r.caption);
    const double score = planted_teacher_score(w, u, v);
    if (!std::isfinite(score)) {
      throw NonFiniteError("planted teacher produced a non-finite label for '" +
                           r.id + "'");
    }
    r.label = score;
  }
  return records;
}

}  // namespace ats
