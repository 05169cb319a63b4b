#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ats/manifest.hpp"
#include "ats/tensor.hpp"

namespace ats {

// Pseudo-label source. The planted kind is a bilinear scorer over latent
// embeddings, label = logistic(u^T W v); the external kind reads labels from
// an id -> score file (prediction-file format) and must cover every queried
// record.
struct TeacherSpec {
  enum class Kind { planted_bilinear, external_file };
  Kind kind = Kind::planted_bilinear;

  // planted_bilinear
  uint64_t seed = 0;
  int latent_dim = 6;
  double gain = 5.0;

  // external_file
  std::string path;
};

using EmbedFn = std::function<std::vector<double>(const std::string&)>;

// W entries from stream (seed, "teacher.W"), row-major, normal * gain/sqrt(L).
Tensor<double> teacher_weight_matrix(const TeacherSpec& spec);

double planted_teacher_score(const Tensor<double>& w, const std::vector<double>& u,
                             const std::vector<double>& v);

// Per-word latent space of the planted teacher's text side: the embedding of
// a caption is the mean of its whitespace-separated words' unit latents,
// each word's latent from stream (seed, "teacher.word.<word>").
std::vector<double> word_latent(const std::string& word, uint64_t seed, int latent_dim);
std::vector<double> caption_latent(const std::string& caption, uint64_t seed,
                                   int latent_dim);

// Labels every record: planted teachers evaluate logistic(u^T W v) on
// audio_embed(audio_ref) and text_embed(caption); external teachers look the
// record id up in the score file.
std::vector<PairRecord> pseudo_label(std::vector<PairRecord> records,
                                     const TeacherSpec& teacher,
                                     const EmbedFn& audio_embed,
                                     const EmbedFn& text_embed);

}  // namespace ats
