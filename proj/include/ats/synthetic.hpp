#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ats/manifest.hpp"
#include "ats/metrics.hpp"
#include "ats/model_config.hpp"

namespace ats {

// Synthetic corpus with a planted bilinear teacher. Captions are built from
// a small word vocabulary whose latents live in the teacher's text space,
// sampled toward words that align with each clip's audio latent, so matched
// pairs genuinely score higher under the teacher than swapped ones.
struct SyntheticSpec {
  int n = 2000;
  uint64_t seed = 7;
  uint64_t teacher_seed = 101;
  double teacher_gain = 5.0;
  int word_vocab = 24;
  int words_per_caption = 4;
  double sample_beta = 3.0;  // softmax sharpness of aligned word sampling

  // Human-style relabeling for the fine-tuning stage: a strictly monotone
  // warp of the teacher score plus Gaussian noise.
  int stage3_negatives = 1;
  double stage3_val_fraction = 0.15;
  double stage3_warp_power = 0.7;
  double stage3_noise_sigma = 0.05;

  ModelConfig model = ModelConfig::desk();
};

struct SyntheticCorpus {
  std::vector<PairRecord> corpus;        // matched pairs, unlabeled
  std::vector<PairRecord> stage3_train;  // labeled, matched + negatives
  std::vector<PairRecord> stage3_val;    // labeled
  PredictionSet teacher_scores;          // teacher labels for the matched ids
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Writes corpus.tsv, stage3_train.tsv, stage3_val.tsv, teacher_scores.tsv.
void write_synthetic_corpus(const std::string& out_dir, const SyntheticCorpus& corpus);

}  // namespace ats
