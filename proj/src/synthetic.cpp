#include "ats/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

#include "ats/audio_features.hpp"
#include "ats/augment.hpp"
#include "ats/errors.hpp"
#include "ats/rng.hpp"
#include "ats/teacher.hpp"

namespace ats {

namespace {

// Word list from stream (seed, "corpus.words"): per word, length = 3 +
// uniform_int(3), then `length` letters 'a' + uniform_int(26); duplicates
// are redrawn.
std::vector<std::string> make_word_vocab(uint64_t seed, int count) {
  CounterRng rng(seed, "corpus.words");
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (static_cast<int>(words.size()) < count) {
    const size_t len = 3 + rng.uniform_int(3);
    std::string w;
    for (size_t i = 0; i < len; ++i) {
      w.push_back(static_cast<char>('a' + rng.uniform_int(26)));
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::string record_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "a%05d", i);
  return buf;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.n < 2) throw ConfigError("synthetic corpus: need n >= 2");
  if (spec.word_vocab < spec.words_per_caption + 1) {
    throw ConfigError("synthetic corpus: word vocabulary too small");
  }
  const int latent_dim = spec.model.synth_latent_dim;

  TeacherSpec teacher;
  teacher.kind = TeacherSpec::Kind::planted_bilinear;
  teacher.seed = spec.teacher_seed;
  teacher.latent_dim = latent_dim;
  teacher.gain = spec.teacher_gain;
  const Tensor<double> w = teacher_weight_matrix(teacher);

  const auto words = make_word_vocab(spec.seed, spec.word_vocab);
  std::vector<std::vector<double>> word_latents;
  word_latents.reserve(words.size());
  for (const auto& wd : words) {
    word_latents.push_back(word_latent(wd, spec.teacher_seed, latent_dim));
  }

  SyntheticCorpus out;
  out.corpus.reserve(static_cast<size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    const std::string id = record_id(i);
    const auto u = audio_latent(id, spec.model.encoder_seed, latent_dim);

    // Alignment of each vocabulary word with this clip under the teacher.
    std::vector<double> affinity(words.size(), 0.0);
    for (size_t wi = 0; wi < words.size(); ++wi) {
      double acc = 0.0;
      for (int r = 0; r < latent_dim; ++r) {
        const double* row = w.data() + static_cast<size_t>(r) * w.cols();
        double inner = 0.0;
        for (int c = 0; c < latent_dim; ++c) {
          inner += row[c] * word_latents[wi][static_cast<size_t>(c)];
        }
        acc += u[static_cast<size_t>(r)] * inner;
      }
      affinity[wi] = acc;
    }

    // Draw words_per_caption distinct words ~ softmax(beta * affinity),
    // without replacement; one u01() per draw from (seed, "corpus.caption.<id>").
    CounterRng rng(spec.seed, "corpus.caption." + id);
    std::vector<size_t> pool(words.size());
    std::iota(pool.begin(), pool.end(), size_t{0});
    std::vector<std::string> chosen;
    for (int k = 0; k < spec.words_per_caption; ++k) {
      double mx = -1e300;
      for (size_t p : pool) mx = std::max(mx, spec.sample_beta * affinity[p]);
      std::vector<double> weights(pool.size());
      double total = 0.0;
      for (size_t pi = 0; pi < pool.size(); ++pi) {
        weights[pi] = std::exp(spec.sample_beta * affinity[pool[pi]] - mx);
        total += weights[pi];
      }
      const double r = rng.u01() * total;
      double cum = 0.0;
      size_t pick = pool.size() - 1;
      for (size_t pi = 0; pi < pool.size(); ++pi) {
        cum += weights[pi];
        if (r < cum) {
          pick = pi;
          break;
        }
      }
      chosen.push_back(words[pool[pick]]);
      pool.erase(pool.begin() + static_cast<ptrdiff_t>(pick));
    }
    std::string caption = chosen[0];
    for (size_t k = 1; k < chosen.size(); ++k) caption += " " + chosen[k];

    out.corpus.push_back(PairRecord::matched(id, id, caption));
  }

  // Teacher scores for the matched pairs (external-teacher adapter input).
  for (const auto& r : out.corpus) {
    const auto u = audio_latent(r.audio_ref, spec.model.encoder_seed, latent_dim);
    const auto v = caption_latent(r.caption, spec.teacher_seed, latent_dim);
    out.teacher_scores.scores.emplace(r.id, planted_teacher_score(w, u, v));
  }

  // Human-style fine-tuning labels over matched + swapped records:
  // label = teacher^warp_power + N(0, sigma), noise drawn in record order
  // from (seed, "corpus.stage3.noise").
  auto stage3 = negative_sample_augment(out.corpus, spec.stage3_negatives,
                                        derive_seed(spec.seed, "corpus.stage3.negatives"));
  CounterRng noise_rng(spec.seed, "corpus.stage3.noise");
  for (auto& r : stage3) {
    const auto u = audio_latent(r.audio_ref, spec.model.encoder_seed, latent_dim);
    const auto v = caption_latent(r.caption, spec.teacher_seed, latent_dim);
    const double t = planted_teacher_score(w, u, v);
    r.label = std::pow(t, spec.stage3_warp_power) +
              spec.stage3_noise_sigma * noise_rng.normal();
  }

  // Split via Fisher-Yates on (seed, "corpus.stage3.split"); manifests keep
  // the original record order.
  const size_t n3 = stage3.size();
  std::vector<size_t> order(n3);
  std::iota(order.begin(), order.end(), size_t{0});
  CounterRng split_rng(spec.seed, "corpus.stage3.split");
  for (size_t i = n3; i > 1; --i) {
    const size_t j = split_rng.uniform_int(i);
    std::swap(order[i - 1], order[j]);
  }
  size_t n_val = static_cast<size_t>(std::llround(
      spec.stage3_val_fraction * static_cast<double>(n3)));
  n_val = std::max<size_t>(2, std::min(n_val, n3 - 2));
  std::set<size_t> val_idx(order.begin(), order.begin() + static_cast<ptrdiff_t>(n_val));
  for (size_t i = 0; i < n3; ++i) {
    if (val_idx.count(i)) out.stage3_val.push_back(stage3[i]);
    else out.stage3_train.push_back(stage3[i]);
  }
  return out;
}

void write_synthetic_corpus(const std::string& out_dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_manifest((dir / "corpus.tsv").string(), corpus.corpus);
  write_manifest((dir / "stage3_train.tsv").string(), corpus.stage3_train);
  write_manifest((dir / "stage3_val.tsv").string(), corpus.stage3_val);
  write_prediction_file((dir / "teacher_scores.tsv").string(), corpus.teacher_scores);
}

}  // namespace ats
