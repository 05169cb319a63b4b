#include "ats/augment.hpp"

#include <set>
#include <string>
#include <utility>

#include "ats/errors.hpp"
#include "ats/rng.hpp"

namespace ats {

std::vector<PairRecord> negative_sample_augment(const std::vector<PairRecord>& records,
                                                int negatives_per_positive,
                                                uint64_t seed) {
  if (negatives_per_positive < 0) {
    throw AugmentError("negatives_per_positive must be >= 0");
  }
  for (const auto& r : records) {
    if (r.provenance != Provenance::matched) {
      throw AugmentError("augmentation input must contain only matched records (got '" +
                         r.id + "')");
    }
  }
  const size_t n = records.size();
  if (negatives_per_positive == 0) return records;
  if (n < 2) {
    throw AugmentError("need at least two matched records to synthesize negatives");
  }

  std::set<std::pair<std::string, std::string>> matched_pairs;
  std::set<std::string> ids;
  for (const auto& r : records) {
    matched_pairs.emplace(r.audio_ref, r.caption);
    ids.insert(r.id);
  }

  std::vector<PairRecord> out = records;
  out.reserve(n * (1 + static_cast<size_t>(negatives_per_positive)));
  CounterRng rng(seed, "augment");
  constexpr int kMaxAttempts = 1000;

  for (size_t i = 0; i < n; ++i) {
    for (int j = 0; j < negatives_per_positive; ++j) {
      PairRecord neg;
      bool placed = false;
      for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        const uint64_t coin = rng.uniform_int(2);
        uint64_t partner = rng.uniform_int(n - 1);
        if (partner >= i) ++partner;
        const PairRecord& self = records[i];
        const PairRecord& other = records[partner];
        if (coin == 0) {
          neg.audio_ref = other.audio_ref;
          neg.caption = self.caption;
          neg.provenance = Provenance::negative_audio;
          neg.source_audio_id = other.id;
          neg.source_text_id = self.id;
        } else {
          neg.audio_ref = self.audio_ref;
          neg.caption = other.caption;
          neg.provenance = Provenance::negative_text;
          neg.source_audio_id = self.id;
          neg.source_text_id = other.id;
        }
        placed = matched_pairs.find({neg.audio_ref, neg.caption}) == matched_pairs.end();
      }
      if (!placed) {
        throw AugmentError("could not synthesize a negative for '" + records[i].id +
                           "' that differs from every matched pair");
      }
      neg.id = records[i].id + "~n" + std::to_string(j);
      if (!ids.insert(neg.id).second) {
        throw AugmentError("negative id collision: '" + neg.id + "'");
      }
      neg.label.reset();
      out.push_back(std::move(neg));
    }
  }
  return out;
}

AudioFeatureSeq spec_augment(const AudioFeatureSeq& feat, const SpecAugmentParams& p,
                             uint64_t seed) {
  const size_t t_frames = feat.num_frames();
  const size_t channels = feat.channels();
  if (p.freq_mask_width < 0 || p.time_mask_width < 0 || p.masks_per_axis < 0) {
    throw MaskParamError("spec_augment: negative mask parameter");
  }
  if (static_cast<size_t>(p.time_mask_width) > t_frames) {
    throw MaskParamError("spec_augment: time mask width " +
                         std::to_string(p.time_mask_width) + " exceeds " +
                         std::to_string(t_frames) + " frames");
  }
  if (static_cast<size_t>(p.freq_mask_width) > channels) {
    throw MaskParamError("spec_augment: channel mask width " +
                         std::to_string(p.freq_mask_width) + " exceeds " +
                         std::to_string(channels) + " channels");
  }

  AudioFeatureSeq out = feat;
  CounterRng rng(seed, "specaugment");
  for (int m = 0; m < p.masks_per_axis; ++m) {
    const size_t width = rng.uniform_int(static_cast<uint64_t>(p.time_mask_width) + 1);
    const size_t start = rng.uniform_int(t_frames - width + 1);
    for (size_t t = start; t < start + width; ++t) {
      double* row = out.frames.data() + t * channels;
      for (size_t c = 0; c < channels; ++c) row[c] = 0.0;
    }
  }
  for (int m = 0; m < p.masks_per_axis; ++m) {
    const size_t width = rng.uniform_int(static_cast<uint64_t>(p.freq_mask_width) + 1);
    const size_t start = rng.uniform_int(channels - width + 1);
    for (size_t t = 0; t < t_frames; ++t) {
      double* row = out.frames.data() + t * channels;
      for (size_t c = start; c < start + width; ++c) row[c] = 0.0;
    }
  }
  return out;
}

}  // namespace ats
