#pragma once

#include <cstdint>
#include <vector>

#include "ats/audio_features.hpp"
#include "ats/manifest.hpp"

namespace ats {

// Negative-sampling augmentation: k synthesized mismatched records per
// matched record, appended after the originals. For original i and negative
// j, the stream (seed, "augment") is drawn in (i, j) order:
//
//   attempt:  coin    = uniform_int(2)      0 -> replace audio, 1 -> replace text
//             partner = uniform_int(N - 1)  mapped past i (partner >= i -> +1)
//
// An attempt is rejected and redrawn (up to 1000 times) if the resulting
// (audio_ref, caption) pair collides with any matched record's pair, so a
// negative can never be an accidental positive. Negative ids are
// "<original id>~n<j>"; source ids record the two originals involved.
std::vector<PairRecord> negative_sample_augment(const std::vector<PairRecord>& records,
                                                int negatives_per_positive,
                                                uint64_t seed);

struct SpecAugmentParams {
  int freq_mask_width = 0;  // max masked channels per mask
  int time_mask_width = 0;  // max masked frames per mask
  int masks_per_axis = 1;
};

// Masking over the frozen encoder's feature matrix (time x channel). For the
// stream (seed, "specaugment"), draws are, in order: per time mask
//   width = uniform_int(time_mask_width + 1)
//   start = uniform_int(T - width + 1)
// for masks_per_axis masks, then per channel mask
//   width = uniform_int(freq_mask_width + 1)
//   start = uniform_int(C - width + 1).
// Masked frames/channels are set to zero; everything else is bitwise
// unchanged.
AudioFeatureSeq spec_augment(const AudioFeatureSeq& feat, const SpecAugmentParams& p,
                             uint64_t seed);

}  // namespace ats
