#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ats/model_config.hpp"
#include "ats/tensor.hpp"

namespace ats {

// Output of the frozen audio encoder: T x enc_dim frames at a fixed frame
// rate. Values are plain data, never part of any gradient path.
struct AudioFeatureSeq {
  Tensor<double> frames;  // {T, enc_dim}
  double frame_rate = 0.0;

  size_t num_frames() const { return frames.rows(); }
  size_t channels() const { return frames.cols(); }
};

// Deterministic latent behind a synthetic audio ref. The same vector drives
// both the frozen encoder stub and the planted teacher's audio side.
// Draw order: stream (seed, "enc.latent.<ref>") -> unit_vector(latent_dim).
std::vector<double> audio_latent(const std::string& ref, uint64_t seed, int latent_dim);

// Frozen encoder stand-in. Refs starting with "file:" load a stored feature
// file (path relative to data_root); any other ref is synthesized:
//
//   T = round(10 s * enc_rate)
//   z = audio_latent(ref, seed, synth_latent_dim)
//   A[c][l]    from stream (seed, "enc.proj"), row-major, normal * (1/sqrt(L))
//   r[t][c]    from stream (seed, "enc.ripple.<ref>"), row-major normals
//   feat[t][c] = (A z)[c] + 0.05 * r[t][c]
AudioFeatureSeq encode_audio(const std::string& audio_ref, const ModelConfig& cfg,
                             uint64_t seed, const std::string& data_root = "");

// Temporal average pooling to exactly `target` rows: frames are split into
// `target` contiguous groups, the first (T mod target) groups one frame
// longer than the rest; each output row is the mean of its group.
Tensor<double> temporal_average_pool(const AudioFeatureSeq& feat, int target);

// Feature file: magic "ATFE", u32 version (=1), u32 T, u32 enc_dim,
// f32 frame_rate, then T*enc_dim little-endian f32 values row-major.
void write_feature_file(const std::string& path, const AudioFeatureSeq& feat);
AudioFeatureSeq read_feature_file(const std::string& path, const ModelConfig& cfg);

}  // namespace ats
