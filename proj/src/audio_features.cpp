#include "ats/audio_features.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ats/errors.hpp"
#include "ats/rng.hpp"

namespace ats {

namespace {

constexpr double kSynthClipSeconds = 10.0;
constexpr double kRippleAmplitude = 0.05;
constexpr char kFeatureMagic[4] = {'A', 'T', 'F', 'E'};
constexpr uint32_t kFeatureVersion = 1;

template <class V>
void write_le(std::ofstream& os, V v) {
  static_assert(std::endian::native == std::endian::little,
                "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_le(std::ifstream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  return v;
}

}  // namespace

std::vector<double> audio_latent(const std::string& ref, uint64_t seed, int latent_dim) {
  CounterRng rng(seed, "enc.latent." + ref);
  return rng.unit_vector(latent_dim);
}

AudioFeatureSeq encode_audio(const std::string& audio_ref, const ModelConfig& cfg,
                             uint64_t seed, const std::string& data_root) {
  if (audio_ref.rfind("file:", 0) == 0) {
    std::filesystem::path p(audio_ref.substr(5));
    if (!data_root.empty() && p.is_relative()) {
      p = std::filesystem::path(data_root) / p;
    }
    return read_feature_file(p.string(), cfg);
  }
  if (audio_ref.empty()) {
    throw MissingAudioError("empty audio ref");
  }

  const int latent_dim = cfg.synth_latent_dim;
  const auto z = audio_latent(audio_ref, seed, latent_dim);

  const size_t t_frames =
      static_cast<size_t>(std::llround(kSynthClipSeconds * cfg.enc_rate));
  const size_t channels = static_cast<size_t>(cfg.enc_dim);

  CounterRng proj_rng(seed, "enc.proj");
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  std::vector<double> base(channels, 0.0);
  for (size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (int l = 0; l < latent_dim; ++l) {
      acc += proj_rng.normal() * scale * z[static_cast<size_t>(l)];
    }
    base[c] = acc;
  }

  CounterRng ripple_rng(seed, "enc.ripple." + audio_ref);
  AudioFeatureSeq out;
  out.frame_rate = cfg.enc_rate;
  out.frames = Tensor<double>::zeros({t_frames, channels});
  for (size_t t = 0; t < t_frames; ++t) {
    double* row = out.frames.data() + t * channels;
    for (size_t c = 0; c < channels; ++c) {
      row[c] = base[c] + kRippleAmplitude * ripple_rng.normal();
    }
  }
  return out;
}

Tensor<double> temporal_average_pool(const AudioFeatureSeq& feat, int target) {
  const size_t t_frames = feat.num_frames();
  const size_t channels = feat.channels();
  if (target < 1 || static_cast<size_t>(target) > t_frames) {
    throw PoolError("temporal_average_pool: target " + std::to_string(target) +
                    " invalid for " + std::to_string(t_frames) + " frames");
  }
  const size_t tgt = static_cast<size_t>(target);
  const size_t base = t_frames / tgt;
  const size_t rem = t_frames % tgt;

  Tensor<double> out({tgt, channels});
  size_t row = 0;
  for (size_t g = 0; g < tgt; ++g) {
    const size_t len = base + (g < rem ? 1 : 0);
    double* dst = out.data() + g * channels;
    for (size_t i = 0; i < len; ++i, ++row) {
      const double* src = feat.frames.data() + row * channels;
      for (size_t c = 0; c < channels; ++c) dst[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(len);
    for (size_t c = 0; c < channels; ++c) dst[c] *= inv;
  }
  return out;
}

void write_feature_file(const std::string& path, const AudioFeatureSeq& feat) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MissingAudioError("cannot open feature file for write: " + path);
  os.write(kFeatureMagic, 4);
  write_le<uint32_t>(os, kFeatureVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(feat.num_frames()));
  write_le<uint32_t>(os, static_cast<uint32_t>(feat.channels()));
  write_le<float>(os, static_cast<float>(feat.frame_rate));
  for (size_t i = 0; i < feat.frames.numel(); ++i) {
    write_le<float>(os, static_cast<float>(feat.frames[i]));
  }
  if (!os) throw MissingAudioError("short write to feature file: " + path);
}

AudioFeatureSeq read_feature_file(const std::string& path, const ModelConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingAudioError("feature file not found: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw MissingAudioError("bad feature file magic: " + path);
  }
  const auto version = read_le<uint32_t>(is);
  if (version != kFeatureVersion) {
    throw MissingAudioError("unsupported feature file version " +
                            std::to_string(version) + ": " + path);
  }
  const auto t_frames = read_le<uint32_t>(is);
  const auto channels = read_le<uint32_t>(is);
  const auto rate = read_le<float>(is);
  if (!is) throw MissingAudioError("truncated feature file header: " + path);
  if (channels != static_cast<uint32_t>(cfg.enc_dim)) {
    throw ShapeError("feature file " + path + " has " + std::to_string(channels) +
                     " channels, expected " + std::to_string(cfg.enc_dim));
  }
  AudioFeatureSeq out;
  out.frame_rate = rate;
  out.frames = Tensor<double>::zeros({t_frames, channels});
  for (size_t i = 0; i < out.frames.numel(); ++i) {
    out.frames[i] = read_le<float>(is);
  }
  if (!is) throw MissingAudioError("truncated feature file payload: " + path);
  if (!out.frames.all_finite()) {
    throw NonFiniteError("feature file contains non-finite values: " + path);
  }
  return out;
}

}  // namespace ats
