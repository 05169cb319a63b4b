#pragma once

#include <cstdint>
#include <string>

namespace ats {

enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

// All architecture dimensions and special-token identities in one place.
// Two presets: `desk` is small enough that every property is checkable in
// seconds; `full_scale` records the geometry of the 0.5B-class reference
// system (768-dim frozen encoder at 50 frames/s pooled to 100 tokens, an
// 896-dim causal LM, a linear score head).
struct ModelConfig {
  int enc_dim = 16;          // encoder channel count
  double enc_rate = 4.0;     // encoder frames per second
  int audio_tokens = 4;      // post-pooling token count
  int llm_dim = 32;
  int llm_layers = 2;
  int llm_heads = 4;
  int ffn_dim = 64;
  int vocab_size = 260;      // 256 byte tokens + 4 control tokens
  int tok_audio_start = 256;
  int tok_audio_end = 257;
  int tok_score = 258;
  int tok_eos = 259;
  int max_seq_len = 128;
  int proj_layers = 3;

  // Frozen-encoder identity for synthetic refs: the latent dimension and the
  // seed of the fixed random projection that lifts latents to features.
  int synth_latent_dim = 6;
  uint64_t encoder_seed = 9001;

  Precision precision = Precision::f32;

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig full_scale() {
    ModelConfig c;
    c.enc_dim = 768;
    c.enc_rate = 50.0;
    c.audio_tokens = 100;
    c.llm_dim = 896;
    c.llm_layers = 24;
    c.llm_heads = 14;
    c.ffn_dim = 4864;
    c.vocab_size = 151939;  // base vocabulary plus three added control tokens
    c.tok_audio_start = 151936;
    c.tok_audio_end = 151937;
    c.tok_score = 151938;
    c.tok_eos = 151643;
    c.max_seq_len = 512;
    c.proj_layers = 3;
    c.synth_latent_dim = 6;
    return c;
  }

  void validate() const;

  // Canonical key=value serialization (sorted keys); embedded in checkpoints
  // and hashed into run reports.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

}  // namespace ats
