#include "ats/model_config.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "ats/errors.hpp"

namespace ats {

void ModelConfig::validate() const {
  if (enc_dim < 1 || llm_dim < 1 || llm_layers < 1 || llm_heads < 1 ||
      ffn_dim < 1 || proj_layers < 1 || max_seq_len < 4 || vocab_size < 2) {
    throw ConfigError("model config: dimensions must be positive");
  }
  if (audio_tokens < 1) {
    throw ConfigError("model config: audio_tokens must be >= 1");
  }
  if (llm_dim % llm_heads != 0) {
    throw ConfigError("model config: llm_dim must be divisible by llm_heads");
  }
  if (!(enc_rate > 0)) {
    throw ConfigError("model config: enc_rate must be positive");
  }
  if (synth_latent_dim < 1) {
    throw ConfigError("model config: synth_latent_dim must be >= 1");
  }
  const std::set<int> specials = {tok_audio_start, tok_audio_end, tok_score, tok_eos};
  if (specials.size() != 4) {
    throw ConfigError("model config: control token ids must be distinct");
  }
  for (int t : specials) {
    if (t < 0 || t >= vocab_size) {
      throw ConfigError("model config: control token id out of vocabulary");
    }
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["audio_tokens"] = std::to_string(audio_tokens);
  kv["enc_dim"] = std::to_string(enc_dim);
  kv["enc_rate"] = fmt_double(enc_rate);
  kv["encoder_seed"] = std::to_string(encoder_seed);
  kv["ffn_dim"] = std::to_string(ffn_dim);
  kv["llm_dim"] = std::to_string(llm_dim);
  kv["llm_heads"] = std::to_string(llm_heads);
  kv["llm_layers"] = std::to_string(llm_layers);
  kv["max_seq_len"] = std::to_string(max_seq_len);
  kv["precision"] = precision_name(precision);
  kv["proj_layers"] = std::to_string(proj_layers);
  kv["synth_latent_dim"] = std::to_string(synth_latent_dim);
  kv["tok_audio_end"] = std::to_string(tok_audio_end);
  kv["tok_audio_start"] = std::to_string(tok_audio_start);
  kv["tok_eos"] = std::to_string(tok_eos);
  kv["tok_score"] = std::to_string(tok_score);
  kv["vocab_size"] = std::to_string(vocab_size);
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("model config text: bad line '" + line + "'");
    }
    const std::string k = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    try {
      if (k == "audio_tokens") c.audio_tokens = std::stoi(v);
      else if (k == "enc_dim") c.enc_dim = std::stoi(v);
      else if (k == "enc_rate") c.enc_rate = std::stod(v);
      else if (k == "encoder_seed") c.encoder_seed = std::stoull(v);
      else if (k == "ffn_dim") c.ffn_dim = std::stoi(v);
      else if (k == "llm_dim") c.llm_dim = std::stoi(v);
      else if (k == "llm_heads") c.llm_heads = std::stoi(v);
      else if (k == "llm_layers") c.llm_layers = std::stoi(v);
      else if (k == "max_seq_len") c.max_seq_len = std::stoi(v);
      else if (k == "precision") {
        if (v == "f32") c.precision = Precision::f32;
        else if (v == "f64") c.precision = Precision::f64;
        else throw ConfigError("model config: unknown precision '" + v + "'");
      }
      else if (k == "proj_layers") c.proj_layers = std::stoi(v);
      else if (k == "synth_latent_dim") c.synth_latent_dim = std::stoi(v);
      else if (k == "tok_audio_end") c.tok_audio_end = std::stoi(v);
      else if (k == "tok_audio_start") c.tok_audio_start = std::stoi(v);
      else if (k == "tok_eos") c.tok_eos = std::stoi(v);
      else if (k == "tok_score") c.tok_score = std::stoi(v);
      else if (k == "vocab_size") c.vocab_size = std::stoi(v);
      else throw ConfigError("model config text: unknown key '" + k + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("model config text: bad value for '" + k + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError("model config text: value out of range for '" + k + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace ats
