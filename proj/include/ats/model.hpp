#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ats/audio_features.hpp"
#include "ats/autograd.hpp"
#include "ats/errors.hpp"
#include "ats/model_config.hpp"
#include "ats/param_set.hpp"
#include "ats/rng.hpp"
#include "ats/tape.hpp"

namespace ats {

constexpr double kRmsNormEps = 1e-6;

// ---- byte-level text tokens ----

inline std::vector<int> byte_tokens(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int>(c));
  return out;
}

inline std::string bytes_to_text(const std::vector<int>& tokens) {
  std::string out;
  for (int t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  }
  return out;
}

// ---- input sequence ----

// One LM input: a slot list where tokens[i] >= 0 is a vocabulary id and
// tokens[i] == -1 is a continuous audio embedding. The scoring layout is
//   text tokens..., AUDIO_START, audio slots..., AUDIO_END, SCORE
// with SCORE always last; the captioning layout is
//   AUDIO_START, audio slots..., AUDIO_END, caption tokens..., EOS.
struct InputSequence {
  std::vector<int> tokens;
  int audio_start_pos = -1;
  int audio_end_pos = -1;
  int score_pos = -1;  // -1 in the captioning layout
  int n_audio = 0;

  int length() const { return static_cast<int>(tokens.size()); }
};

inline void check_text_tokens(const std::vector<int>& text_ids, const ModelConfig& cfg) {
  for (int t : text_ids) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw VocabError("text token id " + std::to_string(t) + " out of vocabulary");
    }
    if (t == cfg.tok_audio_start || t == cfg.tok_audio_end || t == cfg.tok_score ||
        t == cfg.tok_eos) {
      throw VocabError("control token id " + std::to_string(t) + " inside text region");
    }
  }
}

inline InputSequence assemble_sequence(const std::vector<int>& text_ids,
                                       int n_audio, const ModelConfig& cfg) {
  if (n_audio < 1) throw ShapeError("assemble_sequence: need at least one audio slot");
  check_text_tokens(text_ids, cfg);
  const size_t len = text_ids.size() + static_cast<size_t>(n_audio) + 3;
  if (len > static_cast<size_t>(cfg.max_seq_len)) {
    throw SequenceTooLongError("sequence length " + std::to_string(len) +
                               " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  InputSequence seq;
  seq.tokens.reserve(len);
  seq.tokens.insert(seq.tokens.end(), text_ids.begin(), text_ids.end());
  seq.audio_start_pos = static_cast<int>(seq.tokens.size());
  seq.tokens.push_back(cfg.tok_audio_start);
  for (int i = 0; i < n_audio; ++i) seq.tokens.push_back(-1);
  seq.audio_end_pos = static_cast<int>(seq.tokens.size());
  seq.tokens.push_back(cfg.tok_audio_end);
  seq.score_pos = static_cast<int>(seq.tokens.size());
  seq.tokens.push_back(cfg.tok_score);
  seq.n_audio = n_audio;
  return seq;
}

inline InputSequence assemble_caption_sequence(int n_audio,
                                               const std::vector<int>& caption_ids,
                                               const ModelConfig& cfg,
                                               bool append_eos = true,
                                               bool validate_text = true) {
  if (n_audio < 1) throw ShapeError("assemble_caption_sequence: need audio slots");
  if (validate_text) check_text_tokens(caption_ids, cfg);
  const size_t len =
      static_cast<size_t>(n_audio) + 2 + caption_ids.size() + (append_eos ? 1 : 0);
  if (len > static_cast<size_t>(cfg.max_seq_len)) {
    throw SequenceTooLongError("sequence length " + std::to_string(len) +
                               " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  InputSequence seq;
  seq.tokens.reserve(len);
  seq.audio_start_pos = 0;
  seq.tokens.push_back(cfg.tok_audio_start);
  for (int i = 0; i < n_audio; ++i) seq.tokens.push_back(-1);
  seq.audio_end_pos = static_cast<int>(seq.tokens.size());
  seq.tokens.push_back(cfg.tok_audio_end);
  seq.tokens.insert(seq.tokens.end(), caption_ids.begin(), caption_ids.end());
  if (append_eos) seq.tokens.push_back(cfg.tok_eos);
  seq.n_audio = n_audio;
  return seq;
}

// ---- parameter initialization ----
//
// Every parameter draws from its own stream (seed, "init.<name>"), entries
// row-major, so initialization is independent of creation order. Weight
// matrices use normal * 1/sqrt(fan_in); embedding-like tables use 0.02;
// norm gains start at one.

template <class T>
Tensor<T> init_matrix(size_t rows, size_t cols, uint64_t seed,
                      const std::string& name, double std_dev) {
  CounterRng rng(seed, "init." + name);
  Tensor<T> t({rows, cols});
  for (size_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(rng.normal() * std_dev);
  }
  return t;
}

template <class T>
void add_projection_params(ParamSet<T>& params, const ModelConfig& cfg, uint64_t seed) {
  const size_t hidden = 2 * static_cast<size_t>(cfg.llm_dim);
  size_t in_dim = static_cast<size_t>(cfg.enc_dim);
  for (int l = 0; l < cfg.proj_layers; ++l) {
    const std::string p = "proj." + std::to_string(l) + ".";
    const double s_in = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double s_hid = 1.0 / std::sqrt(static_cast<double>(hidden));
    params.add(p + "gate", init_matrix<T>(in_dim, hidden, seed, p + "gate", s_in), true);
    params.add(p + "val", init_matrix<T>(in_dim, hidden, seed, p + "val", s_in), true);
    params.add(p + "out",
               init_matrix<T>(hidden, static_cast<size_t>(cfg.llm_dim), seed,
                              p + "out", s_hid),
               true);
    in_dim = static_cast<size_t>(cfg.llm_dim);
  }
}

template <class T>
void add_llm_params(ParamSet<T>& params, const ModelConfig& cfg, uint64_t seed) {
  const size_t d = static_cast<size_t>(cfg.llm_dim);
  const size_t f = static_cast<size_t>(cfg.ffn_dim);
  const size_t v = static_cast<size_t>(cfg.vocab_size);
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_f = 1.0 / std::sqrt(static_cast<double>(f));

  params.add("llm.embed",
             init_matrix<T>(v, d, seed, "llm.embed", 0.02), true);
  params.add("llm.pos",
             init_matrix<T>(static_cast<size_t>(cfg.max_seq_len), d, seed,
                            "llm.pos", 0.02),
             true);
  for (int l = 0; l < cfg.llm_layers; ++l) {
    const std::string p = "llm." + std::to_string(l) + ".";
    params.add(p + "att_gain", Tensor<T>::full({d}, T(1)), true);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      params.add(p + w, init_matrix<T>(d, d, seed, p + w, s_d), true);
    }
    params.add(p + "ffn_gain", Tensor<T>::full({d}, T(1)), true);
    params.add(p + "ffn_gate", init_matrix<T>(d, f, seed, p + "ffn_gate", s_d), true);
    params.add(p + "ffn_val", init_matrix<T>(d, f, seed, p + "ffn_val", s_d), true);
    params.add(p + "ffn_out", init_matrix<T>(f, d, seed, p + "ffn_out", s_f), true);
  }
  params.add("llm.final_gain", Tensor<T>::full({d}, T(1)), true);
  params.add("llm.lm_head", init_matrix<T>(v, d, seed, "llm.lm_head", s_d), true);
}

template <class T>
void add_score_head_params(ParamSet<T>& params, const ModelConfig& cfg, uint64_t seed,
                           double bias_init) {
  const size_t d = static_cast<size_t>(cfg.llm_dim);
  CounterRng rng(seed, "init.score_head.weight");
  Tensor<T> w({d});
  for (size_t i = 0; i < d; ++i) w[i] = static_cast<T>(rng.normal() * 0.02);
  params.add("score_head.weight", std::move(w), true);
  params.add("score_head.bias", Tensor<T>::scalar(static_cast<T>(bias_init)), true);
}

// projection / llm / score_head; used to apply StageConfig trainable groups.
inline std::string param_group(const std::string& name) {
  if (name.rfind("proj.", 0) == 0) return "projection";
  if (name.rfind("llm.", 0) == 0) return "llm";
  if (name.rfind("score_head.", 0) == 0) return "score_head";
  throw ShapeError("parameter '" + name + "' belongs to no known group");
}

// ---- graph builders ----

// SwiGLU MLP over pooled audio features, applied per token:
//   x <- silu(x Wg) * (x Wv) Wo   for each projection layer.
template <class T>
typename Tape<T>::Id build_projection(Tape<T>& tape, ParamBinding<T>& bind,
                                      const ModelConfig& cfg,
                                      typename Tape<T>::Id pooled) {
  auto x = pooled;
  for (int l = 0; l < cfg.proj_layers; ++l) {
    const std::string p = "proj." + std::to_string(l) + ".";
    auto gate = tape.silu(tape.matmul(x, bind(p + "gate")));
    auto val = tape.matmul(x, bind(p + "val"));
    x = tape.matmul(tape.mul(gate, val), bind(p + "out"));
  }
  return x;
}

// Pre-norm causal transformer over an InputSequence. Vocabulary slots read
// the embedding table; continuous slots take rows of `audio_rows` in order.
// Returns {len, llm_dim} hidden states after the final norm.
template <class T>
typename Tape<T>::Id build_lm_hidden(Tape<T>& tape, ParamBinding<T>& bind,
                                     const ModelConfig& cfg, const InputSequence& seq,
                                     typename Tape<T>::Id audio_rows) {
  using Id = typename Tape<T>::Id;
  const int len = seq.length();
  if (len < 1) throw ShapeError("lm_forward: empty sequence");
  if (len > cfg.max_seq_len) {
    throw SequenceTooLongError("lm_forward: sequence longer than max_seq_len");
  }
  if (seq.n_audio > 0 &&
      tape.value(audio_rows).rows() != static_cast<size_t>(seq.n_audio)) {
    throw ShapeError("lm_forward: audio rows do not match continuous slots");
  }

  // Split the slot list into runs of vocabulary tokens / continuous slots.
  std::vector<Id> segments;
  int i = 0;
  int audio_used = 0;
  while (i < len) {
    if (seq.tokens[i] == -1) {
      int j = i;
      while (j < len && seq.tokens[j] == -1) ++j;
      segments.push_back(tape.slice_rows(audio_rows, audio_used, audio_used + (j - i)));
      audio_used += j - i;
      i = j;
    } else {
      std::vector<int> run;
      while (i < len && seq.tokens[i] != -1) run.push_back(seq.tokens[i++]);
      segments.push_back(tape.embedding(bind("llm.embed"), std::move(run)));
    }
  }
  Id x = segments.size() == 1 ? segments[0] : tape.concat_rows(segments);
  x = tape.add(x, tape.slice_rows(bind("llm.pos"), 0, static_cast<size_t>(len)));

  const int heads = cfg.llm_heads;
  const size_t head_dim = static_cast<size_t>(cfg.llm_dim / cfg.llm_heads);
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  const T eps = static_cast<T>(kRmsNormEps);

  for (int l = 0; l < cfg.llm_layers; ++l) {
    const std::string p = "llm." + std::to_string(l) + ".";
    auto att_in = tape.rmsnorm(x, bind(p + "att_gain"), eps);
    auto q = tape.matmul(att_in, bind(p + "wq"));
    auto k = tape.matmul(att_in, bind(p + "wk"));
    auto v = tape.matmul(att_in, bind(p + "wv"));
    std::vector<Id> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const size_t c0 = static_cast<size_t>(h) * head_dim;
      const size_t c1 = c0 + head_dim;
      auto qh = tape.slice_cols(q, c0, c1);
      auto kh = tape.slice_cols(k, c0, c1);
      auto vh = tape.slice_cols(v, c0, c1);
      auto probs = tape.causal_softmax(tape.scale(tape.matmul_nt(qh, kh), att_scale));
      head_outs.push_back(tape.matmul(probs, vh));
    }
    auto att_cat = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    x = tape.add(x, tape.matmul(att_cat, bind(p + "wo")));

    auto ffn_in = tape.rmsnorm(x, bind(p + "ffn_gain"), eps);
    auto gate = tape.silu(tape.matmul(ffn_in, bind(p + "ffn_gate")));
    auto val = tape.matmul(ffn_in, bind(p + "ffn_val"));
    x = tape.add(x, tape.matmul(tape.mul(gate, val), bind(p + "ffn_out")));
  }
  return tape.rmsnorm(x, bind("llm.final_gain"), eps);
}

template <class T>
struct ScoreNodes {
  typename Tape<T>::Id score;       // {1}
  typename Tape<T>::Id hidden_row;  // {1, llm_dim} at the SCORE slot
};

// Score graph over precomputed pooled audio features (a constant: gradients
// stop at the frozen encoder). Fully differentiable through the projection,
// the LM, and the head.
template <class T>
ScoreNodes<T> build_score_graph(Tape<T>& tape, ParamBinding<T>& bind,
                                const ModelConfig& cfg,
                                const std::vector<int>& text_ids,
                                const Tensor<T>& pooled) {
  if (pooled.rows() != static_cast<size_t>(cfg.audio_tokens)) {
    throw ShapeError("score graph: pooled audio must have audio_tokens rows");
  }
  auto pooled_id = tape.constant(pooled, "pooled_audio");
  auto audio = build_projection(tape, bind, cfg, pooled_id);
  const InputSequence seq = assemble_sequence(text_ids, cfg.audio_tokens, cfg);
  auto hidden = build_lm_hidden(tape, bind, cfg, seq, audio);
  auto h_row = tape.row(hidden, static_cast<size_t>(seq.score_pos));
  auto score = tape.add(tape.dot(h_row, bind("score_head.weight")),
                        bind("score_head.bias"));
  return {score, h_row};
}

// Next-token cross-entropy graph for the captioning stage. The loss mask
// selects positions whose next slot is a caption token or EOS, i.e. the
// caption is predicted from the audio prefix.
template <class T>
typename Tape<T>::Id build_caption_ce_graph(Tape<T>& tape, ParamBinding<T>& bind,
                                            const ModelConfig& cfg,
                                            const std::vector<int>& caption_ids,
                                            const Tensor<T>& pooled) {
  auto pooled_id = tape.constant(pooled, "pooled_audio");
  auto audio = build_projection(tape, bind, cfg, pooled_id);
  const InputSequence seq = assemble_caption_sequence(cfg.audio_tokens, caption_ids, cfg);
  auto hidden = build_lm_hidden(tape, bind, cfg, seq, audio);
  auto logits = tape.matmul_nt(hidden, bind("llm.lm_head"));
  auto logp = tape.log_softmax(logits);

  const int len = seq.length();
  std::vector<int> targets(static_cast<size_t>(len), 0);
  std::vector<int> mask(static_cast<size_t>(len), 0);
  for (int i = seq.audio_end_pos; i + 1 < len; ++i) {
    targets[static_cast<size_t>(i)] = seq.tokens[static_cast<size_t>(i + 1)];
    mask[static_cast<size_t>(i)] = 1;
  }
  return tape.nll_masked(logp, std::move(targets), std::move(mask));
}

// ---- user-facing operations ----

struct ScoreOutput {
  double score = 0.0;
  std::vector<double> score_hidden;
};

template <class T>
ScoreOutput score_from_pooled(const std::vector<int>& text_ids,
                              const Tensor<T>& pooled, const ParamSet<T>& params,
                              const ModelConfig& cfg) {
  Tape<T> tape;
  ParamBinding<T> bind(tape, params, /*grads_enabled=*/false);
  auto nodes = build_score_graph(tape, bind, cfg, text_ids, pooled);
  ScoreOutput out;
  out.score = static_cast<double>(tape.value(nodes.score)[0]);
  const auto& h = tape.value(nodes.hidden_row);
  out.score_hidden.assign(h.data(), h.data() + h.numel());
  return out;
}

template <class T>
ScoreOutput predict_score(const std::vector<int>& text_ids, const std::string& audio_ref,
                          const ParamSet<T>& params, const ModelConfig& cfg,
                          const std::string& data_root = "") {
  const AudioFeatureSeq feat = encode_audio(audio_ref, cfg, cfg.encoder_seed, data_root);
  const Tensor<T> pooled =
      temporal_average_pool(feat, cfg.audio_tokens).template cast<T>();
  return score_from_pooled(text_ids, pooled, params, cfg);
}

// Greedy caption decoding from the audio prefix; stops at EOS or max_len
// generated tokens. Argmax ties break toward the smallest token id. The
// returned caption excludes EOS.
template <class T>
std::vector<int> generate_caption_from_pooled(const Tensor<T>& pooled,
                                              const ParamSet<T>& params,
                                              const ModelConfig& cfg, int max_len) {
  std::vector<int> decoded;
  for (int step = 0; step < max_len; ++step) {
    Tape<T> tape;
    ParamBinding<T> bind(tape, params, /*grads_enabled=*/false);
    auto pooled_id = tape.constant(pooled, "pooled_audio");
    auto audio = build_projection(tape, bind, cfg, pooled_id);
    // Greedy decode appends whatever argmax picked, so skip the text-region
    // validation here; ids the detokenizer cannot render are dropped later.
    const InputSequence seq = assemble_caption_sequence(
        cfg.audio_tokens, decoded, cfg, /*append_eos=*/false, /*validate_text=*/false);
    auto hidden = build_lm_hidden(tape, bind, cfg, seq, audio);
    auto logits = tape.matmul_nt(tape.row(hidden, static_cast<size_t>(seq.length() - 1)),
                                 bind("llm.lm_head"));
    const Tensor<T>& row = tape.value(logits);
    int best = 0;
    for (size_t j = 1; j < row.numel(); ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    if (best == cfg.tok_eos) break;
    decoded.push_back(best);
  }
  return decoded;
}

template <class T>
std::vector<int> generate_caption(const std::string& audio_ref, const ParamSet<T>& params,
                                  const ModelConfig& cfg, int max_len,
                                  const std::string& data_root = "") {
  const AudioFeatureSeq feat = encode_audio(audio_ref, cfg, cfg.encoder_seed, data_root);
  const Tensor<T> pooled =
      temporal_average_pool(feat, cfg.audio_tokens).template cast<T>();
  return generate_caption_from_pooled(pooled, params, cfg, max_len);
}

}  // namespace ats
