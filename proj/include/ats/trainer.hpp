#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ats/adamw.hpp"
#include "ats/audio_features.hpp"
#include "ats/augment.hpp"
#include "ats/autograd.hpp"
#include "ats/batching.hpp"
#include "ats/checkpoint.hpp"
#include "ats/losses.hpp"
#include "ats/manifest.hpp"
#include "ats/metrics.hpp"
#include "ats/model.hpp"
#include "ats/stage_config.hpp"
#include "ats/teacher.hpp"

namespace ats {

struct StageRunResult {
  std::string checkpoint_path;
  std::string log_path;
  double final_train_loss = 0.0;
  double best_val_srcc = 0.0;  // stages 2-3
  int best_epoch = -1;         // stage 3
};

struct EvalReport {
  double srcc_value = 0.0;
  size_t n = 0;
  uint64_t config_hash = 0;
  std::string checkpoint_stage;
  std::string checkpoint_path;
  std::string predictions_path;
};

namespace train_detail {

// Static split over indices, results written by slot: deterministic
// regardless of the thread count.
template <class Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t t_cnt = std::min<size_t>(static_cast<size_t>(threads), n);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  pool.reserve(t_cnt);
  for (size_t t = 0; t < t_cnt; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (size_t i = t; i < n; i += t_cnt) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Append-only, timestamp-free training log: epoch \t split \t metric \t value.
class TrainLog {
 public:
  explicit TrainLog(const std::string& path) : os_(path) {
    if (!os_) throw ConfigError("cannot open log file for write: " + path);
  }
  void line(int epoch, const std::string& split, const std::string& metric,
            double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    os_ << epoch << '\t' << split << '\t' << metric << '\t' << buf << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

// Raw and pooled features per unique audio ref; the frozen-encoder outputs
// are computed once per run.
template <class T>
struct FeatureCache {
  std::map<std::string, AudioFeatureSeq> raw;
  std::map<std::string, Tensor<T>> pooled;

  void ensure(const std::vector<PairRecord>& records, const ModelConfig& cfg,
              const std::string& data_root) {
    for (const auto& r : records) {
      if (raw.count(r.audio_ref)) continue;
      AudioFeatureSeq feat = encode_audio(r.audio_ref, cfg, cfg.encoder_seed, data_root);
      pooled.emplace(r.audio_ref,
                     temporal_average_pool(feat, cfg.audio_tokens).template cast<T>());
      raw.emplace(r.audio_ref, std::move(feat));
    }
  }
};

template <class T>
void accumulate_grads(std::map<std::string, Tensor<T>>& into,
                      const std::map<std::string, Tensor<T>>& from) {
  for (auto& [name, g] : into) {
    const auto& src = from.at(name);
    T* dst = g.data();
    for (size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  }
}

template <class T>
void apply_trainable_groups(ParamSet<T>& params, const std::set<std::string>& groups) {
  for (const auto& name : params.names()) {
    params.set_trainable(name, groups.count(param_group(name)) != 0);
  }
}

template <class T>
AdamWState<T> make_optimizer(const ParamSet<T>& params, const StageConfig& cfg) {
  AdamWHyperparams hp;
  hp.lr = cfg.lr;
  hp.beta1 = cfg.beta1;
  hp.beta2 = cfg.beta2;
  hp.eps = cfg.adam_eps;
  hp.weight_decay = cfg.weight_decay;
  return AdamWState<T>::init(params, hp);
}

inline std::vector<int> require_label_ids(const std::vector<PairRecord>& records,
                                          const char* what) {
  for (const auto& r : records) {
    if (!r.label) {
      throw ManifestError(std::string(what) + ": record '" + r.id + "' has no label");
    }
  }
  return {};
}

// Checkpoint name-set compatibility for stage chaining.
inline void require_names(const std::vector<std::string>& have,
                          const std::vector<std::string>& want, const char* what) {
  if (have != want) {
    throw CheckpointError(std::string(what) +
                          ": checkpoint parameter names do not match this model");
  }
}

template <class T>
std::vector<std::string> expected_param_names(const ModelConfig& cfg, bool score_head) {
  ParamSet<T> tmp;
  add_projection_params(tmp, cfg, 0);
  add_llm_params(tmp, cfg, 0);
  if (score_head) add_score_head_params(tmp, cfg, 0, 0.0);
  return tmp.names();
}

// Predictions for a record list (no augmentation), parallel over examples,
// output ordered by record. Scores are the model's raw head outputs.
template <class T>
std::vector<double> predict_records(const std::vector<PairRecord>& records,
                                    const ParamSet<T>& params, const ModelConfig& cfg,
                                    FeatureCache<T>& cache, int threads) {
  std::vector<double> out(records.size(), 0.0);
  parallel_for(records.size(), threads, [&](size_t i) {
    const auto& r = records[i];
    out[i] = score_from_pooled(byte_tokens(r.caption), cache.pooled.at(r.audio_ref),
                               params, cfg)
                 .score;
  });
  return out;
}

template <class T>
double val_srcc(const std::vector<PairRecord>& records, const ParamSet<T>& params,
                const ModelConfig& cfg, FeatureCache<T>& cache, int threads) {
  ScoreList pred, label;
  const auto scores = predict_records(records, params, cfg, cache, threads);
  for (size_t i = 0; i < records.size(); ++i) {
    pred.ids.push_back(records[i].id);
    pred.values.push_back(scores[i]);
    label.ids.push_back(records[i].id);
    label.values.push_back(*records[i].label);
  }
  return srcc(pred, label);
}

// One ListNet training epoch over labeled records. When `augment` is set,
// each example's features are re-masked per epoch with the stream seed
// derived from (seed, "specaug.e<epoch>.<record id>"). Returns the mean
// per-batch loss.
template <class T>
double listnet_epoch(std::vector<PairRecord>& records, ParamSet<T>& params,
                     AdamWState<T>& opt, const StageConfig& cfg,
                     FeatureCache<T>& cache, int epoch,
                     const SpecAugmentParams* augment) {
  const auto batches = make_batches(records.size(), cfg.batch_size,
                                    derive_seed(cfg.seed, "epoch." + std::to_string(epoch)),
                                    /*drop_last=*/true);
  if (batches.empty()) {
    throw ConfigError("training set smaller than one batch");
  }
  double loss_sum = 0.0;
  for (const auto& batch : batches) {
    const size_t b = batch.size();
    std::vector<std::unique_ptr<Tape<T>>> tapes(b);
    std::vector<std::unique_ptr<ParamBinding<T>>> binds(b);
    std::vector<typename Tape<T>::Id> score_ids(b);
    std::vector<double> preds(b), targets(b);

    parallel_for(b, cfg.threads, [&](size_t i) {
      const PairRecord& r = records[batch[i]];
      Tensor<T> pooled;
      if (augment) {
        const uint64_t aug_seed = derive_seed(
            cfg.seed, "specaug.e" + std::to_string(epoch) + "." + r.id);
        const AudioFeatureSeq masked = spec_augment(cache.raw.at(r.audio_ref),
                                                    *augment, aug_seed);
        pooled = temporal_average_pool(masked, cfg.model.audio_tokens)
                     .template cast<T>();
      } else {
        pooled = cache.pooled.at(r.audio_ref);
      }
      tapes[i] = std::make_unique<Tape<T>>();
      binds[i] = std::make_unique<ParamBinding<T>>(*tapes[i], params);
      const auto nodes =
          build_score_graph(*tapes[i], *binds[i], cfg.model, byte_tokens(r.caption), pooled);
      score_ids[i] = nodes.score;
      preds[i] = static_cast<double>(tapes[i]->value(nodes.score)[0]);
      targets[i] = *r.label;
    });

    const double loss = listnet_loss_values(preds, targets, cfg.listnet_temperature);
    const auto ds = listnet_pred_grad(preds, targets, cfg.listnet_temperature);
    loss_sum += loss;

    std::vector<std::map<std::string, Tensor<T>>> grads(b);
    parallel_for(b, cfg.threads, [&](size_t i) {
      tapes[i]->backward_seeded(score_ids[i],
                                Tensor<T>::scalar(static_cast<T>(ds[i])));
      grads[i] = binds[i]->collect_grads();
    });
    for (size_t i = 1; i < b; ++i) accumulate_grads(grads[0], grads[i]);
    adamw_step(params, grads[0], opt);
  }
  return loss_sum / static_cast<double>(batches.size());
}

}  // namespace train_detail

// ---- stage 1: captioning pretraining ----

template <class T>
StageRunResult run_stage1_t(const StageConfig& cfg, const std::string& out_ckpt) {
  using namespace train_detail;
  auto records = load_manifest(cfg.resolve_path(cfg.train_manifest));
  if (records.empty()) throw ManifestError("stage 1: empty training manifest");

  FeatureCache<T> cache;
  cache.ensure(records, cfg.model, cfg.data_root);

  ParamSet<T> params;
  add_projection_params(params, cfg.model, cfg.seed);
  add_llm_params(params, cfg.model, cfg.seed);
  apply_trainable_groups(params, cfg.trainable);
  auto opt = make_optimizer(params, cfg);

  StageRunResult result;
  result.checkpoint_path = out_ckpt;
  result.log_path = out_ckpt + ".log";
  TrainLog log(result.log_path);

  std::vector<std::vector<int>> captions;
  captions.reserve(records.size());
  for (const auto& r : records) captions.push_back(byte_tokens(r.caption));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches =
        make_batches(records.size(), cfg.batch_size,
                     derive_seed(cfg.seed, "epoch." + std::to_string(epoch)),
                     /*drop_last=*/true);
    if (batches.empty()) throw ConfigError("stage 1: training set smaller than one batch");
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      const size_t b = batch.size();
      std::vector<double> losses(b, 0.0);
      std::vector<std::map<std::string, Tensor<T>>> grads(b);
      parallel_for(b, cfg.threads, [&](size_t i) {
        const PairRecord& r = records[batch[i]];
        Tape<T> tape;
        ParamBinding<T> bind(tape, params);
        const auto loss_id = build_caption_ce_graph(tape, bind, cfg.model,
                                                    captions[batch[i]],
                                                    cache.pooled.at(r.audio_ref));
        // mean over the batch: seed each example with 1/b
        tape.backward_seeded(loss_id, Tensor<T>::scalar(static_cast<T>(1.0 / b)));
        losses[i] = static_cast<double>(tape.value(loss_id)[0]);
        grads[i] = bind.collect_grads();
      });
      double batch_loss = 0.0;
      for (double l : losses) batch_loss += l;
      batch_loss /= static_cast<double>(b);
      epoch_loss += batch_loss;
      for (size_t i = 1; i < b; ++i) accumulate_grads(grads[0], grads[i]);
      adamw_step(params, grads[0], opt);
    }
    epoch_loss /= static_cast<double>(batches.size());
    result.final_train_loss = epoch_loss;
    log.line(epoch, "train", "loss_next_token_ce", epoch_loss);
  }

  // Captioning quality on the training set: cosine similarity of generated
  // vs. reference captions under the deterministic trigram embedder.
  {
    const TrigramEmbedder embedder(cfg.seed, 64);
    std::vector<double> sims(records.size(), 0.0);
    parallel_for(records.size(), cfg.threads, [&](size_t i) {
      const auto generated = generate_caption_from_pooled(
          cache.pooled.at(records[i].audio_ref), params, cfg.model,
          cfg.model.max_seq_len - cfg.model.audio_tokens - 2);
      sims[i] = caption_similarity_score(generated, captions[i], embedder);
    });
    double mean_sim = 0.0;
    for (double s : sims) mean_sim += s;
    mean_sim /= static_cast<double>(records.size());
    log.line(std::max(0, cfg.epochs - 1), "train", "caption_cosine", mean_sim);
  }

  CheckpointInfo info{"stage1", cfg.config_hash(), cfg.model.to_text()};
  save_checkpoint(out_ckpt, params, info);
  return result;
}

// ---- stage 2: ranking pretraining on teacher pseudo-labels ----

template <class T>
StageRunResult run_stage2_t(const StageConfig& cfg, const std::string& out_ckpt) {
  using namespace train_detail;
  auto matched = load_manifest(cfg.resolve_path(cfg.train_manifest));
  if (matched.size() < 4) throw ManifestError("stage 2: need at least 4 matched records");

  // Held-out split before augmentation; both halves are augmented so the
  // held-out list has genuine rank spread.
  std::vector<PairRecord> train_m, val_m;
  if (!cfg.val_manifest.empty()) {
    train_m = matched;
    val_m = load_manifest(cfg.resolve_path(cfg.val_manifest));
  } else {
    std::vector<size_t> order(matched.size());
    std::iota(order.begin(), order.end(), size_t{0});
    CounterRng rng(cfg.seed, "val_split");
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }
    size_t n_val = static_cast<size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(matched.size())));
    n_val = std::max<size_t>(2, std::min(n_val, matched.size() - 2));
    std::set<size_t> val_idx(order.begin(), order.begin() + static_cast<ptrdiff_t>(n_val));
    for (size_t i = 0; i < matched.size(); ++i) {
      (val_idx.count(i) ? val_m : train_m).push_back(matched[i]);
    }
  }

  auto train_aug = negative_sample_augment(train_m, cfg.negatives_per_positive,
                                           derive_seed(cfg.seed, "augment.train"));
  auto val_aug = negative_sample_augment(val_m, cfg.negatives_per_positive,
                                         derive_seed(cfg.seed, "augment.val"));

  TeacherSpec teacher;
  if (cfg.teacher_kind == "external") {
    teacher.kind = TeacherSpec::Kind::external_file;
    teacher.path = cfg.resolve_path(cfg.teacher_file);
  } else {
    teacher.kind = TeacherSpec::Kind::planted_bilinear;
    teacher.seed = cfg.teacher_seed;
    teacher.latent_dim = cfg.teacher_latent_dim;
    teacher.gain = cfg.teacher_gain;
  }
  const uint64_t enc_seed = cfg.model.encoder_seed;
  const int latent_dim = cfg.teacher_latent_dim;
  const uint64_t teacher_seed = cfg.teacher_seed;
  const EmbedFn audio_embed = [enc_seed, latent_dim](const std::string& ref) {
    return audio_latent(ref, enc_seed, latent_dim);
  };
  const EmbedFn text_embed = [teacher_seed, latent_dim](const std::string& caption) {
    return caption_latent(caption, teacher_seed, latent_dim);
  };
  auto train_lab = pseudo_label(std::move(train_aug), teacher, audio_embed, text_embed);
  auto val_lab = pseudo_label(std::move(val_aug), teacher, audio_embed, text_embed);

  FeatureCache<T> cache;
  cache.ensure(train_lab, cfg.model, cfg.data_root);
  cache.ensure(val_lab, cfg.model, cfg.data_root);

  ParamSet<T> params;
  if (cfg.init_checkpoint == "fresh") {
    add_projection_params(params, cfg.model, cfg.seed);
    add_llm_params(params, cfg.model, cfg.seed);
  } else {
    params = load_checkpoint<T>(cfg.resolve_path(cfg.init_checkpoint));
    require_names(params.names(), expected_param_names<T>(cfg.model, /*score_head=*/false),
                  "stage 2");
  }
  double label_mean = 0.0;
  for (const auto& r : train_lab) label_mean += *r.label;
  label_mean /= static_cast<double>(train_lab.size());
  add_score_head_params(params, cfg.model, cfg.seed, label_mean);
  apply_trainable_groups(params, cfg.trainable);
  auto opt = make_optimizer(params, cfg);

  StageRunResult result;
  result.checkpoint_path = out_ckpt;
  result.log_path = out_ckpt + ".log";
  TrainLog log(result.log_path);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss =
        listnet_epoch(train_lab, params, opt, cfg, cache, epoch, nullptr);
    result.final_train_loss = loss;
    log.line(epoch, "train", "loss_listnet", loss);
    const double v = val_srcc(val_lab, params, cfg.model, cache, cfg.threads);
    result.best_val_srcc = std::max(result.best_val_srcc, v);
    log.line(epoch, "val", "srcc_vs_teacher", v);
  }

  CheckpointInfo info{"stage2", cfg.config_hash(), cfg.model.to_text()};
  save_checkpoint(out_ckpt, params, info);
  return result;
}

// ---- stage 3: fine-tuning on human-style labels ----

template <class T>
StageRunResult run_stage3_t(const StageConfig& cfg, const std::string& out_ckpt) {
  using namespace train_detail;
  auto train = load_manifest(cfg.resolve_path(cfg.train_manifest));
  auto val = load_manifest(cfg.resolve_path(cfg.val_manifest));
  require_label_ids(train, "stage 3 train");
  require_label_ids(val, "stage 3 val");
  if (train.size() < 2 || val.size() < 2) {
    throw ManifestError("stage 3: need at least two labeled records per split");
  }

  FeatureCache<T> cache;
  cache.ensure(train, cfg.model, cfg.data_root);
  cache.ensure(val, cfg.model, cfg.data_root);

  ParamSet<T> params;
  if (cfg.init_checkpoint == "fresh") {
    add_projection_params(params, cfg.model, cfg.seed);
    add_llm_params(params, cfg.model, cfg.seed);
    double label_mean = 0.0;
    for (const auto& r : train) label_mean += *r.label;
    label_mean /= static_cast<double>(train.size());
    add_score_head_params(params, cfg.model, cfg.seed, label_mean);
  } else {
    params = load_checkpoint<T>(cfg.resolve_path(cfg.init_checkpoint));
    require_names(params.names(), expected_param_names<T>(cfg.model, /*score_head=*/true),
                  "stage 3");
  }
  apply_trainable_groups(params, cfg.trainable);
  auto opt = make_optimizer(params, cfg);

  // Masking applies to training features only; widths are checked against
  // the actual feature axes up front.
  const bool augment_on = cfg.augment.masks_per_axis > 0 &&
                          (cfg.augment.freq_mask_width > 0 ||
                           cfg.augment.time_mask_width > 0);
  if (!cache.raw.empty()) {
    const auto& sample = cache.raw.begin()->second;
    if (static_cast<size_t>(cfg.augment.time_mask_width) > sample.num_frames() ||
        static_cast<size_t>(cfg.augment.freq_mask_width) > sample.channels()) {
      throw MaskParamError("stage 3: mask widths exceed feature axes");
    }
  }

  StageRunResult result;
  result.checkpoint_path = out_ckpt;
  result.log_path = out_ckpt + ".log";
  TrainLog log(result.log_path);

  ParamSet<T> best_params = params;
  double best_srcc = -2.0;
  int best_epoch = -1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = listnet_epoch(train, params, opt, cfg, cache, epoch,
                                      augment_on ? &cfg.augment : nullptr);
    result.final_train_loss = loss;
    log.line(epoch, "train", "loss_listnet", loss);
    const double v = val_srcc(val, params, cfg.model, cache, cfg.threads);
    log.line(epoch, "val", "srcc_vs_labels", v);
    if (v > best_srcc) {
      best_srcc = v;
      best_epoch = epoch;
      best_params = params;
    }
  }
  if (cfg.epochs == 0) {
    best_params = params;
    best_srcc = 0.0;
  } else {
    log.line(best_epoch, "val", "srcc_best", best_srcc);
  }
  result.best_val_srcc = best_srcc;
  result.best_epoch = best_epoch;

  CheckpointInfo info{"stage3", cfg.config_hash(), cfg.model.to_text()};
  save_checkpoint(out_ckpt, best_params, info);
  return result;
}

// ---- precision dispatch ----

inline StageRunResult run_stage(const StageConfig& cfg, const std::string& out_ckpt) {
  cfg.validate();
  switch (cfg.stage) {
    case 1:
      return cfg.model.precision == Precision::f64 ? run_stage1_t<double>(cfg, out_ckpt)
                                                   : run_stage1_t<float>(cfg, out_ckpt);
    case 2:
      return cfg.model.precision == Precision::f64 ? run_stage2_t<double>(cfg, out_ckpt)
                                                   : run_stage2_t<float>(cfg, out_ckpt);
    case 3:
      return cfg.model.precision == Precision::f64 ? run_stage3_t<double>(cfg, out_ckpt)
                                                   : run_stage3_t<float>(cfg, out_ckpt);
    default:
      throw ConfigError("run_stage: stage must be 1, 2 or 3");
  }
}

// ---- evaluation ----

template <class T>
EvalReport evaluate_t(const std::string& ckpt_path, const std::string& manifest_path,
                      const std::string& predictions_path, const ModelConfig& model,
                      const CheckpointInfo& info, const std::string& data_root,
                      int threads) {
  using namespace train_detail;
  auto records = load_manifest(manifest_path);
  require_label_ids(records, "evaluate");
  if (records.size() < 2) throw ListError("evaluate: need at least two records");

  auto params = load_checkpoint<T>(ckpt_path);
  if (!params.has("score_head.weight")) {
    throw CheckpointError("evaluate: checkpoint has no score head");
  }
  FeatureCache<T> cache;
  cache.ensure(records, model, data_root);

  const auto scores = predict_records(records, params, model, cache, threads);
  ScoreList pred, label;
  for (size_t i = 0; i < records.size(); ++i) {
    pred.ids.push_back(records[i].id);
    pred.values.push_back(scores[i]);
    label.ids.push_back(records[i].id);
    label.values.push_back(*records[i].label);
  }
  EvalReport report;
  report.srcc_value = srcc(pred, label);
  report.n = records.size();
  report.config_hash = info.config_hash;
  report.checkpoint_stage = info.stage;
  report.checkpoint_path = ckpt_path;
  report.predictions_path = predictions_path;
  write_prediction_file(predictions_path, PredictionSet::from_score_list(pred));
  return report;
}

inline EvalReport evaluate(const std::string& ckpt_path, const std::string& manifest_path,
                           const std::string& predictions_path,
                           const std::string& data_root = "", int threads = 2) {
  const CheckpointInfo info = read_checkpoint_info(ckpt_path);
  const ModelConfig model = ModelConfig::from_text(info.model_config_text);
  return model.precision == Precision::f64
             ? evaluate_t<double>(ckpt_path, manifest_path, predictions_path, model, info,
                                  data_root, threads)
             : evaluate_t<float>(ckpt_path, manifest_path, predictions_path, model, info,
                                 data_root, threads);
}

}  // namespace ats
