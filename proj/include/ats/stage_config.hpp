#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "ats/augment.hpp"
#include "ats/model_config.hpp"

namespace ats {

// One training stage, fully determined by a flat key=value config file.
// Unknown keys are rejected; every field here mirrors a config key.
struct StageConfig {
  int stage = 0;  // 1 | 2 | 3
  double lr = 1e-3;
  int epochs = 1;
  int batch_size = 16;
  std::string loss;  // "next_token_ce" (stage 1) | "listnet" (stages 2-3)
  uint64_t seed = 0;

  std::string data_root;
  std::string train_manifest;
  std::string val_manifest;     // stage 3 requires it; stage 2 may use a split
  double val_fraction = 0.1;    // stage 2 held-out split when no val_manifest

  std::set<std::string> trainable;  // subset of {projection, llm, score_head}

  // stage 2
  int negatives_per_positive = 3;
  std::string teacher_kind;  // "planted" | "external"
  uint64_t teacher_seed = 0;
  int teacher_latent_dim = 6;
  double teacher_gain = 5.0;
  std::string teacher_file;

  // stage 3 train-time masking
  SpecAugmentParams augment;

  double listnet_temperature = 1.0;

  // "" or "fresh" to initialize from scratch, else a checkpoint path
  std::string init_checkpoint;

  // optimizer
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  int threads = 2;

  ModelConfig model;

  void validate() const;

  // Sorted key=value serialization of the effective config; its fnv1a64 hash
  // identifies the run in checkpoints and reports.
  std::string canonical_text() const;
  uint64_t config_hash() const;

  // Paths in the config are relative to data_root unless absolute.
  std::string resolve_path(const std::string& p) const;
};

StageConfig parse_stage_config_text(const std::string& text);
StageConfig load_stage_config(const std::string& path);

}  // namespace ats
