#include "ats/stage_config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ats/errors.hpp"
#include "ats/rng.hpp"

namespace ats {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for '" + key + "': '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': '" + v + "'");
  }
}

std::set<std::string> parse_groups(const std::string& v) {
  std::set<std::string> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item != "projection" && item != "llm" && item != "score_head") {
      throw ConfigError("config: unknown trainable group '" + item + "'");
    }
    out.insert(item);
  }
  return out;
}

}  // namespace

StageConfig parse_stage_config_text(const std::string& text) {
  StageConfig c;
  bool saw_trainable = false;
  bool saw_loss = false;
  std::string model_preset = "desk";

  // First pass for the preset so model.* overrides apply on top of it.
  std::map<std::string, std::string> kv;
  {
    std::istringstream is(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      }
      if (!kv.emplace(key, val).second) {
        throw ConfigError("config: duplicate key '" + key + "'");
      }
    }
  }
  if (auto it = kv.find("model_preset"); it != kv.end()) {
    model_preset = it->second;
  }
  if (model_preset == "desk") c.model = ModelConfig::desk();
  else if (model_preset == "full_scale") c.model = ModelConfig::full_scale();
  else throw ConfigError("config: unknown model_preset '" + model_preset + "'");

  for (const auto& [key, val] : kv) {
    if (key == "model_preset") continue;
    else if (key == "stage") c.stage = to_int(key, val);
    else if (key == "lr") c.lr = to_double(key, val);
    else if (key == "epochs") c.epochs = to_int(key, val);
    else if (key == "batch_size") c.batch_size = to_int(key, val);
    else if (key == "loss") { c.loss = val; saw_loss = true; }
    else if (key == "seed") c.seed = to_u64(key, val);
    else if (key == "data_root") c.data_root = val;
    else if (key == "train_manifest") c.train_manifest = val;
    else if (key == "val_manifest") c.val_manifest = val;
    else if (key == "val_fraction") c.val_fraction = to_double(key, val);
    else if (key == "trainable") { c.trainable = parse_groups(val); saw_trainable = true; }
    else if (key == "negatives_per_positive") c.negatives_per_positive = to_int(key, val);
    else if (key == "teacher") c.teacher_kind = val;
    else if (key == "teacher_seed") c.teacher_seed = to_u64(key, val);
    else if (key == "teacher_latent_dim") c.teacher_latent_dim = to_int(key, val);
    else if (key == "teacher_gain") c.teacher_gain = to_double(key, val);
    else if (key == "teacher_file") c.teacher_file = val;
    else if (key == "freq_mask_width") c.augment.freq_mask_width = to_int(key, val);
    else if (key == "time_mask_width") c.augment.time_mask_width = to_int(key, val);
    else if (key == "masks_per_axis") c.augment.masks_per_axis = to_int(key, val);
    else if (key == "listnet_temperature") c.listnet_temperature = to_double(key, val);
    else if (key == "init_checkpoint") c.init_checkpoint = val;
    else if (key == "weight_decay") c.weight_decay = to_double(key, val);
    else if (key == "beta1") c.beta1 = to_double(key, val);
    else if (key == "beta2") c.beta2 = to_double(key, val);
    else if (key == "adam_eps") c.adam_eps = to_double(key, val);
    else if (key == "threads") c.threads = to_int(key, val);
    else if (key == "model.enc_dim") c.model.enc_dim = to_int(key, val);
    else if (key == "model.enc_rate") c.model.enc_rate = to_double(key, val);
    else if (key == "model.audio_tokens") c.model.audio_tokens = to_int(key, val);
    else if (key == "model.llm_dim") c.model.llm_dim = to_int(key, val);
    else if (key == "model.llm_layers") c.model.llm_layers = to_int(key, val);
    else if (key == "model.llm_heads") c.model.llm_heads = to_int(key, val);
    else if (key == "model.ffn_dim") c.model.ffn_dim = to_int(key, val);
    else if (key == "model.vocab_size") c.model.vocab_size = to_int(key, val);
    else if (key == "model.max_seq_len") c.model.max_seq_len = to_int(key, val);
    else if (key == "model.proj_layers") c.model.proj_layers = to_int(key, val);
    else if (key == "model.synth_latent_dim") c.model.synth_latent_dim = to_int(key, val);
    else if (key == "model.encoder_seed") c.model.encoder_seed = to_u64(key, val);
    else if (key == "model.precision") {
      if (val == "f32") c.model.precision = Precision::f32;
      else if (val == "f64") c.model.precision = Precision::f64;
      else throw ConfigError("config: unknown precision '" + val + "'");
    }
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  if (!saw_loss) {
    c.loss = (c.stage == 1) ? "next_token_ce" : "listnet";
  }
  if (!saw_trainable) {
    c.trainable = (c.stage == 1)
                      ? std::set<std::string>{"projection", "llm"}
                      : std::set<std::string>{"projection", "llm", "score_head"};
  }
  c.validate();
  return c;
}

StageConfig load_stage_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_stage_config_text(os.str());
}

void StageConfig::validate() const {
  model.validate();
  if (stage < 1 || stage > 3) throw ConfigError("config: stage must be 1, 2 or 3");
  if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
  if (!(lr > 0)) throw ConfigError("config: lr must be positive");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (train_manifest.empty()) throw ConfigError("config: train_manifest required");
  if (trainable.empty()) throw ConfigError("config: trainable groups must be non-empty");
  if (!(listnet_temperature > 0)) {
    throw ConfigError("config: listnet_temperature must be positive");
  }

  if (stage == 1) {
    if (loss != "next_token_ce") {
      throw ConfigError("config: stage 1 trains with loss = next_token_ce");
    }
    if (trainable.count("score_head")) {
      throw ConfigError("config: stage 1 has no score head to train");
    }
    if (!init_checkpoint.empty() && init_checkpoint != "fresh") {
      throw ConfigError("config: stage 1 always starts fresh");
    }
  } else {
    if (loss != "listnet") {
      throw ConfigError("config: stages 2 and 3 train with loss = listnet");
    }
    if (!trainable.count("score_head")) {
      throw ConfigError("config: stages 2 and 3 must train the score head");
    }
  }

  if (stage == 2) {
    if (teacher_kind != "planted" && teacher_kind != "external") {
      throw ConfigError("config: stage 2 needs teacher = planted or external");
    }
    if (teacher_kind == "planted" && teacher_latent_dim != model.synth_latent_dim) {
      throw ConfigError(
          "config: planted teacher latent dim must equal model.synth_latent_dim");
    }
    if (teacher_kind == "external" && teacher_file.empty()) {
      throw ConfigError("config: external teacher needs teacher_file");
    }
    if (negatives_per_positive < 0) {
      throw ConfigError("config: negatives_per_positive must be >= 0");
    }
    if (val_manifest.empty() && !(val_fraction > 0.0 && val_fraction < 1.0)) {
      throw ConfigError("config: stage 2 needs val_manifest or val_fraction in (0,1)");
    }
    if (init_checkpoint.empty()) {
      throw ConfigError("config: stage 2 needs init_checkpoint (path or 'fresh')");
    }
  }

  if (stage == 3) {
    if (val_manifest.empty()) throw ConfigError("config: stage 3 needs val_manifest");
    if (init_checkpoint.empty()) {
      throw ConfigError("config: stage 3 needs init_checkpoint (path or 'fresh')");
    }
    if (augment.freq_mask_width < 0 || augment.time_mask_width < 0 ||
        augment.masks_per_axis < 0) {
      throw ConfigError("config: mask parameters must be >= 0");
    }
  }
}

std::string StageConfig::canonical_text() const {
  std::map<std::string, std::string> kv;
  kv["adam_eps"] = fmt_double(adam_eps);
  kv["batch_size"] = std::to_string(batch_size);
  kv["beta1"] = fmt_double(beta1);
  kv["beta2"] = fmt_double(beta2);
  kv["data_root"] = data_root;
  kv["epochs"] = std::to_string(epochs);
  kv["freq_mask_width"] = std::to_string(augment.freq_mask_width);
  kv["init_checkpoint"] = init_checkpoint;
  kv["listnet_temperature"] = fmt_double(listnet_temperature);
  kv["loss"] = loss;
  kv["lr"] = fmt_double(lr);
  kv["masks_per_axis"] = std::to_string(augment.masks_per_axis);
  kv["negatives_per_positive"] = std::to_string(negatives_per_positive);
  kv["seed"] = std::to_string(seed);
  kv["stage"] = std::to_string(stage);
  kv["teacher"] = teacher_kind;
  kv["teacher_file"] = teacher_file;
  kv["teacher_gain"] = fmt_double(teacher_gain);
  kv["teacher_latent_dim"] = std::to_string(teacher_latent_dim);
  kv["teacher_seed"] = std::to_string(teacher_seed);
  kv["threads"] = std::to_string(threads);
  kv["time_mask_width"] = std::to_string(augment.time_mask_width);
  std::string groups;
  for (const auto& g : trainable) {
    if (!groups.empty()) groups += ",";
    groups += g;
  }
  kv["trainable"] = groups;
  kv["train_manifest"] = train_manifest;
  kv["val_fraction"] = fmt_double(val_fraction);
  kv["val_manifest"] = val_manifest;
  kv["weight_decay"] = fmt_double(weight_decay);

  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  std::istringstream mis(model.to_text());
  std::string line;
  while (std::getline(mis, line)) {
    if (!line.empty()) os << "model." << line << "\n";
  }
  return os.str();
}

uint64_t StageConfig::config_hash() const { return fnv1a64(canonical_text()); }

std::string StageConfig::resolve_path(const std::string& p) const {
  if (p.empty() || data_root.empty()) return p;
  std::filesystem::path fp(p);
  if (fp.is_absolute()) return p;
  return (std::filesystem::path(data_root) / fp).string();
}

}  // namespace ats
