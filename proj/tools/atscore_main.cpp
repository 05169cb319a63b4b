// atscore: train, evaluate and ensemble the audio-text alignment scorer.
//
// Subcommands:
//   stage1|stage2|stage3 --config <file> --out <ckpt>
//   eval --ckpt <file> --manifest <file> --report <file> [--data-root <dir>]
//   ensemble --inputs a.tsv b.tsv [...] --range lo,hi --out <file> [--labels <file>]
//   gen-synthetic --n <int> --seed <int> --teacher-seed <int> --out-dir <dir>
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ats/errors.hpp"
#include "ats/metrics.hpp"
#include "ats/stage_config.hpp"
#include "ats/synthetic.hpp"
#include "ats/trainer.hpp"

namespace {

std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run_train_stage(int stage, const std::string& config_path, const std::string& out) {
  ats::StageConfig cfg = ats::load_stage_config(config_path);
  if (cfg.stage != stage) {
    throw ats::ConfigError("config declares stage " + std::to_string(cfg.stage) +
                           " but the '" + "stage" + std::to_string(stage) +
                           "' subcommand was invoked");
  }
  const auto result = ats::run_stage(cfg, out);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n"
            << "log: " << result.log_path << "\n"
            << "config_hash: " << hash_hex(cfg.config_hash()) << "\n";
  if (stage >= 2 && cfg.epochs > 0) {
    std::cout << "val_srcc: " << result.best_val_srcc << "\n";
  }
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& manifest,
             const std::string& report_path, const std::string& data_root, int threads) {
  const std::string pred_path = report_path + ".predictions.tsv";
  const auto report = ats::evaluate(ckpt, manifest, pred_path, data_root, threads);
  nlohmann::json j;
  j["srcc"] = report.srcc_value;
  j["n"] = report.n;
  j["config_hash"] = hash_hex(report.config_hash);
  j["checkpoint_stage"] = report.checkpoint_stage;
  j["checkpoint"] = report.checkpoint_path;
  j["predictions"] = report.predictions_path;
  std::ofstream os(report_path);
  if (!os) throw ats::ConfigError("cannot open report file for write: " + report_path);
  os << j.dump(2) << "\n";
  std::cout << "srcc: " << report.srcc_value << " (n=" << report.n << ")\n"
            << "report: " << report_path << "\n"
            << "predictions: " << pred_path << "\n";
  return 0;
}

// Labels for the ensemble SRCC printout: either a prediction file
// (id<TAB>score) or a labeled manifest, distinguished by header.
ats::PredictionSet load_labels_file(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw ats::ManifestError("cannot open label file: " + path);
  std::string header;
  std::getline(probe, header);
  probe.close();
  if (header == "id\tscore") return ats::read_prediction_file(path);
  const auto records = ats::load_manifest(path);
  ats::PredictionSet out;
  for (const auto& r : records) {
    if (!r.label) {
      throw ats::ManifestError("label file record '" + r.id + "' has no label");
    }
    out.scores.emplace(r.id, *r.label);
  }
  return out;
}

int run_ensemble(const std::vector<std::string>& inputs, const std::string& range,
                 const std::string& out, const std::string& labels_path) {
  double lo = 0.0, hi = 1.0;
  if (!range.empty()) {
    const auto comma = range.find(',');
    if (comma == std::string::npos) {
      throw ats::ConfigError("--range expects 'lo,hi'");
    }
    try {
      lo = std::stod(range.substr(0, comma));
      hi = std::stod(range.substr(comma + 1));
    } catch (const std::exception&) {
      throw ats::ConfigError("--range expects numeric 'lo,hi'");
    }
  }
  std::vector<ats::PredictionSet> members;
  members.reserve(inputs.size());
  for (const auto& path : inputs) members.push_back(ats::read_prediction_file(path));
  const auto ensembled = ats::rank_average_ensemble(members, lo, hi);
  ats::write_prediction_file(out, ensembled);
  std::cout << "ensemble: " << out << " (" << ensembled.scores.size() << " ids)\n";
  if (!labels_path.empty()) {
    const auto labels = load_labels_file(labels_path);
    const double v = ats::srcc(ensembled.to_score_list(), labels.to_score_list());
    std::cout << "ensemble_srcc: " << v << "\n";
  }
  return 0;
}

int run_gen_synthetic(int n, uint64_t seed, uint64_t teacher_seed,
                      const std::string& out_dir) {
  ats::SyntheticSpec spec;
  spec.n = n;
  spec.seed = seed;
  spec.teacher_seed = teacher_seed;
  const auto corpus = ats::generate_synthetic_corpus(spec);
  ats::write_synthetic_corpus(out_dir, corpus);
  std::cout << "corpus: " << corpus.corpus.size() << " matched pairs\n"
            << "stage3_train: " << corpus.stage3_train.size() << " labeled records\n"
            << "stage3_val: " << corpus.stage3_val.size() << " labeled records\n"
            << "out_dir: " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-text alignment scorer"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  auto add_train = [&](const char* name, const char* desc) {
    auto* cmd = app.add_subcommand(name, desc);
    cmd->add_option("--config", config_path, "stage config file")->required();
    cmd->add_option("--out", out_path, "output checkpoint path")->required();
    return cmd;
  };
  auto* stage1 = add_train("stage1", "captioning pretraining");
  auto* stage2 = add_train("stage2", "ranking pretraining on teacher pseudo-labels");
  auto* stage3 = add_train("stage3", "fine-tuning on human-style labels");

  std::string ckpt, manifest, report, data_root;
  int threads = 2;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (SRCC)");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", manifest, "labeled manifest")->required();
  eval_cmd->add_option("--report", report, "output report (JSON)")->required();
  eval_cmd->add_option("--data-root", data_root, "root for file-backed audio refs");
  eval_cmd->add_option("--threads", threads, "worker threads");

  std::vector<std::string> ens_inputs;
  std::string ens_range = "0,1", ens_out, ens_labels;
  auto* ens_cmd = app.add_subcommand("ensemble", "rank-averaging ensemble");
  ens_cmd->add_option("--inputs", ens_inputs, "prediction files")
      ->required()
      ->expected(2, -1);
  ens_cmd->add_option("--range", ens_range, "output range 'lo,hi' (default 0,1)");
  ens_cmd->add_option("--out", ens_out, "output prediction file")->required();
  ens_cmd->add_option("--labels", ens_labels, "optional label file for an SRCC printout");

  int gen_n = 2000;
  uint64_t gen_seed = 7, gen_teacher_seed = 101;
  std::string gen_out_dir;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "generate the synthetic corpus");
  gen_cmd->add_option("--n", gen_n, "matched pair count");
  gen_cmd->add_option("--seed", gen_seed, "corpus seed");
  gen_cmd->add_option("--teacher-seed", gen_teacher_seed, "planted teacher seed");
  gen_cmd->add_option("--out-dir", gen_out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (stage1->parsed()) return run_train_stage(1, config_path, out_path);
    if (stage2->parsed()) return run_train_stage(2, config_path, out_path);
    if (stage3->parsed()) return run_train_stage(3, config_path, out_path);
    if (eval_cmd->parsed()) return run_eval(ckpt, manifest, report, data_root, threads);
    if (ens_cmd->parsed()) return run_ensemble(ens_inputs, ens_range, ens_out, ens_labels);
    if (gen_cmd->parsed()) {
      return run_gen_synthetic(gen_n, gen_seed, gen_teacher_seed, gen_out_dir);
    }
  } catch (const ats::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
