#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ats/errors.hpp"
#include "ats/metrics.hpp"
#include "ats/tape.hpp"

namespace ats {

// ---- ListNet (top-1 variant) ----
//
// L(pred, target) = -sum_i softmax(target / temperature)_i * log softmax(pred)_i
//
// Shift-invariant in pred, minimized (at the entropy of the target
// distribution) when pred equals target/temperature up to a constant.

inline std::vector<double> softmax_vec(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline std::vector<double> listnet_target_weights(const std::vector<double>& target,
                                                  double temperature) {
  if (!(temperature > 0)) throw ListError("listnet: temperature must be positive");
  std::vector<double> scaled(target.size());
  for (size_t i = 0; i < target.size(); ++i) scaled[i] = target[i] / temperature;
  return softmax_vec(scaled);
}

inline void check_listnet_inputs(size_t n_pred, size_t n_target) {
  if (n_pred != n_target) throw ListError("listnet: list length mismatch");
  if (n_pred < 2) throw ListError("listnet: need a list of at least two scores");
}

inline double listnet_loss_values(const std::vector<double>& pred,
                                  const std::vector<double>& target,
                                  double temperature = 1.0) {
  check_listnet_inputs(pred.size(), target.size());
  const auto w = listnet_target_weights(target, temperature);
  // log softmax(pred) evaluated stably
  double mx = pred[0];
  for (double v : pred) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : pred) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  double loss = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) loss -= w[i] * (pred[i] - lse);
  if (!std::isfinite(loss)) throw NonFiniteError("listnet: non-finite loss");
  return loss;
}

// Aligned-by-id variant over ScoreLists.
inline double listnet_loss(const ScoreList& pred, const ScoreList& target,
                           double temperature = 1.0) {
  pred.validate("listnet");
  target.validate("listnet");
  check_listnet_inputs(pred.size(), target.size());
  std::map<std::string, double> tmap;
  for (size_t i = 0; i < target.size(); ++i) tmap.emplace(target.ids[i], target.values[i]);
  std::vector<double> tv(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    auto it = tmap.find(pred.ids[i]);
    if (it == tmap.end()) throw ListError("listnet: id '" + pred.ids[i] + "' missing");
    tv[i] = it->second;
  }
  return listnet_loss_values(pred.values, tv, temperature);
}

// dL/dpred = softmax(pred) - softmax(target / temperature). The trainer uses
// this closed form to seed independent per-example backward passes; a test
// pins it against the composed tape route.
inline std::vector<double> listnet_pred_grad(const std::vector<double>& pred,
                                             const std::vector<double>& target,
                                             double temperature = 1.0) {
  check_listnet_inputs(pred.size(), target.size());
  const auto w = listnet_target_weights(target, temperature);
  auto g = softmax_vec(pred);
  for (size_t i = 0; i < g.size(); ++i) g[i] -= w[i];
  return g;
}

// Tape route: pred_id is a {n} (or {1,n}) node of predicted scores.
template <class T>
typename Tape<T>::Id listnet_loss_node(Tape<T>& tape, typename Tape<T>::Id pred_id,
                                       const std::vector<double>& target,
                                       double temperature = 1.0) {
  check_listnet_inputs(tape.value(pred_id).numel(), target.size());
  const auto w = listnet_target_weights(target, temperature);
  Tensor<T> wt({w.size()});
  for (size_t i = 0; i < w.size(); ++i) wt[i] = static_cast<T>(w[i]);
  auto weights = tape.constant(std::move(wt), "listnet_target");
  return tape.neg(tape.dot(weights, tape.log_softmax(pred_id)));
}

// ---- next-token cross-entropy ----
//
// Mean negative log-likelihood over masked positions; the mask selects the
// caption-token positions of a captioning sequence.

inline double next_token_cross_entropy(const Tensor<double>& logits,
                                       const std::vector<int>& targets,
                                       const std::vector<int>& mask) {
  if (logits.rank() != 2 || targets.size() != logits.rows() ||
      mask.size() != logits.rows()) {
    throw ShapeError("next_token_cross_entropy: targets/mask must match logits rows");
  }
  const size_t vocab = logits.cols();
  size_t count = 0;
  double loss = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= vocab) {
      throw VocabError("next_token_cross_entropy: target out of vocabulary");
    }
    const double* row = logits.data() + i * vocab;
    double mx = row[0];
    for (size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (size_t c = 0; c < vocab; ++c) sum += std::exp(row[c] - mx);
    loss -= row[static_cast<size_t>(targets[i])] - mx - std::log(sum);
    ++count;
  }
  if (count == 0) throw MaskError("next_token_cross_entropy: empty loss mask");
  loss /= static_cast<double>(count);
  if (!std::isfinite(loss)) throw NonFiniteError("next_token_cross_entropy: non-finite loss");
  return loss;
}

}  // namespace ats
