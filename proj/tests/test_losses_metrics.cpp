#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ats/losses.hpp"
#include "ats/metrics.hpp"
#include "ats/model.hpp"
#include "ats/rng.hpp"

using namespace ats;

namespace {

// Standalone replica of the documented generator ("atscore-rng v1"), kept
// independent of ats::CounterRng so embedder and draw-order checks have a
// second implementation to disagree with.
namespace oracle {

uint64_t mix(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

uint64_t fnv(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Rng {
  uint64_t state;
  Rng(uint64_t seed, const std::string& label) : state(mix(seed) ^ fnv(label)) {}
  uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    return mix(state);
  }
  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal() {
    double u1 = u01();
    const double u2 = u01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }
};

// trigram-count embedding, cosine; mirrors the documented construction
std::vector<double> embed(const std::string& text, uint64_t seed, int dim) {
  std::vector<double> v(static_cast<size_t>(dim), 0.0);
  if (text.empty()) return v;
  std::map<std::string, int> counts;
  if (text.size() < 3) {
    counts[text] = 1;
  } else {
    for (size_t i = 0; i + 3 <= text.size(); ++i) counts[text.substr(i, 3)] += 1;
  }
  for (const auto& [gram, n] : counts) {
    Rng rng(seed, "trigram." + gram);
    for (int d = 0; d < dim; ++d) v[static_cast<size_t>(d)] += n * rng.normal();
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    for (double& x : v) x /= std::sqrt(norm);
  }
  return v;
}

}  // namespace oracle

// O(n^2) average ranks: rank_i = #less + (#equal + 1) / 2.
std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    size_t less = 0, equal = 0;
    for (size_t j = 0; j < v.size(); ++j) {
      less += v[j] < v[i];
      equal += v[j] == v[i];
    }
    out[i] = static_cast<double>(less) + (static_cast<double>(equal) + 1.0) / 2.0;
  }
  return out;
}

double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

ScoreList make_list(const std::vector<double>& values) {
  ScoreList s;
  for (size_t i = 0; i < values.size(); ++i) {
    s.ids.push_back("e" + std::to_string(i));
    s.values.push_back(values[i]);
  }
  return s;
}

}  // namespace

TEST_CASE("listnet: uniform lists give ln 2") {
  CHECK(listnet_loss_values({0, 0}, {0, 0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("listnet: shift invariance in the predictions") {
  CounterRng rng(5, "listnet.shift");
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 2 + rng.uniform_int(15);
    std::vector<double> pred(n), target(n);
    for (size_t i = 0; i < n; ++i) {
      pred[i] = rng.normal();
      target[i] = rng.normal();
    }
    const double base = listnet_loss_values(pred, target);
    const double c = 5.0 * rng.normal();
    auto shifted = pred;
    for (double& x : shifted) x += c;
    CHECK(std::abs(listnet_loss_values(shifted, target) - base) < 1e-12);
  }
}

TEST_CASE("listnet: [1,0] vs [0,1] matches the closed form") {
  // -[softmax(0,1)_0 * log softmax(1,0)_0 + softmax(0,1)_1 * log softmax(1,0)_1]
  const double s1 = 1.0 / (1.0 + std::exp(-1.0));   // softmax(1,0)_0
  const double sm1 = 1.0 - s1;                      // softmax(1,0)_1
  const double expect = -(sm1 * std::log(s1) + s1 * std::log(sm1));
  CHECK(expect == doctest::Approx(1.0443202661482278).epsilon(1e-12));
  CHECK(listnet_loss_values({1, 0}, {0, 1}) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("listnet: optimum value, optimality gap, zero gradient at optimum") {
  CounterRng rng(6, "listnet.opt");
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 2 + rng.uniform_int(15);
    std::vector<double> target(n);
    for (auto& x : target) x = rng.normal() * 2.0;
    const auto w = listnet_target_weights(target, 1.0);
    double entropy = 0.0;
    for (double wi : w) entropy -= wi * std::log(wi);

    const double at_opt = listnet_loss_values(target, target);
    CHECK(std::abs(at_opt - entropy) < 1e-10);

    // shifted optimum still optimal; random pred strictly worse
    auto shifted = target;
    for (double& x : shifted) x += 3.25;
    CHECK(std::abs(listnet_loss_values(shifted, target) - entropy) < 1e-10);
    std::vector<double> pred(n);
    for (auto& x : pred) x = rng.normal() * 2.0;
    CHECK(listnet_loss_values(pred, target) > at_opt - 1e-12);

    const auto g = listnet_pred_grad(shifted, target);
    for (double gi : g) CHECK(std::abs(gi) < 1e-10);
  }
}

TEST_CASE("listnet: tape route agrees with the closed-form value and gradient") {
  CounterRng rng(7, "listnet.tape");
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 2 + rng.uniform_int(14);
    std::vector<double> predv(n), target(n);
    for (size_t i = 0; i < n; ++i) {
      predv[i] = rng.normal();
      target[i] = rng.normal();
    }
    Tape<double> tape;
    Tensor<double> pt({n});
    for (size_t i = 0; i < n; ++i) pt[i] = predv[i];
    auto pred = tape.input(pt, "pred", true);
    auto loss = listnet_loss_node(tape, pred, target);
    tape.backward(loss);
    CHECK(tape.value(loss)[0] ==
          doctest::Approx(listnet_loss_values(predv, target)).epsilon(1e-12));
    const auto g = tape.grad(pred);
    const auto ga = listnet_pred_grad(predv, target);
    for (size_t i = 0; i < n; ++i) {
      CHECK(g[i] == doctest::Approx(ga[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("listnet: errors") {
  CHECK_THROWS_AS(listnet_loss_values({1.0}, {1.0}), ListError);
  CHECK_THROWS_AS(listnet_loss_values({1.0, 2.0}, {1.0}), ListError);
  ScoreList a = make_list({1, 2});
  ScoreList b = make_list({1, 2, 3});
  CHECK_THROWS_AS(listnet_loss(a, b), ListError);
}

TEST_CASE("next_token_cross_entropy: uniform, one-hot, hand case, empty mask") {
  SUBCASE("uniform logits over vocab 256") {
    Tensor<double> logits = Tensor<double>::zeros({3, 256});
    CHECK(next_token_cross_entropy(logits, {0, 5, 255}, {1, 1, 1}) ==
          doctest::Approx(std::log(256.0)).epsilon(1e-12));
  }
  SUBCASE("one-hot correct logits with a large margin") {
    Tensor<double> logits = Tensor<double>::zeros({2, 4});
    logits.at(0, 1) = 50.0;
    logits.at(1, 3) = 50.0;
    CHECK(next_token_cross_entropy(logits, {1, 3}, {1, 1}) < 1e-12);
  }
  SUBCASE("hand case: logits [[2,0],[0,1]], targets [0,1]") {
    Tensor<double> logits({2, 2}, {2, 0, 0, 1});
    const double expect = (0.12692801104297263 + 0.3132616875182228) / 2.0;
    CHECK(next_token_cross_entropy(logits, {0, 1}, {1, 1}) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("mask can exclude positions; empty mask is a MaskError") {
    Tensor<double> logits({2, 2}, {2, 0, 0, 1});
    CHECK(next_token_cross_entropy(logits, {0, 1}, {1, 0}) ==
          doctest::Approx(0.12692801104297263).epsilon(1e-12));
    CHECK_THROWS_AS(next_token_cross_entropy(logits, {0, 1}, {0, 0}), MaskError);
  }
}

TEST_CASE("rank_transform: examples and rank-sum property") {
  CHECK(rank_transform({0.2, 0.9, 0.5}) == std::vector<double>{1, 3, 2});
  CHECK(rank_transform({1, 1}) == std::vector<double>{1.5, 1.5});
  CHECK(rank_transform({3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});

  CounterRng rng(8, "ranks");
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 1 + rng.uniform_int(30);
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(rng.uniform_int(6));  // force ties
    const auto r = rank_transform(v);
    const double sum = std::accumulate(r.begin(), r.end(), 0.0);
    CHECK(sum == doctest::Approx(n * (n + 1) / 2.0).epsilon(1e-12));
    CHECK(r == brute_ranks(v));
  }
}

TEST_CASE("srcc: known values") {
  const auto a = make_list({1, 2, 3, 4, 5});
  CHECK(srcc(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(srcc(a, make_list({5, 4, 3, 2, 1})) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(srcc(a, make_list({2, 1, 4, 3, 5})) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("srcc: monotone invariance, symmetry, range, degenerate lists") {
  CounterRng rng(9, "srcc");
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 2 + rng.uniform_int(20);
    std::vector<double> av(n), bv(n);
    for (size_t i = 0; i < n; ++i) {
      av[i] = rng.normal();
      bv[i] = rng.normal();
    }
    // guarantee non-constant
    av[0] = 10.0;
    bv[0] = -10.0;
    const auto a = make_list(av), b = make_list(bv);
    const double base = srcc(a, b);
    CHECK(base >= -1.0);
    CHECK(base <= 1.0);
    CHECK(srcc(b, a) == doctest::Approx(base).epsilon(1e-14));

    std::vector<double> af(n), bg(n);
    for (size_t i = 0; i < n; ++i) {
      af[i] = av[i] * av[i] * av[i] + 2.0;  // strictly increasing
      bg[i] = std::exp(bv[i] * 0.5);        // strictly increasing
    }
    CHECK(srcc(make_list(af), make_list(bg)) == base);  // exact
  }
  CHECK_THROWS_AS(srcc(make_list({1, 1, 1}), make_list({1, 2, 3})), DegenerateError);
  CHECK_THROWS_AS(srcc(make_list({1.0}), make_list({2.0})), ListError);
}

TEST_CASE("srcc: brute-force oracle agreement on random lists with ties") {
  CounterRng rng(10, "srcc.oracle");
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 2 + rng.uniform_int(49);
    std::vector<double> av(n), bv(n);
    const bool with_ties = trial % 2 == 0;
    for (size_t i = 0; i < n; ++i) {
      av[i] = with_ties ? static_cast<double>(rng.uniform_int(8)) : rng.normal();
      bv[i] = with_ties ? static_cast<double>(rng.uniform_int(8)) : rng.normal();
    }
    av[0] = 100.0;  // keep both lists non-constant
    bv[0] = 100.0;
    av[n - 1] = -100.0;
    bv[n - 1] = -100.0;
    const double got = srcc(make_list(av), make_list(bv));
    const double want = brute_pearson(brute_ranks(av), brute_ranks(bv));
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("rank_average_ensemble: examples, argsort preservation, oracle") {
  auto to_preds = [](const std::vector<double>& v) {
    PredictionSet p;
    for (size_t i = 0; i < v.size(); ++i) p.scores.emplace("e" + std::to_string(i), v[i]);
    return p;
  };

  SUBCASE("identical members preserve the argsort") {
    const auto m = to_preds({0.3, 0.1, 0.9, 0.5});
    const auto out = rank_average_ensemble({m, m}, 0.0, 1.0);
    ScoreList base = m.to_score_list(), ens = out.to_score_list();
    CHECK(rank_transform(base.values) == rank_transform(ens.values));
  }
  SUBCASE("opposed members collapse to the midpoint") {
    const auto out =
        rank_average_ensemble({to_preds({1, 2, 3}), to_preds({3, 2, 1})}, 0.0, 1.0);
    for (const auto& [id, v] : out.scores) {
      (void)id;
      CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
  SUBCASE("hand case: [1,2,3] and [2,1,3] on [0,1] give [0,0,1]") {
    const auto out =
        rank_average_ensemble({to_preds({1, 2, 3}), to_preds({2, 1, 3})}, 0.0, 1.0);
    CHECK(out.scores.at("e0") == doctest::Approx(0.0));
    CHECK(out.scores.at("e1") == doctest::Approx(0.0));
    CHECK(out.scores.at("e2") == doctest::Approx(1.0));
  }
  SUBCASE("id mismatch is an EnsembleError") {
    PredictionSet a = to_preds({1, 2, 3});
    PredictionSet b = to_preds({1, 2, 3});
    b.scores.erase("e2");
    b.scores.emplace("other", 5.0);
    CHECK_THROWS_AS(rank_average_ensemble({a, b}, 0.0, 1.0), EnsembleError);
  }
  SUBCASE("brute-force oracle on random member sets") {
    CounterRng rng(12, "ensemble.oracle");
    for (int trial = 0; trial < 200; ++trial) {
      const size_t n = 2 + rng.uniform_int(12);
      const size_t members = 2 + rng.uniform_int(4);
      std::vector<PredictionSet> ms;
      std::vector<std::vector<double>> vals(members, std::vector<double>(n));
      for (size_t m = 0; m < members; ++m) {
        for (size_t i = 0; i < n; ++i) {
          vals[m][i] = trial % 3 == 0 ? static_cast<double>(rng.uniform_int(4))
                                      : rng.normal();
        }
        ms.push_back(to_preds(vals[m]));
      }
      const double lo = -1.0, hi = 3.0;
      const auto out = rank_average_ensemble(ms, lo, hi);

      // oracle: mean of brute ranks, affine map
      std::vector<double> mean_rank(n, 0.0);
      for (size_t m = 0; m < members; ++m) {
        const auto r = brute_ranks(vals[m]);
        for (size_t i = 0; i < n; ++i) mean_rank[i] += r[i] / members;
      }
      const double rmin = *std::min_element(mean_rank.begin(), mean_rank.end());
      const double rmax = *std::max_element(mean_rank.begin(), mean_rank.end());
      for (size_t i = 0; i < n; ++i) {
        const double want = rmax == rmin
                                ? (lo + hi) / 2
                                : lo + (mean_rank[i] - rmin) * (hi - lo) / (rmax - rmin);
        CHECK(out.scores.at("e" + std::to_string(i)) ==
              doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("caption similarity: identity, empty convention, independent oracle") {
  const TrigramEmbedder embedder(7, 64);
  const auto ref = byte_tokens("water splashing in a sink");
  CHECK(caption_similarity_score(ref, ref, embedder) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(caption_similarity_score({}, ref, embedder) == 0.0);

  const std::string gen_text = "a dog barking";
  const std::string ref_text = "dogs bark loudly";
  const double got =
      caption_similarity_score(byte_tokens(gen_text), byte_tokens(ref_text), embedder);
  const auto a = oracle::embed(gen_text, 7, 64);
  const auto b = oracle::embed(ref_text, 7, 64);
  double dot = 0.0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  CHECK(got == doctest::Approx(dot).epsilon(1e-12));
}

TEST_CASE("prediction files: header, sorted ids, roundtrip") {
  PredictionSet p;
  p.scores.emplace("zeta", 0.125);
  p.scores.emplace("alpha", -3.5);
  p.scores.emplace("mid", 1.0 / 3.0);
  const auto path =
      (std::filesystem::temp_directory_path() / "ats_pred_test.tsv").string();
  write_prediction_file(path, p);
  const auto q = read_prediction_file(path);
  REQUIRE(q.scores.size() == 3);
  CHECK(q.scores.at("alpha") == -3.5);
  CHECK(q.scores.at("mid") == 1.0 / 3.0);  // %.17g round-trips doubles exactly
  CHECK(q.scores.at("zeta") == 0.125);

  std::ofstream bad(path);
  bad << "wrong\theader\nx\t1\n";
  bad.close();
  CHECK_THROWS_AS(read_prediction_file(path), ManifestError);
}
