#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ats/augment.hpp"
#include "ats/batching.hpp"
#include "ats/manifest.hpp"
#include "ats/metrics.hpp"
#include "ats/rng.hpp"
#include "ats/synthetic.hpp"
#include "ats/teacher.hpp"

using namespace ats;

namespace {

// Independent replica of "atscore-rng v1" for draw-order checks.
struct OracleRng {
  uint64_t state;
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }
  static uint64_t fnv(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }
  OracleRng(uint64_t seed, const std::string& label) : state(mix(seed) ^ fnv(label)) {}
  uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    return mix(state);
  }
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next()) * n) >> 64);
  }
};

std::filesystem::path tmp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "ats_data_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<PairRecord> fake_records(int n) {
  std::vector<PairRecord> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(PairRecord::matched("r" + std::to_string(i), "aud" + std::to_string(i),
                                      "caption " + std::to_string(i)));
  }
  return out;
}

}  // namespace

TEST_CASE("load_manifest: valid rows, per-line errors, duplicates") {
  const auto path = (tmp_dir() / "m1.tsv").string();
  {
    std::ofstream os(path);
    os << "id\taudio_ref\tcaption\tlabel\tprovenance\n"
       << "r0\ta0\tdogs barking\t0.5\tmatched\n"
       << "r1\ta1\train falls\t\tmatched\n"
       << "r2\ta0\tdogs barking\t0.25\tnegative_text\n";
  }
  const auto records = load_manifest(path);
  REQUIRE(records.size() == 3);
  CHECK(records[0].label == 0.5);
  CHECK_FALSE(records[1].label.has_value());
  CHECK(records[2].provenance == Provenance::negative_text);
  CHECK(records[0].source_audio_id == "r0");
  CHECK(records[0].source_text_id == "r0");

  SUBCASE("a row missing its caption names the row") {
    std::ofstream os(path);
    os << "id\taudio_ref\tcaption\n"
       << "r0\ta0\tok caption\n"
       << "r1\ta1\t\n";
    os.close();
    try {
      load_manifest(path);
      FAIL("expected ManifestError");
    } catch (const ManifestError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("duplicate ids rejected") {
    std::ofstream os(path);
    os << "id\taudio_ref\tcaption\n"
       << "r0\ta0\tone\n"
       << "r0\ta1\ttwo\n";
    os.close();
    CHECK_THROWS_AS(load_manifest(path), DuplicateIdError);
  }
  SUBCASE("bad header rejected") {
    std::ofstream os(path);
    os << "id\tcaption\taudio_ref\nr0\tx\ty\n";
    os.close();
    CHECK_THROWS_AS(load_manifest(path), ManifestError);
  }
  SUBCASE("bad label value rejected") {
    std::ofstream os(path);
    os << "id\taudio_ref\tcaption\tlabel\nr0\ta0\tx\tnot_a_number\n";
    os.close();
    CHECK_THROWS_AS(load_manifest(path), ManifestError);
  }
}

TEST_CASE("load_manifest: corpus-scale manifest loads in under a second") {
  const auto path = (tmp_dir() / "big.tsv").string();
  {
    std::ofstream os(path);
    os << "id\taudio_ref\tcaption\n";
    for (int i = 0; i < 7500; ++i) {
      os << "r" << i << "\ta" << i << "\tsome event sound number " << i << "\n";
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = load_manifest(path);
  const auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0).count();
  CHECK(records.size() == 7500);
  CHECK(elapsed < 1.0);
}

TEST_CASE("manifest write/load roundtrip") {
  auto records = fake_records(3);
  records[1].label = 0.75;
  const auto path = (tmp_dir() / "rt.tsv").string();
  write_manifest(path, records);
  const auto back = load_manifest(path);
  REQUIRE(back.size() == 3);
  CHECK(back[1].label == 0.75);
  CHECK(back[2].caption == "caption 2");
}

TEST_CASE("negative_sample_augment: identity at k=0, size law, determinism") {
  const auto records = fake_records(10);
  const auto same = negative_sample_augment(records, 0, 7);
  CHECK(same.size() == 10);

  CounterRng rng(13, "aug.size");
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(30));
    const int k = static_cast<int>(rng.uniform_int(6));
    const auto out = negative_sample_augment(fake_records(n), k, trial);
    CHECK(out.size() == static_cast<size_t>(n) * (1 + static_cast<size_t>(k)));
  }

  const auto a = negative_sample_augment(records, 3, 99);
  const auto b = negative_sample_augment(records, 3, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].audio_ref == b[i].audio_ref);
    CHECK(a[i].caption == b[i].caption);
  }
}

TEST_CASE("negative_sample_augment: N=2, k=1 negatives are legal mismatches") {
  const auto records = fake_records(2);
  const auto out = negative_sample_augment(records, 1, 5);
  REQUIRE(out.size() == 4);
  for (size_t i = 2; i < 4; ++i) {
    const auto& neg = out[i];
    CHECK(neg.provenance != Provenance::matched);
    // the pair must differ from both matched pairings
    for (const auto& m : records) {
      CHECK_FALSE((neg.audio_ref == m.audio_ref && neg.caption == m.caption));
    }
    // swapped component comes from the other record
    if (neg.provenance == Provenance::negative_audio) {
      CHECK(neg.source_text_id == out[i].id.substr(0, 2));
      CHECK(neg.source_audio_id != neg.source_text_id);
    } else {
      CHECK(neg.source_audio_id == out[i].id.substr(0, 2));
      CHECK(neg.source_text_id != neg.source_audio_id);
    }
  }
}

TEST_CASE("negative_sample_augment: no accidental positives even with duplicate captions") {
  // two records share the same caption text; swapping text between them would
  // recreate a matched pair, so the augmenter must redraw
  std::vector<PairRecord> records;
  records.push_back(PairRecord::matched("r0", "a0", "same caption"));
  records.push_back(PairRecord::matched("r1", "a1", "same caption"));
  records.push_back(PairRecord::matched("r2", "a2", "another one"));
  std::set<std::pair<std::string, std::string>> matched;
  for (const auto& r : records) matched.emplace(r.audio_ref, r.caption);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto out = negative_sample_augment(records, 4, seed);
    for (size_t i = records.size(); i < out.size(); ++i) {
      CHECK(matched.find({out[i].audio_ref, out[i].caption}) == matched.end());
    }
  }
  // with only the two clones, every candidate swap recreates a matched pair
  std::vector<PairRecord> clones(records.begin(), records.begin() + 2);
  CHECK_THROWS_AS(negative_sample_augment(clones, 1, 0), AugmentError);
}

TEST_CASE("negative_sample_augment: provenance split is Binomial(Nk, 1/2) within 6 sigma") {
  const int n = 500, k = 20;  // 10,000 negatives
  const auto out = negative_sample_augment(fake_records(n), k, 2024);
  int audio = 0, text = 0;
  for (size_t i = static_cast<size_t>(n); i < out.size(); ++i) {
    audio += out[i].provenance == Provenance::negative_audio;
    text += out[i].provenance == Provenance::negative_text;
  }
  const double total = n * k;
  CHECK(audio + text == static_cast<int>(total));
  const double sigma = std::sqrt(total * 0.25);
  CHECK(std::abs(audio - total / 2) <= 6.0 * sigma);
}

TEST_CASE("negative_sample_augment: errors") {
  CHECK_THROWS_AS(negative_sample_augment(fake_records(1), 1, 0), AugmentError);
  CHECK_THROWS_AS(negative_sample_augment(fake_records(5), -1, 0), AugmentError);
  auto bad = fake_records(3);
  bad[1].provenance = Provenance::negative_audio;
  CHECK_THROWS_AS(negative_sample_augment(bad, 1, 0), AugmentError);
}

TEST_CASE("pseudo_label: planted teacher") {
  const EmbedFn audio_embed = [](const std::string& ref) {
    return audio_latent(ref, 9001, 6);
  };
  const EmbedFn text_embed = [](const std::string& caption) {
    return caption_latent(caption, 101, 6);
  };

  SUBCASE("zero gain (W = 0) labels everything exactly 0.5") {
    TeacherSpec t;
    t.kind = TeacherSpec::Kind::planted_bilinear;
    t.seed = 101;
    t.latent_dim = 6;
    t.gain = 0.0;
    const auto out = pseudo_label(fake_records(5), t, audio_embed, text_embed);
    for (const auto& r : out) CHECK(*r.label == 0.5);
  }
  SUBCASE("same record queried twice gets the identical label") {
    TeacherSpec t;
    t.kind = TeacherSpec::Kind::planted_bilinear;
    t.seed = 101;
    t.latent_dim = 6;
    t.gain = 5.0;
    const auto a = pseudo_label(fake_records(5), t, audio_embed, text_embed);
    const auto b = pseudo_label(fake_records(5), t, audio_embed, text_embed);
    for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].label == *b[i].label);
  }
}

TEST_CASE("pseudo_label: matched pairs beat negatives by a clear margin") {
  SyntheticSpec spec;
  spec.n = 1000;
  spec.seed = 7;
  const auto corpus = generate_synthetic_corpus(spec);
  const auto augmented =
      negative_sample_augment(corpus.corpus, 1, derive_seed(7, "margin.test"));

  TeacherSpec teacher;
  teacher.kind = TeacherSpec::Kind::planted_bilinear;
  teacher.seed = spec.teacher_seed;
  teacher.latent_dim = spec.model.synth_latent_dim;
  teacher.gain = spec.teacher_gain;
  const uint64_t enc_seed = spec.model.encoder_seed;
  const uint64_t t_seed = spec.teacher_seed;
  const int dim = spec.model.synth_latent_dim;
  const auto labeled = pseudo_label(
      augmented, teacher,
      [enc_seed, dim](const std::string& ref) { return audio_latent(ref, enc_seed, dim); },
      [t_seed, dim](const std::string& c) { return caption_latent(c, t_seed, dim); });

  double matched_sum = 0.0, neg_sum = 0.0;
  int matched_n = 0, neg_n = 0;
  for (const auto& r : labeled) {
    if (r.provenance == Provenance::matched) {
      matched_sum += *r.label;
      ++matched_n;
    } else {
      neg_sum += *r.label;
      ++neg_n;
    }
  }
  REQUIRE(matched_n == 1000);
  REQUIRE(neg_n == 1000);
  const double margin = matched_sum / matched_n - neg_sum / neg_n;
  CHECK(margin >= 0.1);
}

TEST_CASE("pseudo_label: external file teacher and coverage error") {
  const auto path = (tmp_dir() / "teacher.tsv").string();
  {
    PredictionSet p;
    p.scores.emplace("r0", 0.9);
    p.scores.emplace("r1", 0.1);
    p.scores.emplace("r2", 0.4);
    write_prediction_file(path, p);
  }
  TeacherSpec t;
  t.kind = TeacherSpec::Kind::external_file;
  t.path = path;
  const auto labeled = pseudo_label(fake_records(3), t, nullptr, nullptr);
  CHECK(*labeled[0].label == 0.9);
  CHECK(*labeled[2].label == 0.4);
  CHECK_THROWS_AS(pseudo_label(fake_records(4), t, nullptr, nullptr),
                  TeacherCoverageError);
}

TEST_CASE("spec_augment: zero widths are the identity") {
  AudioFeatureSeq feat;
  feat.frames = Tensor<double>::zeros({10, 8});
  CounterRng rng(3, "sa.id");
  for (size_t i = 0; i < feat.frames.numel(); ++i) feat.frames[i] = rng.normal();
  SpecAugmentParams p;  // widths 0, one mask per axis
  const auto out = spec_augment(feat, p, 42);
  CHECK(std::memcmp(out.frames.data(), feat.frames.data(),
                    feat.frames.numel() * sizeof(double)) == 0);
}

TEST_CASE("spec_augment: bit-exact agreement with the documented draw-order oracle") {
  AudioFeatureSeq feat;
  feat.frames = Tensor<double>::zeros({10, 8});
  CounterRng fill(4, "sa.fill");
  for (size_t i = 0; i < feat.frames.numel(); ++i) feat.frames[i] = fill.normal();

  SpecAugmentParams p;
  p.time_mask_width = 4;
  p.freq_mask_width = 3;
  p.masks_per_axis = 2;

  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const auto out = spec_augment(feat, p, seed);

    // oracle replay: stream (seed, "specaugment"); time masks then channel
    // masks; per mask width = uniform_int(max+1), start = uniform_int(len-width+1)
    OracleRng rng(seed, "specaugment");
    auto expect = feat.frames;
    size_t zeroed_rows_per_mask_max = 0;
    for (int m = 0; m < p.masks_per_axis; ++m) {
      const size_t width = rng.uniform_int(static_cast<uint64_t>(p.time_mask_width) + 1);
      const size_t start = rng.uniform_int(10 - width + 1);
      zeroed_rows_per_mask_max = std::max(zeroed_rows_per_mask_max, width);
      for (size_t t = start; t < start + width; ++t)
        for (size_t c = 0; c < 8; ++c) expect.at(t, c) = 0.0;
    }
    for (int m = 0; m < p.masks_per_axis; ++m) {
      const size_t width = rng.uniform_int(static_cast<uint64_t>(p.freq_mask_width) + 1);
      const size_t start = rng.uniform_int(8 - width + 1);
      for (size_t t = 0; t < 10; ++t)
        for (size_t c = start; c < start + width; ++c) expect.at(t, c) = 0.0;
    }
    REQUIRE(std::memcmp(out.frames.data(), expect.data(),
                        expect.numel() * sizeof(double)) == 0);
    CHECK(zeroed_rows_per_mask_max <= static_cast<size_t>(p.time_mask_width));
  }
}

TEST_CASE("spec_augment: locality and bounds over fuzzed draws") {
  AudioFeatureSeq feat;
  feat.frames = Tensor<double>::zeros({20, 12});
  CounterRng fill(5, "sa.fill2");
  for (size_t i = 0; i < feat.frames.numel(); ++i) {
    feat.frames[i] = 1.0 + std::abs(fill.normal());  // strictly nonzero
  }
  SpecAugmentParams p;
  p.time_mask_width = 6;
  p.freq_mask_width = 5;
  p.masks_per_axis = 1;

  for (uint64_t seed = 0; seed < 500; ++seed) {
    const auto out = spec_augment(feat, p, seed);
    // reconstruct the masked rows/cols from the zero pattern
    std::set<size_t> zero_rows, zero_cols;
    for (size_t t = 0; t < 20; ++t) {
      bool all_zero = true;
      for (size_t c = 0; c < 12; ++c) all_zero &= out.frames.at(t, c) == 0.0;
      if (all_zero) zero_rows.insert(t);
    }
    for (size_t c = 0; c < 12; ++c) {
      bool all_zero = true;
      for (size_t t = 0; t < 20; ++t) all_zero &= out.frames.at(t, c) == 0.0;
      if (all_zero) zero_cols.insert(c);
    }
    CHECK(zero_rows.size() <= 6);
    CHECK(zero_cols.size() <= 5);
    // contiguity
    if (!zero_rows.empty()) {
      CHECK(*zero_rows.rbegin() - *zero_rows.begin() + 1 == zero_rows.size());
    }
    if (!zero_cols.empty()) {
      CHECK(*zero_cols.rbegin() - *zero_cols.begin() + 1 == zero_cols.size());
    }
    // everything outside masked rows/cols is bitwise unchanged
    for (size_t t = 0; t < 20; ++t) {
      if (zero_rows.count(t)) continue;
      for (size_t c = 0; c < 12; ++c) {
        if (zero_cols.count(c)) continue;
        CHECK(out.frames.at(t, c) == feat.frames.at(t, c));
      }
    }
  }
}

TEST_CASE("spec_augment: width beyond an axis is a MaskParamError") {
  AudioFeatureSeq feat;
  feat.frames = Tensor<double>::zeros({10, 8});
  SpecAugmentParams p;
  p.time_mask_width = 11;
  CHECK_THROWS_AS(spec_augment(feat, p, 0), MaskParamError);
  p.time_mask_width = 0;
  p.freq_mask_width = 9;
  CHECK_THROWS_AS(spec_augment(feat, p, 0), MaskParamError);
  p.freq_mask_width = -1;
  CHECK_THROWS_AS(spec_augment(feat, p, 0), MaskParamError);
}

TEST_CASE("make_batches: chunking, determinism, partition property") {
  const auto b1 = make_batches(33, 16, 7, /*drop_last=*/true);
  REQUIRE(b1.size() == 2);
  CHECK(b1[0].size() == 16);
  CHECK(b1[1].size() == 16);

  const auto b2 = make_batches(33, 16, 7, true);
  CHECK(b1 == b2);

  const auto full = make_batches(33, 16, 7, /*drop_last=*/false);
  REQUIRE(full.size() == 3);
  CHECK(full[2].size() == 1);
  std::set<size_t> seen;
  for (const auto& batch : full)
    for (size_t i : batch) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 33);
  CHECK(*seen.rbegin() == 32);

  CHECK_THROWS_AS(make_batches(10, 1, 7, true), ConfigError);
}
