#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "smartbird/sampler.hpp"

using namespace smartbird;

namespace {

AttentionMatrix uniform_attention(int n, int valid) {
  AttentionMatrix am;
  am.n = n;
  am.valid_len = valid;
  am.a.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < valid; ++i)
    for (int j = 0; j < valid; ++j) am.at(i, j) = 1.0 / valid;
  return am;
}

AttentionMatrix constant_attention(int n, int valid, double value) {
  AttentionMatrix am = uniform_attention(n, valid);
  for (int i = 0; i < valid; ++i)
    for (int j = 0; j < valid; ++j) am.at(i, j) = value;
  return am;
}

// Softmax of random logits: a realistic non-degenerate attention row profile.
AttentionMatrix random_attention(int n, int valid, uint64_t seed,
                                 double spread = 2.0) {
  AttentionMatrix am;
  am.n = n;
  am.valid_len = valid;
  am.a.assign(static_cast<size_t>(n) * n, 0.0);
  SplitMix64 rng(seed);
  for (int i = 0; i < valid; ++i) {
    std::vector<double> logits(static_cast<size_t>(valid));
    double mx = -1e300;
    for (double& l : logits) {
      l = rng.uniform(-spread, spread);
      mx = std::max(mx, l);
    }
    double denom = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      denom += l;
    }
    for (int j = 0; j < valid; ++j) am.at(i, j) = logits[static_cast<size_t>(j)] / denom;
  }
  return am;
}

}  // namespace

TEST_CASE("squared-inverse-log scores are exact at the reference points") {
  AttentionMatrix am = constant_attention(2, 2, std::exp(-1.0));
  ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
  CHECK(std::fabs(sm.p_at(0, 0) - 1.0) < 1e-12);

  am = constant_attention(2, 2, std::exp(-2.0));
  sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
  CHECK(std::fabs(sm.p_at(0, 0) - 0.25) < 1e-12);
  ScoreMatrix inv = sampling_scores(am, SamplingStrategy::kInvLog);
  CHECK(std::fabs(inv.p_at(0, 0) - 0.5) < 1e-12);
}

TEST_CASE("alpha = 1 is clamped to a finite huge score") {
  AttentionMatrix am = constant_attention(2, 2, 1.0);
  ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
  const double p = sm.p_at(0, 0);
  CHECK(std::isfinite(p));
  // high-precision oracle for the clamped value ln(1 - 1e-6)
  const double lg = std::log1p(-1e-6);
  const double expected = 1.0 / (lg * lg);
  CHECK(std::fabs(p - expected) / expected < 1e-9);
  CHECK(p > 1e11);
}

TEST_CASE("strategy transforms and PAD handling") {
  AttentionMatrix am = uniform_attention(4, 3);
  am.at(0, 0) = 0.7;
  am.at(0, 1) = 0.2;
  am.at(0, 2) = 0.1;

  SUBCASE("raw weight keeps clamped alpha") {
    ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kRawWeight);
    CHECK(sm.p_at(0, 0) == doctest::Approx(0.7));
    CHECK(sm.p_at(0, 3) == 0.0);  // PAD column
    CHECK(sm.p_at(3, 0) == 0.0);  // PAD row
  }
  SUBCASE("random strategy gives unit ceiling on valid pairs") {
    ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kRandom);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(sm.p_at(i, j) == 1.0);
    CHECK(sm.p_at(0, 3) == 0.0);
  }
  SUBCASE("monotonicity of the log transforms") {
    for (SamplingStrategy s :
         {SamplingStrategy::kInvLog, SamplingStrategy::kSquaredInvLog}) {
      SplitMix64 rng(40);
      for (int trial = 0; trial < 200; ++trial) {
        const double a1 = rng.uniform(1e-9, 1.0 - 2e-6);
        const double a2 = rng.uniform(a1 + 1e-9, 1.0 - 1e-6);
        ScoreMatrix s1 = sampling_scores(constant_attention(2, 2, a1), s);
        ScoreMatrix s2 = sampling_scores(constant_attention(2, 2, a2), s);
        CHECK(s1.p_at(0, 0) < s2.p_at(0, 0));
      }
    }
  }
}

TEST_CASE("draw_scores") {
  SUBCASE("zero ceiling draws zero") {
    AttentionMatrix am = uniform_attention(4, 2);
    ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
    SplitMix64 rng(1);
    draw_scores(sm, rng);
    for (int j = 2; j < 4; ++j) CHECK(sm.s_at(0, j) == 0.0);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        CHECK(sm.s_at(i, j) >= 0.0);
        CHECK(sm.s_at(i, j) < sm.p_at(i, j));
      }
  }
  SUBCASE("fixed seed reproduces draws") {
    AttentionMatrix am = random_attention(8, 8, 55);
    ScoreMatrix a = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
    ScoreMatrix b = a;
    SplitMix64 r1(7), r2(7);
    draw_scores(a, r1);
    draw_scores(b, r2);
    CHECK(a.s == b.s);
  }
  SUBCASE("mean of s/p is 0.5 within 0.002 over 1e6 draws") {
    AttentionMatrix am = random_attention(100, 100, 77);
    ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
    SplitMix64 rng(1234);
    double total = 0.0;
    int64_t count = 0;
    for (int rep = 0; rep < 100; ++rep) {  // 100 reps x 100x100 = 1e6 draws
      draw_scores(sm, rng);
      for (int i = 0; i < 100; ++i)
        for (int j = 0; j < 100; ++j) {
          total += sm.s_at(i, j) / sm.p_at(i, j);
          ++count;
        }
    }
    CHECK(count == 1000000);
    CHECK(total / static_cast<double>(count) ==
          doctest::Approx(0.5).epsilon(0.004));
  }
}

TEST_CASE("topk_rows selection") {
  ScoreMatrix sm;
  sm.n = 4;
  sm.valid_len = 4;
  sm.p.assign(16, 1.0);
  sm.s = {0.9, 0.1, 0.5, 0.7,   //
          0.5, 0.5, 0.2, 0.1,   //
          0.1, 0.2, 0.3, 0.4,   //
          0.4, 0.3, 0.2, 0.1};

  SUBCASE("largest scores win") {
    IndexMatrix im = topk_rows(sm, 2, false);
    CHECK(im.slot_count[0] == 2);
    std::set<int> got{im.at(0, 0), im.at(0, 1)};
    CHECK(got == std::set<int>{0, 3});
  }
  SUBCASE("ties break toward the smaller index") {
    IndexMatrix im = topk_rows(sm, 1, false);
    CHECK(im.at(1, 0) == 0);
  }
  SUBCASE("K >= valid_len selects everything") {
    IndexMatrix im = topk_rows(sm, 9, false);
    for (int i = 0; i < 4; ++i) {
      CHECK(im.slot_count[static_cast<size_t>(i)] == 4);
      std::set<int> got;
      for (int k = 0; k < 4; ++k) got.insert(im.at(i, k));
      CHECK(got == std::set<int>{0, 1, 2, 3});
    }
  }
  SUBCASE("include_self pins the diagonal into slot 0") {
    IndexMatrix im = topk_rows(sm, 2, true);
    for (int i = 0; i < 4; ++i) CHECK(im.at(i, 0) == i);
    std::string why;
    CHECK(im.validate(&why));
  }
}

TEST_CASE("PAD query rows are inert") {
  AttentionMatrix am = random_attention(8, 5, 3);
  ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
  SplitMix64 rng(2);
  draw_scores(sm, rng);
  IndexMatrix im = topk_rows(sm, 3, false);
  for (int i = 5; i < 8; ++i) {
    CHECK(im.slot_count[static_cast<size_t>(i)] == 0);
    for (int k = 0; k < 3; ++k) CHECK(im.at(i, k) == 0);
  }
  std::string why;
  CHECK_MESSAGE(im.validate(&why), why);
}

TEST_CASE("index matrices satisfy invariants for all strategies and K") {
  const int n = 12;
  for (SamplingStrategy strat : all_strategies()) {
    for (int k = 1; k <= n; ++k) {
      for (int valid : {1, 5, n}) {
        AttentionMatrix am = random_attention(n, valid, stream_seed(9, k, valid));
        auto heads = build_head_indices(am, strat, k, 3, false, 77, 1, 2, 0);
        REQUIRE(heads.size() == 3);
        for (const IndexMatrix& im : heads) {
          std::string why;
          const std::string ctx = strategy_name(strat) +
                                  " k=" + std::to_string(k) +
                                  " valid=" + std::to_string(valid) + ": " + why;
          CHECK_MESSAGE(im.validate(&why), ctx);
          for (int i = 0; i < valid; ++i)
            CHECK(im.slot_count[static_cast<size_t>(i)] == std::min(k, valid));
        }
      }
    }
  }
}

TEST_CASE("head behavior per strategy") {
  AttentionMatrix am = random_attention(16, 16, 21);
  SUBCASE("single head equals draw+topk with the same stream") {
    auto heads = build_head_indices(am, SamplingStrategy::kSquaredInvLog, 4, 1,
                                    false, 5, 6, 7, 2);
    ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
    SplitMix64 rng(stream_seed(5, 6, 7 ^ (2ull << 32), 0));
    draw_scores(sm, rng);
    IndexMatrix expect = topk_rows(sm, 4, false);
    CHECK(heads[0].idx == expect.idx);
  }
  SUBCASE("top-k strategy is deterministic and identical across heads") {
    auto heads = build_head_indices(am, SamplingStrategy::kTopK, 4, 8, false,
                                    5, 6, 7, 0);
    for (int hd = 1; hd < 8; ++hd) CHECK(heads[static_cast<size_t>(hd)].idx == heads[0].idx);
    // slots follow raw attention order per row
    ScoreMatrix sm = sampling_scores(am, SamplingStrategy::kTopK);
    sm.s = sm.p;
    IndexMatrix expect = topk_rows(sm, 4, false);
    CHECK(heads[0].idx == expect.idx);
  }
  SUBCASE("sampled strategies differentiate heads") {
    auto heads = build_head_indices(am, SamplingStrategy::kSquaredInvLog, 4, 8,
                                    false, 5, 6, 7, 0);
    bool any_differ = false;
    for (int hd = 1; hd < 8; ++hd)
      any_differ = any_differ || heads[static_cast<size_t>(hd)].idx != heads[0].idx;
    CHECK(any_differ);
  }
}

TEST_CASE("head overlap stays below K and matches the inclusion oracle") {
  // Monte Carlo oracle: estimate per-column inclusion probabilities, then
  // expected |S_a ∩ S_b| for independent heads is sum_j q_j^2 per row.
  const int n = 64, k = 8, heads = 8;
  AttentionMatrix am = random_attention(n, n, 1212, 3.0);
  ScoreMatrix base = sampling_scores(am, SamplingStrategy::kSquaredInvLog);

  const int oracle_trials = 4000;
  std::vector<double> q(static_cast<size_t>(n) * n, 0.0);
  for (int t = 0; t < oracle_trials; ++t) {
    ScoreMatrix sm = base;
    SplitMix64 rng(stream_seed(31, t));
    draw_scores(sm, rng);
    IndexMatrix im = topk_rows(sm, k, false);
    for (int i = 0; i < n; ++i)
      for (int slot = 0; slot < im.slot_count[static_cast<size_t>(i)]; ++slot)
        q[static_cast<size_t>(i) * n + im.at(i, slot)] += 1.0;
  }
  for (double& x : q) x /= oracle_trials;
  double expected_overlap = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j)
      row += q[static_cast<size_t>(i) * n + j] * q[static_cast<size_t>(i) * n + j];
    expected_overlap += row;
  }
  expected_overlap /= n;

  double total_overlap = 0.0;
  int64_t pairs = 0;
  for (int seed = 0; seed < 100; ++seed) {
    auto hs = build_head_indices(am, SamplingStrategy::kSquaredInvLog, k,
                                 heads, false, stream_seed(99, seed), seed, 0,
                                 0);
    for (int a = 0; a < heads; ++a) {
      for (int b = a + 1; b < heads; ++b) {
        for (int i = 0; i < n; ++i) {
          std::set<int> sa, sb;
          for (int slot = 0; slot < k; ++slot) {
            sa.insert(hs[static_cast<size_t>(a)].at(i, slot));
            sb.insert(hs[static_cast<size_t>(b)].at(i, slot));
          }
          std::vector<int> inter;
          std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                                std::back_inserter(inter));
          total_overlap += static_cast<double>(inter.size());
          ++pairs;
        }
      }
    }
  }
  const double mean_overlap = total_overlap / static_cast<double>(pairs) ;
  // heads differ: mean shared indices strictly below K
  CHECK(mean_overlap < k);
  CHECK(mean_overlap == doctest::Approx(expected_overlap).epsilon(0.05));
}

TEST_CASE("constant-alpha rows select each column with frequency K/valid_len") {
  const int n = 16, k = 4;
  AttentionMatrix am = uniform_attention(n, n);
  const int trials = 10000;
  std::vector<int> hits(static_cast<size_t>(n), 0);
  ScoreMatrix base = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
  for (int t = 0; t < trials; ++t) {
    ScoreMatrix sm = base;
    SplitMix64 rng(stream_seed(500, t));
    draw_scores(sm, rng);
    IndexMatrix im = topk_rows(sm, k, false);
    for (int slot = 0; slot < k; ++slot) ++hits[static_cast<size_t>(im.at(0, slot))];
  }
  const double expect = static_cast<double>(k) / n;
  const double sigma = std::sqrt(expect * (1 - expect) / trials);
  for (int j = 0; j < n; ++j) {
    const double freq = static_cast<double>(hits[static_cast<size_t>(j)]) / trials;
    CHECK(std::fabs(freq - expect) <= 3.0 * sigma);
  }
}

TEST_CASE("raising alpha never decreases inclusion probability") {
  // One-sided Monte Carlo comparison at 95% confidence, 1e4 trials per arm.
  const int n = 16, k = 4, trials = 10000;
  AttentionMatrix low = random_attention(n, n, 888);
  AttentionMatrix high = low;
  const int target = 5;
  // raise alpha[0][target], renormalизing the rest of the row
  const double bump = 3.0;
  double denom = 0.0;
  for (int j = 0; j < n; ++j)
    denom += low.at(0, j) * (j == target ? bump : 1.0);
  for (int j = 0; j < n; ++j)
    high.at(0, j) = low.at(0, j) * (j == target ? bump : 1.0) / denom;

  auto inclusion_rate = [&](const AttentionMatrix& am, uint64_t seed_base) {
    ScoreMatrix base = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
    int hits = 0;
    for (int t = 0; t < trials; ++t) {
      ScoreMatrix sm = base;
      SplitMix64 rng(stream_seed(seed_base, t));
      draw_scores(sm, rng);
      IndexMatrix im = topk_rows(sm, k, false);
      for (int slot = 0; slot < k; ++slot)
        if (im.at(0, slot) == target) {
          ++hits;
          break;
        }
    }
    return static_cast<double>(hits) / trials;
  };
  const double p_low = inclusion_rate(low, 1000);
  const double p_high = inclusion_rate(high, 2000);
  const double se = std::sqrt(p_low * (1 - p_low) / trials +
                              p_high * (1 - p_high) / trials);
  CHECK(p_high >= p_low - 1.645 * se);
}
