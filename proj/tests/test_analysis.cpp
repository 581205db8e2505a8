#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "smartbird/analysis.hpp"

using namespace smartbird;

namespace {

ModelConfig study_config() {
  ModelConfig cfg;
  cfg.task = "synth";
  cfg.d = 4;
  cfg.D = 16;
  cfg.h = 2;
  cfg.K = 6;
  cfg.layers = 1;
  cfg.N = 24;
  cfg.vocab_size = 24;
  cfg.n_classes = 3;
  cfg.n_train = 300;
  cfg.n_test = 150;
  cfg.pair_gap = 6;
  cfg.lr = 3e-3;
  cfg.batch_size = 25;
  cfg.epochs = 2;
  cfg.dropout = 0.0;
  cfg.seed_init = 5;
  cfg.seed_sampling = 6;
  cfg.seed_data = 7;
  cfg.eval_seed = 8;
  cfg.study_examples = 60;
  cfg.validate();
  return cfg;
}

AttentionMatrix from_rows(std::vector<std::vector<double>> rows) {
  AttentionMatrix am;
  am.n = static_cast<int>(rows.size());
  am.valid_len = am.n;
  for (auto& r : rows)
    for (double v : r) am.a.push_back(v);
  return am;
}

}  // namespace

TEST_CASE("flop model dominant terms at the reference configuration") {
  FlopReport r = flops_model(4096, 4, 256, 20, 8, 2);
  CHECK(r.dominant_sketch == 67108864ull);
  CHECK(r.dominant_sparse == 20971520ull);
  CHECK(r.dominant_dense == 4294967296ull);
  CHECK(r.smart_total() < r.dense_total());
  // per-layer full-constant counts follow the declared formulas
  CHECK(r.sketch_macs == 2ull * 4096 * 4096 * 4 + 4ull * 4096 * 16);
  CHECK(r.sampling_ops == 4096ull * 4096);
  CHECK(r.sparse_macs == 2ull * 4096 * 20 * 256 + 4ull * 4096 * 256 * 256);
  CHECK(r.dense_macs == 2ull * 4096 * 4096 * 256 + 4ull * 4096 * 256 * 256);
}

TEST_CASE("flop model degenerate directions") {
  // d = D and K = N: the smart dominant terms exceed the dense one
  FlopReport deg = flops_model(128, 256, 256, 128, 8, 1);
  CHECK(deg.dominant_sketch + deg.dominant_sparse > deg.dominant_dense);
  // N = 1 stays well formed
  FlopReport one = flops_model(1, 4, 8, 1, 2, 1);
  CHECK(one.dominant_dense == 8);
  CHECK(one.smart_total() > 0);
}

TEST_CASE("smart beats dense exactly when N exceeds K*D/(D-d), attention terms") {
  SplitMix64 rng(404);
  int checked = 0;
  while (checked < 200) {
    const int d = 2 + static_cast<int>(rng.bounded(16));
    const int big_d = d + 1 + static_cast<int>(rng.bounded(512));
    const int k = 1 + static_cast<int>(rng.bounded(64));
    const int n = 1 + static_cast<int>(rng.bounded(8192));
    FlopReport r = flops_model(n, d, big_d, k, 1, 1);
    const double threshold = static_cast<double>(k) * big_d / (big_d - d);
    if (std::fabs(n - threshold) < 1.0) continue;  // boundary, skip
    ++checked;
    const bool smart_cheaper = r.smart_attention_macs() < r.dense_attention_macs();
    CHECK(smart_cheaper == (n > threshold));
  }
}

TEST_CASE("loglog slope recovers power laws") {
  std::vector<double> xs = {128, 256, 512, 1024, 2048};
  std::vector<double> quad, lin;
  for (double x : xs) {
    quad.push_back(3.0 * x * x);
    lin.push_back(0.25 * x);
  }
  CHECK(loglog_slope(xs, quad) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(loglog_slope(xs, lin) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pearson correlation") {
  AttentionMatrix a = from_rows({{0.6, 0.3, 0.1},
                                 {0.2, 0.5, 0.3},
                                 {0.1, 0.2, 0.7}});
  SUBCASE("self correlation is 1") {
    auto r = pearson(a, a);
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("negated matrix gives -1") {
    AttentionMatrix b = a;
    for (double& v : b.a) v = -v + 0.5;
    auto r = pearson(a, b);
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("constant matrix is undefined") {
    AttentionMatrix c = from_rows({{0.5, 0.5, 0.5},
                                   {0.5, 0.5, 0.5},
                                   {0.5, 0.5, 0.5}});
    CHECK_FALSE(pearson(a, c).has_value());
  }
  SUBCASE("symmetry is exact") {
    AttentionMatrix b = from_rows({{0.1, 0.8, 0.1},
                                   {0.3, 0.3, 0.4},
                                   {0.25, 0.5, 0.25}});
    auto r1 = pearson(a, b);
    auto r2 = pearson(b, a);
    REQUIRE(r1.has_value());
    CHECK(*r1 == *r2);
  }
  SUBCASE("valid_len below 2 is rejected") {
    AttentionMatrix tiny = from_rows({{1.0}});
    CHECK_THROWS_AS(pearson(tiny, tiny), std::invalid_argument);
  }
}

TEST_CASE("score histogram statistics") {
  SUBCASE("constant alpha rows give single-bin histograms") {
    AttentionMatrix am;
    am.n = 4;
    am.valid_len = 4;
    am.a.assign(16, 0.25);
    HistogramReport r = score_histogram({am});
    CHECK(r.alpha.counts.size() == 1);
    CHECK(r.alpha.counts[0] == 16);
    CHECK(r.p_inv_log.counts.size() == 1);
  }
  SUBCASE("squared transform has larger CV on a long-tail batch") {
    // softmax-like long-tail alpha profile
    AttentionMatrix am;
    am.n = 32;
    am.valid_len = 32;
    am.a.assign(32 * 32, 0.0);
    SplitMix64 rng(31);
    for (int i = 0; i < 32; ++i) {
      double denom = 0.0;
      std::vector<double> e(32);
      for (double& v : e) {
        v = std::exp(rng.uniform(-4.0, 4.0));
        denom += v;
      }
      for (int j = 0; j < 32; ++j) am.at(i, j) = e[static_cast<size_t>(j)] / denom;
    }
    HistogramReport r = score_histogram({am});
    CHECK(r.alpha.median < r.alpha.mean);  // long tail
    CHECK(r.p_sq_inv_log.cv > r.p_inv_log.cv);
  }
}

TEST_CASE("crossover benchmark emits well-formed rows on a tiny grid") {
  ModelConfig cfg = study_config();
  cfg.bench_grid = {16, 32};
  cfg.bench_reps = 1;
  cfg.D = 16;
  cfg.h = 2;
  CrossoverReport rep = measured_crossover(cfg);
  REQUIRE(rep.rows.size() == 2);
  for (const CrossoverRow& row : rep.rows) {
    CHECK(row.ms_dense_layer > 0.0);
    CHECK(row.ms_dense_attn > 0.0);
    CHECK(row.ms_sketch > 0.0);
    CHECK(row.ms_sample > 0.0);
    CHECK(row.ms_sparse_layer > 0.0);
  }
  CsvTable t = crossover_csv(rep, cfg);
  CHECK(t.rows.size() == 2);
  CHECK(t.columns.size() == 7);
}

TEST_CASE("ablation produces all five strategies with finite metrics") {
  ModelConfig cfg = study_config();
  cfg.n_train = 60;
  cfg.n_test = 45;
  cfg.epochs = 1;
  auto rows = ablation_run(cfg, 1);
  REQUIRE(rows.size() == 5);
  std::set<std::string> names;
  for (const AblationRow& r : rows) {
    names.insert(r.strategy);
    CHECK(std::isfinite(r.acc_mean));
    CHECK(std::isfinite(r.f_mean));
    CHECK(r.acc_mean >= 0.0);
    CHECK(r.acc_mean <= 1.0);
  }
  CHECK(names == std::set<std::string>{"random", "top_k", "raw_weight",
                                       "inv_log", "squared_inv_log"});
}

TEST_CASE("k sweep reports strictly increasing flops and sane accuracy") {
  ModelConfig cfg = study_config();
  cfg.k_grid = {1, 6, 20, 24};
  cfg.n_train = 400;
  cfg.n_test = 300;
  cfg.epochs = 2;
  auto rows = k_sweep(cfg, 2);
  REQUIRE(rows.size() == 4);
  for (size_t i = 0; i + 1 < rows.size(); ++i)
    CHECK(rows[i].smart_flops < rows[i + 1].smart_flops);
  bool has_default_k = false;
  for (const KSweepRow& r : rows) has_default_k = has_default_k || r.k == 20;
  CHECK(has_default_k);
  // attending everything cannot lose to attending a single token (2pt margin)
  CHECK(rows.back().acc_mean >= rows.front().acc_mean - 0.02);
}

TEST_CASE("csv round trip through emit/parse") {
  CsvTable t;
  t.meta = "{\"x\":1}";
  t.columns = {"a", "b"};
  t.add_row({"1", "hello, world"});
  t.add_row({"2", "quote\"inside"});
  CsvTable back = CsvTable::parse(t.emit());
  CHECK(back.meta == t.meta);
  CHECK(back.columns == t.columns);
  CHECK(back.rows == t.rows);
}
