#include "smartbird/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace smartbird {

// ---------------------------------------------------------------------------
// FLOP model
// ---------------------------------------------------------------------------

std::string FlopReport::constants_note() {
  return "per-layer MACs: dense=2*N^2*D+4*N*D^2, "
         "smart=2*N^2*d+4*N*d^2+N^2+2*N*K*D+4*N*D^2; "
         "dominant terms N^2*d, N*K*D, N^2*D";
}

FlopReport flops_model(int n, int d, int big_d, int k, int h, int layers) {
  FlopReport r;
  r.n = n;
  r.d = d;
  r.D = big_d;
  r.k = k;
  r.h = h;
  r.layers = layers;
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t ud = static_cast<uint64_t>(d);
  const uint64_t uD = static_cast<uint64_t>(big_d);
  const uint64_t uk = static_cast<uint64_t>(k);
  r.sketch_macs = 2 * un * un * ud + 4 * un * ud * ud;
  r.sampling_ops = un * un;
  r.sparse_macs = 2 * un * uk * uD + 4 * un * uD * uD;
  r.dense_macs = 2 * un * un * uD + 4 * un * uD * uD;
  r.dominant_sketch = un * un * ud;
  r.dominant_sparse = un * uk * uD;
  r.dominant_dense = un * un * uD;
  return r;
}

FlopReport flops_model(const ModelConfig& cfg) {
  return flops_model(cfg.N, cfg.d, cfg.D, cfg.K, cfg.h, cfg.layers);
}

uint64_t flops_total(const ModelConfig& cfg, const std::string& which) {
  FlopReport r = flops_model(cfg);
  if (which == "smart") return r.smart_total();
  if (which == "dense") return r.dense_total();
  throw std::invalid_argument("flops_total: which must be smart|dense");
}

CsvTable flops_csv(const ModelConfig& cfg) {
  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) +
           ",\"constants\":\"" + FlopReport::constants_note() + "\"}";
  t.columns = {"N",    "d",    "D",    "K",           "h",
               "layers", "sketch_macs", "sampling_ops", "sparse_macs",
               "dense_macs", "smart_total", "dense_total",
               "dominant_sketch", "dominant_sparse", "dominant_dense"};
  for (int n : cfg.bench_grid) {
    FlopReport r = flops_model(n, cfg.d, cfg.D, cfg.K, cfg.h, cfg.layers);
    t.add_row({std::to_string(r.n), std::to_string(r.d), std::to_string(r.D),
               std::to_string(r.k), std::to_string(r.h),
               std::to_string(r.layers), fmt_u64(r.sketch_macs),
               fmt_u64(r.sampling_ops), fmt_u64(r.sparse_macs),
               fmt_u64(r.dense_macs), fmt_u64(r.smart_total()),
               fmt_u64(r.dense_total()), fmt_u64(r.dominant_sketch),
               fmt_u64(r.dominant_sparse), fmt_u64(r.dominant_dense)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Crossover benchmark
// ---------------------------------------------------------------------------

double loglog_slope(const std::vector<double>& x,
                    const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("loglog_slope needs >= 2 points");
  const size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

template <typename Fn>
double time_median_ms(int reps, Fn&& fn) {
  std::vector<double> times;
  times.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

Example full_length_example(int n, int vocab_size, SplitMix64& rng) {
  Example ex;
  ex.attn_len = n;
  ex.label = 0;
  ex.token_ids.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    ex.token_ids[static_cast<size_t>(i)] =
        rng.uniform_int(Vocab::kNumSpecial, vocab_size - 1);
  return ex;
}

}  // namespace

CrossoverReport measured_crossover(const ModelConfig& cfg) {
  // Timing contract: single thread, frozen sketch inference (the phase-2
  // configuration), dense and sparse layers timed forward+backward.
  const int saved_threads = compute_threads();
  set_compute_threads(1);
  CrossoverReport report;
  SplitMix64 rng(stream_seed(cfg.seed_init, 0xbe7cull));
  const int vocab = 64;

  for (int n : cfg.bench_grid) {
    CrossoverRow row;
    row.n = n;
    Example ex = full_length_example(n, vocab, rng);

    AttnLayerParams layer = make_attn_layer(cfg.D, cfg.h, rng);
    Tensor x_leaf = Tensor::rand_uniform({n, cfg.D}, -0.5f, 0.5f, rng, true);

    row.ms_dense_layer = time_median_ms(cfg.bench_reps, [&]() {
      Tape tape;
      TapeScope scope(tape);
      Tensor out = dense_layer_forward(x_leaf, layer, n, 0.0, nullptr, false,
                                       nullptr);
      tape.backward(sum(out));
      zero_grads(std::span<Tensor>(&x_leaf, 1));
    });

    // Attention core: scores, masked softmax, apply — the N^2 part.
    {
      const int dh = cfg.D / cfg.h;
      std::vector<Tensor> q, k, v;
      for (int hd = 0; hd < cfg.h; ++hd) {
        q.push_back(Tensor::rand_uniform({n, dh}, -0.5f, 0.5f, rng, true));
        k.push_back(Tensor::rand_uniform({n, dh}, -0.5f, 0.5f, rng, true));
        v.push_back(Tensor::rand_uniform({n, dh}, -0.5f, 0.5f, rng, true));
      }
      const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
      row.ms_dense_attn = time_median_ms(cfg.bench_reps, [&]() {
        Tape tape;
        TapeScope scope(tape);
        std::vector<Tensor> outs;
        for (int hd = 0; hd < cfg.h; ++hd) {
          Tensor s = scale(matmul_nt(q[static_cast<size_t>(hd)],
                                     k[static_cast<size_t>(hd)]),
                           sc);
          Tensor a = masked_softmax_rows(s, n, n);
          outs.push_back(matmul(a, v[static_cast<size_t>(hd)]));
        }
        tape.backward(sum(concat_cols(outs)));
        for (int hd = 0; hd < cfg.h; ++hd) {
          q[static_cast<size_t>(hd)].zero_grad();
          k[static_cast<size_t>(hd)].zero_grad();
          v[static_cast<size_t>(hd)].zero_grad();
        }
      });
    }

    // Frozen tiny transformer forward, including the attention export.
    SketchModel sketch = make_sketch_model(vocab, cfg.d, 1, cfg.n_classes,
                                           n, cfg.use_positional,
                                           stream_seed(cfg.seed_init, n));
    sketch.frozen = true;
    std::vector<AttentionMatrix> attn;
    row.ms_sketch = time_median_ms(cfg.bench_reps, [&]() {
      NoGradScope ng;
      SketchForwardResult f =
          sketch_forward(sketch, ex, false, 0.0, nullptr, true);
      attn = std::move(f.attn);
    });

    const SamplingStrategy strategy = parse_strategy(cfg.strategy);
    std::vector<IndexMatrix> indices;
    row.ms_sample = time_median_ms(cfg.bench_reps, [&]() {
      indices = build_head_indices(attn[0], strategy, cfg.K, cfg.h,
                                   cfg.include_self, cfg.seed_sampling,
                                   static_cast<uint64_t>(n), 1, 0);
    });

    row.ms_sparse_layer = time_median_ms(cfg.bench_reps, [&]() {
      Tape tape;
      TapeScope scope(tape);
      Tensor out = sparse_layer_forward(x_leaf, indices, layer, n, 0.0,
                                        nullptr, false);
      tape.backward(sum(out));
      zero_grads(std::span<Tensor>(&x_leaf, 1));
    });

    report.rows.push_back(row);
  }
  set_compute_threads(saved_threads);

  std::vector<double> ns, dense_attn, dense_layer, sparse_layer;
  for (const CrossoverRow& r : report.rows) {
    ns.push_back(r.n);
    dense_attn.push_back(r.ms_dense_attn);
    dense_layer.push_back(r.ms_dense_layer);
    sparse_layer.push_back(r.ms_sparse_layer);
    if (report.crossover_n < 0 && r.ms_smart_total() < r.ms_dense_layer)
      report.crossover_n = r.n;
  }
  if (ns.size() >= 2) {
    report.dense_attn_slope = loglog_slope(ns, dense_attn);
    report.dense_layer_slope = loglog_slope(ns, dense_layer);
    report.sparse_layer_slope = loglog_slope(ns, sparse_layer);
  }
  return report;
}

CsvTable crossover_csv(const CrossoverReport& report, const ModelConfig& cfg) {
  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) +
           ",\"crossover_n\":" + std::to_string(report.crossover_n) +
           ",\"dense_attn_slope\":" + fmt_general(report.dense_attn_slope) +
           ",\"dense_layer_slope\":" + fmt_general(report.dense_layer_slope) +
           ",\"sparse_layer_slope\":" + fmt_general(report.sparse_layer_slope) +
           "}";
  t.columns = {"N",         "ms_dense_layer", "ms_dense_attn", "ms_sketch",
               "ms_sample", "ms_sparse_layer", "ms_smart_total"};
  for (const CrossoverRow& r : report.rows) {
    t.add_row({std::to_string(r.n), fmt_fixed(r.ms_dense_layer, 3),
               fmt_fixed(r.ms_dense_attn, 3), fmt_fixed(r.ms_sketch, 3),
               fmt_fixed(r.ms_sample, 3), fmt_fixed(r.ms_sparse_layer, 3),
               fmt_fixed(r.ms_smart_total(), 3)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

std::optional<double> pearson(const AttentionMatrix& a,
                              const AttentionMatrix& b) {
  if (a.n != b.n || a.valid_len != b.valid_len)
    throw std::invalid_argument("pearson: mismatched attention matrices");
  const int v = a.valid_len;
  if (v < 2) throw std::invalid_argument("pearson: needs valid_len >= 2");
  const int64_t count = static_cast<int64_t>(v) * v;
  double ma = 0.0, mb = 0.0;
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j) {
      ma += a.at(i, j);
      mb += b.at(i, j);
    }
  ma /= static_cast<double>(count);
  mb /= static_cast<double>(count);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j) {
      const double da = a.at(i, j) - ma;
      const double db = b.at(i, j) - mb;
      saa += da * da;
      sbb += db * db;
      sab += da * db;
    }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Correlation study
// ---------------------------------------------------------------------------

namespace {

AttentionMatrix head_average(const std::vector<AttentionMatrix>& heads) {
  AttentionMatrix avg = heads.at(0);
  for (size_t hd = 1; hd < heads.size(); ++hd)
    for (size_t i = 0; i < avg.a.size(); ++i) avg.a[i] += heads[hd].a[i];
  for (double& x : avg.a) x /= static_cast<double>(heads.size());
  return avg;
}

// Null control: permute rows and columns independently inside the valid
// block. Trained attention is strongly column-structured (whole columns light
// up at informative tokens), so a row-only shuffle is nearly a no-op on it;
// destroying both axes is what makes the control carry no alignment.
AttentionMatrix shuffle_control(const AttentionMatrix& m, SplitMix64& rng) {
  AttentionMatrix out = m;
  std::vector<int> row_perm(static_cast<size_t>(m.valid_len));
  std::vector<int> col_perm(static_cast<size_t>(m.valid_len));
  std::iota(row_perm.begin(), row_perm.end(), 0);
  std::iota(col_perm.begin(), col_perm.end(), 0);
  rng.shuffle(row_perm);
  rng.shuffle(col_perm);
  for (int i = 0; i < m.valid_len; ++i)
    for (int j = 0; j < m.valid_len; ++j)
      out.at(i, j) = m.at(row_perm[static_cast<size_t>(i)],
                          col_perm[static_cast<size_t>(j)]);
  return out;
}

struct Welford {
  int64_t n = 0;
  double mean = 0.0, m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / (n - 1)) : 0.0; }
};

}  // namespace

CorrelationReport correlation_study(const ModelConfig& cfg, int n_seeds,
                                    bool with_seed_pair_control) {
  CorrelationReport rep;
  Welford main_w, shuf_w, pair_w;
  std::vector<Welford> layer_w(static_cast<size_t>(cfg.layers));
  std::vector<Welford> layer_shuf_w(static_cast<size_t>(cfg.layers));

  for (int s = 0; s < n_seeds; ++s) {
    ModelConfig run = cfg;
    run.seed_init = stream_seed(cfg.seed_init, static_cast<uint64_t>(s), 11);
    run.seed_data = stream_seed(cfg.seed_data, static_cast<uint64_t>(s), 12);
    SplitDataset data = load_task_data(run);
    EmbeddingTable emb = build_embeddings(data.vocab, run.D, run.d,
                                          run.seed_init, run.embedding_file);

    SketchModel sketch = train_sketch(data.train, data.test, run, emb, nullptr);
    DenseModel dense = train_dense_baseline(data.train, data.test, run, emb,
                                            nullptr);
    DenseModel dense2;
    if (with_seed_pair_control) {
      ModelConfig run2 = run;
      run2.seed_init = stream_seed(run.seed_init, 0x2ull, 13);
      dense2 = train_dense_baseline(data.train, data.test, run2, emb, nullptr);
    }

    SplitMix64 shuffle_rng(stream_seed(cfg.eval_seed, static_cast<uint64_t>(s)));
    const int limit =
        std::min<int>(run.study_examples,
                      static_cast<int>(data.test.examples.size()));
    NoGradScope ng;
    for (int e = 0; e < limit; ++e) {
      const Example& ex = data.test.examples[static_cast<size_t>(e)];
      if (ex.attn_len < 2) continue;
      SketchForwardResult sf =
          sketch_forward(sketch, ex, false, 0.0, nullptr, true);
      std::vector<std::vector<AttentionMatrix>> dense_attn;
      dense_forward_logits(dense, ex, false, 0.0, nullptr, &dense_attn);
      std::vector<std::vector<AttentionMatrix>> dense2_attn;
      if (with_seed_pair_control)
        dense_forward_logits(dense2, ex, false, 0.0, nullptr, &dense2_attn);

      for (size_t l = 0; l < sf.attn.size(); ++l) {
        AttentionMatrix avg = head_average(dense_attn[l]);
        const auto r_main = pearson(sf.attn[l], avg);
        if (r_main) {
          layer_w[l].add(*r_main);
          if (l == 0) main_w.add(*r_main);
        } else {
          ++rep.undefined_dropped;
        }
        AttentionMatrix shuffled = shuffle_control(avg, shuffle_rng);
        if (auto r = pearson(sf.attn[l], shuffled)) {
          layer_shuf_w[l].add(*r);
          if (l == 0) shuf_w.add(*r);
        }
        if (with_seed_pair_control) {
          AttentionMatrix avg2 = head_average(dense2_attn[l]);
          if (l == 0)
            if (auto r = pearson(avg, avg2)) pair_w.add(*r);
        }
      }
      ++rep.examples_used;
    }
  }

  rep.mean_r = main_w.mean;
  rep.std_r = main_w.stddev();
  rep.shuffled_mean_r = shuf_w.mean;
  rep.has_seed_pair = with_seed_pair_control;
  rep.seed_pair_mean_r = pair_w.mean;
  for (const Welford& w : layer_w) rep.layer_mean_r.push_back(w.mean);
  for (const Welford& w : layer_shuf_w)
    rep.layer_shuffled_mean_r.push_back(w.mean);
  return rep;
}

CsvTable correlation_csv(const CorrelationReport& r, const ModelConfig& cfg) {
  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) +
           ",\"protocol\":\"first-layer head-averaged comparison; per-layer "
           "rows below\"}";
  t.columns = {"layer", "examples", "undefined_dropped", "mean_r", "std_r",
               "shuffled_mean_r", "seed_pair_mean_r"};
  t.add_row({"0", std::to_string(r.examples_used),
             std::to_string(r.undefined_dropped), fmt_fixed(r.mean_r, 6),
             fmt_fixed(r.std_r, 6), fmt_fixed(r.shuffled_mean_r, 6),
             r.has_seed_pair ? fmt_fixed(r.seed_pair_mean_r, 6) : "n/a"});
  for (size_t l = 1; l < r.layer_mean_r.size(); ++l) {
    t.add_row({std::to_string(l), std::to_string(r.examples_used), "0",
               fmt_fixed(r.layer_mean_r[l], 6), "n/a",
               fmt_fixed(r.layer_shuffled_mean_r[l], 6), "n/a"});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

namespace {

SeriesStats make_series(const std::string& name, std::vector<double> values,
                        int n_bins) {
  SeriesStats s;
  s.name = name;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.median = values[values.size() / 2];
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  var /= static_cast<double>(values.size());
  s.cv = (s.mean != 0.0) ? std::sqrt(var) / s.mean : 0.0;

  const double lo = std::max(values.front(), 1e-300);
  const double hi = std::max(values.back(), lo * (1.0 + 1e-12));
  if (values.front() == values.back()) {
    // Degenerate constant series: one bin holds everything.
    s.bin_lo = {values.front()};
    s.bin_hi = {values.back()};
    s.counts = {values.size()};
    return s;
  }
  const double llo = std::log(lo), lhi = std::log(hi);
  s.bin_lo.resize(static_cast<size_t>(n_bins));
  s.bin_hi.resize(static_cast<size_t>(n_bins));
  s.counts.assign(static_cast<size_t>(n_bins), 0);
  for (int b = 0; b < n_bins; ++b) {
    s.bin_lo[static_cast<size_t>(b)] =
        std::exp(llo + (lhi - llo) * b / n_bins);
    s.bin_hi[static_cast<size_t>(b)] =
        std::exp(llo + (lhi - llo) * (b + 1) / n_bins);
  }
  for (double v : values) {
    const double lv = std::log(std::max(v, 1e-300));
    int b = static_cast<int>((lv - llo) / (lhi - llo) * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    ++s.counts[static_cast<size_t>(b)];
  }
  return s;
}

}  // namespace

HistogramReport score_histogram(const std::vector<AttentionMatrix>& batch,
                                int n_bins) {
  if (batch.empty())
    throw std::invalid_argument("score_histogram: empty batch");
  std::vector<double> alpha, p_inv, p_sq;
  for (const AttentionMatrix& am : batch) {
    ScoreMatrix inv = sampling_scores(am, SamplingStrategy::kInvLog);
    ScoreMatrix sq = sampling_scores(am, SamplingStrategy::kSquaredInvLog);
    for (int i = 0; i < am.valid_len; ++i)
      for (int j = 0; j < am.valid_len; ++j) {
        alpha.push_back(am.at(i, j));
        p_inv.push_back(inv.p_at(i, j));
        p_sq.push_back(sq.p_at(i, j));
      }
  }
  HistogramReport r;
  r.alpha = make_series("alpha", std::move(alpha), n_bins);
  r.p_inv_log = make_series("p_inv_log", std::move(p_inv), n_bins);
  r.p_sq_inv_log = make_series("p_squared_inv_log", std::move(p_sq), n_bins);
  return r;
}

HistogramReport score_histogram_study(const ModelConfig& cfg) {
  SplitDataset data = load_task_data(cfg);
  EmbeddingTable emb = build_embeddings(data.vocab, cfg.D, cfg.d,
                                        cfg.seed_init, cfg.embedding_file);
  SketchModel sketch = train_sketch(data.train, data.test, cfg, emb, nullptr);
  NoGradScope ng;
  std::vector<AttentionMatrix> batch;
  const int limit = std::min<int>(cfg.study_examples,
                                  static_cast<int>(data.test.examples.size()));
  for (int e = 0; e < limit; ++e) {
    SketchForwardResult f = sketch_forward(
        sketch, data.test.examples[static_cast<size_t>(e)], false, 0.0,
        nullptr, true);
    for (AttentionMatrix& am : f.attn) batch.push_back(std::move(am));
  }
  return score_histogram(batch);
}

CsvTable histogram_csv(const HistogramReport& r, const ModelConfig& cfg) {
  CsvTable t;
  auto stats_json = [](const SeriesStats& s) {
    return std::string("{\"mean\":") + fmt_general(s.mean) +
           ",\"median\":" + fmt_general(s.median) +
           ",\"cv\":" + fmt_general(s.cv) + "}";
  };
  t.meta = std::string("{\"config\":") + config_to_json(cfg) +
           ",\"alpha\":" + stats_json(r.alpha) +
           ",\"p_inv_log\":" + stats_json(r.p_inv_log) +
           ",\"p_squared_inv_log\":" + stats_json(r.p_sq_inv_log) + "}";
  t.columns = {"series", "bin_lo", "bin_hi", "count"};
  for (const SeriesStats* s : {&r.alpha, &r.p_inv_log, &r.p_sq_inv_log}) {
    for (size_t b = 0; b < s->counts.size(); ++b) {
      t.add_row({s->name, fmt_general(s->bin_lo[b]), fmt_general(s->bin_hi[b]),
                 fmt_u64(s->counts[b])});
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Ablation and K sweep
// ---------------------------------------------------------------------------

namespace {

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double m2 = 0.0;
    for (double x : v) m2 += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(m2 / static_cast<double>(v.size() - 1));
  }
  return r;
}

// One smart training run; returns final test accuracy and macro-F.
std::pair<double, double> smart_run(const ModelConfig& cfg) {
  SplitDataset data = load_task_data(cfg);
  EmbeddingTable emb = build_embeddings(data.vocab, cfg.D, cfg.d,
                                        cfg.seed_init, cfg.embedding_file);
  auto sketch = std::make_shared<SketchModel>(
      train_sketch(data.train, data.test, cfg, emb, nullptr));
  RunMetrics metrics;
  train_smartbird(data.train, data.test, cfg, emb, sketch, &metrics);
  return {metrics.final_accuracy, metrics.final_macro_f};
}

}  // namespace

std::vector<AblationRow> ablation_run(const ModelConfig& cfg, int n_seeds) {
  std::vector<AblationRow> rows;
  for (SamplingStrategy strat : all_strategies()) {
    std::vector<double> accs, fs;
    for (int s = 0; s < n_seeds; ++s) {
      ModelConfig run = cfg;
      run.strategy = strategy_name(strat);
      run.seed_init = stream_seed(cfg.seed_init, static_cast<uint64_t>(s), 21);
      run.seed_sampling =
          stream_seed(cfg.seed_sampling, static_cast<uint64_t>(s), 22);
      auto [acc, f] = smart_run(run);
      accs.push_back(acc);
      fs.push_back(f);
    }
    AblationRow row;
    row.strategy = strategy_name(strat);
    MeanStd a = mean_std(accs), f = mean_std(fs);
    row.acc_mean = a.mean;
    row.acc_std = a.stddev;
    row.f_mean = f.mean;
    row.f_std = f.stddev;
    rows.push_back(std::move(row));
  }
  return rows;
}

CsvTable ablation_csv(const std::vector<AblationRow>& rows,
                      const ModelConfig& cfg) {
  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) + "}";
  t.columns = {"strategy", "acc_mean", "acc_std", "macro_f_mean",
               "macro_f_std"};
  for (const AblationRow& r : rows)
    t.add_row({r.strategy, fmt_fixed(r.acc_mean, 6), fmt_fixed(r.acc_std, 6),
               fmt_fixed(r.f_mean, 6), fmt_fixed(r.f_std, 6)});
  return t;
}

std::vector<KSweepRow> k_sweep(const ModelConfig& cfg, int n_seeds) {
  std::vector<KSweepRow> rows;
  for (int k : cfg.k_grid) {
    std::vector<double> accs, fs;
    for (int s = 0; s < n_seeds; ++s) {
      ModelConfig run = cfg;
      run.K = k;
      run.seed_init = stream_seed(cfg.seed_init, static_cast<uint64_t>(s), 31);
      run.seed_sampling =
          stream_seed(cfg.seed_sampling, static_cast<uint64_t>(s), 32);
      auto [acc, f] = smart_run(run);
      accs.push_back(acc);
      fs.push_back(f);
    }
    KSweepRow row;
    row.k = k;
    MeanStd a = mean_std(accs), f = mean_std(fs);
    row.acc_mean = a.mean;
    row.acc_std = a.stddev;
    row.f_mean = f.mean;
    row.f_std = f.stddev;
    ModelConfig fc = cfg;
    fc.K = k;
    row.smart_flops = flops_model(fc).smart_total();
    rows.push_back(row);
  }
  return rows;
}

CsvTable k_sweep_csv(const std::vector<KSweepRow>& rows,
                     const ModelConfig& cfg) {
  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) + "}";
  t.columns = {"K", "acc_mean", "acc_std", "macro_f_mean", "macro_f_std",
               "smart_flops"};
  for (const KSweepRow& r : rows)
    t.add_row({std::to_string(r.k), fmt_fixed(r.acc_mean, 6),
               fmt_fixed(r.acc_std, 6), fmt_fixed(r.f_mean, 6),
               fmt_fixed(r.f_std, 6), fmt_u64(r.smart_flops)});
  return t;
}

}  // namespace smartbird
