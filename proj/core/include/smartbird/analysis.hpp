#pragma once

#include <optional>
#include <string>
#include <vector>

#include "smartbird/csv.hpp"
#include "smartbird/trainer.hpp"

namespace smartbird {

// ---------------------------------------------------------------------------
// FLOP model. Per-layer multiply-accumulate counts with explicit constants:
//   dense  = 2·N²·D (attention) + 4·N·D² (q/k/v/out projections)
//   smart  = 2·N²·d + 4·N·d² (sketch) + N² (sampling) + 2·N·K·D + 4·N·D²
// Dominant terms are the bare products N²·d, N·K·D and N²·D.
// ---------------------------------------------------------------------------
struct FlopReport {
  int n = 0, d = 0, D = 0, k = 0, h = 0, layers = 0;

  uint64_t sketch_macs = 0;     // per layer: 2N²d + 4Nd²
  uint64_t sampling_ops = 0;    // per layer: N²
  uint64_t sparse_macs = 0;     // per layer: 2NKD + 4ND²
  uint64_t dense_macs = 0;      // per layer: 2N²D + 4ND²

  uint64_t dominant_sketch = 0;  // N²·d
  uint64_t dominant_sparse = 0;  // N·K·D
  uint64_t dominant_dense = 0;   // N²·D

  uint64_t smart_total() const {  // all layers
    return static_cast<uint64_t>(layers) *
           (sketch_macs + sampling_ops + sparse_macs);
  }
  uint64_t dense_total() const {
    return static_cast<uint64_t>(layers) * dense_macs;
  }
  // Attention-only comparison backing the crossover inequality
  // N > K·D/(D−d):  2N²d + 2NKD  <  2N²D.
  uint64_t smart_attention_macs() const {
    return 2ull * n * n * d + 2ull * n * k * D;
  }
  uint64_t dense_attention_macs() const { return 2ull * n * n * D; }

  static std::string constants_note();
};

FlopReport flops_model(const ModelConfig& cfg);
FlopReport flops_model(int n, int d, int big_d, int k, int h, int layers);
// Full-constant total for one side, which = "smart" | "dense".
uint64_t flops_total(const ModelConfig& cfg, const std::string& which);

CsvTable flops_csv(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Wall-clock crossover benchmark
// ---------------------------------------------------------------------------
struct CrossoverRow {
  int n = 0;
  double ms_dense_layer = 0.0;  // dense layer forward+backward
  double ms_dense_attn = 0.0;   // attention core only (scores/softmax/apply)
  double ms_sketch = 0.0;       // frozen tiny forward incl. attention export
  double ms_sample = 0.0;       // score transform + draws + top-k, all heads
  double ms_sparse_layer = 0.0; // sparse layer forward+backward
  double ms_smart_total() const {
    return ms_sketch + ms_sample + ms_sparse_layer;
  }
};

struct CrossoverReport {
  std::vector<CrossoverRow> rows;
  int crossover_n = -1;  // smallest grid N where the smart stack is faster
  double dense_attn_slope = 0.0;    // log-log slope of ms_dense_attn vs N
  double dense_layer_slope = 0.0;
  double sparse_layer_slope = 0.0;
};

// Median-of-reps timing over cfg.bench_grid at fixed K; pinned to one thread.
CrossoverReport measured_crossover(const ModelConfig& cfg);
CsvTable crossover_csv(const CrossoverReport& report, const ModelConfig& cfg);

// Least-squares slope of ln(y) against ln(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Attention-correlation study
// ---------------------------------------------------------------------------

// Pearson r over the valid_len x valid_len top-left blocks; nullopt when
// either block has zero variance.
std::optional<double> pearson(const AttentionMatrix& a,
                              const AttentionMatrix& b);

struct CorrelationReport {
  int examples_used = 0;
  int undefined_dropped = 0;
  // Headline protocol: first-layer matrices, where attention carries its
  // token-identity structure (deeper layers sit on mixed representations and
  // are near-uniform in both models). Per-layer means are reported alongside.
  double mean_r = 0.0;          // sketch vs head-averaged dense, layer 0
  double std_r = 0.0;
  double shuffled_mean_r = 0.0; // shuffle control, layer 0
  double seed_pair_mean_r = 0.0;  // two dense models, different seeds
  bool has_seed_pair = false;
  std::vector<double> layer_mean_r;           // one entry per layer
  std::vector<double> layer_shuffled_mean_r;
};

// Trains a tiny sketch (cfg.d) and a dense model (cfg.D) per seed on the
// synthetic task, then correlates their per-example attention. The dense side
// is head-averaged per layer. with_seed_pair_control adds a second dense
// model trained from a shifted seed.
CorrelationReport correlation_study(const ModelConfig& cfg, int n_seeds,
                                    bool with_seed_pair_control);
CsvTable correlation_csv(const CorrelationReport& r, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Score distribution histograms (raw weights vs sampling scores)
// ---------------------------------------------------------------------------
struct SeriesStats {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double cv = 0.0;  // coefficient of variation
  std::vector<double> bin_lo, bin_hi;
  std::vector<uint64_t> counts;
};

struct HistogramReport {
  SeriesStats alpha;       // raw attention weights over valid entries
  SeriesStats p_inv_log;
  SeriesStats p_sq_inv_log;
};

HistogramReport score_histogram(const std::vector<AttentionMatrix>& batch,
                                int n_bins = 48);
CsvTable histogram_csv(const HistogramReport& r, const ModelConfig& cfg);

// Trains a sketch model per cfg and histograms its attention over
// cfg.study_examples test examples.
HistogramReport score_histogram_study(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Ablation and K sweep
// ---------------------------------------------------------------------------
struct AblationRow {
  std::string strategy;
  double acc_mean = 0.0, acc_std = 0.0;
  double f_mean = 0.0, f_std = 0.0;
};
std::vector<AblationRow> ablation_run(const ModelConfig& cfg, int n_seeds);
CsvTable ablation_csv(const std::vector<AblationRow>& rows,
                      const ModelConfig& cfg);

struct KSweepRow {
  int k = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double f_mean = 0.0, f_std = 0.0;
  uint64_t smart_flops = 0;
};
std::vector<KSweepRow> k_sweep(const ModelConfig& cfg, int n_seeds);
CsvTable k_sweep_csv(const std::vector<KSweepRow>& rows,
                     const ModelConfig& cfg);

}  // namespace smartbird
