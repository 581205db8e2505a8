#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "smartbird/sketch.hpp"
#include "smartbird/sparse_attn.hpp"

namespace smartbird {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Training produced a non-finite loss. The CLI maps this to exit code 3.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat hyperparameter set, mirrored one-to-one by the JSON config keys.
struct ModelConfig {
  std::string task = "synth";   // synth | corpus
  std::string model = "smart";  // smart | dense

  int d = 4;        // tiny transformer dim
  int D = 256;      // sparse/dense model dim
  int h = 8;        // attention heads
  int K = 20;       // attended tokens per query
  int layers = 2;   // L, shared by tiny and big models
  int N = 512;      // truncation length

  int vocab_size = 64;  // synth task vocab (ids, incl. PAD/UNK)
  int min_freq = 1;
  int n_classes = 4;
  int n_train = 2000;
  int n_test = 500;
  int pair_gap = 16;

  std::string strategy = "squared_inv_log";
  double lr = 1e-4;
  int batch_size = 64;
  int epochs = 2;
  // Phase-1 epoch count; 0 means "same as epochs". The tiny model costs a
  // small fraction of a sparse step, so giving it a longer schedule is cheap.
  int sketch_epochs = 0;
  double dropout = 0.2;
  double grad_clip = 1.0;

  uint64_t seed_init = 1;
  uint64_t seed_sampling = 2;
  uint64_t seed_data = 3;
  uint64_t eval_seed = 4;

  int threads = 1;
  bool include_self = false;
  bool use_positional = true;
  bool record_timing = false;
  int log_every = 10;

  std::string out_dir = "out";
  std::string train_file;      // corpus task
  std::string test_file;
  std::string embedding_file;  // optional pretrained vectors

  std::vector<int> bench_grid = {128, 256, 512, 1024, 2048};
  int bench_reps = 3;
  std::vector<int> k_grid = {1, 4, 8, 20, 32, 64};
  int study_seeds = 5;
  int study_examples = 100;  // evaluation examples for correlation/histogram

  void validate() const;  // throws ConfigError
};

// JSON round trip. Unknown keys are rejected; flags in `overrides` win.
ModelConfig config_from_json(const std::string& json_text);
ModelConfig load_config(const std::string& path);
std::string config_to_json(const ModelConfig& cfg);  // sorted keys

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string phase;
  int epoch = 0;
  int step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f = 0.0;
  double ms_per_iter = 0.0;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double final_macro_f = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f = 0.0;
  std::vector<int> predictions;
};

// Unweighted mean of per-class F1; a class with no predicted and no true
// positives contributes F1 = 0.
double macro_f_score(const std::vector<int>& predictions,
                     const std::vector<int>& truth, int n_classes);

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

struct DenseModel {
  int dim = 0, heads = 0, n_classes = 0, n_max = 0;
  bool use_positional = true;
  Tensor emb;  // V x D
  Tensor pe;   // n_max x D
  std::vector<AttnLayerParams> layers;
  Tensor pool_p, pool_v;  // D x D, D x 1
  Tensor cls_w, cls_b;

  std::vector<Tensor> params() const;
  NamedParams named_params() const;
};

DenseModel make_dense_model(int vocab_size, int dim, int heads, int n_layers,
                            int n_classes, int n_max, bool use_positional,
                            uint64_t init_seed);

struct SmartModel {
  DenseModel net;
  std::shared_ptr<const SketchModel> sketch;  // frozen guidance model
  SamplingStrategy strategy = SamplingStrategy::kSquaredInvLog;
  int K = 20;
  bool include_self = false;
};

// Sampling stream tags: training draws fresh indices every forward pass,
// evaluation draws once per example from the eval seed.
struct SampleStream {
  uint64_t seed = 0;
  uint64_t example_id = 0;
  uint64_t step_tag = 0;
};

Tensor dense_forward_logits(const DenseModel& m, const Example& ex,
                            bool training, double dropout_rate,
                            SplitMix64* dropout_rng,
                            std::vector<std::vector<AttentionMatrix>>*
                                attn_export);  // [layer][head]

struct SmartForwardResult {
  Tensor logits;
  std::vector<std::vector<IndexMatrix>> indices;  // [layer][head]
};
SmartForwardResult smart_forward_logits(const SmartModel& m, const Example& ex,
                                        const SampleStream& stream,
                                        bool training, double dropout_rate,
                                        SplitMix64* dropout_rng);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Phase 1: trains the tiny model on the task and returns it frozen.
SketchModel train_sketch(const Dataset& train, const Dataset& test,
                         const ModelConfig& cfg, const EmbeddingTable& emb,
                         RunMetrics* metrics);

// Phase 2: trains the sparse model against a frozen sketch; sketch parameters
// receive no gradient.
SmartModel train_smartbird(const Dataset& train, const Dataset& test,
                           const ModelConfig& cfg, const EmbeddingTable& emb,
                           std::shared_ptr<const SketchModel> sketch,
                           RunMetrics* metrics);

DenseModel train_dense_baseline(const Dataset& train, const Dataset& test,
                                const ModelConfig& cfg,
                                const EmbeddingTable& emb,
                                RunMetrics* metrics);

EvalResult evaluate(const SketchModel& m, const Dataset& data);
EvalResult evaluate(const DenseModel& m, const Dataset& data);
EvalResult evaluate(const SmartModel& m, const Dataset& data,
                    uint64_t eval_seed);

// Builds the synthetic train/test split (or loads the corpus files) per cfg.
struct SplitDataset {
  Dataset train;
  Dataset test;
  Vocab vocab;  // identity vocab for synth
};
SplitDataset load_task_data(const ModelConfig& cfg);

// Metrics CSV: phase,epoch,step,loss,accuracy,macro_f,ms_per_iter with the
// config echoed in the metadata header. ms_per_iter is written as 0 unless
// cfg.record_timing is set, keeping default outputs byte-reproducible.
void write_metrics_csv(const std::string& path, const RunMetrics& metrics,
                       const ModelConfig& cfg);
// Measured per-iteration wall clock, always written, never byte-stable.
void write_timing_csv(const std::string& path, const RunMetrics& metrics,
                      const ModelConfig& cfg);

}  // namespace smartbird
