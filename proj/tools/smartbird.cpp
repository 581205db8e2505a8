// Command-line front end: train/eval/bench/study/dump-indices subcommands
// over a JSON config. Exit codes: 0 ok, 2 usage/config error, 3 numeric
// failure, 4 artifact mismatch.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "smartbird/analysis.hpp"
#include "smartbird/checkpoint.hpp"
#include "smartbird/trainer.hpp"

namespace fs = std::filesystem;
using namespace smartbird;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitMismatch = 4;

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<uint64_t> eval_seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
  std::optional<std::string> model;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "JSON config file")
      ->required();
  cmd->add_option("--seed", opts.seed,
                  "master seed overriding seed_init/sampling/data/eval");
  cmd->add_option("--eval-seed", opts.eval_seed, "evaluation sampling seed");
  cmd->add_option("--threads", opts.threads, "compute threads (default 1)");
  cmd->add_option("--out-dir", opts.out_dir, "output directory override");
  cmd->add_option("--model", opts.model, "model override: smart|dense");
}

ModelConfig resolve_config(const CommonOpts& opts) {
  if (!fs::exists(opts.config_path)) {
    throw ConfigError("config file does not exist: " + opts.config_path);
  }
  ModelConfig cfg = load_config(opts.config_path);
  // Precedence: explicit config keys > --seed flag > SMARTBIRD_SEED env.
  uint64_t master = 0;
  bool have_master = false;
  if (opts.seed) {
    master = *opts.seed;
    have_master = true;
  } else if (const char* env = std::getenv("SMARTBIRD_SEED")) {
    master = std::strtoull(env, nullptr, 10);
    have_master = true;
  }
  if (have_master) {
    cfg.seed_init = stream_seed(master, 1);
    cfg.seed_sampling = stream_seed(master, 2);
    cfg.seed_data = stream_seed(master, 3);
    cfg.eval_seed = stream_seed(master, 4);
  }
  if (opts.eval_seed) cfg.eval_seed = *opts.eval_seed;
  if (opts.threads) cfg.threads = *opts.threads;
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  if (opts.model) cfg.model = *opts.model;
  cfg.validate();
  return cfg;
}

std::string out_path(const ModelConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

std::string checkpoint_meta(const ModelConfig& cfg, const Vocab& vocab,
                            const std::string& kind) {
  return std::string("{\"kind\":\"") + kind +
         "\",\"vocab_hash\":" + std::to_string(vocab.content_hash()) +
         ",\"config\":" + config_to_json(cfg) + "}";
}

uint64_t meta_vocab_hash(const std::string& meta_json);

int cmd_train(const CommonOpts& opts) {
  ModelConfig cfg = resolve_config(opts);
  set_compute_threads(cfg.threads);
  SplitDataset data = load_task_data(cfg);
  EmbeddingTable emb = build_embeddings(data.vocab, cfg.D, cfg.d,
                                        cfg.seed_init, cfg.embedding_file);
  write_vocab_file(data.vocab, out_path(cfg, "vocab.txt"));

  RunMetrics all;
  auto append = [&all](const RunMetrics& m) {
    all.rows.insert(all.rows.end(), m.rows.begin(), m.rows.end());
    all.final_loss = m.final_loss;
    all.final_accuracy = m.final_accuracy;
    all.final_macro_f = m.final_macro_f;
  };

  if (cfg.model == "smart") {
    RunMetrics sketch_metrics;
    auto sketch = std::make_shared<SketchModel>(
        train_sketch(data.train, data.test, cfg, emb, &sketch_metrics));
    append(sketch_metrics);
    save_checkpoint(out_path(cfg, "sketch.ckpt"), sketch->named_params(),
                    checkpoint_meta(cfg, data.vocab, "sketch"));
    RunMetrics smart_metrics;
    SmartModel model =
        train_smartbird(data.train, data.test, cfg, emb, sketch,
                        &smart_metrics);
    append(smart_metrics);
    save_checkpoint(out_path(cfg, "model.ckpt"), model.net.named_params(),
                    checkpoint_meta(cfg, data.vocab, "smart"));
  } else {
    RunMetrics dense_metrics;
    DenseModel model = train_dense_baseline(data.train, data.test, cfg, emb,
                                            &dense_metrics);
    append(dense_metrics);
    save_checkpoint(out_path(cfg, "model.ckpt"), model.named_params(),
                    checkpoint_meta(cfg, data.vocab, "dense"));
  }

  write_metrics_csv(out_path(cfg, "metrics.csv"), all, cfg);
  write_timing_csv(out_path(cfg, "timing.csv"), all, cfg);
  std::cout << "final test accuracy " << all.final_accuracy << " macro-F "
            << all.final_macro_f << "\n";
  return kExitOk;
}

uint64_t meta_vocab_hash(const std::string& meta_json) {
  // Header meta is a flat JSON object; avoid a full parse dependency here by
  // extracting the integer after "vocab_hash":.
  const std::string key = "\"vocab_hash\":";
  const size_t pos = meta_json.find(key);
  if (pos == std::string::npos) return 0;
  return std::strtoull(meta_json.c_str() + pos + key.size(), nullptr, 10);
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             const std::string& sketch_path) {
  ModelConfig cfg = resolve_config(opts);
  set_compute_threads(cfg.threads);
  if (!fs::exists(checkpoint_path))
    throw ConfigError("checkpoint does not exist: " + checkpoint_path);
  SplitDataset data = load_task_data(cfg);

  Checkpoint ck = load_checkpoint(checkpoint_path);
  const uint64_t expect_hash = data.vocab.content_hash();
  if (meta_vocab_hash(ck.meta_json) != expect_hash) {
    throw ArtifactMismatchError(
        "checkpoint vocab hash does not match the configured dataset");
  }

  EvalResult result;
  if (cfg.model == "smart") {
    const std::string sk =
        sketch_path.empty()
            ? (fs::path(checkpoint_path).parent_path() / "sketch.ckpt").string()
            : sketch_path;
    if (!fs::exists(sk)) throw ConfigError("sketch checkpoint missing: " + sk);
    Checkpoint skck = load_checkpoint(sk);
    if (meta_vocab_hash(skck.meta_json) != expect_hash)
      throw ArtifactMismatchError("sketch checkpoint vocab hash mismatch");
    auto sketch = std::make_shared<SketchModel>(
        make_sketch_model(data.vocab.size(), cfg.d, cfg.layers, cfg.n_classes,
                          cfg.N, cfg.use_positional, cfg.seed_init));
    restore_params(skck, sketch->named_params());
    sketch->frozen = true;
    SmartModel model;
    model.net = make_dense_model(data.vocab.size(), cfg.D, cfg.h, cfg.layers,
                                 cfg.n_classes, cfg.N, cfg.use_positional,
                                 cfg.seed_init);
    restore_params(ck, model.net.named_params());
    model.sketch = sketch;
    model.strategy = parse_strategy(cfg.strategy);
    model.K = cfg.K;
    model.include_self = cfg.include_self;
    result = evaluate(model, data.test, cfg.eval_seed);
  } else {
    DenseModel model = make_dense_model(data.vocab.size(), cfg.D, cfg.h,
                                        cfg.layers, cfg.n_classes, cfg.N,
                                        cfg.use_positional, cfg.seed_init);
    restore_params(ck, model.named_params());
    result = evaluate(model, data.test);
  }

  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) + "}";
  t.columns = {"loss", "accuracy", "macro_f"};
  t.add_row({fmt_fixed(result.loss, 6), fmt_fixed(result.accuracy, 6),
             fmt_fixed(result.macro_f, 6)});
  t.write_file(out_path(cfg, "eval.csv"));
  std::cout << "accuracy " << fmt_fixed(result.accuracy, 6) << " macro_f "
            << fmt_fixed(result.macro_f, 6) << "\n";
  return kExitOk;
}

int cmd_bench(const CommonOpts& opts) {
  ModelConfig cfg = resolve_config(opts);
  CrossoverReport report = measured_crossover(cfg);
  crossover_csv(report, cfg).write_file(out_path(cfg, "crossover.csv"));
  flops_csv(cfg).write_file(out_path(cfg, "flops.csv"));
  std::cout << "dense_attn_slope " << fmt_fixed(report.dense_attn_slope, 3)
            << " sparse_layer_slope "
            << fmt_fixed(report.sparse_layer_slope, 3) << " crossover_n "
            << report.crossover_n << "\n";
  return kExitOk;
}

int cmd_study(const CommonOpts& opts, const std::string& study) {
  ModelConfig cfg = resolve_config(opts);
  set_compute_threads(cfg.threads);
  if (study == "ablate") {
    auto rows = ablation_run(cfg, cfg.study_seeds);
    ablation_csv(rows, cfg).write_file(out_path(cfg, "ablation.csv"));
  } else if (study == "ksweep") {
    auto rows = k_sweep(cfg, cfg.study_seeds);
    k_sweep_csv(rows, cfg).write_file(out_path(cfg, "k_sweep.csv"));
  } else if (study == "correlate") {
    CorrelationReport rep = correlation_study(cfg, cfg.study_seeds, false);
    correlation_csv(rep, cfg).write_file(out_path(cfg, "correlation.csv"));
    std::cout << "mean_r " << fmt_fixed(rep.mean_r, 4) << " shuffled "
              << fmt_fixed(rep.shuffled_mean_r, 4) << "\n";
  } else if (study == "histogram") {
    HistogramReport rep = score_histogram_study(cfg);
    histogram_csv(rep, cfg).write_file(out_path(cfg, "histogram.csv"));
  } else {
    throw ConfigError("unknown study: " + study +
                      " (expected ablate|ksweep|correlate|histogram)");
  }
  return kExitOk;
}

int cmd_dump_indices(const CommonOpts& opts, const std::string& sketch_path,
                     int example_count) {
  ModelConfig cfg = resolve_config(opts);
  set_compute_threads(cfg.threads);
  SplitDataset data = load_task_data(cfg);
  if (!fs::exists(sketch_path))
    throw ConfigError("sketch checkpoint missing: " + sketch_path);
  Checkpoint skck = load_checkpoint(sketch_path);
  if (meta_vocab_hash(skck.meta_json) != data.vocab.content_hash())
    throw ArtifactMismatchError("sketch checkpoint vocab hash mismatch");
  SketchModel sketch =
      make_sketch_model(data.vocab.size(), cfg.d, cfg.layers, cfg.n_classes,
                        cfg.N, cfg.use_positional, cfg.seed_init);
  restore_params(skck, sketch.named_params());
  sketch.frozen = true;

  CsvTable t;
  t.meta = std::string("{\"config\":") + config_to_json(cfg) + "}";
  t.columns = {"example", "layer", "head", "query", "slot", "index"};
  const SamplingStrategy strategy = parse_strategy(cfg.strategy);
  NoGradScope ng;
  const int limit =
      std::min<int>(example_count, static_cast<int>(data.test.examples.size()));
  for (int e = 0; e < limit; ++e) {
    const Example& ex = data.test.examples[static_cast<size_t>(e)];
    SketchForwardResult f = sketch_forward(sketch, ex, false, 0.0, nullptr,
                                           true);
    for (size_t l = 0; l < f.attn.size(); ++l) {
      auto heads = build_head_indices(f.attn[l], strategy, cfg.K, cfg.h,
                                      cfg.include_self, cfg.eval_seed,
                                      static_cast<uint64_t>(e), 0,
                                      static_cast<int>(l));
      for (size_t hd = 0; hd < heads.size(); ++hd) {
        const IndexMatrix& im = heads[hd];
        for (int q = 0; q < im.n; ++q)
          for (int slot = 0; slot < im.slot_count[static_cast<size_t>(q)];
               ++slot)
            t.add_row({std::to_string(e), std::to_string(l),
                       std::to_string(hd), std::to_string(q),
                       std::to_string(slot), std::to_string(im.at(q, slot))});
      }
    }
  }
  t.write_file(out_path(cfg, "indices.csv"));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smartbird: sketch-guided learnable sparse attention"};
  app.require_subcommand(1);

  CommonOpts train_opts, eval_opts, bench_opts, study_opts, dump_opts;
  std::string checkpoint_path, sketch_path, study_name, dump_sketch;
  int dump_examples = 1;

  CLI::App* train = app.add_subcommand("train",
                                       "train sketch + sparse (or dense) model");
  add_common(train, train_opts);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint_path, "model checkpoint path")
      ->required();
  eval->add_option("--sketch", sketch_path,
                   "sketch checkpoint (default: alongside model)");

  CLI::App* bench = app.add_subcommand(
      "bench", "time dense vs sketch+sample+sparse across the N grid");
  add_common(bench, bench_opts);

  CLI::App* study = app.add_subcommand(
      "study", "run a named study: ablate|ksweep|correlate|histogram");
  add_common(study, study_opts);
  study->add_option("name", study_name, "study name")->required();

  CLI::App* dump = app.add_subcommand("dump-indices",
                                      "dump sampled attention indices as CSV");
  add_common(dump, dump_opts);
  dump->add_option("--sketch", dump_sketch, "sketch checkpoint")->required();
  dump->add_option("--examples", dump_examples, "number of test examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts, checkpoint_path, sketch_path);
    if (bench->parsed()) return cmd_bench(bench_opts);
    if (study->parsed()) return cmd_study(study_opts, study_name);
    if (dump->parsed())
      return cmd_dump_indices(dump_opts, dump_sketch, dump_examples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ArtifactMismatchError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
