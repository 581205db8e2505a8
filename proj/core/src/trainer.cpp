#include "smartbird/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "smartbird/csv.hpp"

namespace smartbird {

// ---------------------------------------------------------------------------
// Dense model
// ---------------------------------------------------------------------------

std::vector<Tensor> DenseModel::params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

NamedParams DenseModel::named_params() const {
  NamedParams p;
  p.emplace_back("emb", emb);
  for (size_t l = 0; l < layers.size(); ++l)
    layers[l].collect_params(p, "layer" + std::to_string(l) + ".");
  p.emplace_back("pool_p", pool_p);
  p.emplace_back("pool_v", pool_v);
  p.emplace_back("cls_w", cls_w);
  p.emplace_back("cls_b", cls_b);
  return p;
}

DenseModel make_dense_model(int vocab_size, int dim, int heads, int n_layers,
                            int n_classes, int n_max, bool use_positional,
                            uint64_t init_seed) {
  DenseModel m;
  m.dim = dim;
  m.heads = heads;
  m.n_classes = n_classes;
  m.n_max = n_max;
  m.use_positional = use_positional;
  SplitMix64 rng(stream_seed(init_seed, 0xb16ull));
  m.emb = Tensor::zeros({vocab_size, dim}, true);
  xavier_fill(m.emb.values(), vocab_size, dim, rng);
  std::fill(m.emb.values().begin(), m.emb.values().begin() + dim, 0.0f);
  m.pe = sinusoidal_positions(n_max, dim);
  for (int l = 0; l < n_layers; ++l) m.layers.push_back(make_attn_layer(dim, heads, rng));
  m.pool_p = Tensor::zeros({dim, dim}, true);
  xavier_fill(m.pool_p.values(), dim, dim, rng);
  m.pool_v = Tensor::zeros({dim, 1}, true);
  xavier_fill(m.pool_v.values(), dim, 1, rng);
  m.cls_w = Tensor::zeros({dim, n_classes}, true);
  xavier_fill(m.cls_w.values(), dim, n_classes, rng);
  m.cls_b = Tensor::zeros({n_classes}, true);
  return m;
}

static Tensor embed_input(const Tensor& emb, const Tensor& pe, int n_max,
                          bool use_positional, const Example& ex) {
  const int n = static_cast<int>(ex.token_ids.size());
  if (n > n_max) {
    throw std::invalid_argument("sequence length " + std::to_string(n) +
                                " exceeds model maximum " +
                                std::to_string(n_max));
  }
  Tensor x = embedding_lookup(emb, ex.token_ids);
  if (use_positional) {
    const int d = emb.dim(1);
    Tensor pe_slice =
        (n == n_max)
            ? pe
            : Tensor::from({n, d}, {pe.values().begin(),
                                    pe.values().begin() +
                                        static_cast<size_t>(n) * d});
    x = add(x, pe_slice);
  }
  return x;
}

Tensor dense_forward_logits(
    const DenseModel& m, const Example& ex, bool training, double dropout_rate,
    SplitMix64* dropout_rng,
    std::vector<std::vector<AttentionMatrix>>* attn_export) {
  Tensor x = embed_input(m.emb, m.pe, m.n_max, m.use_positional, ex);
  if (training && dropout_rng) x = dropout(x, dropout_rate, *dropout_rng, true);
  for (size_t l = 0; l < m.layers.size(); ++l) {
    std::vector<AttentionMatrix> heads;
    x = dense_layer_forward(x, m.layers[l], ex.attn_len, dropout_rate,
                            dropout_rng, training,
                            attn_export ? &heads : nullptr);
    if (attn_export) attn_export->push_back(std::move(heads));
  }
  Tensor pooled = attention_pool(x, m.pool_p, m.pool_v, ex.attn_len);
  return sketch_predict(pooled, m.cls_w, m.cls_b);
}

SmartForwardResult smart_forward_logits(const SmartModel& m, const Example& ex,
                                        const SampleStream& stream,
                                        bool training, double dropout_rate,
                                        SplitMix64* dropout_rng) {
  // Guidance pass: frozen sketch inference, no tape, no dropout.
  std::vector<AttentionMatrix> sketch_attn;
  {
    NoGradScope ng;
    SketchForwardResult sf = sketch_forward(*m.sketch, ex, /*training=*/false,
                                            0.0, nullptr,
                                            /*want_attention=*/true);
    sketch_attn = std::move(sf.attn);
  }

  SmartForwardResult out;
  Tensor x = embed_input(m.net.emb, m.net.pe, m.net.n_max,
                         m.net.use_positional, ex);
  if (training && dropout_rng) x = dropout(x, dropout_rate, *dropout_rng, true);
  for (size_t l = 0; l < m.net.layers.size(); ++l) {
    // Layer-l sampling is driven by the sketch's layer-l attention.
    const AttentionMatrix& alpha =
        sketch_attn[std::min(l, sketch_attn.size() - 1)];
    std::vector<IndexMatrix> indices = build_head_indices(
        alpha, m.strategy, m.K, m.net.heads, m.include_self, stream.seed,
        stream.example_id, stream.step_tag, static_cast<int>(l));
    x = sparse_layer_forward(x, indices, m.net.layers[l], ex.attn_len,
                             dropout_rate, dropout_rng, training);
    out.indices.push_back(std::move(indices));
  }
  Tensor pooled = attention_pool(x, m.net.pool_p, m.net.pool_v, ex.attn_len);
  out.logits = sketch_predict(pooled, m.net.cls_w, m.net.cls_b);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double macro_f_score(const std::vector<int>& predictions,
                     const std::vector<int>& truth, int n_classes) {
  if (predictions.size() != truth.size())
    throw std::invalid_argument("macro_f_score: size mismatch");
  std::vector<int64_t> tp(static_cast<size_t>(n_classes), 0);
  std::vector<int64_t> fp(static_cast<size_t>(n_classes), 0);
  std::vector<int64_t> fn(static_cast<size_t>(n_classes), 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    const int p = predictions[i], t = truth[i];
    if (p == t) {
      ++tp[static_cast<size_t>(p)];
    } else {
      ++fp[static_cast<size_t>(p)];
      ++fn[static_cast<size_t>(t)];
    }
  }
  double total = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    const int64_t tpc = tp[static_cast<size_t>(c)];
    const int64_t fpc = fp[static_cast<size_t>(c)];
    const int64_t fnc = fn[static_cast<size_t>(c)];
    double f1 = 0.0;  // includes the no-predicted-and-no-true convention
    if (tpc + fpc > 0 || tpc + fnc > 0) {
      const double prec = (tpc + fpc > 0)
                              ? static_cast<double>(tpc) / (tpc + fpc)
                              : 0.0;
      const double rec = (tpc + fnc > 0)
                             ? static_cast<double>(tpc) / (tpc + fnc)
                             : 0.0;
      f1 = (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    total += f1;
  }
  return total / n_classes;
}

static int argmax_logits(const Tensor& logits) {
  std::span<const float> v = logits.values();
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

template <typename ForwardFn>
static EvalResult evaluate_impl(const Dataset& data, int n_classes,
                                ForwardFn&& forward) {
  if (data.examples.empty())
    throw std::invalid_argument("evaluate: empty dataset");
  NoGradScope ng;
  EvalResult r;
  std::vector<int> truth;
  double loss_sum = 0.0;
  for (size_t i = 0; i < data.examples.size(); ++i) {
    const Example& ex = data.examples[i];
    Tensor logits = forward(ex, static_cast<uint64_t>(i));
    const int label = ex.label;
    Tensor loss = cross_entropy(logits, std::span<const int>(&label, 1));
    loss_sum += loss.item64();
    r.predictions.push_back(argmax_logits(logits));
    truth.push_back(label);
  }
  r.loss = loss_sum / static_cast<double>(data.examples.size());
  int64_t correct = 0;
  for (size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == r.predictions[i]) ++correct;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  r.macro_f = macro_f_score(r.predictions, truth, n_classes);
  return r;
}

EvalResult evaluate(const SketchModel& m, const Dataset& data) {
  return evaluate_impl(data, m.n_classes, [&](const Example& ex, uint64_t) {
    return sketch_forward(m, ex, false, 0.0, nullptr, false).logits;
  });
}

EvalResult evaluate(const DenseModel& m, const Dataset& data) {
  return evaluate_impl(data, m.n_classes, [&](const Example& ex, uint64_t) {
    return dense_forward_logits(m, ex, false, 0.0, nullptr, nullptr);
  });
}

EvalResult evaluate(const SmartModel& m, const Dataset& data,
                    uint64_t eval_seed) {
  return evaluate_impl(
      data, m.net.n_classes, [&](const Example& ex, uint64_t id) {
        SampleStream stream{eval_seed, id, 0};
        return smart_forward_logits(m, ex, stream, false, 0.0, nullptr)
            .logits;
      });
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct StepOutput {
  Tensor loss;
  Tensor logits;
};

// Runs epochs of minibatch Adam over `forward`, which must build the graph on
// the active tape. Loss is averaged over the batch via a 1/B scale per
// example; grads are clipped at cfg.grad_clip before each step.
template <typename ForwardFn, typename EvalFn>
RunMetrics run_training(const Dataset& train, const ModelConfig& cfg,
                        const std::string& phase, std::vector<Tensor> params,
                        ForwardFn&& forward, EvalFn&& eval_fn) {
  RunMetrics metrics;
  Adam opt(params, cfg.lr);
  SplitMix64 order_rng(stream_seed(cfg.seed_data, 0x0d0e0ull));
  std::vector<size_t> order(train.examples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    size_t pos = 0;
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    while (pos < order.size()) {
      const auto batch_start = std::chrono::steady_clock::now();
      const size_t bend = std::min(order.size(),
                                   pos + static_cast<size_t>(cfg.batch_size));
      const int bsize = static_cast<int>(bend - pos);
      numeric_flags().clear();
      zero_grads(params);

      double batch_loss = 0.0;
      std::vector<int> preds, truth;
      for (size_t bi = pos; bi < bend; ++bi) {
        const size_t idx = order[bi];
        const Example& ex = train.examples[idx];
        Tape tape;
        TapeScope scope(tape);
        StepOutput so = forward(ex, static_cast<uint64_t>(idx),
                                static_cast<uint64_t>(step) + 1);
        Tensor scaled = scale(so.loss, 1.0 / bsize);
        tape.backward(scaled);
        batch_loss += so.loss.item64();
        preds.push_back(argmax_logits(so.logits));
        truth.push_back(ex.label);
      }
      batch_loss /= bsize;
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError(
            phase + " training diverged: non-finite loss at step " +
            std::to_string(step) +
            (numeric_flags().non_finite_seen ? " (non-finite activations seen)"
                                             : ""));
      }
      clip_global_norm(std::span<Tensor>(params), cfg.grad_clip);
      opt.step();
      ++step;
      ++epoch_batches;
      epoch_loss += batch_loss;
      pos = bend;

      const double ms =
          std::chrono::duration<double, std::milli>(
              std::chrono::steady_clock::now() - batch_start)
              .count();
      if (step % std::max(1, cfg.log_every) == 0 || pos >= order.size()) {
        int64_t correct = 0;
        for (size_t i = 0; i < preds.size(); ++i)
          if (preds[i] == truth[i]) ++correct;
        MetricsRow row;
        row.phase = phase;
        row.epoch = epoch;
        row.step = step;
        row.loss = batch_loss;
        row.accuracy = static_cast<double>(correct) / preds.size();
        row.macro_f = macro_f_score(preds, truth, train.n_classes);
        row.ms_per_iter = ms;
        metrics.rows.push_back(std::move(row));
      }
    }

    EvalResult ev = eval_fn();
    MetricsRow row;
    row.phase = phase + "_eval";
    row.epoch = epoch;
    row.step = step;
    row.loss = ev.loss;
    row.accuracy = ev.accuracy;
    row.macro_f = ev.macro_f;
    row.ms_per_iter = 0.0;
    metrics.rows.push_back(row);
    metrics.final_loss = ev.loss;
    metrics.final_accuracy = ev.accuracy;
    metrics.final_macro_f = ev.macro_f;
    (void)epoch_loss;
    (void)epoch_batches;
  }

  if (cfg.epochs == 0) {
    EvalResult ev = eval_fn();
    MetricsRow row;
    row.phase = phase + "_eval";
    row.epoch = 0;
    row.step = 0;
    row.loss = ev.loss;
    row.accuracy = ev.accuracy;
    row.macro_f = ev.macro_f;
    row.ms_per_iter = 0.0;
    metrics.rows.push_back(row);
    metrics.final_loss = ev.loss;
    metrics.final_accuracy = ev.accuracy;
    metrics.final_macro_f = ev.macro_f;
  }
  return metrics;
}

}  // namespace

SketchModel train_sketch(const Dataset& train, const Dataset& test,
                         const ModelConfig& cfg_in, const EmbeddingTable& emb,
                         RunMetrics* metrics) {
  if (train.examples.empty())
    throw std::invalid_argument("train_sketch: empty dataset");
  ModelConfig cfg = cfg_in;
  if (cfg.sketch_epochs > 0) cfg.epochs = cfg.sketch_epochs;
  SketchModel model =
      make_sketch_model(emb.vocab_size, cfg.d, cfg.layers, cfg.n_classes,
                        cfg.N, cfg.use_positional, cfg.seed_init);
  init_tiny_embedding(model, emb);

  SplitMix64 dropout_rng(stream_seed(cfg.seed_init, 0xd309ull, 1));
  RunMetrics m = run_training(
      train, cfg, "sketch", model.params(),
      [&](const Example& ex, uint64_t, uint64_t) {
        SketchForwardResult f = sketch_forward(model, ex, true, cfg.dropout,
                                               &dropout_rng, false);
        const int label = ex.label;
        return StepOutput{cross_entropy(f.logits,
                                        std::span<const int>(&label, 1)),
                          f.logits};
      },
      [&]() { return evaluate(model, test); });
  if (metrics) *metrics = std::move(m);
  // Freeze: optimizer residue goes away so downstream phases can verify that
  // no gradient ever reaches these parameters again.
  for (Tensor& p : model.params()) p.release_grad();
  model.frozen = true;
  return model;
}

SmartModel train_smartbird(const Dataset& train, const Dataset& test,
                           const ModelConfig& cfg, const EmbeddingTable& emb,
                           std::shared_ptr<const SketchModel> sketch,
                           RunMetrics* metrics) {
  if (!sketch || !sketch->frozen)
    throw std::invalid_argument("train_smartbird: needs a frozen sketch model");
  if (sketch->emb.dim(0) != emb.vocab_size)
    throw ArtifactMismatchError("sketch model vocab size " +
                                std::to_string(sketch->emb.dim(0)) +
                                " does not match embedding table " +
                                std::to_string(emb.vocab_size));
  SmartModel model;
  model.net = make_dense_model(emb.vocab_size, cfg.D, cfg.h, cfg.layers,
                               cfg.n_classes, cfg.N, cfg.use_positional,
                               stream_seed(cfg.seed_init, 0x57a2ull));
  std::copy(emb.full.begin(), emb.full.end(), model.net.emb.values().begin());
  model.sketch = std::move(sketch);
  model.strategy = parse_strategy(cfg.strategy);
  model.K = cfg.K;
  model.include_self = cfg.include_self;

  SplitMix64 dropout_rng(stream_seed(cfg.seed_init, 0xd309ull, 2));
  RunMetrics m = run_training(
      train, cfg, "smart", model.net.params(),
      [&](const Example& ex, uint64_t id, uint64_t step_tag) {
        SampleStream stream{cfg.seed_sampling, id, step_tag};
        SmartForwardResult f = smart_forward_logits(model, ex, stream, true,
                                                    cfg.dropout, &dropout_rng);
        const int label = ex.label;
        return StepOutput{cross_entropy(f.logits,
                                        std::span<const int>(&label, 1)),
                          f.logits};
      },
      [&]() { return evaluate(model, test, cfg.eval_seed); });
  if (metrics) *metrics = std::move(m);
  return model;
}

DenseModel train_dense_baseline(const Dataset& train, const Dataset& test,
                                const ModelConfig& cfg,
                                const EmbeddingTable& emb,
                                RunMetrics* metrics) {
  if (train.examples.empty())
    throw std::invalid_argument("train_dense_baseline: empty dataset");
  DenseModel model = make_dense_model(
      emb.vocab_size, cfg.D, cfg.h, cfg.layers, cfg.n_classes, cfg.N,
      cfg.use_positional, stream_seed(cfg.seed_init, 0xde45ull));
  std::copy(emb.full.begin(), emb.full.end(), model.emb.values().begin());

  SplitMix64 dropout_rng(stream_seed(cfg.seed_init, 0xd309ull, 3));
  RunMetrics m = run_training(
      train, cfg, "dense", model.params(),
      [&](const Example& ex, uint64_t, uint64_t) {
        Tensor logits = dense_forward_logits(model, ex, true, cfg.dropout,
                                             &dropout_rng, nullptr);
        const int label = ex.label;
        return StepOutput{cross_entropy(logits,
                                        std::span<const int>(&label, 1)),
                          logits};
      },
      [&]() { return evaluate(model, test); });
  if (metrics) *metrics = std::move(m);
  return model;
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

SplitDataset load_task_data(const ModelConfig& cfg) {
  SplitDataset out;
  if (cfg.task == "synth") {
    SynthSpec spec;
    spec.seed = cfg.seed_data;
    spec.n_examples = cfg.n_train + cfg.n_test;
    spec.seq_len = cfg.N;
    spec.vocab_size = cfg.vocab_size;
    spec.pair_gap = cfg.pair_gap;
    spec.n_classes = cfg.n_classes;
    Dataset all = synth_task(spec);
    out.train.n_classes = out.test.n_classes = all.n_classes;
    out.train.max_len = out.test.max_len = all.max_len;
    for (int i = 0; i < cfg.n_train; ++i)
      out.train.examples.push_back(all.examples[static_cast<size_t>(i)]);
    for (int i = cfg.n_train; i < cfg.n_train + cfg.n_test; ++i)
      out.test.examples.push_back(all.examples[static_cast<size_t>(i)]);
    // Identity vocab: synthetic ids name themselves.
    out.vocab.min_freq = 1;
    out.vocab.tokens = {"<pad>", "<unk>"};
    for (int i = Vocab::kNumSpecial; i < cfg.vocab_size; ++i)
      out.vocab.tokens.push_back("tok" + std::to_string(i));
    for (int i = 0; i < out.vocab.size(); ++i)
      out.vocab.to_id[out.vocab.tokens[static_cast<size_t>(i)]] = i;
    return out;
  }

  auto train_lines = read_corpus(cfg.train_file);
  auto test_lines = read_corpus(cfg.test_file);
  std::vector<std::vector<std::string>> docs;
  for (auto& [label, toks] : train_lines) docs.push_back(toks);
  out.vocab = build_vocab(docs, cfg.min_freq);

  int max_label = 0;
  auto encode_all = [&](const auto& lines, Dataset& ds) {
    for (const auto& [label, toks] : lines) {
      if (label < 0) throw ConfigError("corpus labels must be >= 0");
      if (toks.empty()) continue;  // unencodable line, skip
      Example ex = encode(toks, out.vocab, cfg.N);
      ex.label = label;
      max_label = std::max(max_label, label);
      ds.examples.push_back(std::move(ex));
    }
    ds.max_len = cfg.N;
  };
  encode_all(train_lines, out.train);
  encode_all(test_lines, out.test);
  if (max_label + 1 > cfg.n_classes) {
    throw ConfigError("corpus has label " + std::to_string(max_label) +
                      " but n_classes is " + std::to_string(cfg.n_classes));
  }
  out.train.n_classes = out.test.n_classes = cfg.n_classes;
  return out;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

static CsvTable metrics_table(const RunMetrics& metrics,
                              const ModelConfig& cfg, bool with_timing) {
  CsvTable t;
  t.meta = config_to_json(cfg);
  t.columns = {"phase", "epoch",   "step",       "loss",
               "accuracy", "macro_f", "ms_per_iter"};
  for (const MetricsRow& r : metrics.rows) {
    t.add_row({r.phase, std::to_string(r.epoch), std::to_string(r.step),
               fmt_fixed(r.loss, 6), fmt_fixed(r.accuracy, 6),
               fmt_fixed(r.macro_f, 6),
               fmt_fixed(with_timing ? r.ms_per_iter : 0.0, 3)});
  }
  return t;
}

void write_metrics_csv(const std::string& path, const RunMetrics& metrics,
                       const ModelConfig& cfg) {
  metrics_table(metrics, cfg, cfg.record_timing).write_file(path);
}

void write_timing_csv(const std::string& path, const RunMetrics& metrics,
                      const ModelConfig& cfg) {
  metrics_table(metrics, cfg, true).write_file(path);
}

}  // namespace smartbird
