#include "smartbird/sketch.hpp"

#include <cmath>
#include <stdexcept>

namespace smartbird {

std::vector<Tensor> SketchModel::params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

NamedParams SketchModel::named_params() const {
  NamedParams p;
  p.emplace_back("emb", emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    const SketchLayerParams& lp = layers[l];
    p.emplace_back(pre + "wq", lp.wq);
    p.emplace_back(pre + "wk", lp.wk);
    p.emplace_back(pre + "wv", lp.wv);
    p.emplace_back(pre + "ffn_w1", lp.ffn_w1);
    p.emplace_back(pre + "ffn_b1", lp.ffn_b1);
    p.emplace_back(pre + "ffn_w2", lp.ffn_w2);
    p.emplace_back(pre + "ffn_b2", lp.ffn_b2);
    p.emplace_back(pre + "ln1_g", lp.ln1_g);
    p.emplace_back(pre + "ln1_b", lp.ln1_b);
    p.emplace_back(pre + "ln2_g", lp.ln2_g);
    p.emplace_back(pre + "ln2_b", lp.ln2_b);
  }
  p.emplace_back("pool_p", pool_p);
  p.emplace_back("pool_v", pool_v);
  p.emplace_back("cls_w", cls_w);
  p.emplace_back("cls_b", cls_b);
  return p;
}

Tensor sinusoidal_positions(int n, int d) {
  Tensor pe = Tensor::zeros({n, d});
  std::span<float> v = pe.values();
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle =
          pos / std::pow(10000.0, static_cast<double>(i) / d);
      v[static_cast<size_t>(pos) * d + i] =
          static_cast<float>(std::sin(angle));
      if (i + 1 < d)
        v[static_cast<size_t>(pos) * d + i + 1] =
            static_cast<float>(std::cos(angle));
    }
  }
  return pe;
}

static Tensor xavier_param(Shape shape, int fan_in, int fan_out,
                           SplitMix64& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  xavier_fill(t.values(), fan_in, fan_out, rng);
  return t;
}

SketchModel make_sketch_model(int vocab_size, int d, int n_layers,
                              int n_classes, int n_max, bool use_positional,
                              uint64_t init_seed) {
  if (d < 1 || n_layers < 1 || n_classes < 2 || n_max < 1)
    throw std::invalid_argument("make_sketch_model: bad configuration");
  SketchModel m;
  m.d = d;
  m.n_max = n_max;
  m.n_classes = n_classes;
  m.use_positional = use_positional;

  SplitMix64 rng(stream_seed(init_seed, 0x5ce7c4ull));
  m.emb = xavier_param({vocab_size, d}, vocab_size, d, rng);
  m.pe = sinusoidal_positions(n_max, d);
  for (int l = 0; l < n_layers; ++l) {
    SketchLayerParams lp;
    lp.wq = xavier_param({d, d}, d, d, rng);
    lp.wk = xavier_param({d, d}, d, d, rng);
    lp.wv = xavier_param({d, d}, d, d, rng);
    lp.ffn_w1 = xavier_param({d, 2 * d}, d, 2 * d, rng);
    lp.ffn_b1 = Tensor::zeros({2 * d}, true);
    lp.ffn_w2 = xavier_param({2 * d, d}, 2 * d, d, rng);
    lp.ffn_b2 = Tensor::zeros({d}, true);
    lp.ln1_g = Tensor::full({d}, 1.0f, true);
    lp.ln1_b = Tensor::zeros({d}, true);
    lp.ln2_g = Tensor::full({d}, 1.0f, true);
    lp.ln2_b = Tensor::zeros({d}, true);
    m.layers.push_back(std::move(lp));
  }
  m.pool_p = xavier_param({d, d}, d, d, rng);
  m.pool_v = xavier_param({d, 1}, d, 1, rng);
  m.cls_w = xavier_param({d, n_classes}, d, n_classes, rng);
  m.cls_b = Tensor::zeros({n_classes}, true);
  return m;
}

void init_tiny_embedding(SketchModel& model, const EmbeddingTable& table) {
  if (table.vocab_size != model.emb.dim(0) || table.dim_tiny != model.d)
    throw std::invalid_argument("tiny embedding table shape mismatch");
  std::copy(table.tiny.begin(), table.tiny.end(), model.emb.values().begin());
}

Tensor attention_pool(const Tensor& hidden, const Tensor& pool_p,
                      const Tensor& pool_v, int valid_len) {
  if (valid_len < 1)
    throw std::invalid_argument("attention_pool: valid_len must be >= 1");
  const int n = hidden.dim(0);
  Tensor t = tanh_op(matmul(hidden, pool_p));        // N x d
  Tensor s = matmul(t, pool_v);                      // N x 1
  Tensor srow = reshape(s, {1, n});                  // 1 x N
  Tensor w = masked_softmax_rows(srow, valid_len, 1);
  return matmul(w, hidden);                          // 1 x d
}

Tensor sketch_predict(const Tensor& pooled, const Tensor& cls_w,
                      const Tensor& cls_b) {
  return add(matmul(pooled, cls_w), cls_b);
}

static Tensor tensor_from_f64(const std::vector<double>& vals, int rows,
                              int cols) {
  std::vector<float> v(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) v[i] = static_cast<float>(vals[i]);
  return Tensor::from({rows, cols}, std::move(v));
}

SketchForwardResult sketch_forward(const SketchModel& model, const Example& ex,
                                   bool training, double dropout_rate,
                                   SplitMix64* dropout_rng,
                                   bool want_attention) {
  const int n = static_cast<int>(ex.token_ids.size());
  if (n > model.n_max) {
    throw std::invalid_argument("sketch_forward: sequence length " +
                                std::to_string(n) + " exceeds model maximum " +
                                std::to_string(model.n_max));
  }
  const int valid = ex.attn_len;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.d));

  SketchForwardResult out;
  Tensor x = embedding_lookup(model.emb, ex.token_ids);
  if (model.use_positional) {
    Tensor pe_slice = (n == model.n_max)
                          ? model.pe
                          : Tensor::from({n, model.d},
                                         {model.pe.values().begin(),
                                          model.pe.values().begin() +
                                              static_cast<size_t>(n) * model.d});
    x = add(x, pe_slice);
  }
  auto maybe_dropout = [&](Tensor t) {
    return (training && dropout_rng) ? dropout(t, dropout_rate, *dropout_rng, true)
                                     : t;
  };
  x = maybe_dropout(x);

  for (const SketchLayerParams& lp : model.layers) {
    Tensor q = matmul(x, lp.wq);
    Tensor k = matmul(x, lp.wk);
    Tensor v = matmul(x, lp.wv);
    Tensor scores = scale(matmul_nt(q, k), inv_sqrt_d);

    Tensor attn;
    if (want_attention) {
      AttentionMatrix am;
      am.n = n;
      am.valid_len = valid;
      am.a.assign(static_cast<size_t>(n) * n, 0.0);
      masked_softmax_f64(scores.values(), n, n, valid, valid, am.a);
      if (tape_active() && scores.requires_grad()) {
        // Training with export requested: keep the differentiable path.
        attn = masked_softmax_rows(scores, valid, valid);
      } else {
        // Frozen/guidance path: the float64 softmax is computed once and
        // reused (cast) as the mixing weights.
        attn = tensor_from_f64(am.a, n, n);
      }
      out.attn.push_back(std::move(am));
    } else {
      attn = masked_softmax_rows(scores, valid, valid);
    }

    Tensor mixed = maybe_dropout(matmul(attn, v));
    x = layer_norm(add(x, mixed), lp.ln1_g, lp.ln1_b);
    Tensor hiddenf = relu(add(matmul(x, lp.ffn_w1), lp.ffn_b1));
    Tensor ffn = maybe_dropout(add(matmul(hiddenf, lp.ffn_w2), lp.ffn_b2));
    x = layer_norm(add(x, ffn), lp.ln2_g, lp.ln2_b);
  }

  out.hidden = x;
  out.pooled = attention_pool(x, model.pool_p, model.pool_v, valid);
  out.logits = sketch_predict(out.pooled, model.cls_w, model.cls_b);
  return out;
}

}  // namespace smartbird
