#include "smartbird/sparse_attn.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace smartbird {

void AttnLayerParams::collect_params(
    std::vector<std::pair<std::string, Tensor>>& out,
    const std::string& prefix) const {
  for (int hd = 0; hd < heads; ++hd) {
    const std::string hp = prefix + "h" + std::to_string(hd) + ".";
    out.emplace_back(hp + "wq", wq[static_cast<size_t>(hd)]);
    out.emplace_back(hp + "wk", wk[static_cast<size_t>(hd)]);
    out.emplace_back(hp + "wv", wv[static_cast<size_t>(hd)]);
  }
  out.emplace_back(prefix + "wo", wo);
  out.emplace_back(prefix + "ffn_w1", ffn_w1);
  out.emplace_back(prefix + "ffn_b1", ffn_b1);
  out.emplace_back(prefix + "ffn_w2", ffn_w2);
  out.emplace_back(prefix + "ffn_b2", ffn_b2);
  out.emplace_back(prefix + "ln1_g", ln1_g);
  out.emplace_back(prefix + "ln1_b", ln1_b);
  out.emplace_back(prefix + "ln2_g", ln2_g);
  out.emplace_back(prefix + "ln2_b", ln2_b);
}

AttnLayerParams make_attn_layer(int dim, int heads, SplitMix64& rng) {
  if (heads < 1 || dim % heads != 0) {
    throw std::invalid_argument("attention dim " + std::to_string(dim) +
                                " not divisible by heads " +
                                std::to_string(heads));
  }
  AttnLayerParams lp;
  lp.dim = dim;
  lp.heads = heads;
  lp.head_dim = dim / heads;
  auto xavier_param = [&rng](Shape shape, int fi, int fo) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    xavier_fill(t.values(), fi, fo, rng);
    return t;
  };
  for (int hd = 0; hd < heads; ++hd) {
    lp.wq.push_back(xavier_param({dim, lp.head_dim}, dim, lp.head_dim));
    lp.wk.push_back(xavier_param({dim, lp.head_dim}, dim, lp.head_dim));
    lp.wv.push_back(xavier_param({dim, lp.head_dim}, dim, lp.head_dim));
  }
  lp.wo = xavier_param({dim, dim}, dim, dim);
  lp.ffn_w1 = xavier_param({dim, 2 * dim}, dim, 2 * dim);
  lp.ffn_b1 = Tensor::zeros({2 * dim}, true);
  lp.ffn_w2 = xavier_param({2 * dim, dim}, 2 * dim, dim);
  lp.ffn_b2 = Tensor::zeros({dim}, true);
  lp.ln1_g = Tensor::full({dim}, 1.0f, true);
  lp.ln1_b = Tensor::zeros({dim}, true);
  lp.ln2_g = Tensor::full({dim}, 1.0f, true);
  lp.ln2_b = Tensor::zeros({dim}, true);
  return lp;
}

Tensor gather_rows(const Tensor& src, const IndexMatrix& im) {
  if (src.rank() != 2 || src.dim(0) != im.n)
    throw std::invalid_argument("gather_rows: source shape " +
                                shape_str(src.shape()) +
                                " does not match index matrix rows " +
                                std::to_string(im.n));
  for (int i = 0; i < im.n; ++i) {
    for (int slot = 0; slot < im.slot_count[static_cast<size_t>(i)]; ++slot) {
      if (im.at(i, slot) < 0 || im.at(i, slot) >= src.dim(0))
        throw std::out_of_range("gather_rows: index out of range");
    }
  }
  const int n = im.n, k = im.k, dh = src.dim(1);
  const bool rg = grad_enabled() && src.requires_grad();
  Tensor out = Tensor::zeros({n, k, dh}, rg);
  const float* ps = src.values().data();
  float* po = out.values().data();
  for (int i = 0; i < n; ++i) {
    const int count = im.slot_count[static_cast<size_t>(i)];
    for (int slot = 0; slot < count; ++slot) {
      std::memcpy(po + (static_cast<size_t>(i) * k + slot) * dh,
                  ps + static_cast<size_t>(im.at(i, slot)) * dh,
                  static_cast<size_t>(dh) * sizeof(float));
    }
  }
  if (rg) {
    Tensor sv = src, ov = out;
    auto idx = std::make_shared<IndexMatrix>(im);
    record_op(out, [sv, ov, idx, n, k, dh]() mutable {
      const float* g = ov.impl()->grad.data();
      float* gs = sv.grad().data();
      for (int i = 0; i < n; ++i) {
        const int count = idx->slot_count[static_cast<size_t>(i)];
        for (int slot = 0; slot < count; ++slot) {
          float* dst = gs + static_cast<size_t>(idx->at(i, slot)) * dh;
          const float* grow = g + (static_cast<size_t>(i) * k + slot) * dh;
          for (int j = 0; j < dh; ++j) dst[j] += grow[j];
        }
      }
    });
  }
  return out;
}

GatheredKV gather_kv(const Tensor& x, const std::vector<IndexMatrix>& indices,
                     const AttnLayerParams& layer) {
  if (static_cast<int>(indices.size()) != layer.heads) {
    throw std::invalid_argument(
        "gather_kv: got " + std::to_string(indices.size()) +
        " index matrices for " + std::to_string(layer.heads) + " heads");
  }
  GatheredKV g;
  g.indices = indices;
  for (int hd = 0; hd < layer.heads; ++hd) {
    Tensor kp = matmul(x, layer.wk[static_cast<size_t>(hd)]);
    Tensor vp = matmul(x, layer.wv[static_cast<size_t>(hd)]);
    g.keys.push_back(gather_rows(kp, indices[static_cast<size_t>(hd)]));
    g.values.push_back(gather_rows(vp, indices[static_cast<size_t>(hd)]));
  }
  return g;
}

Tensor sparse_attention_head(const Tensor& q, const Tensor& gathered_k,
                             const Tensor& gathered_v, const IndexMatrix& im) {
  const int n = im.n, k = im.k;
  if (q.rank() != 2 || q.dim(0) != n)
    throw std::invalid_argument("sparse_attention_head: bad query shape");
  const int dh = q.dim(1);
  if (gathered_k.shape() != Shape{n, k, dh} ||
      gathered_v.shape() != Shape{n, k, dh})
    throw std::invalid_argument("sparse_attention_head: bad gathered shape");

  const bool rg = grad_enabled() &&
                  (q.requires_grad() || gathered_k.requires_grad() ||
                   gathered_v.requires_grad());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out = Tensor::zeros({n, dh}, rg);
  // Per-query softmax weights, kept for the backward rule.
  auto weights =
      std::make_shared<std::vector<double>>(static_cast<size_t>(n) * k, 0.0);

  const float* pq = q.values().data();
  const float* pk = gathered_k.values().data();
  const float* pv = gathered_v.values().data();
  float* po = out.values().data();
  std::vector<double> logits(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) {
    const int count = im.slot_count[static_cast<size_t>(i)];
    if (count == 0) continue;  // PAD query row stays zero
    const float* qrow = pq + static_cast<size_t>(i) * dh;
    double mx = -1e300;
    for (int slot = 0; slot < count; ++slot) {
      const float* krow = pk + (static_cast<size_t>(i) * k + slot) * dh;
      double dot = 0.0;
      for (int j = 0; j < dh; ++j) dot += static_cast<double>(qrow[j]) * krow[j];
      logits[static_cast<size_t>(slot)] = dot * scale;
      mx = std::max(mx, logits[static_cast<size_t>(slot)]);
    }
    double denom = 0.0;
    for (int slot = 0; slot < count; ++slot) {
      const double e = std::exp(logits[static_cast<size_t>(slot)] - mx);
      (*weights)[static_cast<size_t>(i) * k + slot] = e;
      denom += e;
    }
    float* orow = po + static_cast<size_t>(i) * dh;
    for (int slot = 0; slot < count; ++slot) {
      const double w = (*weights)[static_cast<size_t>(i) * k + slot] / denom;
      (*weights)[static_cast<size_t>(i) * k + slot] = w;
      const float* vrow = pv + (static_cast<size_t>(i) * k + slot) * dh;
      for (int j = 0; j < dh; ++j)
        orow[j] += static_cast<float>(w * vrow[j]);
    }
  }

  if (rg) {
    Tensor qv = q, kv = gathered_k, vv = gathered_v, ov = out;
    auto idx = std::make_shared<IndexMatrix>(im);
    record_op(out, [qv, kv, vv, ov, idx, weights, n, k, dh, scale]() mutable {
      const float* g = ov.impl()->grad.data();
      const float* pq = qv.values().data();
      const float* pk = kv.values().data();
      const float* pv = vv.values().data();
      float* gq = qv.requires_grad() ? qv.grad().data() : nullptr;
      float* gk = kv.requires_grad() ? kv.grad().data() : nullptr;
      float* gv = vv.requires_grad() ? vv.grad().data() : nullptr;
      std::vector<double> svals(static_cast<size_t>(k));
      for (int i = 0; i < n; ++i) {
        const int count = idx->slot_count[static_cast<size_t>(i)];
        if (count == 0) continue;
        const float* grow = g + static_cast<size_t>(i) * dh;
        const float* qrow = pq + static_cast<size_t>(i) * dh;
        // s_k = dout·v_k ; dlogit_k = w_k (s_k - sum_j w_j s_j)
        double mix = 0.0;
        for (int slot = 0; slot < count; ++slot) {
          const float* vrow = pv + (static_cast<size_t>(i) * k + slot) * dh;
          double s = 0.0;
          for (int j = 0; j < dh; ++j) s += static_cast<double>(grow[j]) * vrow[j];
          svals[static_cast<size_t>(slot)] = s;
          mix += (*weights)[static_cast<size_t>(i) * k + slot] * s;
        }
        for (int slot = 0; slot < count; ++slot) {
          const double w = (*weights)[static_cast<size_t>(i) * k + slot];
          const double dlogit =
              w * (svals[static_cast<size_t>(slot)] - mix) * scale;
          const float* krow = pk + (static_cast<size_t>(i) * k + slot) * dh;
          const float* vrow = pv + (static_cast<size_t>(i) * k + slot) * dh;
          if (gq) {
            float* gqrow = gq + static_cast<size_t>(i) * dh;
            for (int j = 0; j < dh; ++j)
              gqrow[j] += static_cast<float>(dlogit * krow[j]);
          }
          if (gk) {
            float* gkrow = gk + (static_cast<size_t>(i) * k + slot) * dh;
            for (int j = 0; j < dh; ++j)
              gkrow[j] += static_cast<float>(dlogit * qrow[j]);
          }
          if (gv) {
            float* gvrow = gv + (static_cast<size_t>(i) * k + slot) * dh;
            for (int j = 0; j < dh; ++j)
              gvrow[j] += static_cast<float>(w * grow[j]);
          }
          (void)vrow;
        }
      }
    });
  }
  return out;
}

// Shared tail: output projection + two post-norm residual sublayers.
static Tensor layer_tail(const Tensor& x, const Tensor& heads_concat,
                         const AttnLayerParams& layer, double dropout_rate,
                         SplitMix64* dropout_rng, bool training) {
  auto maybe_dropout = [&](Tensor t) {
    return (training && dropout_rng)
               ? dropout(t, dropout_rate, *dropout_rng, true)
               : t;
  };
  Tensor projected = maybe_dropout(matmul(heads_concat, layer.wo));
  Tensor x1 = layer_norm(add(x, projected), layer.ln1_g, layer.ln1_b);
  Tensor hidden = relu(add(matmul(x1, layer.ffn_w1), layer.ffn_b1));
  Tensor ffn = maybe_dropout(add(matmul(hidden, layer.ffn_w2), layer.ffn_b2));
  return layer_norm(add(x1, ffn), layer.ln2_g, layer.ln2_b);
}

Tensor sparse_layer_forward(const Tensor& x,
                            const std::vector<IndexMatrix>& indices,
                            const AttnLayerParams& layer, int valid_len,
                            double dropout_rate, SplitMix64* dropout_rng,
                            bool training) {
  if (static_cast<int>(indices.size()) != layer.heads) {
    throw std::invalid_argument(
        "sparse_layer_forward: got " + std::to_string(indices.size()) +
        " index matrices for " + std::to_string(layer.heads) + " heads");
  }
  (void)valid_len;  // PAD masking is carried by the index matrices' slot counts
  GatheredKV kv = gather_kv(x, indices, layer);
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(layer.heads));
  for (int hd = 0; hd < layer.heads; ++hd) {
    Tensor q = matmul(x, layer.wq[static_cast<size_t>(hd)]);
    head_outs.push_back(sparse_attention_head(
        q, kv.keys[static_cast<size_t>(hd)], kv.values[static_cast<size_t>(hd)],
        kv.indices[static_cast<size_t>(hd)]));
  }
  return layer_tail(x, concat_cols(head_outs), layer, dropout_rate,
                    dropout_rng, training);
}

Tensor dense_layer_forward(const Tensor& x, const AttnLayerParams& layer,
                           int valid_len, double dropout_rate,
                           SplitMix64* dropout_rng, bool training,
                           std::vector<AttentionMatrix>* attn_export) {
  const int n = x.dim(0);
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(layer.head_dim));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(layer.heads));
  for (int hd = 0; hd < layer.heads; ++hd) {
    Tensor q = matmul(x, layer.wq[static_cast<size_t>(hd)]);
    Tensor kk = matmul(x, layer.wk[static_cast<size_t>(hd)]);
    Tensor vv = matmul(x, layer.wv[static_cast<size_t>(hd)]);
    Tensor scores = scale(matmul_nt(q, kk), scale_f);
    Tensor attn = masked_softmax_rows(scores, valid_len, valid_len);
    if (attn_export) {
      AttentionMatrix am;
      am.n = n;
      am.valid_len = valid_len;
      am.a.assign(static_cast<size_t>(n) * n, 0.0);
      masked_softmax_f64(scores.values(), n, n, valid_len, valid_len, am.a);
      attn_export->push_back(std::move(am));
    }
    head_outs.push_back(matmul(attn, vv));
  }
  return layer_tail(x, concat_cols(head_outs), layer, dropout_rate,
                    dropout_rng, training);
}

}  // namespace smartbird
