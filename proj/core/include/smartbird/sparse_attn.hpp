#pragma once

#include <vector>

#include "smartbird/sampler.hpp"
#include "smartbird/tensor.hpp"

namespace smartbird {

// Multi-head encoder layer parameters, shared between the sparse path and the
// dense reference path so the two can be compared on identical weights.
struct AttnLayerParams {
  int dim = 0;       // D
  int heads = 0;     // h
  int head_dim = 0;  // D/h

  std::vector<Tensor> wq, wk, wv;  // per head: D x (D/h)
  Tensor wo;                       // D x D
  Tensor ffn_w1, ffn_b1;           // D x 2D, 2D
  Tensor ffn_w2, ffn_b2;           // 2D x D, D
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;

  void collect_params(std::vector<std::pair<std::string, Tensor>>& out,
                      const std::string& prefix) const;
};

AttnLayerParams make_attn_layer(int dim, int heads, SplitMix64& rng);

// Key/value tensors gathered per query position: one [N, K, D/h] pair per
// head, plus the index matrices they were built from.
struct GatheredKV {
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
  std::vector<IndexMatrix> indices;
};

// Projects X through each head's key/value maps, then gathers the rows named
// by that head's index matrix. Backward scatters gradients additively into
// the projected rows (a row gathered twice receives both contributions).
GatheredKV gather_kv(const Tensor& x, const std::vector<IndexMatrix>& indices,
                     const AttnLayerParams& layer);

// Gathers rows of src ([N, dh]) by one index matrix into [N, K, dh]; inert
// slots are zero-filled.
Tensor gather_rows(const Tensor& src, const IndexMatrix& im);

// Attention over the K gathered slots of one head: softmax(Q_i·K_{i,k}/√dh)
// masked to active slots, applied to the gathered values. PAD query rows
// yield zero vectors.
Tensor sparse_attention_head(const Tensor& q, const Tensor& gathered_k,
                             const Tensor& gathered_v, const IndexMatrix& im);

// Full layer: per-head sparse attention, concat, output projection, then two
// post-norm residual sublayers.
Tensor sparse_layer_forward(const Tensor& x,
                            const std::vector<IndexMatrix>& indices,
                            const AttnLayerParams& layer, int valid_len,
                            double dropout_rate, SplitMix64* dropout_rng,
                            bool training);

// Dense multi-head reference with identical parameters. When attn_export is
// non-null it receives each head's float64 attention matrix.
Tensor dense_layer_forward(const Tensor& x, const AttnLayerParams& layer,
                           int valid_len, double dropout_rate,
                           SplitMix64* dropout_rng, bool training,
                           std::vector<AttentionMatrix>* attn_export);

}  // namespace smartbird
