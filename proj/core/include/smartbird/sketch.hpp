#pragma once

#include <vector>

#include "smartbird/checkpoint.hpp"
#include "smartbird/tensor.hpp"
#include "smartbird/textpipe.hpp"

namespace smartbird {

// Row-stochastic attention matrix exported for sampling. Kept in float64 so
// downstream score transforms are not limited by the f32 tensor store.
struct AttentionMatrix {
  int n = 0;
  int valid_len = 0;
  std::vector<double> a;  // n*n row-major; PAD rows/columns exactly 0

  double at(int i, int j) const {
    return a[static_cast<size_t>(i) * n + j];
  }
  double& at(int i, int j) { return a[static_cast<size_t>(i) * n + j]; }
};

// One single-head low-dimensional encoder layer.
struct SketchLayerParams {
  Tensor wq, wk, wv;            // d x d
  Tensor ffn_w1, ffn_b1;        // d x 2d, 2d
  Tensor ffn_w2, ffn_b2;        // 2d x d, d
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct SketchModel {
  int d = 0;
  int n_max = 0;
  int n_classes = 0;
  bool use_positional = true;
  bool frozen = false;

  Tensor emb;  // V x d, PCA-initialized
  Tensor pe;   // n_max x d sinusoidal table, not a parameter
  std::vector<SketchLayerParams> layers;
  Tensor pool_p, pool_v;  // d x d, d x 1
  Tensor cls_w, cls_b;    // d x C, C

  std::vector<Tensor> params() const;
  NamedParams named_params() const;
};

SketchModel make_sketch_model(int vocab_size, int d, int n_layers,
                              int n_classes, int n_max, bool use_positional,
                              uint64_t init_seed);
void init_tiny_embedding(SketchModel& model, const EmbeddingTable& table);

// Standard sin/cos positional table.
Tensor sinusoidal_positions(int n, int d);

struct SketchForwardResult {
  Tensor hidden;   // N x d
  Tensor pooled;   // 1 x d
  Tensor logits;   // 1 x C
  std::vector<AttentionMatrix> attn;  // one per layer when requested
};

// Per layer: scaled dot-product scores with PAD keys masked, row softmax,
// post-norm residual sublayers. want_attention exports each layer's float64
// attention matrix (the frozen/guidance path computes softmax only once).
SketchForwardResult sketch_forward(const SketchModel& model, const Example& ex,
                                   bool training, double dropout_rate,
                                   SplitMix64* dropout_rng,
                                   bool want_attention);

// Additive attention pooling: w = softmax(v^T tanh(P H_i)) over valid rows,
// returns [1,d] = w·H.
Tensor attention_pool(const Tensor& hidden, const Tensor& pool_p,
                      const Tensor& pool_v, int valid_len);

// Linear classification head; softmax lives inside the loss.
Tensor sketch_predict(const Tensor& pooled, const Tensor& cls_w,
                      const Tensor& cls_b);

}  // namespace smartbird
