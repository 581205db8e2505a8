#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "smartbird/sparse_attn.hpp"

using namespace smartbird;

namespace {

IndexMatrix full_indices(int n, int valid, int k) {
  IndexMatrix im;
  im.n = n;
  im.k = k;
  im.valid_len = valid;
  im.idx.assign(static_cast<size_t>(n) * k, 0);
  im.slot_count.assign(static_cast<size_t>(n), 0);
  for (int i = 0; i < valid; ++i) {
    const int count = std::min(k, valid);
    im.slot_count[static_cast<size_t>(i)] = count;
    for (int slot = 0; slot < count; ++slot)
      im.idx[static_cast<size_t>(i) * k + slot] = slot;
  }
  return im;
}

std::vector<IndexMatrix> full_indices_all_heads(int n, int valid, int heads) {
  return std::vector<IndexMatrix>(static_cast<size_t>(heads),
                                  full_indices(n, valid, n));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst,
                     std::fabs(static_cast<double>(a.values()[static_cast<size_t>(i)]) -
                               b.values()[static_cast<size_t>(i)]));
  return worst;
}

}  // namespace

TEST_CASE("gather_rows selects projected rows in index order") {
  Tensor src = Tensor::from({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
  IndexMatrix im;
  im.n = 4;
  im.k = 2;
  im.valid_len = 4;
  im.idx = {2, 0, 1, 1, 3, 2, 0, 3};
  im.slot_count = {2, 2, 2, 2};
  Tensor g = gather_rows(src, im);
  REQUIRE(g.shape() == Shape{4, 2, 2});
  // row 0 gathered [row2, row0]
  CHECK(g.values()[0] == 20.0f);
  CHECK(g.values()[1] == 21.0f);
  CHECK(g.values()[2] == 0.0f);
  CHECK(g.values()[3] == 1.0f);

  IndexMatrix bad = im;
  bad.idx[0] = 9;
  CHECK_THROWS_AS(gather_rows(src, bad), std::out_of_range);
}

TEST_CASE("gather gradient scatters additively (row gathered twice doubles)") {
  double worst = 0.0;
  for (int seed = 0; seed < 30; ++seed) {
    SplitMix64 rng(stream_seed(60, seed));
    Tensor src = Tensor::rand_uniform({5, 3}, -1.0f, 1.0f, rng, true);
    IndexMatrix im;
    im.n = 5;
    im.k = 2;
    im.valid_len = 5;
    im.idx = {1, 1, 0, 2, 3, 3, 4, 0, 2, 2};  // several rows gathered twice
    im.slot_count = {2, 2, 2, 2, 2};
    Tensor w = Tensor::rand_uniform({5 * 2 * 3, 1}, -1.0f, 1.0f, rng);
    const double err = gradcheck::max_param_rel_error({src}, [&]() {
      return sum(mul(reshape(gather_rows(src, im), {5 * 2 * 3, 1}), w));
    });
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-4);

  // direct check: duplicate slots double the incoming gradient
  Tensor src = Tensor::from({2, 1}, {1.0f, 2.0f}, true);
  IndexMatrix dup;
  dup.n = 2;
  dup.k = 2;
  dup.valid_len = 2;
  dup.idx = {0, 0, 1, 0};
  dup.slot_count = {2, 2};
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(gather_rows(src, dup)));
  CHECK(src.grad()[0] == doctest::Approx(3.0));  // gathered 3 times in total
  CHECK(src.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("sparse attention head basics") {
  SplitMix64 rng(71);
  SUBCASE("K=1 returns the gathered value row exactly") {
    const int n = 3, dh = 4;
    Tensor q = Tensor::rand_uniform({n, dh}, -1.0f, 1.0f, rng);
    Tensor gk = Tensor::rand_uniform({n, 1, dh}, -1.0f, 1.0f, rng);
    Tensor gv = Tensor::rand_uniform({n, 1, dh}, -1.0f, 1.0f, rng);
    IndexMatrix im = full_indices(n, n, 1);
    Tensor out = sparse_attention_head(q, gk, gv, im);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(out.values()[static_cast<size_t>(i)] ==
            doctest::Approx(gv.values()[static_cast<size_t>(i)]).epsilon(1e-6));
  }
  SUBCASE("zero queries give uniform slot weights") {
    const int n = 2, k = 4, dh = 3;
    Tensor q = Tensor::zeros({n, dh});
    Tensor gk = Tensor::rand_uniform({n, k, dh}, -1.0f, 1.0f, rng);
    Tensor gv = Tensor::rand_uniform({n, k, dh}, -1.0f, 1.0f, rng);
    IndexMatrix im = full_indices(n, n, k);
    im.slot_count = {k, k};
    Tensor out = sparse_attention_head(q, gk, gv, im);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dh; ++j) {
        double mean = 0.0;
        for (int slot = 0; slot < k; ++slot)
          mean += gv.values()[(static_cast<size_t>(i) * k + slot) * dh + j] / k;
        CHECK(out.values()[static_cast<size_t>(i) * dh + j] ==
              doctest::Approx(mean).epsilon(1e-5));
      }
  }
  SUBCASE("PAD query rows produce zero vectors") {
    const int n = 3, dh = 2;
    Tensor q = Tensor::rand_uniform({n, dh}, -1.0f, 1.0f, rng);
    Tensor gk = Tensor::rand_uniform({n, 2, dh}, -1.0f, 1.0f, rng);
    Tensor gv = Tensor::rand_uniform({n, 2, dh}, -1.0f, 1.0f, rng);
    IndexMatrix im = full_indices(n, 1, 2);
    Tensor out = sparse_attention_head(q, gk, gv, im);
    for (int j = 0; j < dh; ++j) {
      CHECK(out.values()[2 + static_cast<size_t>(j)] == 0.0f);
      CHECK(out.values()[4 + static_cast<size_t>(j)] == 0.0f);
    }
  }
}

TEST_CASE("zero-weight layer passes residuals through two layer norms") {
  SplitMix64 rng(81);
  AttnLayerParams layer = make_attn_layer(8, 2, rng);
  for (Tensor* t : {&layer.wo, &layer.ffn_w1, &layer.ffn_w2}) {
    std::fill(t->values().begin(), t->values().end(), 0.0f);
  }
  for (int hd = 0; hd < 2; ++hd) {
    std::fill(layer.wq[static_cast<size_t>(hd)].values().begin(),
              layer.wq[static_cast<size_t>(hd)].values().end(), 0.0f);
    std::fill(layer.wk[static_cast<size_t>(hd)].values().begin(),
              layer.wk[static_cast<size_t>(hd)].values().end(), 0.0f);
    std::fill(layer.wv[static_cast<size_t>(hd)].values().begin(),
              layer.wv[static_cast<size_t>(hd)].values().end(), 0.0f);
  }
  Tensor x = Tensor::rand_uniform({5, 8}, -1.0f, 1.0f, rng);
  Tensor out = sparse_layer_forward(x, full_indices_all_heads(5, 5, 2), layer,
                                    5, 0.0, nullptr, false);
  REQUIRE(out.shape() == Shape{5, 8});
  Tensor expect = layer_norm(layer_norm(x, layer.ln1_g, layer.ln1_b),
                             layer.ln2_g, layer.ln2_b);
  CHECK(max_abs_diff(out, expect) < 1e-6);
}

TEST_CASE("full-index sparse layer equals the dense layer, fwd and grad") {
  // 50 random weight/seed draws with N <= 32, K = N, full index matrices
  double worst_fwd = 0.0, worst_grad = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    SplitMix64 rng(stream_seed(1900, seed));
    const int n = 2 + static_cast<int>(rng.bounded(31));
    const int heads = (seed % 2) ? 2 : 4;
    const int dim = heads * (2 + static_cast<int>(rng.bounded(3)) * 2);
    const int valid = 1 + static_cast<int>(rng.bounded(static_cast<uint64_t>(n)));
    AttnLayerParams layer = make_attn_layer(dim, heads, rng);
    Tensor x = Tensor::rand_uniform({n, dim}, -1.0f, 1.0f, rng, true);

    NamedParams named;
    layer.collect_params(named, "");
    std::vector<Tensor> params;
    params.push_back(x);
    for (auto& [name, t] : named) params.push_back(t);

    auto run = [&](bool sparse) {
      if (sparse)
        return sparse_layer_forward(x, full_indices_all_heads(n, valid, heads),
                                    layer, valid, 0.0, nullptr, false);
      return dense_layer_forward(x, layer, valid, 0.0, nullptr, false, nullptr);
    };

    Tensor dense_out = run(false);
    Tensor sparse_out = run(true);
    // PAD rows differ only through the (masked) attention path; compare all.
    worst_fwd = std::max(worst_fwd, max_abs_diff(dense_out, sparse_out));

    // end-to-end loss gradients on every parameter
    std::vector<std::vector<float>> dense_grads, sparse_grads;
    for (int variant = 0; variant < 2; ++variant) {
      zero_grads(std::span<Tensor>(params));
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(run(variant == 1)));
      auto& sink = (variant == 1) ? sparse_grads : dense_grads;
      sink.clear();
      for (Tensor& p : params) {
        auto g = p.grad();
        sink.emplace_back(g.begin(), g.end());
      }
    }
    for (size_t pi = 0; pi < params.size(); ++pi) {
      std::vector<double> a(dense_grads[pi].begin(), dense_grads[pi].end());
      std::vector<double> b(sparse_grads[pi].begin(), sparse_grads[pi].end());
      worst_grad = std::max(worst_grad, gradcheck::rel_error(a, b));
    }
  }
  CHECK(worst_fwd < 1e-5);
  CHECK(worst_grad < 1e-3);
}

TEST_CASE("head count mismatch is rejected") {
  SplitMix64 rng(4242);
  AttnLayerParams layer = make_attn_layer(8, 2, rng);
  Tensor x = Tensor::rand_uniform({4, 8}, -1.0f, 1.0f, rng);
  CHECK_THROWS_AS(
      sparse_layer_forward(x, full_indices_all_heads(4, 4, 3), layer, 4, 0.0,
                           nullptr, false),
      std::invalid_argument);
}

TEST_CASE("output is invariant to slot order within a row") {
  SplitMix64 rng(2077);
  const int n = 6, heads = 2, dim = 8, k = 4;
  AttnLayerParams layer = make_attn_layer(dim, heads, rng);
  Tensor x = Tensor::rand_uniform({n, dim}, -1.0f, 1.0f, rng);

  std::vector<IndexMatrix> idx, idx_perm;
  for (int hd = 0; hd < heads; ++hd) {
    IndexMatrix im;
    im.n = n;
    im.k = k;
    im.valid_len = n;
    im.slot_count.assign(static_cast<size_t>(n), k);
    for (int i = 0; i < n; ++i) {
      std::vector<int32_t> cols{0, 1, 2, 3, 4, 5};
      SplitMix64 r2(stream_seed(3000, hd, i));
      r2.shuffle(cols);
      cols.resize(k);
      for (int slot = 0; slot < k; ++slot) im.idx.push_back(cols[static_cast<size_t>(slot)]);
    }
    IndexMatrix perm = im;
    for (int i = 0; i < n; ++i) {
      // rotate the slots of each row
      std::rotate(perm.idx.begin() + static_cast<int64_t>(i) * k,
                  perm.idx.begin() + static_cast<int64_t>(i) * k + 1,
                  perm.idx.begin() + static_cast<int64_t>(i) * k + k);
    }
    idx.push_back(std::move(im));
    idx_perm.push_back(std::move(perm));
  }
  Tensor a = sparse_layer_forward(x, idx, layer, n, 0.0, nullptr, false);
  Tensor b = sparse_layer_forward(x, idx_perm, layer, n, 0.0, nullptr, false);
  CHECK(max_abs_diff(a, b) < 1e-6);
}

TEST_CASE("one-layer sparse model gradcheck against finite differences") {
  // N=8, D=8, h=2, K=3, frozen indices
  double worst = 0.0;
  int accepted = 0;
  for (int seed = 0; accepted < 10 && seed < 120; ++seed) {
    SplitMix64 rng(stream_seed(2222, seed));
    const int n = 8, dim = 8, heads = 2, k = 3;
    AttnLayerParams layer = make_attn_layer(dim, heads, rng);
    Tensor x = Tensor::rand_uniform({n, dim}, -1.0f, 1.0f, rng, true);

    std::vector<IndexMatrix> idx;
    for (int hd = 0; hd < heads; ++hd) {
      IndexMatrix im;
      im.n = n;
      im.k = k;
      im.valid_len = n;
      im.slot_count.assign(static_cast<size_t>(n), k);
      for (int i = 0; i < n; ++i) {
        std::vector<int32_t> cols(static_cast<size_t>(n));
        for (int c = 0; c < n; ++c) cols[static_cast<size_t>(c)] = c;
        SplitMix64 r2(stream_seed(4000, seed, hd, i));
        r2.shuffle(cols);
        for (int slot = 0; slot < k; ++slot) im.idx.push_back(cols[static_cast<size_t>(slot)]);
      }
      idx.push_back(std::move(im));
    }

    NamedParams named;
    layer.collect_params(named, "");
    std::vector<Tensor> params{x};
    for (auto& [name, t] : named) params.push_back(t);
    Tensor w = Tensor::rand_uniform({n, dim}, -1.0f, 1.0f, rng);

    auto loss_fn = [&]() {
      Tensor out = sparse_layer_forward(x, idx, layer, n, 0.0, nullptr, false);
      return sum(mul(out, w));
    };
    if (!gradcheck::kink_free(loss_fn, 1e-2)) continue;
    ++accepted;
    // step 2e-3: the f32 stores of the elementwise readout set the noise
    // floor of the central difference here
    worst = std::max(worst,
                     gradcheck::max_param_rel_error(params, loss_fn, 2e-3));
  }
  REQUIRE(accepted == 10);
  CHECK(worst < 1e-3);
}
