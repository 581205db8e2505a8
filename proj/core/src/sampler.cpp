#include "smartbird/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace smartbird {

SamplingStrategy parse_strategy(const std::string& name) {
  if (name == "random") return SamplingStrategy::kRandom;
  if (name == "top_k") return SamplingStrategy::kTopK;
  if (name == "raw_weight") return SamplingStrategy::kRawWeight;
  if (name == "inv_log") return SamplingStrategy::kInvLog;
  if (name == "squared_inv_log") return SamplingStrategy::kSquaredInvLog;
  throw std::invalid_argument("unknown sampling strategy: " + name);
}

std::string strategy_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::kRandom: return "random";
    case SamplingStrategy::kTopK: return "top_k";
    case SamplingStrategy::kRawWeight: return "raw_weight";
    case SamplingStrategy::kInvLog: return "inv_log";
    case SamplingStrategy::kSquaredInvLog: return "squared_inv_log";
  }
  return "?";
}

std::vector<SamplingStrategy> all_strategies() {
  return {SamplingStrategy::kRandom, SamplingStrategy::kTopK,
          SamplingStrategy::kRawWeight, SamplingStrategy::kInvLog,
          SamplingStrategy::kSquaredInvLog};
}

bool IndexMatrix::validate(std::string* why) const {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (static_cast<int>(idx.size()) != n * k ||
      static_cast<int>(slot_count.size()) != n)
    return fail("storage size mismatch");
  std::unordered_set<int32_t> seen;
  for (int i = 0; i < n; ++i) {
    const int count = slot_count[static_cast<size_t>(i)];
    if (i >= valid_len) {
      if (count != 0) return fail("PAD query row has active slots");
      continue;
    }
    if (count < 1 || count > k) return fail("bad slot count");
    seen.clear();
    for (int slot = 0; slot < count; ++slot) {
      const int32_t j = at(i, slot);
      if (j < 0 || j >= valid_len)
        return fail("index " + std::to_string(j) + " outside valid range");
      if (!seen.insert(j).second)
        return fail("duplicate index in row " + std::to_string(i));
    }
  }
  return true;
}

ScoreMatrix sampling_scores(const AttentionMatrix& alpha,
                            SamplingStrategy strategy) {
  ScoreMatrix out;
  out.n = alpha.n;
  out.valid_len = alpha.valid_len;
  out.p.assign(static_cast<size_t>(alpha.n) * alpha.n, 0.0);
  out.s.assign(out.p.size(), 0.0);

  const int v = std::min(alpha.valid_len, alpha.n);
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < v; ++j) {
      const double a =
          std::clamp(alpha.at(i, j), kAlphaMin, 1.0 - kAlphaMargin);
      double p = 0.0;
      switch (strategy) {
        case SamplingStrategy::kRandom:
          p = 1.0;
          break;
        case SamplingStrategy::kTopK:
        case SamplingStrategy::kRawWeight:
          p = a;
          break;
        case SamplingStrategy::kInvLog:
          p = -1.0 / std::log(a);
          break;
        case SamplingStrategy::kSquaredInvLog: {
          const double inv = 1.0 / std::log(a);
          p = inv * inv;
          break;
        }
      }
      out.p[static_cast<size_t>(i) * alpha.n + j] = p;
    }
  }
  return out;
}

void draw_scores(ScoreMatrix& scores, SplitMix64& rng) {
  const int n = scores.n;
  const int v = std::min(scores.valid_len, n);
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < v; ++j) {
      const size_t off = static_cast<size_t>(i) * n + j;
      const double p = scores.p[off];
      scores.s[off] = (p > 0.0) ? p * rng.uniform01() : 0.0;
    }
  }
}

IndexMatrix topk_rows(const ScoreMatrix& scores, int k, bool include_self) {
  if (k < 1) throw std::invalid_argument("topk_rows: K must be >= 1");
  IndexMatrix im;
  im.n = scores.n;
  im.k = k;
  im.valid_len = std::min(scores.valid_len, scores.n);
  im.idx.assign(static_cast<size_t>(im.n) * k, 0);
  im.slot_count.assign(static_cast<size_t>(im.n), 0);

  std::vector<int32_t> order;
  for (int i = 0; i < im.valid_len; ++i) {
    const double* srow = scores.s.data() + static_cast<size_t>(i) * im.n;
    int32_t* out = im.idx.data() + static_cast<size_t>(i) * k;
    int filled = 0;
    int budget = std::min(k, im.valid_len);
    if (include_self) {
      out[filled++] = i;
    }
    order.clear();
    for (int32_t j = 0; j < im.valid_len; ++j)
      if (!include_self || j != i) order.push_back(j);
    const int take = std::min<int>(budget - filled, static_cast<int>(order.size()));
    auto better = [srow](int32_t a, int32_t b) {
      if (srow[a] != srow[b]) return srow[a] > srow[b];
      return a < b;
    };
    if (take > 0) {
      std::partial_sort(order.begin(), order.begin() + take, order.end(),
                        better);
      for (int t = 0; t < take; ++t) out[filled++] = order[static_cast<size_t>(t)];
    }
    im.slot_count[static_cast<size_t>(i)] = filled;
  }
  return im;
}

std::vector<IndexMatrix> build_head_indices(const AttentionMatrix& alpha,
                                            SamplingStrategy strategy, int k,
                                            int n_heads, bool include_self,
                                            uint64_t seed, uint64_t tag_a,
                                            uint64_t tag_b, int layer) {
  if (n_heads < 1) throw std::invalid_argument("need at least one head");
  ScoreMatrix base = sampling_scores(alpha, strategy);
  std::vector<IndexMatrix> out;
  out.reserve(static_cast<size_t>(n_heads));
  for (int head = 0; head < n_heads; ++head) {
    if (strategy == SamplingStrategy::kTopK) {
      // Rank raw attention weights directly; no randomness, heads agree.
      base.s = base.p;
    } else {
      SplitMix64 rng(stream_seed(
          seed, tag_a,
          tag_b ^ (static_cast<uint64_t>(layer) << 32),
          static_cast<uint64_t>(head)));
      draw_scores(base, rng);
    }
    out.push_back(topk_rows(base, k, include_self));
  }
  return out;
}

}  // namespace smartbird
