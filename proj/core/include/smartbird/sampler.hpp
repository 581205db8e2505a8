#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smartbird/rng.hpp"
#include "smartbird/sketch.hpp"

namespace smartbird {

// Token-pair selection strategies. SquaredInvLog is the default; the other
// four exist for the sampling-strategy ablation.
enum class SamplingStrategy {
  kRandom,
  kTopK,
  kRawWeight,
  kInvLog,
  kSquaredInvLog,
};

SamplingStrategy parse_strategy(const std::string& name);
std::string strategy_name(SamplingStrategy s);
std::vector<SamplingStrategy> all_strategies();

// Attention weights are clamped into [kAlphaMin, 1 - kAlphaMargin] before the
// log so ln(0) and the ln(1)=0 division singularity cannot occur.
constexpr double kAlphaMin = 1e-12;
constexpr double kAlphaMargin = 1e-6;

struct ScoreMatrix {
  int n = 0;
  int valid_len = 0;
  std::vector<double> p;  // sampling probability ceilings, PAD entries 0
  std::vector<double> s;  // drawn scores, s[i][j] in [0, p[i][j])

  double p_at(int i, int j) const { return p[static_cast<size_t>(i) * n + j]; }
  double s_at(int i, int j) const { return s[static_cast<size_t>(i) * n + j]; }
};

// Per-head N x K selection. Rows with fewer than K valid candidates carry
// slot_count < K; slots past slot_count hold 0 and are inert. PAD query rows
// have slot_count 0.
struct IndexMatrix {
  int n = 0;
  int k = 0;
  int valid_len = 0;
  std::vector<int32_t> idx;         // n*k
  std::vector<int32_t> slot_count;  // n

  int32_t at(int i, int slot) const {
    return idx[static_cast<size_t>(i) * k + slot];
  }
  // Checks the structural invariants; fills 'why' on failure.
  bool validate(std::string* why = nullptr) const;
};

// Applies the strategy's score transform to the sketched attention weights.
// Natural log; InvLog uses the positive form -1/ln(a).
ScoreMatrix sampling_scores(const AttentionMatrix& alpha,
                            SamplingStrategy strategy);

// Fills s[i][j] = p[i][j] * u with u ~ U[0,1); p = 0 implies s = 0. Draws are
// consumed row-major over valid (i, j) pairs only.
void draw_scores(ScoreMatrix& scores, SplitMix64& rng);

// Per row: the min(K, candidates) indices with largest s, ties broken toward
// the smaller index. include_self pins slot 0 to the query position.
IndexMatrix topk_rows(const ScoreMatrix& scores, int k, bool include_self);

// One IndexMatrix per head from independent substreams of
// (seed, tag_a, tag_b, layer, head). TopK ranks raw weights with no draws
// (all heads identical); Random degenerates to uniform selection per head.
std::vector<IndexMatrix> build_head_indices(const AttentionMatrix& alpha,
                                            SamplingStrategy strategy, int k,
                                            int n_heads, bool include_self,
                                            uint64_t seed, uint64_t tag_a,
                                            uint64_t tag_b, int layer);

}  // namespace smartbird
