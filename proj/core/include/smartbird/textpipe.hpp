#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "smartbird/rng.hpp"

namespace smartbird {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kNumSpecial = 2;

  std::unordered_map<std::string, int> to_id;
  std::vector<std::string> tokens;  // id -> token; [0]=<pad>, [1]=<unk>
  int min_freq = 1;

  int size() const { return static_cast<int>(tokens.size()); }
  int id(const std::string& tok) const {
    auto it = to_id.find(tok);
    return it == to_id.end() ? kUnk : it->second;
  }
  uint64_t content_hash() const;
};

// Lowercases ASCII letters, drops punctuation, splits on whitespace.
std::vector<std::string> tokenize(const std::string& text);

// Keeps tokens with corpus frequency >= min_freq, ordered by
// (frequency desc, token asc) after the PAD/UNK specials.
Vocab build_vocab(const std::vector<std::vector<std::string>>& docs,
                  int min_freq);

// ---------------------------------------------------------------------------
// Encoded examples
// ---------------------------------------------------------------------------

struct Example {
  std::vector<int> token_ids;  // right-padded with PAD to a fixed length
  int attn_len = 0;            // count of real tokens, >= 1
  int label = -1;
};

Example encode(const std::vector<std::string>& text_tokens, const Vocab& vocab,
               int max_len);
// Inverse of encode on in-vocab tokens, PAD stripped.
std::vector<std::string> decode(const Example& ex, const Vocab& vocab);

struct Dataset {
  std::vector<Example> examples;
  int n_classes = 0;
  int max_len = 0;
};

// ---------------------------------------------------------------------------
// Embeddings + PCA
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  int vocab_size = 0;
  int dim_full = 0;  // D
  int dim_tiny = 0;  // d
  std::vector<float> full;  // V x D, PAD row zero
  std::vector<float> tiny;  // V x d, PAD row zero
};

struct PcaResult {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> mean;        // column means, length D
  std::vector<double> components;  // d x D row-major, orthonormal
  std::vector<double> eigenvalues; // length d, non-increasing
  std::vector<float> projected;    // V x d
};

// Centers rows, extracts the top-d covariance eigenvectors by orthogonal
// power iteration with deflation (200 iterations or residual < 1e-8), fixes
// each component's sign so its largest-magnitude entry is positive.
PcaResult pca_project(const std::vector<float>& table, int v, int big_d,
                      int out_d);

// Xavier-uniform random table; PAD row zeroed. When glove_path is nonempty,
// rows for matching tokens are imported from lines "<token> <f1> ... <fD>".
EmbeddingTable build_embeddings(const Vocab& vocab, int dim_full, int dim_tiny,
                                uint64_t seed, const std::string& glove_path);

// ---------------------------------------------------------------------------
// Synthetic long-range classification task
// ---------------------------------------------------------------------------

// Sequences of uniform noise tokens with two signal tokens planted at
// positions >= pair_gap apart. Signal identities s1, s2 index a reserved id
// range and label = (s1 + s2) mod n_classes, so no additive bag-of-words
// model can recover the label while a pair interaction can.
struct SynthSpec {
  uint64_t seed = 1;
  int n_examples = 0;
  int seq_len = 0;     // N
  int vocab_size = 0;  // ids [0, vocab_size), 0/1 reserved
  int pair_gap = 0;
  int n_classes = 4;
};

Dataset synth_task(const SynthSpec& spec);

// First signal id; signal ids are [kSignalBase, kSignalBase + n_classes).
constexpr int kSignalBase = 2;

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

// Corpus: UTF-8 text, one example per line: "<label>\t<text>".
std::vector<std::pair<int, std::vector<std::string>>> read_corpus(
    const std::string& path);

// Vocabulary file: one token per line, line number = id - 2.
void write_vocab_file(const Vocab& vocab, const std::string& path);
Vocab read_vocab_file(const std::string& path, int min_freq);

}  // namespace smartbird
