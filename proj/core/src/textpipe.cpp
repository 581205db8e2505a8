#include "smartbird/textpipe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "smartbird/checkpoint.hpp"

namespace smartbird {

uint64_t Vocab::content_hash() const { return fnv1a_hash(tokens); }

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalpha(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (std::isdigit(c) || c >= 0x80) {
      // digits kept; non-ASCII bytes passed through untouched
      cur += static_cast<char>(c);
    }
    // ASCII punctuation dropped
  }
  flush();
  return out;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& docs,
                  int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  std::unordered_map<std::string, int64_t> freq;
  int64_t total = 0;
  for (const auto& doc : docs) {
    for (const auto& tok : doc) {
      ++freq[tok];
      ++total;
    }
  }
  if (total == 0)
    throw std::invalid_argument("build_vocab: empty corpus");

  std::vector<std::pair<std::string, int64_t>> kept;
  kept.reserve(freq.size());
  for (auto& [tok, f] : freq)
    if (f >= min_freq) kept.emplace_back(tok, f);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.min_freq = min_freq;
  v.tokens = {"<pad>", "<unk>"};
  for (auto& [tok, f] : kept) v.tokens.push_back(tok);
  for (int i = 0; i < v.size(); ++i) v.to_id[v.tokens[i]] = i;
  return v;
}

Example encode(const std::vector<std::string>& text_tokens, const Vocab& vocab,
               int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (text_tokens.empty()) {
    throw std::invalid_argument(
        "encode: empty text violates attn_len >= 1");
  }
  Example ex;
  ex.token_ids.assign(static_cast<size_t>(max_len), Vocab::kPad);
  ex.attn_len = std::min<int>(static_cast<int>(text_tokens.size()), max_len);
  for (int i = 0; i < ex.attn_len; ++i)
    ex.token_ids[static_cast<size_t>(i)] =
        vocab.id(text_tokens[static_cast<size_t>(i)]);
  return ex;
}

std::vector<std::string> decode(const Example& ex, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int i = 0; i < ex.attn_len; ++i)
    out.push_back(vocab.tokens[static_cast<size_t>(
        ex.token_ids[static_cast<size_t>(i)])]);
  return out;
}

// ---------------------------------------------------------------------------
// PCA by orthogonal power iteration with deflation
// ---------------------------------------------------------------------------

namespace {

// Jacobi eigendecomposition of a small symmetric matrix; returns eigenvalues
// on the diagonal of `a` and accumulates the rotation into `rot` (n x n).
void jacobi_symmetric(std::vector<double>& a, std::vector<double>& rot, int n) {
  rot.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) rot[static_cast<size_t>(i) * n + i] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q)
        off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
    if (off < 1e-26) return;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p) * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = 0.5 * std::atan2(2.0 * apq,
                                              a[static_cast<size_t>(q) * n + q] -
                                                  a[static_cast<size_t>(p) * n + p]);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<size_t>(k) * n + p];
          const double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<size_t>(p) * n + k];
          const double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double rkp = rot[static_cast<size_t>(k) * n + p];
          const double rkq = rot[static_cast<size_t>(k) * n + q];
          rot[static_cast<size_t>(k) * n + p] = c * rkp - s * rkq;
          rot[static_cast<size_t>(k) * n + q] = s * rkp + c * rkq;
        }
      }
    }
  }
}

}  // namespace

PcaResult pca_project(const std::vector<float>& table, int v, int big_d,
                      int out_d) {
  if (out_d < 1 || out_d > big_d) {
    throw std::invalid_argument("pca_project: need 1 <= d <= D, got d=" +
                                std::to_string(out_d) +
                                " D=" + std::to_string(big_d));
  }
  if (v < 2) throw std::invalid_argument("pca_project: need at least 2 rows");
  if (static_cast<int64_t>(table.size()) !=
      static_cast<int64_t>(v) * big_d) {
    throw std::invalid_argument("pca_project: table size mismatch");
  }

  PcaResult r;
  r.in_dim = big_d;
  r.out_dim = out_d;
  r.mean.assign(static_cast<size_t>(big_d), 0.0);
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < big_d; ++j)
      r.mean[static_cast<size_t>(j)] +=
          table[static_cast<size_t>(i) * big_d + j];
  for (double& m : r.mean) m /= v;

  // Sample covariance of the centered rows (denominator V-1).
  std::vector<double> cov(static_cast<size_t>(big_d) * big_d, 0.0);
  std::vector<double> crow(static_cast<size_t>(big_d));
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < big_d; ++j)
      crow[static_cast<size_t>(j)] =
          table[static_cast<size_t>(i) * big_d + j] -
          r.mean[static_cast<size_t>(j)];
    for (int a = 0; a < big_d; ++a)
      for (int b = a; b < big_d; ++b)
        cov[static_cast<size_t>(a) * big_d + b] +=
            crow[static_cast<size_t>(a)] * crow[static_cast<size_t>(b)];
  }
  for (int a = 0; a < big_d; ++a)
    for (int b = a; b < big_d; ++b) {
      cov[static_cast<size_t>(a) * big_d + b] /= (v - 1);
      cov[static_cast<size_t>(b) * big_d + a] =
          cov[static_cast<size_t>(a) * big_d + b];
    }

  r.components.assign(static_cast<size_t>(out_d) * big_d, 0.0);
  r.eigenvalues.assign(static_cast<size_t>(out_d), 0.0);

  SplitMix64 rng(stream_seed(0xC0FFEEull, static_cast<uint64_t>(big_d)));
  std::vector<double> vec(static_cast<size_t>(big_d));
  std::vector<double> w(static_cast<size_t>(big_d));
  constexpr int kMaxIters = 200;
  constexpr double kResidTol = 1e-8;

  for (int comp = 0; comp < out_d; ++comp) {
    for (double& x : vec) x = rng.uniform(-1.0, 1.0);
    auto orthogonalize = [&](std::vector<double>& u) {
      for (int p = 0; p < comp; ++p) {
        const double* up = r.components.data() + static_cast<size_t>(p) * big_d;
        double dot = 0.0;
        for (int j = 0; j < big_d; ++j) dot += u[static_cast<size_t>(j)] * up[j];
        for (int j = 0; j < big_d; ++j) u[static_cast<size_t>(j)] -= dot * up[j];
      }
    };
    auto normalize = [&](std::vector<double>& u) {
      double nrm = 0.0;
      for (double x : u) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-300) {
        // degenerate start, reseed deterministically
        for (double& x : u) x = rng.uniform(-1.0, 1.0);
        return false;
      }
      for (double& x : u) x /= nrm;
      return true;
    };
    orthogonalize(vec);
    normalize(vec);

    double lambda = 0.0;
    for (int it = 0; it < kMaxIters; ++it) {
      for (int a = 0; a < big_d; ++a) {
        double s = 0.0;
        const double* row = cov.data() + static_cast<size_t>(a) * big_d;
        for (int j = 0; j < big_d; ++j) s += row[j] * vec[static_cast<size_t>(j)];
        w[static_cast<size_t>(a)] = s;
      }
      orthogonalize(w);
      lambda = 0.0;
      for (int j = 0; j < big_d; ++j)
        lambda += vec[static_cast<size_t>(j)] * w[static_cast<size_t>(j)];
      double resid = 0.0;
      for (int j = 0; j < big_d; ++j) {
        const double diff = w[static_cast<size_t>(j)] -
                            lambda * vec[static_cast<size_t>(j)];
        resid += diff * diff;
      }
      if (!normalize(w)) break;
      vec.swap(w);
      if (std::sqrt(resid) < kResidTol) break;
    }

    std::copy(vec.begin(), vec.end(),
              r.components.begin() + static_cast<size_t>(comp) * big_d);
    r.eigenvalues[static_cast<size_t>(comp)] = std::max(lambda, 0.0);
  }

  // Rayleigh-Ritz refinement: when close eigenvalues stall the power
  // iteration inside the 200-step budget, the basis still spans the leading
  // subspace; rotating it to diagonalize the projected covariance makes the
  // output components exact eigenvector estimates (and the projected columns
  // uncorrelated).
  {
    std::vector<double> t(static_cast<size_t>(out_d) * out_d, 0.0);
    std::vector<double> su(static_cast<size_t>(big_d));
    for (int a = 0; a < out_d; ++a) {
      const double* ua = r.components.data() + static_cast<size_t>(a) * big_d;
      for (int row = 0; row < big_d; ++row) {
        double s = 0.0;
        const double* crow = cov.data() + static_cast<size_t>(row) * big_d;
        for (int j = 0; j < big_d; ++j) s += crow[j] * ua[j];
        su[static_cast<size_t>(row)] = s;
      }
      for (int b = 0; b < out_d; ++b) {
        const double* ub = r.components.data() + static_cast<size_t>(b) * big_d;
        double s = 0.0;
        for (int j = 0; j < big_d; ++j) s += ub[j] * su[static_cast<size_t>(j)];
        t[static_cast<size_t>(a) * out_d + b] = s;
      }
    }
    std::vector<double> rot;
    jacobi_symmetric(t, rot, out_d);
    std::vector<std::pair<double, int>> ritz;
    for (int j = 0; j < out_d; ++j)
      ritz.emplace_back(t[static_cast<size_t>(j) * out_d + j], j);
    std::sort(ritz.rbegin(), ritz.rend());

    std::vector<double> rotated(static_cast<size_t>(out_d) * big_d, 0.0);
    for (int outc = 0; outc < out_d; ++outc) {
      const int src_col = ritz[static_cast<size_t>(outc)].second;
      r.eigenvalues[static_cast<size_t>(outc)] =
          std::max(ritz[static_cast<size_t>(outc)].first, 0.0);
      double* dst = rotated.data() + static_cast<size_t>(outc) * big_d;
      for (int a = 0; a < out_d; ++a) {
        const double coef = rot[static_cast<size_t>(a) * out_d + src_col];
        const double* ua = r.components.data() + static_cast<size_t>(a) * big_d;
        for (int j = 0; j < big_d; ++j) dst[j] += coef * ua[j];
      }
    }
    r.components = std::move(rotated);
  }

  // Sign convention: largest-magnitude entry of each component positive.
  for (int comp = 0; comp < out_d; ++comp) {
    double* u = r.components.data() + static_cast<size_t>(comp) * big_d;
    int arg = 0;
    for (int j = 1; j < big_d; ++j)
      if (std::fabs(u[j]) > std::fabs(u[arg])) arg = j;
    if (u[arg] < 0.0)
      for (int j = 0; j < big_d; ++j) u[j] = -u[j];
  }

  r.projected.assign(static_cast<size_t>(v) * out_d, 0.0f);
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < big_d; ++j)
      crow[static_cast<size_t>(j)] =
          table[static_cast<size_t>(i) * big_d + j] -
          r.mean[static_cast<size_t>(j)];
    for (int comp = 0; comp < out_d; ++comp) {
      const double* u = r.components.data() + static_cast<size_t>(comp) * big_d;
      double s = 0.0;
      for (int j = 0; j < big_d; ++j) s += crow[static_cast<size_t>(j)] * u[j];
      r.projected[static_cast<size_t>(i) * out_d + comp] =
          static_cast<float>(s);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Embedding construction
// ---------------------------------------------------------------------------

static void import_glove(std::vector<float>& full, const Vocab& vocab, int d,
                         const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open embedding file: " + path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    auto it = vocab.to_id.find(tok);
    if (it == vocab.to_id.end()) {
      continue;
    }
    for (int j = 0; j < d; ++j) {
      double x;
      if (!(ss >> x)) {
        throw std::runtime_error("embedding line for '" + tok + "' has fewer than " +
                                 std::to_string(d) + " values");
      }
      full[static_cast<size_t>(it->second) * d + j] = static_cast<float>(x);
    }
  }
}

EmbeddingTable build_embeddings(const Vocab& vocab, int dim_full, int dim_tiny,
                                uint64_t seed, const std::string& glove_path) {
  EmbeddingTable t;
  t.vocab_size = vocab.size();
  t.dim_full = dim_full;
  t.dim_tiny = dim_tiny;
  t.full.assign(static_cast<size_t>(t.vocab_size) * dim_full, 0.0f);

  SplitMix64 rng(stream_seed(seed, 0x9eabull));
  xavier_fill(t.full, t.vocab_size, dim_full, rng);
  if (!glove_path.empty()) import_glove(t.full, vocab, dim_full, glove_path);
  // PAD embedding pinned to zero
  std::fill(t.full.begin(), t.full.begin() + dim_full, 0.0f);

  PcaResult pca = pca_project(t.full, t.vocab_size, dim_full, dim_tiny);
  t.tiny = std::move(pca.projected);
  std::fill(t.tiny.begin(), t.tiny.begin() + dim_tiny, 0.0f);
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

Dataset synth_task(const SynthSpec& spec) {
  if (spec.vocab_size < 4)
    throw std::invalid_argument("synth_task: vocab_size must be >= 4");
  if (spec.n_classes < 2)
    throw std::invalid_argument("synth_task: n_classes must be >= 2");
  const int noise_base = kSignalBase + spec.n_classes;
  if (spec.vocab_size <= noise_base)
    throw std::invalid_argument(
        "synth_task: vocab_size must exceed " + std::to_string(noise_base) +
        " to leave room for noise tokens");
  if (spec.pair_gap >= spec.seq_len)
    throw std::invalid_argument("synth_task: pair_gap must be < seq_len");
  if (spec.seq_len < 2)
    throw std::invalid_argument("synth_task: seq_len must be >= 2");

  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.max_len = spec.seq_len;
  ds.examples.reserve(static_cast<size_t>(spec.n_examples));

  const int min_len = std::max(spec.pair_gap + 2, spec.seq_len / 2);
  for (int e = 0; e < spec.n_examples; ++e) {
    SplitMix64 rng(stream_seed(spec.seed, static_cast<uint64_t>(e), 0x5157ull));
    Example ex;
    ex.attn_len = rng.uniform_int(std::min(min_len, spec.seq_len), spec.seq_len);
    ex.token_ids.assign(static_cast<size_t>(spec.seq_len), Vocab::kPad);
    for (int i = 0; i < ex.attn_len; ++i)
      ex.token_ids[static_cast<size_t>(i)] =
          rng.uniform_int(noise_base, spec.vocab_size - 1);

    const int gap = std::max(spec.pair_gap, 1);
    const int p1 = rng.uniform_int(0, ex.attn_len - 1 - gap);
    const int p2 = rng.uniform_int(p1 + gap, ex.attn_len - 1);
    const int s1 = rng.uniform_int(0, spec.n_classes - 1);
    const int s2 = rng.uniform_int(0, spec.n_classes - 1);
    ex.token_ids[static_cast<size_t>(p1)] = kSignalBase + s1;
    ex.token_ids[static_cast<size_t>(p2)] = kSignalBase + s2;
    ex.label = (s1 + s2) % spec.n_classes;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::vector<std::pair<int, std::vector<std::string>>> read_corpus(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<std::pair<int, std::vector<std::string>>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected <label><TAB><text>");
    }
    int label;
    try {
      label = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": label is not an integer");
    }
    out.emplace_back(label, tokenize(line.substr(tab + 1)));
  }
  return out;
}

void write_vocab_file(const Vocab& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (int i = Vocab::kNumSpecial; i < vocab.size(); ++i)
    f << vocab.tokens[static_cast<size_t>(i)] << '\n';
}

Vocab read_vocab_file(const std::string& path, int min_freq) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab v;
  v.min_freq = min_freq;
  v.tokens = {"<pad>", "<unk>"};
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) v.tokens.push_back(line);
  }
  for (int i = 0; i < v.size(); ++i) v.to_id[v.tokens[static_cast<size_t>(i)]] = i;
  return v;
}

}  // namespace smartbird
