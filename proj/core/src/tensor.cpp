#include "smartbird/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <thread>

namespace smartbird {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

static void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor dims must be positive, got " +
                                  shape_str(shape));
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values.assign(static_cast<size_t>(shape_numel(t.impl_->shape)),
                         0.0f);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values,
                    bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument(
        "value count " + std::to_string(values.size()) +
        " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::rand_uniform(Shape shape, float lo, float hi, SplitMix64& rng,
                            bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (float& x : t.impl_->values)
    x = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

void Tensor::set_requires_grad(bool rg) { impl_->requires_grad = rg; }

std::span<float> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item() on tensor of shape " +
                                shape_str(impl_->shape));
  return impl_->values[0];
}

double Tensor::item64() const {
  if (numel() != 1)
    throw std::invalid_argument("item64() on tensor of shape " +
                                shape_str(impl_->shape));
  return impl_->has_scalar_f64 ? impl_->scalar_f64
                               : static_cast<double>(impl_->values[0]);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_tape = nullptr;
thread_local bool g_grad_enabled = true;
thread_local NumericFlags g_numeric_flags;
thread_local int g_threads = 1;
}  // namespace

Tape* Tape::current() { return g_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }
bool tape_active() { return g_tape != nullptr && g_grad_enabled; }

NumericFlags& numeric_flags() { return g_numeric_flags; }

void Tape::record(Tensor out, std::function<void()> backward_fn) {
  entries_.push_back(Entry{out.impl_ptr(), std::move(backward_fn)});
}

void record_op(const Tensor& out, std::function<void()> backward_fn) {
  if (!tape_active() || !out.requires_grad()) return;
  Tape::current()->record(out, std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got " +
                                shape_str(loss.shape()));
  }
  // Intermediates (tape outputs) restart from zero each call so repeated
  // backward passes accumulate only into leaves.
  for (Entry& e : entries_) {
    if (e.out->grad.empty())
      e.out->grad.assign(e.out->values.size(), 0.0f);
    else
      std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0f);
  }
  Tensor l = loss;
  l.grad()[0] += 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
}

void set_compute_threads(int n) { g_threads = std::max(1, n); }
int compute_threads() { return g_threads; }

void parallel_rows(int n_rows, const std::function<void(int, int)>& fn) {
  const int nt = std::min(g_threads, n_rows);
  if (nt <= 1 || n_rows < 64) {
    fn(0, n_rows);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(nt));
  const int chunk = (n_rows + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    const int lo = t * chunk;
    const int hi = std::min(n_rows, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back(fn, lo, hi);
  }
  for (auto& w : workers) w.join();
}

// ---------------------------------------------------------------------------
// Matmul kernel, float64 accumulation
// ---------------------------------------------------------------------------

namespace {

enum class MM { NN, NT, TN };

// C[m,n] (+)= A·B with A/B interpreted per mode:
//   NN: A[m,k], B[k,n]    NT: A[m,k], B[n,k]    TN: A[k,m], B[k,n]
void matmul_kernel(MM mode, const float* A, const float* B, float* C, int m,
                   int k, int n, bool accumulate) {
  switch (mode) {
    case MM::NN:
      parallel_rows(m, [&](int lo, int hi) {
        std::vector<double> acc(static_cast<size_t>(n));
        for (int i = lo; i < hi; ++i) {
          std::fill(acc.begin(), acc.end(), 0.0);
          const float* arow = A + static_cast<size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const float* brow = B + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
          }
          float* crow = C + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const float r = static_cast<float>(acc[static_cast<size_t>(j)]);
            crow[j] = accumulate ? crow[j] + r : r;
          }
        }
      });
      break;
    case MM::NT:
      parallel_rows(m, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
          const float* arow = A + static_cast<size_t>(i) * k;
          float* crow = C + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const float* brow = B + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int kk = 0; kk < k; ++kk) s += static_cast<double>(arow[kk]) * brow[kk];
            const float r = static_cast<float>(s);
            crow[j] = accumulate ? crow[j] + r : r;
          }
        }
      });
      break;
    case MM::TN: {
      std::vector<double> acc(static_cast<size_t>(m) * n, 0.0);
      for (int kk = 0; kk < k; ++kk) {
        const float* arow = A + static_cast<size_t>(kk) * m;
        const float* brow = B + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
          const double av = arow[i];
          double* accrow = acc.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) accrow[j] += av * brow[j];
        }
      }
      for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) {
        const float r = static_cast<float>(acc[static_cast<size_t>(i)]);
        C[i] = accumulate ? C[i] + r : r;
      }
      break;
    }
  }
}

bool want_grad(const Tensor& t) { return grad_enabled() && t.requires_grad(); }

}  // namespace

static Tensor matmul_impl(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul expects rank-2 tensors, got " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1);
  const int bk = transpose_b ? b.dim(1) : b.dim(0);
  const int n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) {
    throw std::invalid_argument("matmul inner dimension mismatch: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()) +
                                (transpose_b ? " (b transposed)" : ""));
  }
  const bool rg = want_grad(a) || want_grad(b);
  Tensor out = Tensor::zeros({m, n}, rg);
  matmul_kernel(transpose_b ? MM::NT : MM::NN, a.values().data(),
                b.values().data(), out.values().data(), m, k, n, false);

  if (rg) {
    Tensor av = a, bv = b, ov = out;
    record_op(out, [av, bv, ov, m, k, n, transpose_b]() mutable {
      const float* g = ov.impl()->grad.data();
      if (av.requires_grad()) {
        // dA = G·B^T (NN layout) or G·B (b stored [n,k])
        matmul_kernel(transpose_b ? MM::NN : MM::NT, g, bv.values().data(),
                      av.grad().data(), m, n, k, true);
      }
      if (bv.requires_grad()) {
        if (transpose_b) {
          // dB[n,k] = G^T·A
          matmul_kernel(MM::TN, g, av.values().data(), bv.grad().data(), n, m,
                        k, true);
        } else {
          // dB[k,n] = A^T·G
          matmul_kernel(MM::TN, av.values().data(), g, bv.grad().data(), k, m,
                        n, true);
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  return matmul_impl(a, b, false);
}
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  return matmul_impl(a, b, true);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

// b broadcasts over a when b.shape is a suffix of a.shape.
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct BroadcastPlan {
  Tensor big, small;
  bool swapped;  // true when the first operand was the smaller one
  int64_t inner;
};

BroadcastPlan broadcast_plan(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (is_suffix(b.shape(), a.shape()))
    return {a, b, false, b.numel()};
  if (is_suffix(a.shape(), b.shape()))
    return {b, a, true, a.numel()};
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
}

}  // namespace

template <typename Fwd>
static Tensor binary_broadcast(const Tensor& a, const Tensor& b,
                               const char* name, Fwd fwd, bool a_negates,
                               bool is_mul) {
  BroadcastPlan plan = broadcast_plan(a, b, name);
  const int64_t n = plan.big.numel();
  const int64_t inner = plan.inner;
  const bool rg = want_grad(a) || want_grad(b);
  Tensor out = Tensor::zeros(plan.big.shape(), rg);
  {
    const float* pb = plan.big.values().data();
    const float* ps = plan.small.values().data();
    float* po = out.values().data();
    for (int64_t i = 0; i < n; ++i)
      po[i] = fwd(pb[i], ps[i % inner], plan.swapped);
  }
  if (rg) {
    Tensor big = plan.big, small = plan.small, ov = out;
    const bool swapped = plan.swapped;
    record_op(out, [big, small, ov, inner, n, swapped, a_negates,
                    is_mul]() mutable {
      const float* g = ov.impl()->grad.data();
      // Sign of each operand's contribution: for sub, d(a-b)/db = -1.
      const double big_sign = (a_negates && swapped) ? -1.0 : 1.0;
      const double small_sign = (a_negates && !swapped) ? -1.0 : 1.0;
      if (big.requires_grad()) {
        float* gb = big.grad().data();
        const float* ps = small.values().data();
        for (int64_t i = 0; i < n; ++i) {
          const double w = is_mul ? ps[i % inner] : 1.0;
          gb[i] += static_cast<float>(big_sign * w * g[i]);
        }
      }
      if (small.requires_grad()) {
        float* gs = small.grad().data();
        const float* pb = big.values().data();
        std::vector<double> acc(static_cast<size_t>(inner), 0.0);
        for (int64_t i = 0; i < n; ++i) {
          const double w = is_mul ? pb[i] : 1.0;
          acc[static_cast<size_t>(i % inner)] += small_sign * w * g[i];
        }
        for (int64_t i = 0; i < inner; ++i)
          gs[i] += static_cast<float>(acc[static_cast<size_t>(i)]);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, "add", [](float x, float y, bool) { return x + y; }, false, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, "sub",
      [](float x, float y, bool swapped) {
        return swapped ? y - x : x - y;
      },
      true, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, "mul", [](float x, float y, bool) { return x * y; }, false, true);
}

Tensor scale(const Tensor& a, double c) {
  const bool rg = want_grad(a);
  Tensor out = Tensor::zeros(a.shape(), rg);
  const float* pa = a.values().data();
  float* po = out.values().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    po[i] = static_cast<float>(c * pa[i]);
  if (rg) {
    Tensor av = a, ov = out;
    record_op(out, [av, ov, c, n]() mutable {
      const float* g = ov.impl()->grad.data();
      float* ga = av.grad().data();
      for (int64_t i = 0; i < n; ++i)
        ga[i] += static_cast<float>(c * g[i]);
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  const bool rg = want_grad(a);
  Tensor out = Tensor::zeros(a.shape(), rg);
  const float* pa = a.values().data();
  float* po = out.values().data();
  const int64_t n = a.numel();
  double min_abs = g_numeric_flags.min_relu_abs;
  for (int64_t i = 0; i < n; ++i) {
    po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
    const double mag = std::fabs(static_cast<double>(pa[i]));
    if (mag < min_abs) min_abs = mag;
  }
  g_numeric_flags.min_relu_abs = min_abs;
  if (rg) {
    Tensor av = a, ov = out;
    record_op(out, [av, ov, n]() mutable {
      const float* g = ov.impl()->grad.data();
      const float* x = av.values().data();
      float* ga = av.grad().data();
      for (int64_t i = 0; i < n; ++i)
        if (x[i] > 0.0f) ga[i] += g[i];
    });
  }
  return out;
}

Tensor tanh_op(const Tensor& a) {
  const bool rg = want_grad(a);
  Tensor out = Tensor::zeros(a.shape(), rg);
  const float* pa = a.values().data();
  float* po = out.values().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    po[i] = static_cast<float>(std::tanh(static_cast<double>(pa[i])));
  if (rg) {
    Tensor av = a, ov = out;
    record_op(out, [av, ov, n]() mutable {
      const float* g = ov.impl()->grad.data();
      const float* y = ov.values().data();
      float* ga = av.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        const double yd = y[i];
        ga[i] += static_cast<float>((1.0 - yd * yd) * g[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

void masked_softmax_f64(std::span<const float> logits, int rows, int cols,
                        int valid_cols, int valid_rows,
                        std::span<double> out) {
  valid_cols = std::min(valid_cols, cols);
  valid_rows = std::min(valid_rows, rows);
  for (int i = 0; i < rows; ++i) {
    double* orow = out.data() + static_cast<size_t>(i) * cols;
    const float* lrow = logits.data() + static_cast<size_t>(i) * cols;
    if (i >= valid_rows || valid_cols <= 0) {
      std::fill(orow, orow + cols, 0.0);
      continue;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < valid_cols; ++j) {
      if (!std::isfinite(lrow[j])) g_numeric_flags.non_finite_seen = true;
      mx = std::max(mx, static_cast<double>(lrow[j]));
    }
    double denom = 0.0;
    for (int j = 0; j < valid_cols; ++j) {
      const double e = std::exp(static_cast<double>(lrow[j]) - mx);
      orow[j] = e;
      denom += e;
    }
    for (int j = 0; j < valid_cols; ++j) orow[j] /= denom;
    std::fill(orow + valid_cols, orow + cols, 0.0);
  }
}

static Tensor softmax_common(const Tensor& x, int valid_cols, int valid_rows) {
  if (x.rank() != 2)
    throw std::invalid_argument("softmax expects a rank-2 tensor, got " +
                                shape_str(x.shape()));
  const int rows = x.dim(0), cols = x.dim(1);
  const bool rg = want_grad(x);
  Tensor out = Tensor::zeros(x.shape(), rg);
  std::vector<double> probs(static_cast<size_t>(rows) * cols);
  masked_softmax_f64(x.values(), rows, cols, valid_cols, valid_rows, probs);
  float* po = out.values().data();
  for (size_t i = 0; i < probs.size(); ++i)
    po[i] = static_cast<float>(probs[i]);

  if (rg) {
    Tensor xv = x, ov = out;
    record_op(out, [xv, ov, rows, cols, valid_cols, valid_rows]() mutable {
      const float* g = ov.impl()->grad.data();
      const float* y = ov.values().data();
      float* gx = xv.grad().data();
      const int vc = std::min(valid_cols, cols);
      const int vr = std::min(valid_rows, rows);
      for (int i = 0; i < vr; ++i) {
        const float* grow = g + static_cast<size_t>(i) * cols;
        const float* yrow = y + static_cast<size_t>(i) * cols;
        float* gxrow = gx + static_cast<size_t>(i) * cols;
        double dot = 0.0;
        for (int j = 0; j < vc; ++j)
          dot += static_cast<double>(grow[j]) * yrow[j];
        for (int j = 0; j < vc; ++j)
          gxrow[j] += static_cast<float>(yrow[j] * (grow[j] - dot));
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  return softmax_common(x, x.dim(1), x.dim(0));
}

Tensor masked_softmax_rows(const Tensor& x, int valid_cols, int valid_rows) {
  return softmax_common(x, valid_cols, valid_rows);
}

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.rank() != 2)
    throw std::invalid_argument("layer_norm expects rank-2 input");
  const int n = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d) {
    throw std::invalid_argument("layer_norm gain/bias must have " +
                                std::to_string(d) + " entries");
  }
  constexpr double kEps = 1e-5;
  const bool rg = want_grad(x) || want_grad(gain) || want_grad(bias);
  Tensor out = Tensor::zeros(x.shape(), rg);
  // Normalized activations are needed by the backward rule.
  auto xhat = std::make_shared<std::vector<float>>(
      static_cast<size_t>(n) * d);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(n));

  const float* px = x.values().data();
  const float* pg = gain.values().data();
  const float* pb = bias.values().data();
  float* po = out.values().data();
  for (int i = 0; i < n; ++i) {
    const float* row = px + static_cast<size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[static_cast<size_t>(i)] = istd;
    float* hrow = xhat->data() + static_cast<size_t>(i) * d;
    float* orow = po + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * istd;
      hrow[j] = static_cast<float>(h);
      orow[j] = static_cast<float>(h * pg[j] + pb[j]);
    }
  }

  if (rg) {
    Tensor xv = x, gv = gain, bv = bias, ov = out;
    record_op(out, [xv, gv, bv, ov, xhat, inv_std, n, d]() mutable {
      const float* g = ov.impl()->grad.data();
      const float* pgain = gv.values().data();
      for (int i = 0; i < n; ++i) {
        const float* grow = g + static_cast<size_t>(i) * d;
        const float* hrow = xhat->data() + static_cast<size_t>(i) * d;
        if (gv.requires_grad()) {
          float* gg = gv.grad().data();
          for (int j = 0; j < d; ++j)
            gg[j] += static_cast<float>(static_cast<double>(grow[j]) * hrow[j]);
        }
        if (bv.requires_grad()) {
          float* gb = bv.grad().data();
          for (int j = 0; j < d; ++j) gb[j] += grow[j];
        }
        if (xv.requires_grad()) {
          // dx = istd * (dh - mean(dh) - xhat * mean(dh*xhat)),  dh = g*gain
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dh = static_cast<double>(grow[j]) * pgain[j];
            mean_dh += dh;
            mean_dh_h += dh * hrow[j];
          }
          mean_dh /= d;
          mean_dh_h /= d;
          const double istd = (*inv_std)[static_cast<size_t>(i)];
          float* gx = xv.grad().data() + static_cast<size_t>(i) * d;
          for (int j = 0; j < d; ++j) {
            const double dh = static_cast<double>(grow[j]) * pgain[j];
            gx[j] += static_cast<float>(istd *
                                        (dh - mean_dh - hrow[j] * mean_dh_h));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy expects rank-2 logits");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("cross_entropy got " +
                                std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 ||
        labels[static_cast<size_t>(i)] >= c) {
      throw std::out_of_range("cross_entropy label " +
                              std::to_string(labels[static_cast<size_t>(i)]) +
                              " out of range [0," + std::to_string(c) + ")");
    }
  }
  const bool rg = want_grad(logits);
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(n) * c);
  masked_softmax_f64(logits.values(), n, c, c, n, *probs);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p =
        (*probs)[static_cast<size_t>(i) * c + labels[static_cast<size_t>(i)]];
    if (!std::isfinite(p) || p <= 0.0) g_numeric_flags.non_finite_seen = true;
    loss -= std::log(std::max(p, 1e-300));
  }
  loss /= n;
  Tensor out = Tensor::scalar(static_cast<float>(loss), rg);
  out.impl()->scalar_f64 = loss;
  out.impl()->has_scalar_f64 = true;

  if (rg) {
    Tensor lv = logits, ov = out;
    std::vector<int> lab(labels.begin(), labels.end());
    record_op(out, [lv, ov, probs, lab, n, c]() mutable {
      const double gout = ov.impl()->grad[0];
      float* gl = lv.grad().data();
      for (int i = 0; i < n; ++i) {
        const double* prow = probs->data() + static_cast<size_t>(i) * c;
        float* grow = gl + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
          const double onehot = (j == lab[static_cast<size_t>(i)]) ? 1.0 : 0.0;
          grow[j] += static_cast<float>(gout * (prow[j] - onehot) / n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const bool rg = want_grad(x);
  double s = 0.0;
  for (float v : x.values()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s), rg);
  out.impl()->scalar_f64 = s;
  out.impl()->has_scalar_f64 = true;
  if (rg) {
    Tensor xv = x, ov = out;
    record_op(out, [xv, ov]() mutable {
      const float g = ov.impl()->grad[0];
      float* gx = xv.grad().data();
      for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw std::invalid_argument("reshape from " + shape_str(x.shape()) +
                                " to " + shape_str(new_shape) +
                                " changes element count");
  }
  const bool rg = want_grad(x);
  Tensor out = Tensor::from(std::move(new_shape),
                            {x.values().begin(), x.values().end()}, rg);
  if (rg) {
    Tensor xv = x, ov = out;
    record_op(out, [xv, ov]() mutable {
      const float* g = ov.impl()->grad.data();
      float* gx = xv.grad().data();
      for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_cols on empty list");
  const int n = parts[0].dim(0);
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n)
      throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.dim(1);
    rg = rg || want_grad(p);
  }
  Tensor out = Tensor::zeros({n, total}, rg);
  float* po = out.values().data();
  int col = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    const float* pp = p.values().data();
    for (int i = 0; i < n; ++i)
      std::memcpy(po + static_cast<size_t>(i) * total + col,
                  pp + static_cast<size_t>(i) * c,
                  static_cast<size_t>(c) * sizeof(float));
    col += c;
  }
  if (rg) {
    std::vector<Tensor> pv = parts;
    Tensor ov = out;
    record_op(out, [pv, ov, n, total]() mutable {
      const float* g = ov.impl()->grad.data();
      int col = 0;
      for (Tensor& p : pv) {
        const int c = p.dim(1);
        if (p.requires_grad()) {
          float* gp = p.grad().data();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
              gp[static_cast<size_t>(i) * c + j] +=
                  g[static_cast<size_t>(i) * total + col + j];
        }
        col += c;
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding_lookup expects rank-2 table");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  for (int i = 0; i < n; ++i) {
    if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= v)
      throw std::out_of_range("embedding_lookup id " +
                              std::to_string(ids[static_cast<size_t>(i)]) +
                              " out of range [0," + std::to_string(v) + ")");
  }
  const bool rg = want_grad(table);
  Tensor out = Tensor::zeros({n, d}, rg);
  float* po = out.values().data();
  const float* pt = table.values().data();
  for (int i = 0; i < n; ++i)
    std::memcpy(po + static_cast<size_t>(i) * d,
                pt + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d,
                static_cast<size_t>(d) * sizeof(float));
  if (rg) {
    Tensor tv = table, ov = out;
    std::vector<int> idv(ids.begin(), ids.end());
    record_op(out, [tv, ov, idv, n, d]() mutable {
      const float* g = ov.impl()->grad.data();
      float* gt = tv.grad().data();
      for (int i = 0; i < n; ++i) {
        float* trow = gt + static_cast<size_t>(idv[static_cast<size_t>(i)]) * d;
        const float* grow = g + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) trow[j] += grow[j];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, SplitMix64& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const bool rg = want_grad(x);
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<float>>(
      static_cast<size_t>(x.numel()));
  for (float& m : *mask)
    m = (rng.uniform01() >= rate) ? keep_scale : 0.0f;
  Tensor out = Tensor::zeros(x.shape(), rg);
  const float* px = x.values().data();
  float* po = out.values().data();
  for (int64_t i = 0; i < x.numel(); ++i)
    po[i] = px[i] * (*mask)[static_cast<size_t>(i)];
  if (rg) {
    Tensor xv = x, ov = out;
    record_op(out, [xv, ov, mask]() mutable {
      const float* g = ov.impl()->grad.data();
      float* gx = xv.grad().data();
      for (int64_t i = 0; i < xv.numel(); ++i)
        gx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer & grad utilities
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.grad_allocated()) continue;
    float* w = p.values().data();
    const float* g = p.impl()->grad.data();
    std::vector<double>& m = m_[pi];
    std::vector<double>& v = v_[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      m[static_cast<size_t>(i)] =
          beta1_ * m[static_cast<size_t>(i)] + (1.0 - beta1_) * gi;
      v[static_cast<size_t>(i)] =
          beta2_ * v[static_cast<size_t>(i)] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[static_cast<size_t>(i)] / bc1;
      const double vhat = v[static_cast<size_t>(i)] / bc2;
      w[i] = static_cast<float>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

double global_grad_norm(std::span<Tensor> params) {
  double sq = 0.0;
  for (Tensor& p : params) {
    if (!p.grad_allocated()) continue;
    for (float g : p.impl()->grad) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

void clip_global_norm(std::span<Tensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const float s = static_cast<float>(max_norm / norm);
  for (Tensor& p : params) {
    if (!p.grad_allocated()) continue;
    for (float& g : p.impl()->grad) g *= s;
  }
}

bool all_finite(const Tensor& t) {
  for (float v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace smartbird
