#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smartbird/rng.hpp"

namespace smartbird {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // allocated on demand, same size as values
  bool requires_grad = false;
  // Reductions keep a float64 copy of single-element results so tests and
  // finite-difference oracles are not limited by the f32 store.
  double scalar_f64 = 0.0;
  bool has_scalar_f64 = false;
};

// Value-semantic handle onto a shared buffer. Copying a Tensor aliases the
// underlying storage; ops always allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor rand_uniform(Shape shape, float lo, float hi, SplitMix64& rng,
                             bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

  std::span<float> values() { return impl_->values; }
  std::span<const float> values() const { return impl_->values; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg);

  // Grad buffer, allocated (zero-filled) on first access.
  std::span<float> grad();
  bool grad_allocated() const { return !impl_->grad.empty(); }
  void zero_grad();
  void release_grad() { impl_->grad.clear(); }

  float item() const;
  // f64 readout for scalars produced by reductions; falls back to item().
  double item64() const;

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape: reverse-mode autodiff over a dynamically recorded op list. A tape and
// the tensors recorded on it belong to one thread; independent tapes may run
// concurrently. The graph is rebuilt every forward pass.
// ---------------------------------------------------------------------------
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward;
  };

  void clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss)=1 and runs all recorded backward rules in reverse.
  // Leaf grads accumulate across calls; intermediate grads are reset per call.
  void backward(const Tensor& loss);

  void record(Tensor out, std::function<void()> backward_fn);

  static Tape* current();

 private:
  std::vector<Entry> entries_;
  friend struct TapeScope;
};

struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Disables gradient recording (and requires_grad propagation) in scope.
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// True when an op called now should record a backward rule.
bool tape_active();

// Hook for modules that define fused ops with hand-written backward rules.
// No-op when no tape is active or the output does not require grad.
void record_op(const Tensor& out, std::function<void()> backward_fn);

// Thread-local numeric diagnostics. non_finite_seen is set by ops that
// observe non-finite input; min_relu_abs tracks how close any relu input came
// to the kink (finite-difference harnesses use it to reject ill-posed draws).
struct NumericFlags {
  bool non_finite_seen = false;
  double min_relu_abs = 1e300;
  void clear() {
    non_finite_seen = false;
    min_relu_abs = 1e300;
  }
};
NumericFlags& numeric_flags();

// Deterministic row-parallelism knob (1 = fully serial). Results are bitwise
// identical for any setting: parallel loops partition disjoint output rows.
void set_compute_threads(int n);
int compute_threads();
void parallel_rows(int n_rows, const std::function<void(int, int)>& fn);

// ---------------------------------------------------------------------------
// Ops. All accumulate reductions in float64 and store results as float32.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]·[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]·[n,k]^T

// Elementwise with suffix broadcasting: the smaller shape must equal a
// trailing slice of the larger one (e.g. [n,d] + [d]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);  // subgradient at 0 is 0
Tensor tanh_op(const Tensor& a);

Tensor softmax_rows(const Tensor& x);
// Rows >= valid_rows and columns >= valid_cols are exactly zero; remaining
// rows are softmax over the first valid_cols entries.
Tensor masked_softmax_rows(const Tensor& x, int valid_cols, int valid_rows);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& x);  // scalar
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_cols(const std::vector<Tensor>& parts);  // [n,c_i] -> [n,sum c]
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, SplitMix64& rng, bool training);

// Row-stochastic masked softmax in float64, shared by the tape op and by the
// attention-matrix export path (see sketch module).
void masked_softmax_f64(std::span<const float> logits, int rows, int cols,
                        int valid_cols, int valid_rows, std::span<double> out);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-4,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // One bias-corrected update from the current grads.
  void step();
  int64_t steps_taken() const { return t_; }
  double lr() const { return lr_; }
  std::span<Tensor> params() { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

void zero_grads(std::span<Tensor> params);
double global_grad_norm(std::span<Tensor> params);
// Scales all grads by max_norm/norm when norm exceeds max_norm.
void clip_global_norm(std::span<Tensor> params, double max_norm);

bool all_finite(const Tensor& t);

}  // namespace smartbird
