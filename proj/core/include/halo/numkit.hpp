#pragma once

// Dense numeric kernel: a row-major matrix, parameter slots with gradient
// storage, the handful of differentiable primitives the learner needs (each
// with a hand-written backward), and a central finite-difference verifier.
//
// Backward functions accumulate (+=) into their output spans so that several
// loss terms can share one gradient buffer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace halo::num {

using Vec = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  void fill(double v);
  /// Appends `n` rows set to `value`; existing rows keep their bits.
  void append_rows(std::size_t n, double value = 0.0);

  static Matrix identity(std::size_t n);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A trainable parameter: value, accumulated gradient and first/second moment
/// buffers for the optimizer.
struct GradSlot {
  Matrix value;
  Matrix grad;
  Matrix moment1;
  Matrix moment2;
  std::uint64_t steps = 0;

  GradSlot() = default;
  explicit GradSlot(Matrix initial);
  GradSlot(std::size_t rows, std::size_t cols) : GradSlot(Matrix(rows, cols)) {}

  void zero_grad() { grad.fill(0.0); }
  void append_rows(std::size_t n, double value = 0.0);
};

enum class OptimizerKind { kSgd, kAdamW };

/// Plain SGD or AdamW, both with decoupled weight decay.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void step(GradSlot& slot) const;
};

// ---- primitives -----------------------------------------------------------

/// y = W x (+ b). `bias` may be empty.
void linear(const Matrix& weights, std::span<const double> bias, std::span<const double> x,
            std::span<double> y);

/// Accumulates dL/dW, dL/db and dL/dx for y = W x + b given dL/dy. Any of the
/// outputs may be null/empty to skip it.
void linear_backward(const Matrix& weights, std::span<const double> x, std::span<const double> dy,
                     Matrix* d_weights, std::span<double> d_bias, std::span<double> dx);

Vec softmax(std::span<const double> logits, double temperature = 1.0);
double log_sum_exp(std::span<const double> values);

struct SoftmaxCE {
  double loss = 0.0;
  Vec probs;
  Vec grad_logits;
};

/// p = softmax(z / tau), loss = -log p[target], grad = (p - onehot) / tau.
SoftmaxCE softmax_ce(std::span<const double> logits, std::size_t target, double temperature = 1.0);

/// Backward of p = softmax(z / tau): accumulates dL/dz given dL/dp.
void softmax_backward(std::span<const double> probs, std::span<const double> d_probs,
                      double temperature, std::span<double> d_logits);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);

double cosine(std::span<const double> u, std::span<const double> v);
void cosine_backward(std::span<const double> u, std::span<const double> v, double d_out,
                     std::span<double> du, std::span<double> dv);

struct MaxResult {
  double value = 0.0;
  std::size_t index = 0;
};

/// Maximum with ties broken toward the lowest index. The subgradient of the
/// result is routed to `index` only.
MaxResult spatial_max(std::span<const double> scores);

/// Jensen-Shannon divergence (natural log), in [0, ln 2].
double js_divergence(std::span<const double> p, std::span<const double> q);
void js_divergence_backward(std::span<const double> p, std::span<const double> q, double d_out,
                            std::span<double> dp, std::span<double> dq);

/// Shannon entropy with natural log, 0 log 0 = 0.
double entropy(std::span<const double> p);

double sigmoid(double x);

/// Compares `analytic` against central differences of `loss` taken by
/// perturbing each entry of `params` in place. Returns the worst relative
/// error |a - b| / max(|a|, |b|, 1e-8).
double fd_check(const std::function<double()>& loss, std::span<double> params,
                std::span<const double> analytic, double epsilon = 1e-4);

}  // namespace halo::num
