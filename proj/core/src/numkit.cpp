#include "halo/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "halo/errors.hpp"

namespace halo::num {

namespace {

constexpr double kSimplexTolerance = 1e-6;

void require_simplex(std::span<const double> p, const char* what) {
  double total = 0.0;
  for (double v : p) {
    if (v < -kSimplexTolerance) throw DomainError(std::string(what) + ": negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > kSimplexTolerance) {
    throw DomainError(std::string(what) + ": distribution does not sum to 1");
  }
}

}  // namespace

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::append_rows(std::size_t n, double value) {
  data_.resize(data_.size() + n * cols_, value);
  rows_ += n;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

GradSlot::GradSlot(Matrix initial)
    : value(std::move(initial)),
      grad(value.rows(), value.cols()),
      moment1(value.rows(), value.cols()),
      moment2(value.rows(), value.cols()) {}

void GradSlot::append_rows(std::size_t n, double fill) {
  value.append_rows(n, fill);
  grad.append_rows(n);
  moment1.append_rows(n);
  moment2.append_rows(n);
}

void Optimizer::step(GradSlot& slot) const {
  auto w = slot.value.flat();
  auto g = slot.grad.flat();
  ++slot.steps;
  if (kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= learning_rate * (g[i] + weight_decay * w[i]);
    }
    return;
  }
  auto m = slot.moment1.flat();
  auto v = slot.moment2.flat();
  const double t = static_cast<double>(slot.steps);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    w[i] -= learning_rate * (m_hat / (std::sqrt(v_hat) + epsilon) + weight_decay * w[i]);
  }
}

void linear(const Matrix& weights, std::span<const double> bias, std::span<const double> x,
            std::span<double> y) {
  if (weights.cols() != x.size() || weights.rows() != y.size() ||
      (!bias.empty() && bias.size() != y.size())) {
    throw ShapeError("linear: shape mismatch");
  }
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    double acc = bias.empty() ? 0.0 : bias[r];
    const auto row = weights.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void linear_backward(const Matrix& weights, std::span<const double> x, std::span<const double> dy,
                     Matrix* d_weights, std::span<double> d_bias, std::span<double> dx) {
  if (weights.cols() != x.size() || weights.rows() != dy.size()) {
    throw ShapeError("linear_backward: shape mismatch");
  }
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    if (d_weights != nullptr) {
      auto drow = d_weights->row(r);
      for (std::size_t c = 0; c < x.size(); ++c) drow[c] += g * x[c];
    }
    if (!d_bias.empty()) d_bias[r] += g;
    if (!dx.empty()) {
      const auto row = weights.row(r);
      for (std::size_t c = 0; c < x.size(); ++c) dx[c] += g * row[c];
    }
  }
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ShapeError("log_sum_exp: empty input");
  const double hi = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

Vec softmax(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw ShapeError("softmax: empty logits");
  if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
  Vec p(logits.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (double z : logits) hi = std::max(hi, z / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - hi);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

SoftmaxCE softmax_ce(std::span<const double> logits, std::size_t target, double temperature) {
  if (logits.empty()) throw ShapeError("softmax_ce: empty logits");
  if (target >= logits.size()) throw ShapeError("softmax_ce: target out of range");
  SoftmaxCE out;
  out.probs = softmax(logits, temperature);
  Vec scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  out.loss = log_sum_exp(scaled) - scaled[target];
  out.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad_logits[i] = (out.probs[i] - (i == target ? 1.0 : 0.0)) / temperature;
  }
  return out;
}

void softmax_backward(std::span<const double> probs, std::span<const double> d_probs,
                      double temperature, std::span<double> d_logits) {
  double inner = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) inner += probs[i] * d_probs[i];
  for (std::size_t i = 0; i < probs.size(); ++i) {
    d_logits[i] += probs[i] * (d_probs[i] - inner) / temperature;
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine: length mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero-norm input");
  return dot(u, v) / (nu * nv);
}

void cosine_backward(std::span<const double> u, std::span<const double> v, double d_out,
                     std::span<double> du, std::span<double> dv) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero-norm input");
  const double c = dot(u, v) / (nu * nv);
  // d cos / du = v / (|u||v|) - cos * u / |u|^2
  if (!du.empty()) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      du[i] += d_out * (v[i] / (nu * nv) - c * u[i] / (nu * nu));
    }
  }
  if (!dv.empty()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      dv[i] += d_out * (u[i] / (nu * nv) - c * v[i] / (nv * nv));
    }
  }
}

MaxResult spatial_max(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("spatial_max: no patches");
  MaxResult best{scores[0], 0};
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > best.value) best = {scores[i], i};
  }
  return best;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: length mismatch");
  require_simplex(p, "js_divergence");
  require_simplex(q, "js_divergence");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(acc, 0.0);
}

void js_divergence_backward(std::span<const double> p, std::span<const double> q, double d_out,
                            std::span<double> dp, std::span<double> dq) {
  // dJS/dp_i = 0.5 log(p_i / m_i); zero-mass coordinates get no gradient.
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (!dp.empty() && p[i] > 0.0) dp[i] += d_out * 0.5 * std::log(p[i] / m);
    if (!dq.empty() && q[i] > 0.0) dq[i] += d_out * 0.5 * std::log(q[i] / m);
  }
}

double entropy(std::span<const double> p) {
  double acc = 0.0;
  for (double v : p) {
    if (v < 0.0) throw DomainError("entropy: negative entry");
    if (v > 0.0) acc -= v * std::log(v);
  }
  return acc;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double fd_check(const std::function<double()>& loss, std::span<double> params,
                std::span<const double> analytic, double epsilon) {
  if (params.size() != analytic.size()) throw ShapeError("fd_check: gradient size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double up = loss();
    params[i] = saved - epsilon;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace halo::num
