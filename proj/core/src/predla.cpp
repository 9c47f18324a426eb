#include "halo/predla.hpp"

#include <algorithm>
#include <cmath>

#include "halo/errors.hpp"

namespace halo::predla {

std::array<double, 2> LevelState::alpha() const {
  const double m = std::max(alpha_logits[0], alpha_logits[1]);
  const double a = std::exp(alpha_logits[0] - m);
  const double b = std::exp(alpha_logits[1] - m);
  return {a / (a + b), b / (a + b)};
}

void PredLAState::ensure_levels(int count) {
  while (num_levels() < count) {
    LevelState s;
    s.tau_lin = config_.tau_init;
    s.tau_acil = config_.tau_init;
    levels_.push_back(s);
  }
}

void PredLAState::alpha_step(int h, std::array<double, 2> grad) {
  auto& s = level(h);
  for (int k = 0; k < 2; ++k) s.alpha_logits[static_cast<std::size_t>(k)] -= config_.alpha_lr * grad[static_cast<std::size_t>(k)];
}

void PredLAState::tau_step(int h, double grad_lin, double grad_acil) {
  auto& s = level(h);
  s.tau_lin -= config_.tau_lr * grad_lin;
  s.tau_acil -= config_.tau_lr * grad_acil;
  for (double* t : {&s.tau_lin, &s.tau_acil}) {
    if (*t < config_.tau_min) {
      *t = config_.tau_min;
      ++clamp_events_;
    }
  }
}

num::Vec calibrate(std::span<const double> z, double tau, double tau_min, bool* clamped) {
  if (z.empty()) throw DomainError("calibrate: empty logits");
  const bool clamp = tau < tau_min;
  if (clamped) *clamped = clamp;
  return num::softmax(z, clamp ? tau_min : tau);
}

num::Vec aggregate(std::span<const double> p_lin, std::span<const double> p_acil, std::array<double, 2> alpha) {
  if (p_lin.size() != p_acil.size()) throw ShapeError("aggregate: the heads cover different class sets");
  num::Vec out(p_lin.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = alpha[0] * p_lin[c] + alpha[1] * p_acil[c];
  return out;
}

num::Vec predict(std::span<const double> z_lin, std::span<const double> z_acil, const LevelState& state,
                 double tau_min) {
  return aggregate(calibrate(z_lin, state.tau_lin, tau_min), calibrate(z_acil, state.tau_acil, tau_min),
                   state.alpha());
}

AggregatedCE aggregated_ce(std::span<const double> z_lin, std::span<const double> z_acil, const LevelState& state,
                           std::size_t target, double tau_min) {
  if (target >= z_lin.size()) throw DomainError("aggregated_ce: target out of range");
  const double tau_l = std::max(state.tau_lin, tau_min);
  const auto p_lin = num::softmax(z_lin, tau_l);
  const auto p_acil = calibrate(z_acil, state.tau_acil, tau_min);
  const auto alpha = state.alpha();
  AggregatedCE out;
  out.p_hat = aggregate(p_lin, p_acil, alpha);
  const double py = std::max(out.p_hat[target], 1e-300);
  out.loss = -std::log(py);
  // dL/dp_lin = -alpha_lin / p_hat[y] at the target only.
  num::Vec d_p_lin(p_lin.size(), 0.0);
  d_p_lin[target] = -alpha[0] / py;
  out.d_z_lin.assign(z_lin.size(), 0.0);
  num::softmax_backward(p_lin, d_p_lin, tau_l, out.d_z_lin);
  // dL/dalpha_k = -p_k[y] / p_hat[y]; chain through the 2-way softmax.
  const std::array<double, 2> d_alpha{-p_lin[target] / py, -p_acil[target] / py};
  const double mean = alpha[0] * d_alpha[0] + alpha[1] * d_alpha[1];
  for (std::size_t k = 0; k < 2; ++k) out.d_alpha_logits[k] = alpha[k] * (d_alpha[k] - mean);
  return out;
}

double entropy_tau_derivative(std::span<const double> z, double tau) {
  const auto p = num::softmax(z, tau);
  double zbar = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) zbar += p[k] * z[k];
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) acc += p[k] * std::log(p[k]) * (z[k] - zbar);
  }
  return acc / (tau * tau);
}

EntropyGap entropy_gap(const std::vector<num::Vec>& z_lin, const std::vector<num::Vec>& z_acil,
                       const LevelState& state, double delta) {
  if (z_lin.size() != z_acil.size()) throw ShapeError("entropy_gap: batch size mismatch");
  EntropyGap out;
  if (z_lin.empty()) return out;
  const double n = static_cast<double>(z_lin.size());
  double h_lin = 0.0, h_acil = 0.0, dh_lin = 0.0, dh_acil = 0.0;
  for (std::size_t b = 0; b < z_lin.size(); ++b) {
    h_lin += num::entropy(num::softmax(z_lin[b], state.tau_lin)) / n;
    h_acil += num::entropy(num::softmax(z_acil[b], state.tau_acil)) / n;
    dh_lin += entropy_tau_derivative(z_lin[b], state.tau_lin) / n;
    dh_acil += entropy_tau_derivative(z_acil[b], state.tau_acil) / n;
  }
  out.gap = h_lin - h_acil;
  const double excess = std::abs(out.gap) - delta;
  if (excess <= 0.0) return out;
  out.loss = excess;
  const double sign = out.gap > 0.0 ? 1.0 : -1.0;
  out.d_tau_lin = sign * dh_lin;
  out.d_tau_acil = -sign * dh_acil;
  return out;
}

}  // namespace halo::predla
