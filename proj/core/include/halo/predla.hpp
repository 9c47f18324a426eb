#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "halo/numkit.hpp"

namespace halo::predla {

struct PredLAConfig {
  double alpha_lr = 1e-2;
  double tau_lr = 0.01;
  /// Entropy tolerance of the hinge.
  double delta = 0.1;
  double tau_min = 0.05;
  double tau_init = 1.0;
};

/// Aggregation state of one level. alpha = softmax(alpha_logits) so the pair
/// stays on the simplex.
struct LevelState {
  std::array<double, 2> alpha_logits{0.0, 0.0};
  double tau_lin = 1.0;
  double tau_acil = 1.0;

  std::array<double, 2> alpha() const;
};

class PredLAState {
 public:
  explicit PredLAState(PredLAConfig config = {}) : config_(config) {}

  const PredLAConfig& config() const { return config_; }
  void ensure_levels(int count);
  int num_levels() const { return static_cast<int>(levels_.size()); }
  LevelState& level(int h) { return levels_.at(static_cast<std::size_t>(h)); }
  const LevelState& level(int h) const { return levels_.at(static_cast<std::size_t>(h)); }
  /// Number of temperatures that had to be clamped to tau_min.
  std::size_t clamp_events() const { return clamp_events_; }

  /// One plain gradient step on a level's alpha logits.
  void alpha_step(int h, std::array<double, 2> grad);
  /// One gradient step on a level's temperatures, then clamping.
  void tau_step(int h, double grad_lin, double grad_acil);

 private:
  PredLAConfig config_;
  std::vector<LevelState> levels_;
  std::size_t clamp_events_ = 0;
};

/// softmax(z / tau) with tau clamped to tau_min. `clamped` is set when the
/// clamp applied.
num::Vec calibrate(std::span<const double> z, double tau, double tau_min = 0.05, bool* clamped = nullptr);

/// alpha_lin * p_lin + alpha_acil * p_acil.
num::Vec aggregate(std::span<const double> p_lin, std::span<const double> p_acil, std::array<double, 2> alpha);

/// Aggregated prediction of one level from both heads' logits.
num::Vec predict(std::span<const double> z_lin, std::span<const double> z_acil, const LevelState& state,
                 double tau_min = 0.05);

struct AggregatedCE {
  double loss = 0.0;
  num::Vec p_hat;
  /// dL/dz_lin; the analytic logits receive no gradient.
  num::Vec d_z_lin;
  std::array<double, 2> d_alpha_logits{0.0, 0.0};
};

/// -log p_hat[target] with p_hat the calibrated aggregate.
AggregatedCE aggregated_ce(std::span<const double> z_lin, std::span<const double> z_acil, const LevelState& state,
                           std::size_t target, double tau_min = 0.05);

/// d H(softmax(z / tau)) / d tau.
double entropy_tau_derivative(std::span<const double> z, double tau);

struct EntropyGap {
  /// mean H(p_lin) - mean H(p_acil) over the batch.
  double gap = 0.0;
  double loss = 0.0;
  double d_tau_lin = 0.0;
  double d_tau_acil = 0.0;
};

/// Hinge max(0, |gap| - delta) on batch-mean entropies of one level and its
/// temperature gradients.
EntropyGap entropy_gap(const std::vector<num::Vec>& z_lin, const std::vector<num::Vec>& z_acil,
                       const LevelState& state, double delta);

}  // namespace halo::predla
