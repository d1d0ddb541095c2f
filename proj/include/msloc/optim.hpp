// Adam and validation-plateau learning-rate decay.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "msloc/tensor.hpp"

namespace msloc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update applied in place to every parameter.
/// Parameters without a gradient buffer are treated as having zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel())
      throw ShapeError("adam_step: state size mismatch for parameter " + std::to_string(i));
    if (params[i].has_grad() && params[i].grad().size() != params[i].numel())
      throw ShapeError("adam_step: gradient size mismatch for parameter " + std::to_string(i));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = params[i].has_grad();
    auto g = params[i].grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

/// Multiplies the learning rate by `factor` once validation loss has failed
/// to improve on its best value by more than `threshold` for `patience`
/// consecutive epochs, then restarts the count.
class PlateauScheduler {
 public:
  PlateauScheduler(std::size_t patience, double factor, double threshold = 1e-6)
      : patience_(patience), factor_(factor), threshold_(threshold) {
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("PlateauScheduler: factor must lie in (0,1)");
  }

  double step(double val_loss, double lr) {
    if (val_loss < best_ - threshold_) {
      best_ = val_loss;
      bad_epochs_ = 0;
      return lr;
    }
    if (++bad_epochs_ >= patience_) {
      bad_epochs_ = 0;
      return lr * factor_;
    }
    return lr;
  }

  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }
  void restore(double best, std::size_t bad_epochs) {
    best_ = best;
    bad_epochs_ = bad_epochs;
  }

 private:
  std::size_t patience_;
  double factor_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

/// Replays a validation-loss history through the plateau rule, starting from
/// `initial_lr`, and returns the learning rate after the last epoch.
inline double plateau_schedule(const std::vector<double>& val_history, std::size_t patience, double factor,
                               double initial_lr) {
  if (val_history.empty()) throw std::invalid_argument("plateau_schedule: empty history");
  PlateauScheduler s(patience, factor);
  double lr = initial_lr;
  for (double v : val_history) lr = s.step(v, lr);
  return lr;
}

}  // namespace msloc
