#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tafcal/autodiff.hpp"

namespace tafcal {

// Two parameter groups: the convolutional extractor and the classifier head
// take separate learning rates.
enum class ParamGroup { extractor, head };

struct SgdState {
  double lr_extractor = 1e-3;
  double lr_head = 1e-4;
  double weight_decay = 5e-4;
  double decay_factor = 0.1;
  double decay_epoch_fraction = 0.8;
};

// First 0-based epoch index at which a stage becomes active: ceil(fraction *
// total). The small slack keeps exact products like 0.8 * 10 from rounding
// up through floating representation error.
inline int stage_epoch(double fraction, int total_epochs) {
  return static_cast<int>(std::ceil(fraction * static_cast<double>(total_epochs) - 1e-9));
}

template <typename T>
struct ParamRef {
  std::string name;
  ParamGroup group;
  Var<T> var;
};

// p <- p - lr_eff * (g + weight_decay * p), with lr_eff decayed once the
// epoch index reaches stage_epoch(decay_epoch_fraction, total_epochs).
template <typename T>
void sgd_step(std::vector<ParamRef<T>>& params, const SgdState& st, int epoch,
              int total_epochs) {
  const bool decayed = epoch >= stage_epoch(st.decay_epoch_fraction, total_epochs);
  for (auto& p : params) {
    const double base = p.group == ParamGroup::extractor ? st.lr_extractor : st.lr_head;
    const double lr = decayed ? base * st.decay_factor : base;
    Tensor4<T>& v = p.var.mutable_value();
    const Tensor4<T>& g = p.var.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double update = lr * (static_cast<double>(g[i]) +
                                  st.weight_decay * static_cast<double>(v[i]));
      v[i] = static_cast<T>(static_cast<double>(v[i]) - update);
    }
  }
}

template <typename T>
void zero_grads(std::vector<ParamRef<T>>& params) {
  for (auto& p : params) p.var.zero_grad();
}

}  // namespace tafcal
