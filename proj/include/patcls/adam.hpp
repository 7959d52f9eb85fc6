#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "patcls/autograd.hpp"

namespace patcls {

struct AdamOptions {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter first/second moment buffers plus the shared step counter.
///
///   m_t = b1 m_{t-1} + (1-b1) g        v_t = b2 v_{t-1} + (1-b2) g^2
///   mhat = m_t / (1 - b1^t)            vhat = v_t / (1 - b2^t)
///   theta -= lr * mhat / (sqrt(vhat) + eps)
class AdamState {
 public:
  explicit AdamState(AdamOptions opt = {}) : opt_(opt) {}

  const AdamOptions& options() const { return opt_; }
  int64_t t() const { return t_; }

  /// One update over the given parameters, in the given order. Parameters
  /// without a gradient entry are treated as having zero gradient.
  void step(const std::vector<Parameter*>& params, const Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
      Slot& s = slot_for(*p);
      const Tensor* g = grads.find(*p);
      Tensor& theta = p->value();
      for (size_t i = 0; i < theta.numel(); ++i) {
        const double gi = g ? g->at(i) : 0.0;
        s.m.at(i) = opt_.beta1 * s.m.at(i) + (1.0 - opt_.beta1) * gi;
        s.v.at(i) = opt_.beta2 * s.v.at(i) + (1.0 - opt_.beta2) * gi * gi;
        const double mhat = s.m.at(i) / c1;
        const double vhat = s.v.at(i) / c2;
        theta.at(i) -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
      }
    }
  }

 private:
  struct Slot {
    Tensor m, v;
  };

  Slot& slot_for(const Parameter& p) {
    auto it = slots_.find(&p);
    if (it == slots_.end()) {
      Slot s{Tensor(p.value().shape()), Tensor(p.value().shape())};
      it = slots_.emplace(&p, std::move(s)).first;
    } else if (!it->second.m.same_shape(p.value())) {
      throw ShapeMismatch("adam: parameter '" + p.name() + "' changed shape");
    }
    return it->second;
  }

  AdamOptions opt_;
  int64_t t_ = 0;
  std::unordered_map<const Parameter*, Slot> slots_;
};

inline void adam_step(const std::vector<Parameter*>& params, const Gradients& grads, AdamState& state) {
  state.step(params, grads);
}

}  // namespace patcls
