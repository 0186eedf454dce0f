#pragma once

#include <vector>

#include "progsg/tape.hpp"

namespace progsg::ad {

// Decoupled-weight-decay adaptive-moment optimizer:
//   m <- b1*m + (1-b1)*g          mhat = m / (1 - b1^t)
//   v <- b2*v + (1-b2)*g^2        vhat = v / (1 - b2^t)
//   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWOptions opt = {}) : opt_(opt) {}

  const AdamWOptions& options() const { return opt_; }
  int64_t steps() const { return step_; }

  // Applies one update from the gradients accumulated in `ps`. Moment slots
  // are keyed by parameter creation order. When round_f32 is set, updated
  // values are rounded through float so stored weights match 32-bit compute.
  void step(ParamStore& ps, bool round_f32 = false);

 private:
  AdamWOptions opt_;
  int64_t step_ = 0;
  std::vector<Array> m_, v_;
};

}  // namespace progsg::ad
