#include "progsg/adamw.hpp"

#include <cmath>

namespace progsg::ad {

void AdamW::step(ParamStore& ps, bool round_f32) {
  const auto& params = ps.all();
  if (m_.size() < params.size()) {
    for (size_t i = m_.size(); i < params.size(); ++i) {
      m_.emplace_back(params[i]->value.shape);
      v_.emplace_back(params[i]->value.shape);
    }
  }
  ++step_;
  double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
  double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    Array& m = m_[i];
    Array& v = v_[i];
    for (size_t k = 0; k < p.value.data.size(); ++k) {
      double g = p.grad.data[k];
      m.data[k] = opt_.beta1 * m.data[k] + (1.0 - opt_.beta1) * g;
      v.data[k] = opt_.beta2 * v.data[k] + (1.0 - opt_.beta2) * g * g;
      double mhat = m.data[k] / c1;
      double vhat = v.data[k] / c2;
      p.value.data[k] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps) +
                         opt_.lr * opt_.weight_decay * p.value.data[k];
    }
    if (round_f32) p.value.round_to_f32();
  }
}

}  // namespace progsg::ad
