#include "progsg/tape.hpp"

#include <cmath>

namespace progsg::ad {

Precision precision_from_name(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw std::invalid_argument("unknown precision: " + s);
}

Param& ParamStore::create(const std::string& id, std::vector<int64_t> shape) {
  if (by_id_.count(id)) throw std::invalid_argument("duplicate param id: " + id);
  auto p = std::make_unique<Param>();
  p->id = id;
  p->value = Array(shape);
  p->grad = Array(std::move(shape));
  Param* raw = p.get();
  by_id_[id] = raw;
  params_.push_back(std::move(p));
  return *raw;
}

Param& ParamStore::create_xavier(const std::string& id, std::vector<int64_t> shape,
                                 Rng& rng) {
  Param& p = create(id, shape);
  int64_t fan_out = p.value.shape.at(0);
  int64_t fan_in = p.value.size() / fan_out;
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : p.value.data) x = rng.uniform(-a, a);
  return p;
}

Param& ParamStore::create_zero(const std::string& id, std::vector<int64_t> shape) {
  return create(id, std::move(shape));
}

Param* ParamStore::find(const std::string& id) {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : it->second;
}

Param& ParamStore::get(const std::string& id) {
  Param* p = find(id);
  if (!p) throw std::out_of_range("no such param: " + id);
  return *p;
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_)
    for (double& g : p->grad.data) g = 0.0;
}

void ParamStore::round_to_f32() {
  for (auto& p : params_) p->value.round_to_f32();
}

Value Tape::constant(Array a) {
  if (precision == Precision::f32) a.round_to_f32();
  nodes.push_back(Node{std::move(a), {}, false, nullptr, {}});
  return Value{static_cast<int32_t>(nodes.size() - 1), this};
}

Value Tape::leaf(Param& p) {
  Array v = p.value;
  if (precision == Precision::f32) v.round_to_f32();
  nodes.push_back(Node{std::move(v), {}, false, &p, {}});
  return Value{static_cast<int32_t>(nodes.size() - 1), this};
}

Value Tape::push(Array value, std::function<void(Tape&, int32_t)> bwd) {
  if (precision == Precision::f32) value.round_to_f32();
  nodes.push_back(Node{std::move(value), {}, false, nullptr, std::move(bwd)});
  return Value{static_cast<int32_t>(nodes.size() - 1), this};
}

Array& Tape::grad_buf(int32_t i) {
  Node& n = nodes[static_cast<size_t>(i)];
  if (!n.grad_live) {
    n.grad = Array(n.value.shape);
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::backward(Value loss) {
  if (loss.tape != this) throw std::invalid_argument("loss from another tape");
  Node& ln = nodes[static_cast<size_t>(loss.idx)];
  if (ln.value.size() != 1) throw std::invalid_argument("backward needs a scalar loss");
  grad_buf(loss.idx).data[0] = 1.0;
  for (int32_t i = loss.idx; i >= 0; --i) {
    Node& n = nodes[static_cast<size_t>(i)];
    if (!n.grad_live) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      for (size_t k = 0; k < n.grad.data.size(); ++k)
        n.param->grad.data[k] += n.grad.data[k];
    }
  }
}

}  // namespace progsg::ad
