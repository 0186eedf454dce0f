#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "progsg/array.hpp"
#include "progsg/rng.hpp"

namespace progsg::ad {

enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}
Precision precision_from_name(const std::string& s);

// Trainable parameter. Gradient is accumulated by Tape::backward.
struct Param {
  std::string id;
  Array value;
  Array grad;
};

// Ordered registry of parameters. Creation order is the canonical order for
// initialization, optimizer stepping, and checkpoints, which keeps every one
// of those deterministic.
class ParamStore {
 public:
  Param& create(const std::string& id, std::vector<int64_t> shape);
  // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  Param& create_xavier(const std::string& id, std::vector<int64_t> shape, Rng& rng);
  // All-zero parameter (biases, residual-safe output layers).
  Param& create_zero(const std::string& id, std::vector<int64_t> shape);

  Param* find(const std::string& id);
  Param& get(const std::string& id);
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  int64_t scalar_count() const;

  void zero_grad();
  void round_to_f32();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> by_id_;
};

class Tape;

// Handle to a tape node.
struct Value {
  int32_t idx = -1;
  Tape* tape = nullptr;
  bool ok() const { return idx >= 0; }
};

// Wengert list. Nodes are appended in evaluation order, so reverse index
// order is a valid topological order for the backward sweep.
class Tape {
 public:
  struct Node {
    Array value;
    Array grad;
    bool grad_live = false;
    Param* param = nullptr;
    std::function<void(Tape&, int32_t)> backward;
  };

  explicit Tape(Precision p = Precision::f64) : precision(p) {}

  Precision precision;
  std::vector<Node> nodes;

  Value constant(Array a);
  Value scalar(double v) { return constant(Array::scalar(v)); }
  Value leaf(Param& p);
  Value push(Array value, std::function<void(Tape&, int32_t)> bwd);

  const Array& val(Value v) const { return nodes[static_cast<size_t>(v.idx)].value; }
  Array& val(Value v) { return nodes[static_cast<size_t>(v.idx)].value; }

  // Gradient buffer of node i, allocated on first use.
  Array& grad_buf(int32_t i);
  bool grad_live(int32_t i) const { return nodes[static_cast<size_t>(i)].grad_live; }

  // Runs the reverse sweep from a scalar loss and accumulates parameter
  // gradients into their Param::grad.
  void backward(Value loss);
};

}  // namespace progsg::ad
