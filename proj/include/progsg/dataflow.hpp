#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "progsg/graph.hpp"

namespace progsg::dataflow {

enum class Task { reachability, dominators, datadep, liveness };

const char* task_name(Task t);
Task task_from_name(const std::string& s);

// Dense boolean matrix over instruction node ids.
struct BoolMatrix {
  int n = 0;
  std::vector<uint8_t> bits;

  explicit BoolMatrix(int n = 0) : n(n), bits(static_cast<size_t>(n) * n, 0) {}
  uint8_t at(int u, int v) const {
    return bits[static_cast<size_t>(u) * static_cast<size_t>(n) + static_cast<size_t>(v)];
  }
  void set(int u, int v, uint8_t b) {
    bits[static_cast<size_t>(u) * static_cast<size_t>(n) + static_cast<size_t>(v)] = b;
  }
};

// reach(u,v): a directed control-edge path u→v exists (reach(u,u)=1).
BoolMatrix reachability(const graph::HarpGraph& g);

// dom(u,v): every control path from v's function entry to v passes through u.
// The entry is the lowest-numbered instruction node of the function; nodes the
// entry cannot reach are dominated by every node of their function.
// Cross-function entries are 0.
BoolMatrix dominators(const graph::HarpGraph& g);

// dep(a,b): a value defined by instruction a is used directly by b.
BoolMatrix datadep(const graph::HarpGraph& g);

// live_out(n, v) over instruction node n and operand node v (constants are
// not variables and are excluded).
struct LiveOut {
  int n_instr = 0;
  std::vector<int> values;  // operand node ids, ascending
  std::vector<uint8_t> bits;  // n_instr rows × values.size() columns

  uint8_t at(int instr, int value_node) const;
  int value_index(int value_node) const;  // -1 when not tracked
};

LiveOut liveness(const graph::HarpGraph& g);

// Balanced node-pair samples for one task. Pairs are ordered, same-function,
// and exclude the diagonal; for liveness the second element is an operand
// node, otherwise both are instruction nodes.
struct LabelSet {
  Task task = Task::reachability;
  struct Pair {
    int i = 0;
    int j = 0;
    uint8_t y = 0;
  };
  std::vector<Pair> pairs;
  bool all_negative_warning = false;
};

LabelSet gen_labels(const graph::HarpGraph& g, Task task, int max_pairs,
                    double pos_ratio, uint64_t seed);

}  // namespace progsg::dataflow
