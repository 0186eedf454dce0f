#pragma once

// Reference analyses computed by exhaustive simple-path enumeration and raw
// def/use scans — exponential, independent of the worklist implementations,
// and only suitable for the small graphs used in tests.

#include <string>
#include <vector>

#include "progsg/graph.hpp"
#include "progsg/pir.hpp"

namespace support {

inline std::vector<std::vector<int>> control_succ(const progsg::graph::HarpGraph& g) {
  std::vector<std::vector<int>> succ(static_cast<size_t>(g.n_instructions));
  for (const progsg::graph::Edge& e : g.edges)
    if (e.kind == progsg::graph::EdgeKind::control)
      succ[static_cast<size_t>(e.src)].push_back(e.dst);
  return succ;
}

namespace detail {

inline bool simple_path_exists(const std::vector<std::vector<int>>& succ, int cur,
                               int goal, std::vector<uint8_t>& onpath) {
  if (cur == goal) return true;
  onpath[static_cast<size_t>(cur)] = 1;
  for (int w : succ[static_cast<size_t>(cur)])
    if (!onpath[static_cast<size_t>(w)] && simple_path_exists(succ, w, goal, onpath))
      return true;
  onpath[static_cast<size_t>(cur)] = 0;
  return false;
}

// False iff some simple path cur→goal avoids the witness node.
inline bool every_path_hits(const std::vector<std::vector<int>>& succ, int cur,
                            int goal, int witness, std::vector<uint8_t>& onpath) {
  onpath[static_cast<size_t>(cur)] = 1;
  bool ok = true;
  if (cur == goal) {
    ok = onpath[static_cast<size_t>(witness)] != 0;
  } else {
    for (int w : succ[static_cast<size_t>(cur)]) {
      if (onpath[static_cast<size_t>(w)]) continue;
      if (!every_path_hits(succ, w, goal, witness, onpath)) {
        ok = false;
        break;
      }
    }
  }
  onpath[static_cast<size_t>(cur)] = 0;
  return ok;
}

}  // namespace detail

inline bool reach_oracle(const progsg::graph::HarpGraph& g, int u, int v) {
  auto succ = control_succ(g);
  std::vector<uint8_t> onpath(static_cast<size_t>(g.n_instructions), 0);
  return detail::simple_path_exists(succ, u, v, onpath);
}

// u dominates v from the given entry; unreachable v-s are vacuously dominated.
inline bool dom_oracle(const progsg::graph::HarpGraph& g, int entry, int u, int v) {
  auto succ = control_succ(g);
  std::vector<uint8_t> onpath(static_cast<size_t>(g.n_instructions), 0);
  return detail::every_path_hits(succ, entry, v, u, onpath);
}

// Scans the program text's def/use lists directly, bypassing the graph.
inline bool datadep_oracle(const progsg::pir::Program& p, int a, int b) {
  const progsg::pir::Instruction& ia = p.instructions[static_cast<size_t>(a)];
  const progsg::pir::Instruction& ib = p.instructions[static_cast<size_t>(b)];
  if (ia.def.empty()) return false;
  for (const progsg::pir::Operand& o : ib.operands)
    if (o.kind == progsg::pir::Operand::Kind::value && o.text == ia.def) return true;
  return false;
}

// live_out(n, value): some successor of n starts a def-free simple path that
// reaches a use of the value.
inline bool liveout_oracle(const progsg::graph::HarpGraph& g, int n, int value_node) {
  auto succ = control_succ(g);
  std::vector<uint8_t> defs(static_cast<size_t>(g.n_instructions), 0);
  std::vector<uint8_t> uses(static_cast<size_t>(g.n_instructions), 0);
  for (const progsg::graph::Edge& e : g.edges) {
    if (e.kind != progsg::graph::EdgeKind::data) continue;
    if (e.pos == 0 && e.dst == value_node) defs[static_cast<size_t>(e.src)] = 1;
    if (e.pos > 0 && e.src == value_node) uses[static_cast<size_t>(e.dst)] = 1;
  }
  std::vector<uint8_t> onpath(static_cast<size_t>(g.n_instructions), 0);
  // Uses happen before the node's own def (right-hand side first).
  auto search = [&](auto&& self, int s) -> bool {
    if (uses[static_cast<size_t>(s)]) return true;
    if (defs[static_cast<size_t>(s)]) return false;
    onpath[static_cast<size_t>(s)] = 1;
    for (int w : succ[static_cast<size_t>(s)])
      if (!onpath[static_cast<size_t>(w)] && self(self, w)) return true;
    onpath[static_cast<size_t>(s)] = 0;
    return false;
  };
  for (int s : succ[static_cast<size_t>(n)])
    if (search(search, s)) return true;
  return false;
}

}  // namespace support
