#include "progsg/dataflow.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "progsg/rng.hpp"

namespace progsg::dataflow {

namespace {

// Control-edge adjacency over instruction nodes.
struct Cfg {
  int n = 0;
  std::vector<std::vector<int>> succ;
  std::vector<std::vector<int>> pred;

  explicit Cfg(const graph::HarpGraph& g) : n(g.n_instructions), succ(n), pred(n) {
    for (const graph::Edge& e : g.edges) {
      if (e.kind != graph::EdgeKind::control) continue;
      succ[static_cast<size_t>(e.src)].push_back(e.dst);
      pred[static_cast<size_t>(e.dst)].push_back(e.src);
    }
  }
};

std::vector<std::vector<int>> instructions_by_function(const graph::HarpGraph& g) {
  int n_funcs = 0;
  for (int v = 0; v < g.n_instructions; ++v)
    n_funcs = std::max(n_funcs, g.function_of[static_cast<size_t>(v)] + 1);
  std::vector<std::vector<int>> out(static_cast<size_t>(n_funcs));
  for (int v = 0; v < g.n_instructions; ++v)
    out[static_cast<size_t>(g.function_of[static_cast<size_t>(v)])].push_back(v);
  return out;
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::reachability: return "reachability";
    case Task::dominators: return "dominators";
    case Task::datadep: return "datadep";
    case Task::liveness: return "liveness";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  for (Task t : {Task::reachability, Task::dominators, Task::datadep, Task::liveness})
    if (s == task_name(t)) return t;
  throw std::invalid_argument("unknown dataflow task " + s);
}

BoolMatrix reachability(const graph::HarpGraph& g) {
  Cfg cfg(g);
  BoolMatrix m(cfg.n);
  std::vector<uint8_t> seen(static_cast<size_t>(cfg.n));
  for (int s = 0; s < cfg.n; ++s) {
    std::fill(seen.begin(), seen.end(), 0);
    std::deque<int> work{s};
    seen[static_cast<size_t>(s)] = 1;
    while (!work.empty()) {
      int u = work.front();
      work.pop_front();
      m.set(s, u, 1);
      for (int v : cfg.succ[static_cast<size_t>(u)])
        if (!seen[static_cast<size_t>(v)]) {
          seen[static_cast<size_t>(v)] = 1;
          work.push_back(v);
        }
    }
  }
  return m;
}

BoolMatrix dominators(const graph::HarpGraph& g) {
  Cfg cfg(g);
  BoolMatrix m(cfg.n);
  for (const std::vector<int>& nodes : instructions_by_function(g)) {
    if (nodes.empty()) throw std::invalid_argument("function with no entry instruction");
    int entry = nodes.front();  // lowest id in the function by construction

    // dom[v] as a bitset over this function's node list.
    std::vector<int> local(static_cast<size_t>(cfg.n), -1);
    for (size_t i = 0; i < nodes.size(); ++i) local[static_cast<size_t>(nodes[i])] =
        static_cast<int>(i);
    size_t k = nodes.size();
    std::vector<std::vector<uint8_t>> dom(k, std::vector<uint8_t>(k, 1));
    std::fill(dom[static_cast<size_t>(local[static_cast<size_t>(entry)])].begin(),
              dom[static_cast<size_t>(local[static_cast<size_t>(entry)])].end(), 0);
    dom[static_cast<size_t>(local[static_cast<size_t>(entry)])]
       [static_cast<size_t>(local[static_cast<size_t>(entry)])] = 1;

    bool changed = true;
    while (changed) {
      changed = false;
      for (int v : nodes) {
        if (v == entry) continue;
        int lv = local[static_cast<size_t>(v)];
        const std::vector<int>& preds = cfg.pred[static_cast<size_t>(v)];
        if (preds.empty()) continue;  // unreachable: stays "all nodes"
        std::vector<uint8_t> next(k, 1);
        for (int p : preds) {
          const std::vector<uint8_t>& dp = dom[static_cast<size_t>(local[static_cast<size_t>(p)])];
          for (size_t i = 0; i < k; ++i) next[i] = next[i] & dp[i];
        }
        next[static_cast<size_t>(lv)] = 1;
        if (next != dom[static_cast<size_t>(lv)]) {
          dom[static_cast<size_t>(lv)] = std::move(next);
          changed = true;
        }
      }
    }
    for (size_t vi = 0; vi < k; ++vi)
      for (size_t ui = 0; ui < k; ++ui)
        if (dom[vi][ui]) m.set(nodes[ui], nodes[vi], 1);
  }
  return m;
}

BoolMatrix datadep(const graph::HarpGraph& g) {
  BoolMatrix m(g.n_instructions);
  // def edges instruction→value (pos 0), use edges value→instruction.
  std::vector<int> def_of(g.nodes.size(), -1);  // value node → defining instr
  for (const graph::Edge& e : g.edges)
    if (e.kind == graph::EdgeKind::data && e.pos == 0)
      def_of[static_cast<size_t>(e.dst)] = e.src;
  for (const graph::Edge& e : g.edges) {
    if (e.kind != graph::EdgeKind::data || e.pos == 0) continue;
    int d = def_of[static_cast<size_t>(e.src)];
    if (d >= 0) m.set(d, e.dst, 1);
  }
  return m;
}

uint8_t LiveOut::at(int instr, int value_node) const {
  int c = value_index(value_node);
  if (c < 0) return 0;
  return bits[static_cast<size_t>(instr) * values.size() + static_cast<size_t>(c)];
}

int LiveOut::value_index(int value_node) const {
  auto it = std::lower_bound(values.begin(), values.end(), value_node);
  if (it == values.end() || *it != value_node) return -1;
  return static_cast<int>(it - values.begin());
}

LiveOut liveness(const graph::HarpGraph& g) {
  Cfg cfg(g);
  LiveOut lo;
  lo.n_instr = cfg.n;
  for (const graph::Node& nd : g.nodes)
    if (nd.kind == graph::NodeKind::operand) lo.values.push_back(nd.id);
  size_t k = lo.values.size();
  lo.bits.assign(static_cast<size_t>(cfg.n) * k, 0);

  std::vector<std::vector<uint8_t>> defs(static_cast<size_t>(cfg.n),
                                         std::vector<uint8_t>(k, 0));
  std::vector<std::vector<uint8_t>> uses = defs;
  for (const graph::Edge& e : g.edges) {
    if (e.kind != graph::EdgeKind::data) continue;
    if (e.pos == 0) {
      int c = lo.value_index(e.dst);
      if (c >= 0) defs[static_cast<size_t>(e.src)][static_cast<size_t>(c)] = 1;
    } else {
      int c = lo.value_index(e.src);
      if (c >= 0) uses[static_cast<size_t>(e.dst)][static_cast<size_t>(c)] = 1;
    }
  }

  std::vector<std::vector<uint8_t>> live_in(static_cast<size_t>(cfg.n),
                                            std::vector<uint8_t>(k, 0));
  std::vector<std::vector<uint8_t>> live_out = live_in;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int v = cfg.n - 1; v >= 0; --v) {
      std::vector<uint8_t> out(k, 0);
      for (int s : cfg.succ[static_cast<size_t>(v)])
        for (size_t i = 0; i < k; ++i) out[i] |= live_in[static_cast<size_t>(s)][i];
      std::vector<uint8_t> in(k);
      for (size_t i = 0; i < k; ++i)
        in[i] = uses[static_cast<size_t>(v)][i] |
                (out[i] & static_cast<uint8_t>(!defs[static_cast<size_t>(v)][i]));
      if (out != live_out[static_cast<size_t>(v)] || in != live_in[static_cast<size_t>(v)]) {
        live_out[static_cast<size_t>(v)] = std::move(out);
        live_in[static_cast<size_t>(v)] = std::move(in);
        changed = true;
      }
    }
  }
  for (int v = 0; v < cfg.n; ++v)
    for (size_t i = 0; i < k; ++i)
      lo.bits[static_cast<size_t>(v) * k + i] = live_out[static_cast<size_t>(v)][i];
  return lo;
}

LabelSet gen_labels(const graph::HarpGraph& g, Task task, int max_pairs,
                    double pos_ratio, uint64_t seed) {
  if (max_pairs <= 0) throw std::invalid_argument("max_pairs must be positive");
  if (pos_ratio < 0.0 || pos_ratio > 1.0)
    throw std::invalid_argument("pos_ratio must lie in [0,1]");

  std::vector<LabelSet::Pair> pos, neg;
  auto classify = [&](int i, int j, uint8_t y) {
    (y ? pos : neg).push_back({i, j, y});
  };

  if (task == Task::liveness) {
    LiveOut lo = liveness(g);
    for (int i = 0; i < g.n_instructions; ++i)
      for (int j : lo.values) {
        if (g.function_of[static_cast<size_t>(i)] != g.function_of[static_cast<size_t>(j)])
          continue;
        classify(i, j, lo.at(i, j));
      }
  } else {
    BoolMatrix m = task == Task::reachability ? reachability(g)
                  : task == Task::dominators  ? dominators(g)
                                              : datadep(g);
    for (int i = 0; i < m.n; ++i)
      for (int j = 0; j < m.n; ++j) {
        if (i == j) continue;
        if (g.function_of[static_cast<size_t>(i)] != g.function_of[static_cast<size_t>(j)])
          continue;
        classify(i, j, m.at(i, j));
      }
  }

  LabelSet out;
  out.task = task;
  out.all_negative_warning = pos.empty() && pos_ratio > 0.0;

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  size_t n_pos = std::min(pos.size(),
                          static_cast<size_t>(std::llround(pos_ratio * max_pairs)));
  size_t n_neg = std::min(neg.size(), static_cast<size_t>(max_pairs) - n_pos);
  out.pairs.assign(pos.begin(), pos.begin() + static_cast<long>(n_pos));
  out.pairs.insert(out.pairs.end(), neg.begin(), neg.begin() + static_cast<long>(n_neg));
  rng.shuffle(out.pairs);
  return out;
}

}  // namespace progsg::dataflow
