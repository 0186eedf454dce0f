#include "progsg/graph.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace progsg::graph {

namespace {

void validate_assignment(const pir::Program& p, const pir::Assignment& a) {
  for (const auto& [key, value] : a) {
    bool known = false;
    for (const pir::PragmaDecl& d : p.pragmas) known |= d.placeholder == key;
    if (!known) throw std::invalid_argument("assignment names unknown placeholder " + key);
  }
  for (const pir::PragmaDecl& d : p.pragmas) {
    auto it = a.find(d.placeholder);
    if (it == a.end())
      throw std::invalid_argument("missing assignment for placeholder " + d.placeholder);
    if (std::find(d.domain.begin(), d.domain.end(), it->second) == d.domain.end())
      throw std::invalid_argument("value " + it->second + " not in domain of " +
                                  d.placeholder);
  }
}

}  // namespace

const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::instruction: return "instruction";
    case NodeKind::operand: return "operand";
    case NodeKind::constant: return "constant";
    case NodeKind::pragma_node: return "pragma";
    case NodeKind::block: return "block";
  }
  return "?";
}

const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::control: return "control";
    case EdgeKind::data: return "data";
    case EdgeKind::call: return "call";
    case EdgeKind::pragma_edge: return "pragma";
    case EdgeKind::intra_block: return "intra_block";
    case EdgeKind::block_flow: return "block_flow";
    case EdgeKind::hierarchy: return "hierarchy";
  }
  return "?";
}

int HarpGraph::count(NodeKind k) const {
  int n = 0;
  for (const Node& nd : nodes) n += nd.kind == k;
  return n;
}

int HarpGraph::count(EdgeKind k) const {
  int n = 0;
  for (const Edge& e : edges) n += e.kind == k;
  return n;
}

pir::Assignment default_assignment(const pir::Program& p) {
  pir::Assignment a;
  for (const pir::PragmaDecl& d : p.pragmas) a[d.placeholder] = d.domain.front();
  return a;
}

HarpGraph build_graph(const pir::Program& p, const pir::Assignment& assignment) {
  validate_assignment(p, assignment);
  HarpGraph g;
  g.n_instructions = static_cast<int>(p.instructions.size());

  // Instruction nodes, id = instruction id.
  std::vector<int> block_of_instr(p.instructions.size(), -1);
  for (const pir::Block& b : p.blocks)
    for (int iid : b.instructions) block_of_instr[static_cast<size_t>(iid)] = b.id;
  for (const pir::Instruction& ins : p.instructions) {
    Node n;
    n.id = ins.id;
    n.kind = NodeKind::instruction;
    n.feature_text = pir::opcode_name(ins.op);
    n.block_id = block_of_instr[static_cast<size_t>(ins.id)];
    n.src_line = ins.src_loc ? ins.src_loc->line : 0;
    g.nodes.push_back(n);
    g.function_of.push_back(p.blocks[static_cast<size_t>(n.block_id)].function);
  }

  // Operand nodes: params, then instruction results, then constants, per
  // function in declaration order.
  auto add_value_node = [&](int func, const std::string& name, NodeKind kind,
                            const std::string& feature, int block) {
    Node n;
    n.id = static_cast<int>(g.nodes.size());
    n.kind = kind;
    n.feature_text = feature;
    n.block_id = block;
    g.nodes.push_back(n);
    g.function_of.push_back(func);
    g.value_node[{func, name}] = n.id;
    return n.id;
  };
  for (size_t fi = 0; fi < p.functions.size(); ++fi) {
    const pir::Function& f = p.functions[fi];
    int func = static_cast<int>(fi);
    for (const std::string& prm : f.params)
      add_value_node(func, prm, NodeKind::operand, "param", f.blocks.front());
    for (int bid : f.blocks)
      for (int iid : p.blocks[static_cast<size_t>(bid)].instructions) {
        const pir::Instruction& ins = p.instructions[static_cast<size_t>(iid)];
        if (!ins.def.empty())
          add_value_node(func, ins.def, NodeKind::operand, "val", bid);
      }
    for (int bid : f.blocks)
      for (int iid : p.blocks[static_cast<size_t>(bid)].instructions) {
        const pir::Instruction& ins = p.instructions[static_cast<size_t>(iid)];
        for (const pir::Operand& o : ins.operands)
          if (o.kind == pir::Operand::Kind::constant &&
              !g.value_node.count({func, o.text}))
            add_value_node(func, o.text, NodeKind::constant, "const", bid);
      }
  }

  // Auxiliary block nodes.
  for (const pir::Block& b : p.blocks) {
    Node n;
    n.id = static_cast<int>(g.nodes.size());
    n.kind = NodeKind::block;
    n.feature_text = "BLOCK";
    n.block_id = b.id;
    g.nodes.push_back(n);
    g.function_of.push_back(b.function);
    g.block_node_ids.push_back(n.id);
  }

  // Pragma nodes last so stripping them removes an id suffix.
  for (const pir::PragmaDecl& d : p.pragmas) {
    Node n;
    n.id = static_cast<int>(g.nodes.size());
    n.kind = NodeKind::pragma_node;
    n.feature_text = std::string(pir::pragma_kind_name(d.kind)) + "=" +
                     assignment.at(d.placeholder);
    n.block_id = d.attach_block;
    g.nodes.push_back(n);
    g.function_of.push_back(p.blocks[static_cast<size_t>(d.attach_block)].function);
  }

  // Data edges: def→operand (pos 0), then operand→use (pos = 1-based slot).
  for (const pir::Instruction& ins : p.instructions) {
    int func = g.function_of[static_cast<size_t>(ins.id)];
    if (!ins.def.empty())
      g.edges.push_back({ins.id, g.value_node.at({func, ins.def}), EdgeKind::data, 0});
    for (size_t k = 0; k < ins.operands.size(); ++k)
      g.edges.push_back({g.value_node.at({func, ins.operands[k].text}), ins.id,
                         EdgeKind::data, static_cast<int>(k) + 1});
  }

  // Control edges: consecutive instructions inside a block, then terminator
  // to the first instruction of each target block.
  for (const pir::Block& b : p.blocks) {
    for (size_t k = 0; k + 1 < b.instructions.size(); ++k)
      g.edges.push_back(
          {b.instructions[k], b.instructions[k + 1], EdgeKind::control, 0});
    const pir::Instruction& term =
        p.instructions[static_cast<size_t>(b.instructions.back())];
    for (int tb : term.target_blocks)
      g.edges.push_back({term.id,
                         p.blocks[static_cast<size_t>(tb)].instructions.front(),
                         EdgeKind::control, 0});
  }

  // Call edges: call instruction → first instruction of the callee.
  for (const pir::Instruction& ins : p.instructions) {
    if (ins.op != pir::Opcode::call) continue;
    const pir::Function* callee = p.function_by_name(ins.callee);
    if (!callee) throw std::invalid_argument("unknown callee " + ins.callee);
    int entry_block = callee->blocks.front();
    g.edges.push_back({ins.id,
                       p.blocks[static_cast<size_t>(entry_block)].instructions.front(),
                       EdgeKind::call, 0});
  }

  // Pragma edges: pragma node → auxiliary node of its block.
  int pragma_base = static_cast<int>(g.nodes.size()) -
                    static_cast<int>(p.pragmas.size());
  for (size_t di = 0; di < p.pragmas.size(); ++di)
    g.edges.push_back({pragma_base + static_cast<int>(di),
                       g.block_node_ids[static_cast<size_t>(p.pragmas[di].attach_block)],
                       EdgeKind::pragma_edge, 0});

  // Intra-block edges: auxiliary node → every instruction and value node it
  // contains.
  for (const pir::Block& b : p.blocks) {
    int aux = g.block_node_ids[static_cast<size_t>(b.id)];
    for (int iid : b.instructions)
      g.edges.push_back({aux, iid, EdgeKind::intra_block, 0});
  }
  for (const Node& n : g.nodes) {
    if (n.kind != NodeKind::operand && n.kind != NodeKind::constant) continue;
    int aux = g.block_node_ids[static_cast<size_t>(n.block_id)];
    g.edges.push_back({aux, n.id, EdgeKind::intra_block, 0});
  }

  // Block-flow edges: both directions between layout-consecutive blocks.
  for (const pir::Function& f : p.functions)
    for (size_t k = 0; k + 1 < f.blocks.size(); ++k) {
      int a = g.block_node_ids[static_cast<size_t>(f.blocks[k])];
      int b = g.block_node_ids[static_cast<size_t>(f.blocks[k + 1])];
      g.edges.push_back({a, b, EdgeKind::block_flow, 0});
      g.edges.push_back({b, a, EdgeKind::block_flow, 0});
    }

  // Hierarchy edges: loop header auxiliary nodes, parent → direct child.
  for (const pir::Function& f : p.functions)
    for (const pir::Loop& lp : f.loops) {
      if (lp.parent.empty()) continue;
      const pir::Loop* parent = f.loop(lp.parent);
      g.edges.push_back({g.block_node_ids[static_cast<size_t>(parent->header_block)],
                         g.block_node_ids[static_cast<size_t>(lp.header_block)],
                         EdgeKind::hierarchy, 0});
    }

  return g;
}

HarpGraph strip_pragma_nodes(const HarpGraph& g) {
  HarpGraph out;
  out.n_instructions = g.n_instructions;
  out.block_node_ids = g.block_node_ids;
  out.value_node = g.value_node;
  std::set<int> dropped;
  for (const Node& n : g.nodes) {
    if (n.kind == NodeKind::pragma_node) {
      dropped.insert(n.id);
      continue;
    }
    out.nodes.push_back(n);
    out.function_of.push_back(g.function_of[static_cast<size_t>(n.id)]);
  }
  for (const Edge& e : g.edges)
    if (!dropped.count(e.src) && !dropped.count(e.dst)) out.edges.push_back(e);
  return out;
}

std::string export_graph(const HarpGraph& g, const std::string& format) {
  if (format == "json") {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    j["edges"] = nlohmann::json::array();
    for (const Node& n : g.nodes) {
      nlohmann::json jn;
      jn["id"] = n.id;
      jn["kind"] = node_kind_name(n.kind);
      jn["text"] = n.feature_text;
      if (n.block_id >= 0)
        jn["block"] = n.block_id;
      else
        jn["block"] = nullptr;
      j["nodes"].push_back(jn);
    }
    for (const Edge& e : g.edges) {
      nlohmann::json je;
      je["src"] = e.src;
      je["dst"] = e.dst;
      je["kind"] = edge_kind_name(e.kind);
      je["pos"] = e.pos;
      j["edges"].push_back(je);
    }
    return j.dump(2) + "\n";
  }
  if (format == "dot") {
    auto node_color = [](NodeKind k) {
      switch (k) {
        case NodeKind::instruction: return "lightblue";
        case NodeKind::operand: return "lightyellow";
        case NodeKind::constant: return "lightgray";
        case NodeKind::pragma_node: return "lightpink";
        case NodeKind::block: return "lightgreen";
      }
      return "white";
    };
    auto edge_color = [](EdgeKind k) {
      switch (k) {
        case EdgeKind::control: return "black";
        case EdgeKind::data: return "blue";
        case EdgeKind::call: return "purple";
        case EdgeKind::pragma_edge: return "red";
        case EdgeKind::intra_block: return "gray";
        case EdgeKind::block_flow: return "green";
        case EdgeKind::hierarchy: return "orange";
      }
      return "black";
    };
    std::ostringstream os;
    os << "digraph harp {\n";
    for (const Node& n : g.nodes)
      os << "  n" << n.id << " [label=\"" << n.feature_text
         << "\" style=filled fillcolor=" << node_color(n.kind) << "];\n";
    for (const Edge& e : g.edges)
      os << "  n" << e.src << " -> n" << e.dst << " [color=" << edge_color(e.kind)
         << "];\n";
    os << "}\n";
    return os.str();
  }
  throw std::invalid_argument("unknown graph format " + format);
}

NodeFeatureVocab NodeFeatureVocab::standard() {
  NodeFeatureVocab v;
  for (pir::Opcode op :
       {pir::Opcode::add, pir::Opcode::sub, pir::Opcode::mul, pir::Opcode::div,
        pir::Opcode::cmp, pir::Opcode::phi, pir::Opcode::load, pir::Opcode::store,
        pir::Opcode::call, pir::Opcode::br, pir::Opcode::condbr, pir::Opcode::ret})
    v.texts_.push_back(pir::opcode_name(op));
  v.texts_.push_back("val");
  v.texts_.push_back("param");
  v.texts_.push_back("const");
  v.texts_.push_back("BLOCK");
  for (const char* m : {"off", "cg", "fg"}) v.texts_.push_back(std::string("PIPELINE=") + m);
  for (int k = 1; k <= 64; ++k) v.texts_.push_back("PARALLEL=" + std::to_string(k));
  for (int k = 1; k <= 64; ++k) v.texts_.push_back("TILE=" + std::to_string(k));
  v.reindex();
  return v;
}

void NodeFeatureVocab::reindex() {
  index_.clear();
  for (size_t i = 0; i < texts_.size(); ++i)
    index_[texts_[i]] = static_cast<int32_t>(i);
}

int32_t NodeFeatureVocab::id(const std::string& feature_text) const {
  auto it = index_.find(feature_text);
  if (it == index_.end())
    throw std::out_of_range("unknown node feature: " + feature_text);
  return it->second;
}

void NodeFeatureVocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const std::string& t : texts_) out << t << "\n";
}

NodeFeatureVocab NodeFeatureVocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  NodeFeatureVocab v;
  std::string ln;
  while (std::getline(in, ln)) {
    if (!ln.empty() && ln.back() == '\r') ln.pop_back();
    if (!ln.empty()) v.texts_.push_back(ln);
  }
  if (v.texts_.empty()) throw std::runtime_error("empty node feature file: " + path);
  v.reindex();
  return v;
}

}  // namespace progsg::graph
