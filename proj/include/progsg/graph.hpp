#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "progsg/pir.hpp"

namespace progsg::graph {

enum class NodeKind { instruction, operand, constant, pragma_node, block };
enum class EdgeKind { control, data, call, pragma_edge, intra_block, block_flow, hierarchy };

const char* node_kind_name(NodeKind k);
const char* edge_kind_name(EdgeKind k);

struct Node {
  int id = -1;
  NodeKind kind = NodeKind::instruction;
  std::string feature_text;  // opcode / val / param / const / KIND=value / BLOCK
  int block_id = -1;         // owning block, -1 when none
  int src_line = 0;          // source line for instruction nodes, 0 when none
};

struct Edge {
  int src = -1;
  int dst = -1;
  EdgeKind kind = EdgeKind::control;
  int pos = 0;  // 1-based operand position on operand→use data edges, else 0
};

// Hierarchical control/data-flow graph over one program. Node ids are dense
// and ordered: instruction nodes first (id = instruction id), then operand
// and constant nodes, then block auxiliary nodes, then pragma nodes last —
// stripping pragmas removes an id suffix, so remaining ids stay stable.
struct HarpGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<int> block_node_ids;  // auxiliary node per block, block order
  std::vector<int> function_of;     // node id → function index
  int n_instructions = 0;           // instruction nodes occupy ids [0, n_instructions)

  // Operand/constant node for a named value or constant literal per function.
  std::map<std::pair<int, std::string>, int> value_node;

  int count(NodeKind k) const;
  int count(EdgeKind k) const;
};

// Every placeholder mapped to the first entry of its domain.
pir::Assignment default_assignment(const pir::Program& p);

HarpGraph build_graph(const pir::Program& p, const pir::Assignment& assignment);

// Pragma-free copy with all other node ids unchanged.
HarpGraph strip_pragma_nodes(const HarpGraph& g);

// format ∈ {"json", "dot"}; output is deterministic for a given graph.
std::string export_graph(const HarpGraph& g, const std::string& format);

// Closed vocabulary over node feature texts: opcodes, the operand/constant/
// block markers, and every pragma kind=value string.
class NodeFeatureVocab {
 public:
  static NodeFeatureVocab standard();

  int32_t id(const std::string& feature_text) const;  // throws on unknown text
  int32_t size() const { return static_cast<int32_t>(texts_.size()); }
  const std::string& text(int32_t id) const { return texts_.at(static_cast<size_t>(id)); }

  void save(const std::string& path) const;  // one feature per line, id order
  static NodeFeatureVocab load(const std::string& path);

 private:
  std::vector<std::string> texts_;
  std::map<std::string, int32_t> index_;
  void reindex();
};

// Instruction-node → token-index alignment: node v maps to the source tokens
// on v's recorded source line. Only nodes with at least one token appear.
std::map<int, std::vector<int>> build_alignment(
    const HarpGraph& g,
    const std::vector<int>& token_lines);  // token index → 1-based line

}  // namespace progsg::graph
