#include "progsg/graph.hpp"

namespace progsg::graph {

std::map<int, std::vector<int>> build_alignment(const HarpGraph& g,
                                                const std::vector<int>& token_lines) {
  std::map<int, std::vector<int>> out;
  for (int v = 0; v < g.n_instructions; ++v) {
    int line = g.nodes[static_cast<size_t>(v)].src_line;
    if (line <= 0) continue;
    std::vector<int> hits;
    for (size_t t = 0; t < token_lines.size(); ++t)
      if (token_lines[t] == line) hits.push_back(static_cast<int>(t));
    if (!hits.empty()) out[v] = std::move(hits);
  }
  return out;
}

}  // namespace progsg::graph
