#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace progsg::pir {

// Restricted SSA program IR. One instruction per line, labeled blocks,
// '#pragma ACCEL' lines with auto{...} placeholders attached to the next
// block label, optional @loc(line,col) source annotations.

enum class Opcode { add, sub, mul, div, cmp, phi, load, store, call, br, condbr, ret };

const char* opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(const std::string& s);
bool is_terminator(Opcode op);

struct SrcLoc {
  int line = 0;  // 1-based
  int col = 0;
};

struct Operand {
  enum class Kind { value, constant };
  Kind kind = Kind::value;
  std::string text;  // "%v" for values, literal text for constants
};

struct Instruction {
  int id = -1;  // program-wide index
  Opcode op = Opcode::add;
  std::string def;  // "%v", empty when the op defines nothing
  std::vector<Operand> operands;
  std::vector<std::string> targets;       // branch labels
  std::vector<int> target_blocks;         // resolved block ids
  std::string callee;                     // call only
  std::optional<SrcLoc> src_loc;          // from @loc, absent otherwise
  int parse_line = 0;
};

struct Block {
  int id = -1;  // program-wide index
  std::string label;
  int function = -1;
  std::vector<int> instructions;
  int loop_depth = 0;
  std::string parent_loop;  // id of the innermost loop containing this block
  int parse_line = 0;
};

struct Loop {
  std::string id;
  int depth = 1;
  int64_t trip = -1;  // -1 when not statically known
  std::string parent;
  int header_block = -1;  // first block annotated with this loop
};

enum class PragmaKind { pipeline, parallel, tile };

const char* pragma_kind_name(PragmaKind k);

struct PragmaDecl {
  int id = -1;
  PragmaKind kind = PragmaKind::pipeline;
  std::string placeholder;
  std::string reduction;  // optional reduction variable
  int attach_block = -1;
  std::vector<std::string> domain;
  int parse_line = 0;
};

struct Function {
  std::string name;
  std::vector<std::string> params;       // "%name"
  std::vector<std::string> param_types;  // parallel to params
  std::vector<int> blocks;
  std::vector<Loop> loops;  // declaration order
  const Loop* loop(const std::string& id) const;
};

struct Program {
  std::string name;
  std::string source_text;  // the verbatim input text
  std::vector<Function> functions;
  std::vector<Block> blocks;
  std::vector<Instruction> instructions;
  std::vector<PragmaDecl> pragmas;

  const Function* function_by_name(const std::string& n) const;
  // Innermost loop governing a block, nullptr when straight-line.
  const Loop* loop_of_block(int block_id) const;
};

struct ParseError : std::runtime_error {
  int line, col;
  ParseError(const std::string& msg, int line, int col);
};

Program parse_pir(const std::string& text);
Program parse_pir_file(const std::string& path);

// Placeholder -> chosen value, canonical string form ("4", "cg", ...).
using Assignment = std::map<std::string, std::string>;

// Substitutes every placeholder occurrence in the source text with
// "placeholder=value". All placeholders must be assigned with in-domain
// values and the assignment may not mention unknown placeholders.
std::string render_design_source(const Program& p, const Assignment& a);

// Canonical text form; parse(pretty_print(p)) is structurally identical to p.
std::string pretty_print(const Program& p);

}  // namespace progsg::pir
