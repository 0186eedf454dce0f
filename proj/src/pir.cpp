#include "progsg/pir.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace progsg::pir {

namespace {

const std::pair<Opcode, const char*> kOpcodes[] = {
    {Opcode::add, "add"},     {Opcode::sub, "sub"},   {Opcode::mul, "mul"},
    {Opcode::div, "div"},     {Opcode::cmp, "cmp"},   {Opcode::phi, "phi"},
    {Opcode::load, "load"},   {Opcode::store, "store"}, {Opcode::call, "call"},
    {Opcode::br, "br"},       {Opcode::condbr, "condbr"}, {Opcode::ret, "ret"},
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Single-line scanner with 1-based column reporting.
struct Scan {
  const std::string& s;
  int line;
  size_t pos = 0;

  Scan(const std::string& str, int ln) : s(str), line(ln) {}

  int col() const { return static_cast<int>(pos) + 1; }
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, line, col()); }

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\r')) ++pos;
  }
  bool eol() {
    skip_ws();
    return pos >= s.size();
  }
  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }
  bool consume(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!consume(c)) fail(std::string("syntax error: expected '") + c + "'");
  }
  std::string ident() {
    skip_ws();
    if (pos >= s.size() || !ident_start(s[pos])) fail("syntax error: expected identifier");
    size_t b = pos;
    while (pos < s.size() && ident_char(s[pos])) ++pos;
    return s.substr(b, pos - b);
  }
  std::string value_ref() {
    skip_ws();
    expect('%');
    return "%" + ident();
  }
  int64_t integer() {
    skip_ws();
    size_t b = pos;
    if (pos < s.size() && (s[pos] == '-' || s[pos] == '+')) ++pos;
    size_t digits = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == digits) fail("syntax error: expected integer");
    return std::stoll(s.substr(b, pos - b));
  }
  // Value reference or numeric constant.
  Operand operand() {
    skip_ws();
    if (pos < s.size() && s[pos] == '%') return {Operand::Kind::value, value_ref()};
    if (pos < s.size() &&
        (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '-')) {
      size_t b = pos;
      if (s[pos] == '-') ++pos;
      while (pos < s.size() &&
             (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.'))
        ++pos;
      return {Operand::Kind::constant, s.substr(b, pos - b)};
    }
    fail("syntax error: expected operand");
  }
};

struct LoopAnnot {
  std::string id;
  bool has_depth = false;
  int depth = 0;
  bool has_trip = false;
  int64_t trip = -1;
  std::string parent;
};

struct Parser {
  Program prog;
  int cur_func = -1;
  int cur_block = -1;
  std::vector<int> pending_pragmas;
  std::unordered_map<std::string, int> labels;    // per function
  std::vector<std::pair<int, int>> unresolved;    // instruction id, line
  std::unordered_map<std::string, LoopAnnot> block_annots;  // label -> annot
  std::set<std::string> placeholders;

  void parse(const std::string& text) {
    prog.source_text = text;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      size_t c = raw.find("//");
      std::string s = c == std::string::npos ? raw : raw.substr(0, c);
      Scan sc(s, lineno);
      if (sc.eol()) continue;
      if (sc.peek() == '#') {
        pragma_line(sc);
        continue;
      }
      if (sc.peek() == '}') {
        sc.expect('}');
        if (!sc.eol()) sc.fail("syntax error: trailing tokens after '}'");
        end_function(lineno);
        continue;
      }
      if (sc.peek() == '%') {
        instruction_line(sc, lineno);
        continue;
      }
      size_t save = sc.pos;
      std::string word = sc.ident();
      if (word == "func" && cur_func < 0) {
        func_header(sc, lineno);
        continue;
      }
      if (sc.peek() == ':') {
        sc.expect(':');
        block_line(word, sc, lineno);
        continue;
      }
      sc.pos = save;
      instruction_line(sc, lineno);
    }
    if (cur_func >= 0) throw ParseError("syntax error: unterminated function", lineno, 1);
    if (prog.functions.empty()) throw ParseError("syntax error: no functions", 1, 1);
    prog.name = prog.functions.front().name;
  }

  void func_header(Scan& sc, int lineno) {
    Function f;
    f.name = sc.ident();
    sc.expect('(');
    if (sc.peek() != ')') {
      while (true) {
        f.params.push_back(sc.value_ref());
        std::string ty = "f64";
        if (sc.consume(':')) ty = sc.ident();
        f.param_types.push_back(ty);
        if (!sc.consume(',')) break;
      }
    }
    sc.expect(')');
    sc.expect('{');
    if (!sc.eol()) sc.fail("syntax error: trailing tokens after '{'");
    for (const auto& g : prog.functions)
      if (g.name == f.name) throw ParseError("duplicate definition of function " + f.name, lineno, 1);
    prog.functions.push_back(std::move(f));
    cur_func = static_cast<int>(prog.functions.size()) - 1;
    cur_block = -1;
    labels.clear();
    unresolved.clear();
    block_annots.clear();
  }

  void pragma_line(Scan& sc) {
    if (cur_func < 0) sc.fail("syntax error: pragma outside function");
    sc.expect('#');
    if (sc.ident() != "pragma") sc.fail("syntax error: expected 'pragma'");
    if (sc.ident() != "ACCEL") sc.fail("syntax error: expected 'ACCEL'");
    std::string kind_s = sc.ident();
    PragmaDecl d;
    d.parse_line = sc.line;
    if (kind_s == "PIPELINE") {
      d.kind = PragmaKind::pipeline;
    } else if (kind_s == "PARALLEL") {
      d.kind = PragmaKind::parallel;
    } else if (kind_s == "TILE") {
      d.kind = PragmaKind::tile;
    } else {
      sc.fail("illegal pragma domain: unknown kind " + kind_s);
    }
    bool factor = false;
    while (true) {
      std::string w = sc.ident();
      if (w == "auto") {
        sc.expect('{');
        d.placeholder = sc.ident();
        sc.expect('}');
        break;
      }
      if (w == "FACTOR") {
        sc.expect('=');
        factor = true;
        continue;
      }
      if (w == "reduction") {
        sc.expect('=');
        d.reduction = sc.ident();
        continue;
      }
      sc.fail("syntax error: unexpected token '" + w + "' in pragma");
    }
    if (!sc.eol()) sc.fail("syntax error: trailing tokens after pragma");
    if (d.kind == PragmaKind::pipeline && factor)
      sc.fail("illegal pragma domain: PIPELINE takes no FACTOR");
    if (d.kind != PragmaKind::pipeline && !factor)
      sc.fail("illegal pragma domain: " + kind_s + " requires FACTOR=");
    if (!d.reduction.empty() && d.kind != PragmaKind::parallel)
      sc.fail("illegal pragma domain: reduction only applies to PARALLEL");
    if (!placeholders.insert(d.placeholder).second)
      sc.fail("duplicate placeholder " + d.placeholder);
    d.id = static_cast<int>(prog.pragmas.size());
    prog.pragmas.push_back(d);
    pending_pragmas.push_back(d.id);
  }

  void block_line(const std::string& label, Scan& sc, int lineno) {
    if (cur_func < 0) sc.fail("syntax error: block label outside function");
    if (labels.count(label))
      throw ParseError("duplicate definition of block " + label, lineno, 1);
    Block b;
    b.id = static_cast<int>(prog.blocks.size());
    b.label = label;
    b.function = cur_func;
    b.parse_line = lineno;
    if (sc.peek() == '@') {
      sc.expect('@');
      if (sc.ident() != "loop") sc.fail("syntax error: expected @loop");
      sc.expect('(');
      LoopAnnot a;
      a.id = sc.ident();
      while (sc.consume(',')) {
        std::string key = sc.ident();
        sc.expect('=');
        if (key == "depth") {
          a.has_depth = true;
          a.depth = static_cast<int>(sc.integer());
        } else if (key == "trip") {
          a.has_trip = true;
          a.trip = sc.integer();
        } else if (key == "parent") {
          a.parent = sc.ident();
        } else {
          sc.fail("syntax error: unknown loop attribute " + key);
        }
      }
      sc.expect(')');
      block_annots[label] = a;
      b.parent_loop = a.id;
    }
    if (!sc.eol()) sc.fail("syntax error: trailing tokens after block label");
    labels[label] = b.id;
    prog.functions[static_cast<size_t>(cur_func)].blocks.push_back(b.id);
    for (int pid : pending_pragmas) prog.pragmas[static_cast<size_t>(pid)].attach_block = b.id;
    pending_pragmas.clear();
    prog.blocks.push_back(std::move(b));
    cur_block = prog.blocks.back().id;
  }

  void instruction_line(Scan& sc, int lineno) {
    if (cur_block < 0) sc.fail("syntax error: instruction outside block");
    Instruction ins;
    ins.parse_line = lineno;
    if (sc.peek() == '%') {
      ins.def = sc.value_ref();
      sc.expect('=');
    }
    std::string op_s = sc.ident();
    auto op = opcode_from_name(op_s);
    if (!op) sc.fail("syntax error: unknown opcode " + op_s);
    ins.op = *op;
    switch (ins.op) {
      case Opcode::br:
        ins.targets.push_back(sc.ident());
        break;
      case Opcode::condbr:
        ins.operands.push_back(sc.operand());
        sc.expect(',');
        ins.targets.push_back(sc.ident());
        sc.expect(',');
        ins.targets.push_back(sc.ident());
        break;
      case Opcode::ret:
        if (!sc.eol() && sc.peek() != '@') ins.operands.push_back(sc.operand());
        break;
      case Opcode::call:
        ins.callee = sc.ident();
        sc.expect('(');
        if (sc.peek() != ')') {
          do {
            ins.operands.push_back(sc.operand());
          } while (sc.consume(','));
        }
        sc.expect(')');
        break;
      default:
        ins.operands.push_back(sc.operand());
        while (sc.consume(',')) ins.operands.push_back(sc.operand());
        break;
    }
    if (sc.peek() == '@') {
      sc.expect('@');
      if (sc.ident() != "loc") sc.fail("syntax error: expected @loc");
      sc.expect('(');
      int l = static_cast<int>(sc.integer());
      sc.expect(',');
      int c2 = static_cast<int>(sc.integer());
      sc.expect(')');
      ins.src_loc = SrcLoc{l, c2};
    }
    if (!sc.eol()) sc.fail("syntax error: trailing tokens after instruction");
    bool needs_def = ins.op != Opcode::store && ins.op != Opcode::br &&
                     ins.op != Opcode::condbr && ins.op != Opcode::ret &&
                     ins.op != Opcode::call;
    if (needs_def && ins.def.empty()) sc.fail("syntax error: missing result for " + op_s);
    if (!ins.def.empty() && !needs_def && ins.op != Opcode::call)
      sc.fail("syntax error: " + op_s + " defines no result");
    size_t want = 0;
    switch (ins.op) {
      case Opcode::add:
      case Opcode::sub:
      case Opcode::mul:
      case Opcode::div:
      case Opcode::cmp:
      case Opcode::store:
        want = 2;
        break;
      case Opcode::load:
        want = 1;
        break;
      default:
        want = ins.operands.size();
        break;
    }
    if (ins.op == Opcode::phi && ins.operands.empty())
      sc.fail("syntax error: phi needs operands");
    if (ins.operands.size() != want)
      sc.fail("syntax error: wrong operand count for " + op_s);
    ins.id = static_cast<int>(prog.instructions.size());
    prog.blocks[static_cast<size_t>(cur_block)].instructions.push_back(ins.id);
    if (!ins.targets.empty()) unresolved.emplace_back(ins.id, lineno);
    prog.instructions.push_back(std::move(ins));
  }

  void end_function(int lineno) {
    if (cur_func < 0) throw ParseError("syntax error: '}' outside function", lineno, 1);
    if (!pending_pragmas.empty())
      throw ParseError("syntax error: pragma not attached to a block", lineno, 1);
    Function& f = prog.functions[static_cast<size_t>(cur_func)];
    if (f.blocks.empty()) throw ParseError("syntax error: function has no blocks", lineno, 1);

    for (auto& [iid, ln] : unresolved) {
      Instruction& ins = prog.instructions[static_cast<size_t>(iid)];
      ins.target_blocks.clear();
      for (const std::string& t : ins.targets) {
        auto it = labels.find(t);
        if (it == labels.end()) throw ParseError("undefined reference to block " + t, ln, 1);
        ins.target_blocks.push_back(it->second);
      }
    }

    std::unordered_map<std::string, int> defs;  // name -> line
    for (size_t i = 0; i < f.params.size(); ++i) defs[f.params[i]] = 0;
    for (int bid : f.blocks)
      for (int iid : prog.blocks[static_cast<size_t>(bid)].instructions) {
        const Instruction& ins = prog.instructions[static_cast<size_t>(iid)];
        if (ins.def.empty()) continue;
        if (!defs.emplace(ins.def, ins.parse_line).second)
          throw ParseError("duplicate definition of " + ins.def, ins.parse_line, 1);
      }
    for (int bid : f.blocks)
      for (int iid : prog.blocks[static_cast<size_t>(bid)].instructions) {
        const Instruction& ins = prog.instructions[static_cast<size_t>(iid)];
        for (const Operand& o : ins.operands)
          if (o.kind == Operand::Kind::value && !defs.count(o.text))
            throw ParseError("undefined reference to " + o.text, ins.parse_line, 1);
      }

    for (int bid : f.blocks) {
      const Block& b = prog.blocks[static_cast<size_t>(bid)];
      if (b.instructions.empty())
        throw ParseError("syntax error: empty block " + b.label, b.parse_line, 1);
      int term_at = -1;
      for (size_t i = 0; i < b.instructions.size(); ++i) {
        const Instruction& ins = prog.instructions[static_cast<size_t>(b.instructions[i])];
        if (is_terminator(ins.op)) {
          if (term_at >= 0) throw ParseError("duplicate terminator", ins.parse_line, 1);
          term_at = static_cast<int>(i);
        } else if (term_at >= 0) {
          throw ParseError("syntax error: instruction after terminator", ins.parse_line, 1);
        }
      }
      if (term_at < 0 ||
          static_cast<size_t>(term_at) + 1 != b.instructions.size())
        throw ParseError("syntax error: missing terminator in block " + b.label,
                         b.parse_line, 1);
    }

    finalize_loops(f, cur_func);
    cur_func = -1;
    cur_block = -1;
  }

  void finalize_loops(Function& f, int func_idx) {
    std::unordered_map<std::string, size_t> by_id;
    for (int bid : f.blocks) {
      Block& b = prog.blocks[static_cast<size_t>(bid)];
      if (b.parent_loop.empty()) continue;
      const LoopAnnot& a = block_annots.at(b.label);
      auto it = by_id.find(a.id);
      if (it == by_id.end()) {
        Loop lp;
        lp.id = a.id;
        lp.header_block = bid;
        lp.parent = a.parent;
        if (!a.parent.empty() && !by_id.count(a.parent))
          throw ParseError("undefined reference to loop " + a.parent, b.parse_line, 1);
        lp.depth = a.has_depth
                       ? a.depth
                       : (a.parent.empty()
                              ? 1
                              : f.loops[by_id.at(a.parent)].depth + 1);
        lp.trip = a.has_trip ? a.trip : -1;
        by_id[a.id] = f.loops.size();
        f.loops.push_back(lp);
      } else {
        const Loop& lp = f.loops[it->second];
        if ((a.has_depth && a.depth != lp.depth) || (a.has_trip && a.trip != lp.trip) ||
            (!a.parent.empty() && a.parent != lp.parent))
          throw ParseError("conflicting loop annotation for " + a.id, b.parse_line, 1);
      }
      b.loop_depth = f.loops[by_id.at(a.id)].depth;
    }
    for (int bid : f.blocks) {
      Block& b = prog.blocks[static_cast<size_t>(bid)];
      if (b.parent_loop.empty()) b.loop_depth = 0;
    }
    // Pragma domains need loop trip counts, resolved per attach block.
    for (PragmaDecl& d : prog.pragmas) {
      if (d.attach_block < 0) continue;
      const Block& b = prog.blocks[static_cast<size_t>(d.attach_block)];
      if (b.function != func_idx) continue;
      if (d.kind == PragmaKind::pipeline) {
        d.domain = {"off", "cg", "fg"};
      } else {
        const Loop* lp = b.parent_loop.empty() ? nullptr : f.loop(b.parent_loop);
        d.domain.clear();
        if (lp && lp->trip > 0) {
          for (int64_t x = 1; x <= std::min<int64_t>(lp->trip, 64); ++x)
            if (lp->trip % x == 0) d.domain.push_back(std::to_string(x));
        } else {
          for (int64_t x : {1, 2, 4, 8, 16, 32, 64}) d.domain.push_back(std::to_string(x));
        }
      }
    }
  }
};

}  // namespace

const char* opcode_name(Opcode op) {
  for (const auto& [o, n] : kOpcodes)
    if (o == op) return n;
  return "?";
}

std::optional<Opcode> opcode_from_name(const std::string& s) {
  for (const auto& [o, n] : kOpcodes)
    if (s == n) return o;
  return std::nullopt;
}

bool is_terminator(Opcode op) {
  return op == Opcode::br || op == Opcode::condbr || op == Opcode::ret;
}

const char* pragma_kind_name(PragmaKind k) {
  switch (k) {
    case PragmaKind::pipeline: return "PIPELINE";
    case PragmaKind::parallel: return "PARALLEL";
    case PragmaKind::tile: return "TILE";
  }
  return "?";
}

const Loop* Function::loop(const std::string& id) const {
  for (const Loop& l : loops)
    if (l.id == id) return &l;
  return nullptr;
}

const Function* Program::function_by_name(const std::string& n) const {
  for (const Function& f : functions)
    if (f.name == n) return &f;
  return nullptr;
}

const Loop* Program::loop_of_block(int block_id) const {
  const Block& b = blocks.at(static_cast<size_t>(block_id));
  if (b.parent_loop.empty()) return nullptr;
  return functions.at(static_cast<size_t>(b.function)).loop(b.parent_loop);
}

ParseError::ParseError(const std::string& msg, int line, int col)
    : std::runtime_error("line " + std::to_string(line) + ", col " + std::to_string(col) +
                         ": " + msg),
      line(line),
      col(col) {}

Program parse_pir(const std::string& text) {
  Parser p;
  p.parse(text);
  return std::move(p.prog);
}

Program parse_pir_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_pir(os.str());
}

std::string render_design_source(const Program& p, const Assignment& a) {
  for (const auto& [key, value] : a) {
    bool known = false;
    for (const PragmaDecl& d : p.pragmas) known |= d.placeholder == key;
    if (!known) throw std::invalid_argument("assignment names unknown placeholder " + key);
  }
  std::string out = p.source_text;
  for (const PragmaDecl& d : p.pragmas) {
    auto it = a.find(d.placeholder);
    if (it == a.end())
      throw std::invalid_argument("missing assignment for placeholder " + d.placeholder);
    if (std::find(d.domain.begin(), d.domain.end(), it->second) == d.domain.end())
      throw std::invalid_argument("value " + it->second + " not in domain of " +
                                  d.placeholder);
    const std::string& ph = d.placeholder;
    std::string rep = ph + "=" + it->second;
    size_t pos = 0;
    while ((pos = out.find(ph, pos)) != std::string::npos) {
      size_t end = pos + ph.size();
      if (end < out.size() && ident_char(out[end])) {
        pos = end;
        continue;
      }
      out.replace(pos, ph.size(), rep);
      pos += rep.size();
    }
  }
  return out;
}

std::string pretty_print(const Program& p) {
  std::ostringstream os;
  for (size_t fi = 0; fi < p.functions.size(); ++fi) {
    const Function& f = p.functions[fi];
    if (fi) os << "\n";
    os << "func " << f.name << "(";
    for (size_t i = 0; i < f.params.size(); ++i) {
      if (i) os << ", ";
      os << f.params[i] << ": " << f.param_types[i];
    }
    os << ") {\n";
    for (int bid : f.blocks) {
      const Block& b = p.blocks[static_cast<size_t>(bid)];
      for (const PragmaDecl& d : p.pragmas) {
        if (d.attach_block != bid) continue;
        os << "#pragma ACCEL " << pragma_kind_name(d.kind);
        if (!d.reduction.empty()) os << " reduction=" << d.reduction;
        if (d.kind != PragmaKind::pipeline) os << " FACTOR=";
        os << (d.kind == PragmaKind::pipeline ? " " : "") << "auto{" << d.placeholder
           << "}\n";
      }
      os << b.label << ":";
      if (!b.parent_loop.empty()) {
        const Loop* lp = f.loop(b.parent_loop);
        os << " @loop(" << b.parent_loop;
        if (lp && lp->header_block == bid) {
          os << ", depth=" << lp->depth;
          if (lp->trip > 0) os << ", trip=" << lp->trip;
          if (!lp->parent.empty()) os << ", parent=" << lp->parent;
        }
        os << ")";
      }
      os << "\n";
      for (int iid : b.instructions) {
        const Instruction& ins = p.instructions[static_cast<size_t>(iid)];
        os << "  ";
        if (!ins.def.empty()) os << ins.def << " = ";
        os << opcode_name(ins.op);
        if (ins.op == Opcode::call) {
          os << " " << ins.callee << "(";
          for (size_t i = 0; i < ins.operands.size(); ++i) {
            if (i) os << ", ";
            os << ins.operands[i].text;
          }
          os << ")";
        } else if (ins.op == Opcode::br) {
          os << " " << ins.targets[0];
        } else if (ins.op == Opcode::condbr) {
          os << " " << ins.operands[0].text << ", " << ins.targets[0] << ", "
             << ins.targets[1];
        } else {
          for (size_t i = 0; i < ins.operands.size(); ++i) {
            os << (i ? ", " : " ") << ins.operands[i].text;
          }
        }
        if (ins.src_loc) os << " @loc(" << ins.src_loc->line << "," << ins.src_loc->col << ")";
        os << "\n";
      }
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace progsg::pir
