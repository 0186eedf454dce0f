#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "progsg/pir.hpp"
#include "progsg/token.hpp"

using namespace progsg;

namespace {

std::string fixture(const std::string& name) {
  return std::string(PROGSG_FIXTURE_DIR) + "/" + name;
}

std::string tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "progsg_test_pir";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("gemm fixture parses with full structure") {
  pir::Program p = pir::parse_pir_file(fixture("gemm_ncubed.pir"));

  CHECK(p.name == "gemm");
  REQUIRE(p.functions.size() == 1);
  const pir::Function& f = p.functions[0];
  CHECK(f.params == std::vector<std::string>{"%A", "%B", "%C"});
  CHECK(f.blocks.size() == 8);
  CHECK(p.instructions.size() == 23);
  REQUIRE(p.pragmas.size() == 7);
  REQUIRE(f.loops.size() == 3);

  const pir::Loop* l0 = f.loop("L0");
  const pir::Loop* l1 = f.loop("L1");
  const pir::Loop* l2 = f.loop("L2");
  REQUIRE(l0 != nullptr);
  REQUIRE(l1 != nullptr);
  REQUIRE(l2 != nullptr);
  CHECK(l0->depth == 1);
  CHECK(l1->depth == 2);
  CHECK(l2->depth == 3);
  CHECK(l0->trip == 64);
  CHECK(l1->parent == "L0");
  CHECK(l2->parent == "L1");
  CHECK(p.blocks[static_cast<size_t>(l2->header_block)].label == "L2_header");

  // Membership blocks inherit the loop's depth; entry/exit sit outside loops.
  for (const pir::Block& b : p.blocks) {
    if (b.label == "L2_body") CHECK(b.loop_depth == 3);
    if (b.label == "L1_latch") CHECK(b.loop_depth == 2);
    if (b.label == "entry" || b.label == "exit") CHECK(b.loop_depth == 0);
  }

  // Pragmas attach to the block that follows them.
  int on_l0 = 0, on_l1 = 0, on_l2 = 0;
  for (const pir::PragmaDecl& d : p.pragmas) {
    const std::string& lbl = p.blocks[static_cast<size_t>(d.attach_block)].label;
    if (lbl == "L0_header") ++on_l0;
    if (lbl == "L1_header") ++on_l1;
    if (lbl == "L2_header") ++on_l2;
  }
  CHECK(on_l0 == 3);
  CHECK(on_l1 == 3);
  CHECK(on_l2 == 1);

  // The reduction pragma keeps its annotation.
  bool saw_reduction = false;
  for (const pir::PragmaDecl& d : p.pragmas)
    if (d.placeholder == "__PARA__L2") {
      saw_reduction = true;
      CHECK(d.kind == pir::PragmaKind::parallel);
      CHECK(d.reduction == "sum");
    }
  CHECK(saw_reduction);

  // trip=64 factor domains are the divisors of 64; pipeline is categorical.
  for (const pir::PragmaDecl& d : p.pragmas) {
    if (d.kind == pir::PragmaKind::pipeline) {
      CHECK(d.domain == std::vector<std::string>{"off", "cg", "fg"});
    } else {
      CHECK(d.domain == std::vector<std::string>{"1", "2", "4", "8", "16", "32", "64"});
    }
  }

  // Branch targets resolve to block ids.
  for (const pir::Instruction& ins : p.instructions)
    for (size_t t = 0; t < ins.targets.size(); ++t)
      CHECK(p.blocks[static_cast<size_t>(ins.target_blocks[t])].label == ins.targets[t]);

  // Source locations point at their own line of the file.
  int with_loc = 0;
  for (const pir::Instruction& ins : p.instructions)
    if (ins.src_loc) {
      ++with_loc;
      CHECK(ins.src_loc->line == ins.parse_line);
    }
  CHECK(with_loc == 9);
}

TEST_CASE("source text is kept verbatim") {
  std::ifstream in(fixture("gemm_ncubed.pir"));
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  pir::Program p = pir::parse_pir(text);
  CHECK(p.source_text == text);
}

TEST_CASE("parse errors carry position and message") {
  auto expect_error = [](const std::string& src, const std::string& phrase) {
    try {
      pir::parse_pir(src);
      FAIL_CHECK("expected ParseError containing '" << phrase << "'");
    } catch (const pir::ParseError& e) {
      CHECK(std::string(e.what()).find(phrase) != std::string::npos);
      CHECK(e.line >= 1);
      CHECK(e.col >= 1);
    }
  };

  SUBCASE("two terminators in one block") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  ret\n"
        "  ret\n"
        "}\n",
        "duplicate terminator");
  }
  SUBCASE("missing terminator") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  %x = add %a, 1\n"
        "}\n",
        "missing terminator");
  }
  SUBCASE("redefined value") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  %x = add %a, 1\n"
        "  %x = add %a, 2\n"
        "  ret\n"
        "}\n",
        "duplicate definition of %x");
  }
  SUBCASE("use of unknown value") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  %x = add %a, %ghost\n"
        "  ret\n"
        "}\n",
        "undefined reference to %ghost");
  }
  SUBCASE("branch to unknown block") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  br nowhere\n"
        "}\n",
        "undefined reference to block nowhere");
  }
  SUBCASE("pipeline pragma with a factor") {
    expect_error(
        "func f(%a: i32) {\n"
        "#pragma ACCEL PIPELINE FACTOR=auto{__P__}\n"
        "b0:\n"
        "  ret\n"
        "}\n",
        "illegal pragma domain");
  }
  SUBCASE("reduction on a tile pragma") {
    expect_error(
        "func f(%a: i32) {\n"
        "#pragma ACCEL TILE reduction=sum FACTOR=auto{__T__}\n"
        "b0:\n"
        "  ret\n"
        "}\n",
        "illegal pragma domain");
  }
  SUBCASE("pragma with nothing after it") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  ret\n"
        "#pragma ACCEL PARALLEL FACTOR=auto{__P__}\n"
        "}\n",
        "pragma not attached");
  }
  SUBCASE("same placeholder twice") {
    expect_error(
        "func f(%a: i32) {\n"
        "#pragma ACCEL PARALLEL FACTOR=auto{__P__}\n"
        "b0:\n"
        "  br b1\n"
        "#pragma ACCEL TILE FACTOR=auto{__P__}\n"
        "b1:\n"
        "  ret\n"
        "}\n",
        "duplicate placeholder");
  }
  SUBCASE("missing closing brace") {
    expect_error("func f(%a: i32) {\nb0:\n  ret\n", "unterminated function");
  }
  SUBCASE("wrong operand count") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  %x = add %a\n"
        "  ret\n"
        "}\n",
        "operand count");
  }
  SUBCASE("instruction before any block") {
    expect_error("func f(%a: i32) {\n  %x = add %a, 1\n}\n", "outside block");
  }
  SUBCASE("duplicate block label") {
    expect_error(
        "func f(%a: i32) {\n"
        "b0:\n"
        "  br b0\n"
        "b0:\n"
        "  ret\n"
        "}\n",
        "duplicate definition of block b0");
  }
  SUBCASE("error positions are 1-based") {
    try {
      pir::parse_pir("func f() {\nb0:\n  %x = bogus %x\n  ret\n}\n");
      FAIL_CHECK("expected ParseError");
    } catch (const pir::ParseError& e) {
      CHECK(e.line == 3);
      CHECK(std::string(e.what()).find("unknown opcode bogus") != std::string::npos);
    }
  }
}

TEST_CASE("design rendering substitutes placeholders in place") {
  pir::Program p = pir::parse_pir_file(fixture("gemm_ncubed.pir"));
  pir::Assignment a = {
      {"__PIPE__L0", "off"}, {"__TILE__L0", "1"},  {"__PARA__L0", "1"},
      {"__PIPE__L1", "cg"},  {"__TILE__L1", "4"},  {"__PARA__L1", "2"},
      {"__PARA__L2", "16"},
  };
  std::string out = pir::render_design_source(p, a);
  CHECK(out.find("auto{__PIPE__L0=off}") != std::string::npos);
  CHECK(out.find("auto{__TILE__L1=4}") != std::string::npos);
  CHECK(out.find("auto{__PARA__L2=16}") != std::string::npos);
  // No bare placeholder survives.
  CHECK(out.find("{__PARA__L0}") == std::string::npos);
  // Everything else is untouched.
  CHECK(out.find("%acc = add %c0, %m") != std::string::npos);

  SUBCASE("missing placeholder assignment") {
    a.erase("__PARA__L2");
    CHECK_THROWS_WITH_AS(pir::render_design_source(p, a),
                         doctest::Contains("missing assignment"), std::invalid_argument);
  }
  SUBCASE("value outside the domain") {
    a["__PARA__L2"] = "3";  // not a divisor of 64
    CHECK_THROWS_WITH_AS(pir::render_design_source(p, a),
                         doctest::Contains("not in domain"), std::invalid_argument);
  }
  SUBCASE("unknown key") {
    a["__NOPE__"] = "1";
    CHECK_THROWS_WITH_AS(pir::render_design_source(p, a),
                         doctest::Contains("unknown placeholder"), std::invalid_argument);
  }
}

TEST_CASE("rendering respects identifier boundaries between placeholders") {
  // __X__ is a prefix of __X__2; replacing one must not corrupt the other.
  pir::Program p = pir::parse_pir(
      "func f(%n: i32) {\n"
      "#pragma ACCEL PARALLEL FACTOR=auto{__X__}\n"
      "#pragma ACCEL TILE FACTOR=auto{__X__2}\n"
      "body: @loop(LA, depth=1, trip=8)\n"
      "  %t = add %n, 1\n"
      "  ret %t\n"
      "}\n");
  std::string out = pir::render_design_source(p, {{"__X__", "2"}, {"__X__2", "4"}});
  CHECK(out.find("auto{__X__=2}") != std::string::npos);
  CHECK(out.find("auto{__X__2=4}") != std::string::npos);
}

TEST_CASE("factor domain falls back when the trip count is unknown") {
  pir::Program p = pir::parse_pir(
      "func f(%n: i32) {\n"
      "#pragma ACCEL PARALLEL FACTOR=auto{__P__}\n"
      "body: @loop(LA, depth=1)\n"
      "  %t = add %n, 1\n"
      "  ret %t\n"
      "}\n");
  CHECK(p.pragmas[0].domain ==
        std::vector<std::string>{"1", "2", "4", "8", "16", "32", "64"});

  // Non-power-of-two trip keeps only its divisors.
  pir::Program q = pir::parse_pir(
      "func f(%n: i32) {\n"
      "#pragma ACCEL PARALLEL FACTOR=auto{__P__}\n"
      "body: @loop(LA, depth=1, trip=12)\n"
      "  %t = add %n, 1\n"
      "  ret %t\n"
      "}\n");
  CHECK(q.pragmas[0].domain == std::vector<std::string>{"1", "2", "3", "4", "6", "12"});
}

TEST_CASE("pretty print round trips") {
  pir::Program p1 = pir::parse_pir_file(fixture("gemm_ncubed.pir"));
  std::string s1 = pir::pretty_print(p1);
  pir::Program p2 = pir::parse_pir(s1);
  std::string s2 = pir::pretty_print(p2);
  CHECK(s1 == s2);
  CHECK(p2.instructions.size() == p1.instructions.size());
  CHECK(p2.pragmas.size() == p1.pragmas.size());
  CHECK(p2.functions[0].loops.size() == p1.functions[0].loops.size());
  for (size_t i = 0; i < p1.instructions.size(); ++i) {
    CHECK(p2.instructions[i].op == p1.instructions[i].op);
    CHECK(p2.instructions[i].def == p1.instructions[i].def);
    REQUIRE(p2.instructions[i].src_loc.has_value() ==
            p1.instructions[i].src_loc.has_value());
    if (p1.instructions[i].src_loc)
      CHECK(p2.instructions[i].src_loc->line == p1.instructions[i].src_loc->line);
  }
}

TEST_CASE("lexer splits C-like text") {
  auto texts = [](const std::vector<token::Token>& ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(t.text);
    return out;
  };

  CHECK(texts(token::lex("%acc = add %c0, %m")) ==
        std::vector<std::string>{"%acc", "=", "add", "%c0", ",", "%m"});
  CHECK(texts(token::lex("a <= b")) == std::vector<std::string>{"a", "<=", "b"});
  CHECK(texts(token::lex("i++")) == std::vector<std::string>{"i", "++"});
  CHECK(texts(token::lex("x = 3.14;")) ==
        std::vector<std::string>{"x", "=", "3.14", ";"});
  CHECK(texts(token::lex("a // comment\nb")) == std::vector<std::string>{"a", "b"});
  CHECK(texts(token::lex("#pragma ACCEL PIPELINE auto{__P__}")) ==
        std::vector<std::string>{"#", "pragma", "ACCEL", "PIPELINE", "auto", "{",
                                 "__P__", "}"});

  // Line/column tracking is 1-based and survives newlines.
  auto ts = token::lex("ab cd\n ef");
  REQUIRE(ts.size() == 3);
  CHECK(ts[0].line == 1);
  CHECK(ts[0].col == 1);
  CHECK(ts[1].col == 4);
  CHECK(ts[2].line == 2);
  CHECK(ts[2].col == 2);
}

TEST_CASE("vocabulary ids are reserved plus sorted corpus tokens") {
  token::Vocabulary v = token::Vocabulary::build({"beta alpha", "gamma alpha"});
  // alpha < beta < gamma after sorting, numbered from 3.
  CHECK(v.id("alpha") == 3);
  CHECK(v.id("beta") == 4);
  CHECK(v.id("gamma") == 5);
  CHECK(v.id("delta") == token::Vocabulary::kUnk);
  CHECK(v.size() == 6);
  CHECK(v.token(3) == "alpha");
  CHECK(v.token(token::Vocabulary::kPad) == "<pad>");
  CHECK(v.token(token::Vocabulary::kSum) == "<sum>");
  CHECK_THROWS(v.token(99));

  SUBCASE("save and load preserve every id") {
    std::string path = tmp_path("vocab.txt");
    v.save(path);
    token::Vocabulary w = token::Vocabulary::load(path);
    CHECK(w.size() == v.size());
    for (int32_t i = 3; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
    CHECK(w.id("beta") == 4);
  }
}

TEST_CASE("token streams chunk into fixed-capacity pieces") {
  // 130 tokens with capacity 64 leave 63 payload slots per chunk: 63+63+4.
  std::string text;
  for (int i = 0; i < 130; ++i) text += "t" + std::to_string(i) + " ";
  token::Vocabulary v = token::Vocabulary::build({text});
  token::TokenStream s = token::tokenize(text, v, 64);
  REQUIRE(s.tokens.size() == 130);
  REQUIRE(s.chunks.size() == 3);
  CHECK(s.chunks[0] == std::pair<int, int>{0, 63});
  CHECK(s.chunks[1] == std::pair<int, int>{63, 126});
  CHECK(s.chunks[2] == std::pair<int, int>{126, 130});

  SUBCASE("padded chunks start with the summary slot and pad out") {
    auto ids = token::padded_chunk(s, 2);
    REQUIRE(ids.size() == 64);
    CHECK(ids[0] == token::Vocabulary::kSum);
    CHECK(ids[1] == s.ids[126]);
    CHECK(ids[4] == s.ids[129]);
    for (size_t i = 5; i < ids.size(); ++i) CHECK(ids[i] == token::Vocabulary::kPad);
  }
  SUBCASE("exact multiples produce no ragged chunk") {
    std::string t2;
    for (int i = 0; i < 126; ++i) t2 += "t" + std::to_string(i) + " ";
    token::TokenStream s2 = token::tokenize(t2, v, 64);
    CHECK(s2.chunks.size() == 2);
    CHECK(s2.chunks[1] == std::pair<int, int>{63, 126});
  }
  SUBCASE("empty text still yields one empty chunk") {
    token::TokenStream s3 = token::tokenize("", v, 8);
    REQUIRE(s3.chunks.size() == 1);
    CHECK(s3.chunks[0] == std::pair<int, int>{0, 0});
    auto ids = token::padded_chunk(s3, 0);
    CHECK(ids[0] == token::Vocabulary::kSum);
    CHECK(ids[1] == token::Vocabulary::kPad);
  }
  SUBCASE("capacity below two is rejected") {
    CHECK_THROWS_AS(token::tokenize("a b", v, 1), std::invalid_argument);
  }
}

TEST_CASE("unknown corpus tokens map to the unknown id") {
  token::Vocabulary v = token::Vocabulary::build({"int x = 1 ;"});
  token::TokenStream s = token::tokenize("int y = 1 ;", v, 8);
  REQUIRE(s.ids.size() == 5);
  CHECK(s.ids[0] == v.id("int"));
  CHECK(s.ids[1] == token::Vocabulary::kUnk);  // y never appeared
  CHECK(s.ids[3] == v.id("1"));
}
