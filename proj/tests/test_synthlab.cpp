#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "progsg/dse.hpp"
#include "progsg/graph.hpp"
#include "progsg/model.hpp"
#include "progsg/pir.hpp"
#include "progsg/synthlab.hpp"
#include "progsg/token.hpp"
#include "progsg/train.hpp"

using namespace progsg;

namespace {

std::string tmp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "progsg_test_synthlab" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Single loop whose only body work is the one-cycle index increment, so the
// per-iteration cost is exactly 1 under the default cost table.
constexpr const char* kUnitBody = R"(func tiny(%A: ptr) {
entry:
  br L0_header
#pragma ACCEL PIPELINE auto{__P__}
#pragma ACCEL TILE FACTOR=auto{__T__}
#pragma ACCEL PARALLEL FACTOR=auto{__PA__}
L0_header: @loop(L0, depth=1, trip=64)
  %i = phi 0, %i_next
  %c = cmp %i, 64
  condbr %c, L0_body, exit
L0_body: @loop(L0)
  %i_next = add %i, 1
  br L0_header
exit:
  ret
}
)";

// Single loop with an 8-cycle body: load(2) + mul(3) + store(2) + add(1).
constexpr const char* kRichBody = R"(func rich(%A: ptr, %B: ptr) {
entry:
  br L0_header
#pragma ACCEL PIPELINE auto{__P__}
#pragma ACCEL TILE FACTOR=auto{__T__}
#pragma ACCEL PARALLEL FACTOR=auto{__PA__}
L0_header: @loop(L0, depth=1, trip=64)
  %i = phi 0, %i_next
  %c = cmp %i, 64
  condbr %c, L0_body, exit
L0_body: @loop(L0)
  %v = load %A @loc(12,8)
  %m = mul %v, %i @loc(13,8)
  store %m, %B @loc(14,3)
  %i_next = add %i, 1
  br L0_header
exit:
  ret
}
)";

pir::Assignment assign(const std::string& pipe, const std::string& tile,
                       const std::string& para) {
  return {{"__P__", pipe}, {"__T__", tile}, {"__PA__", para}};
}

}  // namespace

TEST_CASE("kernel spec validation") {
  synthlab::KernelSpec s;
  s.depth = 2;
  s.trips = {8, 8};
  CHECK_NOTHROW(s.validate());

  synthlab::KernelSpec bad = s;
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.depth = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.trips = {8};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.trips = {8, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.body_ops = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.arrays = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("generated kernels are deterministic and well formed") {
  synthlab::KernelSpec s;
  s.name = "nest";
  s.depth = 3;
  s.trips = {4, 8, 16};
  s.body_ops = 5;
  s.arrays = 2;

  std::string a = synthlab::gen_kernel(s, 42);
  std::string b = synthlab::gen_kernel(s, 42);
  CHECK(a == b);
  CHECK(a != synthlab::gen_kernel(s, 43));

  pir::Program p = pir::parse_pir(a);
  REQUIRE(p.functions.size() == 1);
  const pir::Function& f = p.functions[0];
  REQUIRE(f.loops.size() == 3);
  CHECK(f.loop("L0")->trip == 4);
  CHECK(f.loop("L1")->trip == 8);
  CHECK(f.loop("L2")->trip == 16);
  CHECK(f.loop("L1")->parent == "L0");
  CHECK(f.loop("L2")->parent == "L1");
  CHECK(f.loop("L2")->depth == 3);

  // Three pragmas per level, each attached to its loop header.
  REQUIRE(p.pragmas.size() == 9);
  std::map<std::string, int> per_header;
  for (const pir::PragmaDecl& d : p.pragmas)
    per_header[p.blocks[static_cast<size_t>(d.attach_block)].label] += 1;
  CHECK(per_header["L0_header"] == 3);
  CHECK(per_header["L1_header"] == 3);
  CHECK(per_header["L2_header"] == 3);

  // Location tags point at their own line.
  int located = 0;
  for (const pir::Instruction& ins : p.instructions)
    if (ins.src_loc) {
      ++located;
      CHECK(ins.src_loc->line == ins.parse_line);
    }
  CHECK(located > 5);
}

TEST_CASE("one hundred seeds parse and carry aligned sources") {
  graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    synthlab::KernelSpec s;
    s.depth = 1 + static_cast<int>(seed % 3);
    for (int l = 0; l < s.depth; ++l) s.trips.push_back(l % 2 ? 8 : 4);
    s.body_ops = 2 + static_cast<int>(seed % 4);
    s.arrays = 1 + static_cast<int>(seed % 3);
    std::string text = synthlab::gen_kernel(s, seed);

    pir::Program p = pir::parse_pir(text);
    pir::Assignment base = graph::default_assignment(p);
    graph::HarpGraph g = graph::build_graph(p, base);
    CHECK(g.n_instructions > 0);
    CHECK(static_cast<int>(p.pragmas.size()) == 3 * s.depth);

    // Every located instruction has tokens on its line.
    token::Vocabulary vocab = token::Vocabulary::build({text});
    token::TokenStream ts = token::tokenize(text, vocab, 16);
    std::vector<int> lines;
    for (const token::Token& tk : ts.tokens) lines.push_back(tk.line);
    auto alignment = graph::build_alignment(g, lines);
    CHECK(!alignment.empty());
  }
}

TEST_CASE("generated designs run through the full model") {
  synthlab::KernelSpec s;
  s.depth = 2;
  s.trips = {4, 8};
  s.body_ops = 3;
  s.arrays = 2;
  std::string text = synthlab::gen_kernel(s, 7);
  pir::Program p = pir::parse_pir(text);
  pir::Assignment a = graph::default_assignment(p);
  a["__PARA__L1"] = "2";

  std::string source = pir::render_design_source(p, a);
  token::Vocabulary vocab = token::Vocabulary::build({text});
  token::TokenStream ts = token::tokenize(source, vocab, 8);
  graph::HarpGraph g = graph::build_graph(p, a);
  std::vector<int> lines;
  for (const token::Token& tk : ts.tokens) lines.push_back(tk.line);
  auto alignment = graph::build_alignment(g, lines);

  graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
  model::DesignInput in = model::make_design_input(g, feats, ts, alignment);
  model::ModelConfig cfg;
  cfg.d = 8;
  cfg.L1 = 2;
  cfg.L2 = 1;
  cfg.max_len = 8;
  cfg.heads = 2;
  model::Model m(cfg, vocab.size());
  ad::Tape t;
  model::Encoded enc = m.encode(t, in);
  ad::Value y = m.decode(t, enc);
  CHECK(t.val(y).size() == 5);
  for (int64_t i = 0; i < 5; ++i) CHECK(std::isfinite(t.val(y).at(i)));
}

TEST_CASE("oracle latency formulas") {
  synthlab::CostModel cost = synthlab::CostModel::defaults();

  SUBCASE("replication divides the iteration count") {
    pir::Program p = pir::parse_pir(kUnitBody);
    CHECK(synthlab::oracle_eval(p, assign("off", "1", "8"), cost).latency == 8.0);
    CHECK(synthlab::oracle_eval(p, assign("off", "1", "1"), cost).latency == 64.0);
    CHECK(synthlab::oracle_eval(p, assign("off", "1", "64"), cost).latency == 1.0);
  }

  SUBCASE("pipelining overlaps iterations") {
    pir::Program p = pir::parse_pir(kRichBody);
    // body = load 2 + mul 3 + store 2 + add 1 = 8 cycles
    CHECK(synthlab::oracle_eval(p, assign("off", "1", "1"), cost).latency == 512.0);
    // cg: II = ceil(8/2) = 4 -> 8 + 63*4
    CHECK(synthlab::oracle_eval(p, assign("cg", "1", "1"), cost).latency == 260.0);
    // fg: one flattened pipeline, 64 + 1*8
    CHECK(synthlab::oracle_eval(p, assign("fg", "1", "1"), cost).latency == 72.0);
    // fg + replication: 8 + 8
    CHECK(synthlab::oracle_eval(p, assign("fg", "1", "8"), cost).latency == 16.0);
  }

  SUBCASE("nested levels compose from the inside out") {
    synthlab::KernelSpec s;
    s.depth = 2;
    s.trips = {8, 4};
    s.body_ops = 1;
    s.arrays = 1;
    std::string text = synthlab::gen_kernel(s, 3);
    pir::Program p = pir::parse_pir(text);

    // Count the actual body cost once, then check the composition rules.
    pir::Assignment base = graph::default_assignment(p);
    double body = synthlab::oracle_eval(p, base, cost).latency / (8.0 * 4.0);
    REQUIRE(body > 0);

    pir::Assignment a = base;
    a["__PARA__L1"] = "4";  // inner collapses to one iteration
    CHECK(synthlab::oracle_eval(p, a, cost).latency == 8.0 * body);

    a = base;
    a["__PIPE__L1"] = "cg";  // inner pipelined, outer repeats it
    double ii = std::ceil(body / 2.0);
    CHECK(synthlab::oracle_eval(p, a, cost).latency == 8.0 * (body + 3.0 * ii));

    a = base;
    a["__PIPE__L0"] = "fg";  // whole nest flattened
    CHECK(synthlab::oracle_eval(p, a, cost).latency == 32.0 + 2.0 * body);
  }

  SUBCASE("single nest required") {
    pir::Program p = pir::parse_pir(
        "func two(%A: ptr) {\n"
        "entry:\n"
        "  br L0_header\n"
        "L0_header: @loop(L0, depth=1, trip=4)\n"
        "  %i = phi 0, %i2\n"
        "  %i2 = add %i, 1\n"
        "  %c = cmp %i2, 4\n"
        "  condbr %c, L0_header, mid\n"
        "mid:\n"
        "  br L1_header\n"
        "L1_header: @loop(L1, depth=1, trip=4)\n"
        "  %j = phi 0, %j2\n"
        "  %j2 = add %j, 1\n"
        "  %d = cmp %j2, 4\n"
        "  condbr %d, L1_header, exit\n"
        "exit:\n"
        "  ret\n"
        "}\n");
    CHECK_THROWS_WITH_AS(synthlab::oracle_eval(p, {}, cost),
                         doctest::Contains("single loop nest"), std::invalid_argument);
  }
}

TEST_CASE("oracle resources scale with replication and tiling") {
  synthlab::CostModel cost = synthlab::CostModel::defaults();
  pir::Program p = pir::parse_pir(kRichBody);

  synthlab::OracleEval base = synthlab::oracle_eval(p, assign("off", "1", "1"), cost);
  synthlab::OracleEval par8 = synthlab::oracle_eval(p, assign("off", "1", "8"), cost);
  // 4 costed ops, one of them a mul; two pointer arrays.
  CHECK(base.util[0] == doctest::Approx(4.0 * 60 / 50000.0));
  CHECK(base.util[2] == doctest::Approx(3.0 / 600.0));
  CHECK(par8.util[0] == doctest::Approx(8 * 4.0 * 60 / 50000.0));
  CHECK(par8.util[2] == doctest::Approx(8 * 3.0 / 600.0));
  CHECK(par8.latency < base.latency);

  synthlab::OracleEval tile4 = synthlab::oracle_eval(p, assign("off", "4", "1"), cost);
  CHECK(tile4.latency == base.latency);       // tiling never changes latency
  CHECK(tile4.util[3] == 4 * base.util[3]);   // but multiplies buffer cost
  CHECK(base.util[3] == doctest::Approx(2.0 / 280.0));  // ceil(64/512)=1 block/array

  SUBCASE("overflowing the chip flags the design") {
    synthlab::CostModel tight = cost;
    tight.avail_dsp = 10;
    synthlab::OracleEval ev = synthlab::oracle_eval(p, assign("off", "1", "8"), tight);
    CHECK(ev.util[2] > 1.0);
    CHECK(!ev.fits);
    CHECK(synthlab::oracle_eval(p, assign("off", "1", "1"), tight).fits);
  }
}

TEST_CASE("more replication never slows a design or frees arithmetic units") {
  synthlab::CostModel cost = synthlab::CostModel::defaults();
  for (uint64_t seed : {11u, 12u, 13u}) {
    synthlab::KernelSpec s;
    s.depth = 2;
    s.trips = {16, 8};
    s.body_ops = 4;
    s.arrays = 2;
    pir::Program p = pir::parse_pir(synthlab::gen_kernel(s, seed));
    for (const char* pipe : {"off", "cg"}) {
      double prev_lat = std::numeric_limits<double>::infinity();
      double prev_dsp = -1;
      for (const char* para : {"1", "2", "4", "8"}) {
        pir::Assignment a = graph::default_assignment(p);
        a["__PIPE__L1"] = pipe;
        a["__PARA__L1"] = para;
        synthlab::OracleEval ev = synthlab::oracle_eval(p, a, cost);
        CHECK(ev.latency <= prev_lat);
        CHECK(ev.util[2] >= prev_dsp);
        prev_lat = ev.latency;
        prev_dsp = ev.util[2];
      }
    }
  }
}

TEST_CASE("cost model serialization round trips") {
  synthlab::CostModel c = synthlab::CostModel::defaults();
  c.avail_dsp = 123;
  c.op_cycles["mul"] = 5;
  synthlab::CostModel back = synthlab::CostModel::from_json(c.to_json());
  CHECK(back.avail_dsp == 123);
  CHECK(back.cycles(pir::Opcode::mul) == 5);
  CHECK(back.cycles(pir::Opcode::load) == 2);
  CHECK(back.elems_per_bram == c.elems_per_bram);
}

TEST_CASE("dataset generation emits a loadable corpus") {
  std::string dir = tmp_dir("gen");
  synthlab::GenOptions opt;
  opt.n_kernels = 3;
  opt.designs_per_kernel = 4;
  opt.seed = 5;
  opt.max_depth = 2;
  opt.trip_choices = {4, 8};
  opt.label_pairs = 12;

  synthlab::GenSummary sum = synthlab::gen_dataset(opt, dir);
  CHECK(sum.kernels == 3);
  CHECK(sum.designs == 12);

  auto entries = train::load_manifest(sum.manifest_path);
  REQUIRE(entries.size() == 12);
  for (const auto& e : entries) {
    REQUIRE(e.y.size() == 5);
    CHECK(e.y[0] > 0);  // performance score of a design that fits
    for (int i = 1; i < 5; ++i) {
      CHECK(e.y[static_cast<size_t>(i)] >= 0);
      CHECK(e.y[static_cast<size_t>(i)] <= 1.0);  // unfit designs were skipped
    }
    CHECK(std::filesystem::exists(e.pir_path));
  }
  // Design zero of every kernel is the all-default reference: score exactly 1.
  CHECK(entries[0].y[0] == 1.0);
  CHECK(entries[4].y[0] == 1.0);
  CHECK(entries[8].y[0] == 1.0);

  graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
  auto corpus = train::load_corpus(sum.corpus_path, feats);
  REQUIRE(corpus.size() == 3);
  for (const auto& cg : corpus) {
    CHECK(cg.labels.size() == 4);
    for (const auto& [task, ls] : cg.labels) {
      CHECK(!ls.pairs.empty());
      for (const auto& pr : ls.pairs) {
        CHECK(pr.i >= 0);
        CHECK(pr.i < cg.input.n_nodes);
        CHECK(pr.j >= 0);
        CHECK(pr.j < cg.input.n_nodes);
      }
    }
  }

  token::Vocabulary vocab = token::Vocabulary::load(sum.vocab_path);
  CHECK(vocab.size() > token::Vocabulary::kReserved);
  CHECK(std::filesystem::exists(dir + "/baselines.json"));
  CHECK(std::filesystem::exists(dir + "/cost_model.json"));

  SUBCASE("regeneration is byte identical") {
    std::string dir2 = tmp_dir("gen_again");
    synthlab::gen_dataset(opt, dir2);
    CHECK(slurp(dir + "/manifest.jsonl") == slurp(dir2 + "/manifest.jsonl"));
    CHECK(slurp(dir + "/corpus.jsonl") == slurp(dir2 + "/corpus.jsonl"));
    CHECK(slurp(dir + "/kernels/k00.pir") == slurp(dir2 + "/kernels/k00.pir"));
    CHECK(slurp(dir + "/kernels/k02.pir") == slurp(dir2 + "/kernels/k02.pir"));
  }

  SUBCASE("threaded generation matches single threaded") {
    std::string dir4 = tmp_dir("gen_mt");
    synthlab::GenOptions mt = opt;
    mt.threads = 4;
    synthlab::gen_dataset(mt, dir4);
    CHECK(slurp(dir + "/manifest.jsonl") == slurp(dir4 + "/manifest.jsonl"));
    CHECK(slurp(dir + "/corpus.jsonl") == slurp(dir4 + "/corpus.jsonl"));
  }
}
