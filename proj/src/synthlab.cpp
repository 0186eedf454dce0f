#include "progsg/synthlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "progsg/dataflow.hpp"
#include "progsg/dse.hpp"
#include "progsg/graph.hpp"
#include "progsg/rng.hpp"
#include "progsg/token.hpp"
#include "progsg/train.hpp"

namespace progsg::synthlab {

namespace fs = std::filesystem;
using nlohmann::json;

void KernelSpec::validate() const {
  if (name.empty()) throw std::invalid_argument("kernel spec: empty name");
  if (depth < 1 || depth > 3) throw std::invalid_argument("kernel spec: depth must be 1..3");
  if (static_cast<int>(trips.size()) != depth)
    throw std::invalid_argument("kernel spec: one trip count per loop level");
  for (int64_t t : trips)
    if (t < 2) throw std::invalid_argument("kernel spec: trip counts must be at least 2");
  if (body_ops < 1) throw std::invalid_argument("kernel spec: at least one body op");
  if (arrays < 1) throw std::invalid_argument("kernel spec: at least one array");
}

CostModel CostModel::defaults() {
  CostModel c;
  c.op_cycles = {{"add", 1}, {"sub", 1}, {"mul", 3}, {"div", 8},  {"cmp", 0},
                 {"phi", 0}, {"load", 2}, {"store", 2}, {"call", 0}, {"br", 0},
                 {"condbr", 0}, {"ret", 0}};
  return c;
}

int64_t CostModel::cycles(pir::Opcode op) const {
  auto it = op_cycles.find(pir::opcode_name(op));
  return it == op_cycles.end() ? 0 : it->second;
}

std::string CostModel::to_json() const {
  json j;
  j["op_cycles"] = op_cycles;
  j["lut_per_op"] = lut_per_op;
  j["ff_per_op"] = ff_per_op;
  j["dsp_per_mul"] = dsp_per_mul;
  j["dsp_per_div"] = dsp_per_div;
  j["elems_per_bram"] = elems_per_bram;
  j["avail_lut"] = avail_lut;
  j["avail_ff"] = avail_ff;
  j["avail_dsp"] = avail_dsp;
  j["avail_bram"] = avail_bram;
  return j.dump(2) + "\n";
}

CostModel CostModel::from_json(const std::string& text) {
  json j = json::parse(text);
  CostModel c = defaults();
  if (j.contains("op_cycles"))
    c.op_cycles = j.at("op_cycles").get<std::map<std::string, int64_t>>();
  auto take = [&](const char* key, int64_t& slot) {
    if (j.contains(key)) slot = j.at(key).get<int64_t>();
  };
  take("lut_per_op", c.lut_per_op);
  take("ff_per_op", c.ff_per_op);
  take("dsp_per_mul", c.dsp_per_mul);
  take("dsp_per_div", c.dsp_per_div);
  take("elems_per_bram", c.elems_per_bram);
  take("avail_lut", c.avail_lut);
  take("avail_ff", c.avail_ff);
  take("avail_dsp", c.avail_dsp);
  take("avail_bram", c.avail_bram);
  return c;
}

// ---------------------------------------------------------------------------
// Kernel text generation. The emitted shape mirrors a rotated loop nest:
// every header tests its index, the innermost body does the work and steps
// its own index, outer latches step theirs. Source locations are written
// while lines are appended, so they always point at their own line.

namespace {

struct LineSink {
  std::vector<std::string> lines;

  int next_line() const { return static_cast<int>(lines.size()) + 1; }
  void push(std::string s) { lines.push_back(std::move(s)); }

  // Appends an instruction with a location tag pointing at itself; the column
  // is where the opcode keyword starts.
  void push_loc(const std::string& stem, const std::string& op) {
    int line = next_line();
    size_t col = stem.find(op) + 1;
    push(stem + " @loc(" + std::to_string(line) + "," + std::to_string(col) + ")");
  }

  std::string str() const {
    std::string out;
    for (const auto& l : lines) {
      out += l;
      out += '\n';
    }
    return out;
  }
};

}  // namespace

std::string gen_kernel(const KernelSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int d = spec.depth;
  LineSink s;

  std::string params;
  for (int a = 0; a < spec.arrays; ++a) {
    if (a) params += ", ";
    params += "%A" + std::to_string(a) + ": ptr";
  }
  s.push("// synthetic loop nest " + spec.name + " (seed " + std::to_string(seed) + ")");
  s.push("func " + spec.name + "(" + params + ") {");
  s.push("entry:");
  s.push("  br L0_header");

  auto header_label = [](int l) { return "L" + std::to_string(l) + "_header"; };
  auto latch_label = [](int l) { return "L" + std::to_string(l) + "_latch"; };
  auto idx = [](int l) { return "%i" + std::to_string(l); };

  for (int l = 0; l < d; ++l) {
    const std::string L = "L" + std::to_string(l);
    s.push("#pragma ACCEL PIPELINE auto{__PIPE__" + L + "}");
    s.push("#pragma ACCEL TILE FACTOR=auto{__TILE__" + L + "}");
    s.push("#pragma ACCEL PARALLEL FACTOR=auto{__PARA__" + L + "}");
    std::string attrs = L + ", depth=" + std::to_string(l + 1) +
                        ", trip=" + std::to_string(spec.trips[static_cast<size_t>(l)]);
    if (l > 0) attrs += ", parent=L" + std::to_string(l - 1);
    s.push(header_label(l) + ": @loop(" + attrs + ")");
    s.push("  " + idx(l) + " = phi 0, " + idx(l) + "_next");
    s.push_loc("  %c" + std::to_string(l) + " = cmp " + idx(l) + ", " +
                   std::to_string(spec.trips[static_cast<size_t>(l)]),
               "cmp");
    std::string if_true = l + 1 < d ? header_label(l + 1) : "L" + std::to_string(d - 1) + "_body";
    std::string if_false = l > 0 ? latch_label(l - 1) : "exit";
    s.push("  condbr %c" + std::to_string(l) + ", " + if_true + ", " + if_false);
  }

  // Innermost body: load every array, run the seeded arithmetic chain over
  // whatever values are in scope, store the final result, step the index.
  s.push("L" + std::to_string(d - 1) + "_body: @loop(L" + std::to_string(d - 1) + ")");
  std::vector<std::string> pool;
  for (int l = 0; l < d; ++l) pool.push_back(idx(l));
  for (int a = 0; a < spec.arrays; ++a) {
    std::string v = "%v" + std::to_string(a);
    s.push_loc("  " + v + " = load %A" + std::to_string(a), "load");
    pool.push_back(v);
  }
  const std::vector<std::string> ops = {"add", "mul", "sub", "div", "add", "mul"};
  std::string last = pool.back();
  for (int k = 0; k < spec.body_ops; ++k) {
    std::string t = "%t" + std::to_string(k);
    const std::string& op = ops[static_cast<size_t>(rng.below(ops.size()))];
    std::string lhs = pool[static_cast<size_t>(rng.below(pool.size()))];
    std::string rhs = rng.chance(0.25) ? std::to_string(rng.range(1, 8))
                                       : pool[static_cast<size_t>(rng.below(pool.size()))];
    s.push_loc("  " + t + " = " + op + " " + lhs + ", " + rhs, op);
    pool.push_back(t);
    last = t;
  }
  s.push_loc("  store " + last + ", %A0", "store");
  s.push_loc("  " + idx(d - 1) + "_next = add " + idx(d - 1) + ", 1", "add");
  s.push("  br " + header_label(d - 1));

  for (int l = d - 2; l >= 0; --l) {
    s.push(latch_label(l) + ": @loop(L" + std::to_string(l) + ")");
    s.push_loc("  " + idx(l) + "_next = add " + idx(l) + ", 1", "add");
    s.push("  br " + header_label(l));
  }

  s.push("exit:");
  s.push("  ret");
  s.push("}");
  return s.str();
}

// ---------------------------------------------------------------------------
// Analytic evaluation.

namespace {

struct LevelConfig {
  int64_t trip = 1;
  int64_t parallel = 1;
  int64_t tile = 1;
  std::string pipeline = "off";
};

int64_t factor_value(const std::string& text, const std::string& what) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(text, &used);
    if (used != text.size() || v < 1) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("oracle: bad " + what + " factor '" + text + "'");
  }
}

}  // namespace

OracleEval oracle_eval(const pir::Program& p, const pir::Assignment& a,
                       const CostModel& cost) {
  if (p.functions.size() != 1)
    throw std::invalid_argument("oracle requires a single-function program");
  const pir::Function& f = p.functions[0];
  if (f.loops.empty()) throw std::invalid_argument("oracle requires a loop nest");

  // The nest must be a single chain: exactly one loop per depth 1..D.
  const int depth = static_cast<int>(f.loops.size());
  std::vector<const pir::Loop*> chain(static_cast<size_t>(depth), nullptr);
  for (const pir::Loop& l : f.loops) {
    if (l.depth < 1 || l.depth > depth || chain[static_cast<size_t>(l.depth - 1)])
      throw std::invalid_argument("oracle requires a single loop nest");
    chain[static_cast<size_t>(l.depth - 1)] = &l;
  }
  for (const pir::Loop* l : chain)
    if (l->trip < 1) throw std::invalid_argument("oracle requires known trip counts");

  std::vector<LevelConfig> lv(static_cast<size_t>(depth));
  for (int i = 0; i < depth; ++i) lv[static_cast<size_t>(i)].trip = chain[static_cast<size_t>(i)]->trip;
  for (const pir::PragmaDecl& d : p.pragmas) {
    auto it = a.find(d.placeholder);
    if (it == a.end())
      throw std::invalid_argument("oracle: assignment misses " + d.placeholder);
    int level = -1;
    for (int i = 0; i < depth; ++i)
      if (chain[static_cast<size_t>(i)]->header_block == d.attach_block) level = i;
    if (level < 0) continue;  // pragma on a non-header block has no effect here
    LevelConfig& c = lv[static_cast<size_t>(level)];
    if (d.kind == pir::PragmaKind::pipeline)
      c.pipeline = it->second;
    else if (d.kind == pir::PragmaKind::parallel)
      c.parallel = factor_value(it->second, "PARALLEL");
    else
      c.tile = factor_value(it->second, "TILE");
  }

  // Work charged per innermost iteration: every instruction in the innermost
  // loop's non-header blocks. Outer-loop bookkeeping is treated as free.
  const std::string inner_id = chain[static_cast<size_t>(depth - 1)]->id;
  int64_t body_lat = 0, n_ops = 0, n_mul = 0, n_div = 0;
  for (const pir::Block& b : p.blocks) {
    if (b.function != 0 || b.parent_loop != inner_id) continue;
    if (b.id == chain[static_cast<size_t>(depth - 1)]->header_block) continue;
    for (int ii : b.instructions) {
      const pir::Instruction& ins = p.instructions[static_cast<size_t>(ii)];
      body_lat += cost.cycles(ins.op);
      switch (ins.op) {
        case pir::Opcode::add:
        case pir::Opcode::sub:
        case pir::Opcode::cmp:
        case pir::Opcode::load:
        case pir::Opcode::store:
          n_ops += 1;
          break;
        case pir::Opcode::mul:
          n_ops += 1;
          n_mul += 1;
          break;
        case pir::Opcode::div:
          n_ops += 1;
          n_div += 1;
          break;
        default:
          break;
      }
    }
  }
  if (body_lat < 1) body_lat = 1;

  // Iterations surviving at each level after parallel replication.
  auto iters = [&](int i) {
    const LevelConfig& c = lv[static_cast<size_t>(i)];
    return (c.trip + c.parallel - 1) / c.parallel;
  };

  // Latency from the innermost level outward. "off" repeats the inner
  // latency; "cg" overlaps successive iterations at half the inner latency;
  // "fg" flattens every level from here inward into one unit-interval
  // pipeline whose fill grows with the flattened depth.
  int64_t lat = body_lat;
  for (int i = depth - 1; i >= 0; --i) {
    const LevelConfig& c = lv[static_cast<size_t>(i)];
    int64_t e = iters(i);
    if (c.pipeline == "fg") {
      int64_t flat = 1;
      for (int m = i; m < depth; ++m) flat *= iters(m);
      lat = flat + static_cast<int64_t>(depth - i) * body_lat;
    } else if (c.pipeline == "cg") {
      int64_t ii = (lat + 1) / 2;
      lat = lat + (e - 1) * ii;
    } else {
      lat = e * lat;
    }
  }

  // Resource use: the replicated body accounts for logic and arithmetic;
  // arrays burn block memory in proportion to footprint and tiling.
  int64_t p_total = 1, tile_total = 1;
  for (const LevelConfig& c : lv) {
    p_total *= c.parallel;
    tile_total *= c.tile;
  }
  int64_t footprint = 1;
  for (const LevelConfig& c : lv) footprint *= c.trip;
  int64_t arrays = 0;
  for (const std::string& ty : f.param_types) arrays += ty == "ptr" ? 1 : 0;

  int64_t lut = n_ops * cost.lut_per_op * p_total;
  int64_t ff = n_ops * cost.ff_per_op * p_total;
  int64_t dsp = (n_mul * cost.dsp_per_mul + n_div * cost.dsp_per_div) * p_total;
  int64_t bram_blocks = (footprint + cost.elems_per_bram - 1) / cost.elems_per_bram;
  int64_t bram = arrays * bram_blocks * tile_total;

  OracleEval ev;
  ev.latency = static_cast<double>(lat);
  ev.util[0] = static_cast<double>(lut) / static_cast<double>(cost.avail_lut);
  ev.util[1] = static_cast<double>(ff) / static_cast<double>(cost.avail_ff);
  ev.util[2] = static_cast<double>(dsp) / static_cast<double>(cost.avail_dsp);
  ev.util[3] = static_cast<double>(bram) / static_cast<double>(cost.avail_bram);
  ev.fits = true;
  for (double u : ev.util)
    if (u > 1.0) ev.fits = false;
  return ev;
}

// ---------------------------------------------------------------------------
// Dataset emission.

namespace {

std::string kernel_file(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "k%02d.pir", i);
  return buf;
}

json assignment_json(const pir::Assignment& a) {
  json j = json::object();
  for (const auto& [k, v] : a) j[k] = v;
  return j;
}

struct KernelBundle {
  std::string name;
  std::string text;
  double t_ref = 0;
  std::vector<std::pair<pir::Assignment, std::vector<double>>> designs;
  json labels;  // task name -> [[i,j,y], ...]
  int skipped_unfit = 0;
};

KernelBundle build_kernel(int index, const GenOptions& opt, uint64_t kseed) {
  Rng rng(kseed);
  KernelSpec spec;
  char nbuf[8];
  std::snprintf(nbuf, sizeof(nbuf), "k%02d", index);
  spec.name = nbuf;
  spec.depth = static_cast<int>(rng.range(opt.min_depth, opt.max_depth));
  for (int l = 0; l < spec.depth; ++l) spec.trips.push_back(rng.pick(opt.trip_choices));
  spec.body_ops = static_cast<int>(rng.range(opt.min_body_ops, opt.max_body_ops));
  spec.arrays = static_cast<int>(rng.range(opt.min_arrays, opt.max_arrays));

  KernelBundle kb;
  kb.name = spec.name;
  kb.text = gen_kernel(spec, rng.bits());

  pir::Program p = pir::parse_pir(kb.text);
  dse::DesignSpace space = dse::make_space(p);
  pir::Assignment base = graph::default_assignment(p);
  OracleEval base_ev = oracle_eval(p, base, opt.cost);
  kb.t_ref = base_ev.latency;

  // The reference design is always design zero; the rest are fresh draws.
  std::set<std::string> seen;
  auto key = [](const pir::Assignment& a) {
    std::string k;
    for (const auto& [kk, vv] : a) k += kk + "=" + vv + ";";
    return k;
  };
  auto add = [&](const pir::Assignment& a, const OracleEval& ev) {
    std::vector<double> y;
    if (opt.raw_targets) {
      y = {ev.latency, ev.util[0], ev.util[1], ev.util[2], ev.util[3]};
    } else {
      y = train::normalize_targets(ev.latency, ev.util, kb.t_ref);
    }
    kb.designs.emplace_back(a, std::move(y));
    seen.insert(key(a));
  };
  add(base, base_ev);

  dse::AssignmentStream stream(space, dse::Order::seeded_random, rng.bits());
  while (static_cast<int>(kb.designs.size()) < opt.designs_per_kernel) {
    auto a = stream.next();
    if (!a) break;  // space exhausted; keep what we have
    if (seen.count(key(*a))) continue;
    OracleEval ev = oracle_eval(p, *a, opt.cost);
    if (!ev.fits) {
      kb.skipped_unfit += 1;
      continue;
    }
    add(*a, ev);
  }

  // Relation labels are drawn on the pragma-free graph so that a pragma-blind
  // encoder can be trained against them.
  graph::HarpGraph g = graph::strip_pragma_nodes(graph::build_graph(p, base));
  kb.labels = json::object();
  for (dataflow::Task task :
       {dataflow::Task::reachability, dataflow::Task::dominators,
        dataflow::Task::datadep, dataflow::Task::liveness}) {
    dataflow::LabelSet ls =
        dataflow::gen_labels(g, task, opt.label_pairs, 0.5, rng.bits());
    json arr = json::array();
    for (const auto& pr : ls.pairs) arr.push_back({pr.i, pr.j, static_cast<int>(pr.y)});
    kb.labels[dataflow::task_name(task)] = std::move(arr);
  }
  return kb;
}

}  // namespace

GenSummary gen_dataset(const GenOptions& opt, const std::string& out_dir) {
  if (opt.n_kernels < 1) throw std::invalid_argument("gen_dataset: need at least one kernel");
  if (opt.designs_per_kernel < 1)
    throw std::invalid_argument("gen_dataset: need at least one design per kernel");

  fs::create_directories(fs::path(out_dir) / "kernels");

  // Per-kernel seeds come from one master stream so results are independent
  // of the thread schedule.
  Rng master(opt.seed);
  std::vector<uint64_t> seeds;
  for (int i = 0; i < opt.n_kernels; ++i) seeds.push_back(master.bits());

  std::vector<KernelBundle> bundles(static_cast<size_t>(opt.n_kernels));
  int threads = std::max(1, opt.threads);
  if (threads == 1) {
    for (int i = 0; i < opt.n_kernels; ++i)
      bundles[static_cast<size_t>(i)] = build_kernel(i, opt, seeds[static_cast<size_t>(i)]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < opt.n_kernels; i = next.fetch_add(1))
          bundles[static_cast<size_t>(i)] = build_kernel(i, opt, seeds[static_cast<size_t>(i)]);
      });
    for (auto& th : pool) th.join();
  }

  GenSummary sum;
  sum.kernels = opt.n_kernels;
  json baselines = json::object();
  std::vector<std::string> texts;

  std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl");
  std::ofstream corpus(fs::path(out_dir) / "corpus.jsonl");
  for (int i = 0; i < opt.n_kernels; ++i) {
    const KernelBundle& kb = bundles[static_cast<size_t>(i)];
    const std::string rel = "kernels/" + kernel_file(i);
    std::ofstream(fs::path(out_dir) / rel) << kb.text;
    texts.push_back(kb.text);
    baselines[kb.name] = kb.t_ref;
    sum.designs += static_cast<int>(kb.designs.size());
    sum.skipped_unfit += kb.skipped_unfit;

    for (const auto& [a, y] : kb.designs) {
      json row;
      row["pir"] = rel;
      row["assignment"] = assignment_json(a);
      row["y"] = y;
      manifest << row.dump() << "\n";
    }
    json crow;
    crow["pir"] = rel;
    crow["labels"] = kb.labels;
    corpus << crow.dump() << "\n";
  }
  manifest.close();
  corpus.close();

  token::Vocabulary vocab = token::Vocabulary::build(texts);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());
  std::ofstream(fs::path(out_dir) / "baselines.json") << baselines.dump(2) << "\n";
  std::ofstream(fs::path(out_dir) / "cost_model.json") << opt.cost.to_json();

  sum.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  sum.corpus_path = (fs::path(out_dir) / "corpus.jsonl").string();
  sum.vocab_path = (fs::path(out_dir) / "vocab.txt").string();
  return sum;
}

}  // namespace progsg::synthlab
