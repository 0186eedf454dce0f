// progsg: command-line front end for the program-graph design-quality
// toolkit. Subcommands cover graph export, relation-label sampling,
// synthetic dataset generation, trunk pretraining, model training,
// prediction, design-space exploration, and attention export.
//
// Conventions: stdout carries machine-readable output only (JSON or CSV);
// diagnostics go to stderr. Exit codes: 0 success, 2 usage error, 1 runtime
// failure. The PROGSG_SEED environment variable overrides any --seed flag.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "progsg/checkpoint.hpp"
#include "progsg/dataflow.hpp"
#include "progsg/dse.hpp"
#include "progsg/graph.hpp"
#include "progsg/model.hpp"
#include "progsg/pir.hpp"
#include "progsg/synthlab.hpp"
#include "progsg/tape.hpp"
#include "progsg/token.hpp"
#include "progsg/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace progsg;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// "-" or empty targets stdout.
void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << '\n';
  } else {
    write_file(out, text);
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Environment variable wins over any flag value.
void apply_env_seed(uint64_t& seed) {
  const char* e = std::getenv("PROGSG_SEED");
  if (e != nullptr && *e != '\0') {
    char* end = nullptr;
    unsigned long long v = std::strtoull(e, &end, 10);
    if (end == e || *end != '\0')
      throw std::runtime_error("PROGSG_SEED must be an unsigned integer");
    seed = static_cast<uint64_t>(v);
  }
}

// Accepts "default", a JSON file of {placeholder: value}, or an inline
// "KEY=VALUE,KEY=VALUE" list.
pir::Assignment parse_assignment(const std::string& spec, const pir::Program& p) {
  if (spec.empty() || spec == "default") return graph::default_assignment(p);
  if (fs::exists(spec)) {
    json j = json::parse(read_file(spec));
    if (!j.is_object()) throw std::runtime_error("assignment file must hold a JSON object");
    pir::Assignment a;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.value().is_string()) {
        a[it.key()] = it.value().get<std::string>();
      } else {
        a[it.key()] = it.value().dump();
      }
    }
    return a;
  }
  pir::Assignment a;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("bad assignment item '" + item + "' (want KEY=VALUE)");
    a[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return a;
}

json assignment_json(const pir::Assignment& a) {
  json j = json::object();
  for (const auto& [k, v] : a) j[k] = v;
  return j;
}

// A trained or pretrained model directory: config.json, weights.bin,
// vocab.txt.
struct Bundle {
  model::ModelConfig cfg;
  token::Vocabulary vocab;
  std::unique_ptr<model::Model> m;
};

Bundle load_bundle(const std::string& dir) {
  fs::path root(dir);
  if (!fs::exists(root / "config.json"))
    throw std::runtime_error("missing config.json in " + dir);
  if (!fs::exists(root / "vocab.txt"))
    throw std::runtime_error("missing vocab.txt in " + dir);
  if (!fs::exists(root / "weights.bin"))
    throw std::runtime_error("missing weights in " + dir);
  Bundle b;
  b.cfg = model::ModelConfig::from_json(read_file((root / "config.json").string()));
  b.vocab = token::Vocabulary::load((root / "vocab.txt").string());
  b.m = std::make_unique<model::Model>(b.cfg, b.vocab.size());
  ad::load_weights(b.m->params(), (root / "weights.bin").string());
  return b;
}

void save_bundle(const std::string& dir, const model::Model& m,
                 const token::Vocabulary& vocab) {
  fs::create_directories(dir);
  fs::path root(dir);
  write_file((root / "config.json").string(), m.config().to_json());
  ad::save_weights(m.params(), (root / "weights.bin").string());
  vocab.save((root / "vocab.txt").string());
}

// Model-ready tensors for one (program, assignment) pair.
model::DesignInput make_input(const pir::Program& p, const pir::Assignment& a,
                              const token::Vocabulary& vocab,
                              const graph::NodeFeatureVocab& feats,
                              int max_len) {
  std::string source = pir::render_design_source(p, a);
  token::TokenStream ts = token::tokenize(source, vocab, max_len);
  graph::HarpGraph g = graph::build_graph(p, a);
  std::vector<int> lines;
  lines.reserve(ts.tokens.size());
  for (const auto& tok : ts.tokens) lines.push_back(tok.line);
  auto alignment = graph::build_alignment(g, lines);
  return model::make_design_input(g, feats, ts, alignment);
}

std::vector<double> predict5(const model::Model& m, const model::DesignInput& in) {
  ad::Tape t;
  model::Encoded enc = m.encode(t, in, nullptr, false);
  ad::Value yhat = m.decode(t, enc);
  return t.val(yhat).data;
}

// Applies flag overrides on top of a config that may have been seeded from a
// JSON file; only flags the user actually passed win.
struct ModelFlags {
  int64_t d = 64, L1 = 4, L2 = 2, max_len = 32, heads = 4;
  double gamma1 = 1.0, gamma2 = 1.0, gamma3 = 1.0, beta = 2.0, dropout = 0.0;
  std::string loss = "ce", variant = "progsg", gnn = "transformer_conv";
  std::string modality = "both";
  CLI::Option *od = nullptr, *ol1 = nullptr, *ol2 = nullptr, *oml = nullptr,
              *oh = nullptr, *og1 = nullptr, *og2 = nullptr, *og3 = nullptr,
              *ob = nullptr, *odr = nullptr, *olo = nullptr, *ova = nullptr,
              *ogn = nullptr, *omo = nullptr;

  void add(CLI::App* sub, bool with_modality) {
    od = sub->add_option("--d", d, "embedding width");
    ol1 = sub->add_option("--l1", L1, "graph layers");
    ol2 = sub->add_option("--l2", L2, "interaction rounds");
    oml = sub->add_option("--max-len", max_len, "chunk length incl. summary slot");
    oh = sub->add_option("--heads", heads, "attention heads");
    og1 = sub->add_option("--gamma1", gamma1, "fine alignment weight");
    og2 = sub->add_option("--gamma2", gamma2, "coarse alignment weight");
    og3 = sub->add_option("--gamma3", gamma3, "guidance weight");
    ob = sub->add_option("--beta", beta, "focal exponent");
    odr = sub->add_option("--dropout", dropout, "chunk-layer dropout rate");
    olo = sub->add_option("--loss", loss, "pretraining pair loss: ce|focal");
    ova = sub->add_option("--variant", variant,
                          "encoder wiring: progsg|progsg_si|progsg_ca|no_ntmp");
    ogn = sub->add_option("--gnn", gnn, "graph layer: transformer_conv|gat");
    if (with_modality)
      omo = sub->add_option("--modality", modality, "both|graph_only|src_only");
  }

  void apply(model::ModelConfig& cfg) const {
    if (od->count()) cfg.d = d;
    if (ol1->count()) cfg.L1 = L1;
    if (ol2->count()) cfg.L2 = L2;
    if (oml->count()) cfg.max_len = max_len;
    if (oh->count()) cfg.heads = heads;
    if (og1->count()) cfg.gamma1 = gamma1;
    if (og2->count()) cfg.gamma2 = gamma2;
    if (og3->count()) cfg.gamma3 = gamma3;
    if (ob->count()) cfg.beta = beta;
    if (odr->count()) cfg.dropout = dropout;
    if (olo->count()) cfg.pretrain_loss = loss;
    if (ova->count()) cfg.variant = model::variant_from_name(variant);
    if (ogn->count()) cfg.gnn_layer = model::gnn_kind_from_name(gnn);
    if (omo != nullptr && omo->count()) cfg.modality = model::modality_from_name(modality);
  }
};

// Loads --config JSON when given; the "model" section seeds the model config.
json load_config_file(const std::string& path, model::ModelConfig* cfg) {
  if (path.empty()) return json::object();
  json j = json::parse(read_file(path));
  if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
  if (cfg != nullptr && j.contains("model"))
    *cfg = model::ModelConfig::from_json(j.at("model").dump());
  return j;
}

template <typename T>
void take(const json& j, const char* key, const CLI::Option* opt, T& var) {
  if (j.contains(key) && (opt == nullptr || opt->count() == 0)) var = j.at(key).get<T>();
}

// "lr" in a config file may be a single number or an array (a grid).
void take_lr_grid(const json& j, const CLI::Option* opt, std::vector<double>& grid) {
  if (!j.contains("lr") || (opt != nullptr && opt->count() > 0)) return;
  const json& v = j.at("lr");
  if (v.is_array()) {
    grid = v.get<std::vector<double>>();
  } else {
    grid = {v.get<double>()};
  }
}

int run(int argc, char** argv) {
  CLI::App app{"program-graph design-quality toolkit"};
  app.set_version_flag("--version", "0.1.0");
  app.require_subcommand(1);

  // ---------------------------------------------------------------- build-graph
  auto* bg = app.add_subcommand("build-graph", "export the design graph of a program");
  struct {
    std::string pir, assign = "default", format = "json", out = "-";
    bool strip = false;
  } bgo;
  bg->add_option("--pir", bgo.pir, "program file")->required();
  bg->add_option("--assign", bgo.assign, "default | JSON file | KEY=VALUE,...");
  bg->add_option("--format", bgo.format, "json|dot");
  bg->add_option("--out", bgo.out, "output path, - for stdout");
  bg->add_flag("--strip", bgo.strip, "drop pragma nodes");
  bg->callback([&] {
    pir::Program p = pir::parse_pir_file(bgo.pir);
    graph::HarpGraph g = graph::build_graph(p, parse_assignment(bgo.assign, p));
    if (bgo.strip) g = graph::strip_pragma_nodes(g);
    emit(bgo.out, graph::export_graph(g, bgo.format));
  });

  // ----------------------------------------------------------------- gen-labels
  auto* gl = app.add_subcommand("gen-labels",
                                "sample relation labels on the pragma-free graph");
  struct {
    std::string pir, task = "all", out = "-";
    int pairs = 40;
    double pos_ratio = 0.5;
    uint64_t seed = 1;
  } glo;
  gl->add_option("--pir", glo.pir, "program file")->required();
  gl->add_option("--task", glo.task,
                 "reachability|dominators|datadep|liveness|all");
  gl->add_option("--pairs", glo.pairs, "pairs per task");
  gl->add_option("--pos-ratio", glo.pos_ratio, "target positive fraction");
  gl->add_option("--seed", glo.seed, "sampling seed");
  gl->add_option("--out", glo.out, "output path, - for stdout");
  gl->callback([&] {
    apply_env_seed(glo.seed);
    pir::Program p = pir::parse_pir_file(glo.pir);
    graph::HarpGraph g =
        graph::strip_pragma_nodes(graph::build_graph(p, graph::default_assignment(p)));
    std::vector<dataflow::Task> tasks;
    if (glo.task == "all") {
      tasks = {dataflow::Task::reachability, dataflow::Task::dominators,
               dataflow::Task::datadep, dataflow::Task::liveness};
    } else {
      tasks = {dataflow::task_from_name(glo.task)};
    }
    json out = json::object();
    for (dataflow::Task task : tasks) {
      dataflow::LabelSet ls = dataflow::gen_labels(g, task, glo.pairs, glo.pos_ratio, glo.seed);
      json rows = json::array();
      for (const auto& pr : ls.pairs) rows.push_back({pr.i, pr.j, int(pr.y)});
      out[dataflow::task_name(task)] = rows;
      if (ls.all_negative_warning)
        std::cerr << "warning: " << dataflow::task_name(task)
                  << " produced no positive pairs\n";
    }
    emit(glo.out, out.dump());
  });

  // ------------------------------------------------------------------- gen-data
  auto* gd = app.add_subcommand("gen-data", "generate a synthetic kernel dataset");
  struct {
    std::string out, cost, config;
    synthlab::GenOptions opt;
  } gdo;
  gd->add_option("--out", gdo.out, "output directory")->required();
  auto* gd_k = gd->add_option("--kernels", gdo.opt.n_kernels, "kernel count");
  auto* gd_d = gd->add_option("--designs", gdo.opt.designs_per_kernel, "designs per kernel");
  auto* gd_s = gd->add_option("--seed", gdo.opt.seed, "generation seed");
  gd->add_option("--min-depth", gdo.opt.min_depth, "min loop depth");
  gd->add_option("--max-depth", gdo.opt.max_depth, "max loop depth");
  gd->add_option("--trips", gdo.opt.trip_choices, "trip count choices")->delimiter(',');
  gd->add_option("--min-body-ops", gdo.opt.min_body_ops, "min body operations");
  gd->add_option("--max-body-ops", gdo.opt.max_body_ops, "max body operations");
  gd->add_option("--min-arrays", gdo.opt.min_arrays, "min arrays");
  gd->add_option("--max-arrays", gdo.opt.max_arrays, "max arrays");
  gd->add_option("--label-pairs", gdo.opt.label_pairs, "relation pairs per task");
  gd->add_option("--cost", gdo.cost, "cost model JSON file");
  gd->add_option("--threads", gdo.opt.threads, "worker threads");
  gd->add_flag("--raw-targets", gdo.opt.raw_targets,
               "emit raw latency/utilization labels instead of normalized targets");
  gd->add_option("--config", gdo.config, "JSON defaults; flags win");
  gd->callback([&] {
    json j = load_config_file(gdo.config, nullptr);
    take(j, "kernels", gd_k, gdo.opt.n_kernels);
    take(j, "designs", gd_d, gdo.opt.designs_per_kernel);
    take(j, "seed", gd_s, gdo.opt.seed);
    apply_env_seed(gdo.opt.seed);
    if (!gdo.cost.empty()) gdo.opt.cost = synthlab::CostModel::from_json(read_file(gdo.cost));
    synthlab::GenSummary s = synthlab::gen_dataset(gdo.opt, gdo.out);
    json out{{"kernels", s.kernels},
             {"designs", s.designs},
             {"skipped_unfit", s.skipped_unfit},
             {"manifest", s.manifest_path},
             {"corpus", s.corpus_path},
             {"vocab", s.vocab_path}};
    std::cout << out.dump() << '\n';
  });

  // ------------------------------------------------------------------- pretrain
  auto* pt = app.add_subcommand("pretrain",
                                "pretrain a graph trunk on relation labels");
  struct {
    std::string corpus, vocab, out, config;
    train::PretrainConfig pc;
    ModelFlags mf;
  } pto;
  pt->add_option("--corpus", pto.corpus, "corpus JSONL")->required();
  pt->add_option("--vocab", pto.vocab, "token vocabulary file")->required();
  pt->add_option("--out", pto.out, "output bundle directory")->required();
  auto* pt_e = pt->add_option("--epochs", pto.pc.epochs, "training epochs");
  auto* pt_b = pt->add_option("--batch", pto.pc.batch, "graphs per batch");
  auto* pt_l = pt->add_option("--lr", pto.pc.lr, "learning rate");
  auto* pt_v = pt->add_option("--val-fraction", pto.pc.val_fraction, "validation fraction");
  auto* pt_s = pt->add_option("--seed", pto.pc.seed, "training seed");
  pt->add_option("--config", pto.config, "JSON defaults; flags win");
  pto.mf.add(pt, /*with_modality=*/false);
  pt->callback([&] {
    model::ModelConfig cfg;
    cfg.modality = model::Modality::graph_only;
    json j = load_config_file(pto.config, &cfg);
    take(j, "epochs", pt_e, pto.pc.epochs);
    take(j, "batch", pt_b, pto.pc.batch);
    take(j, "lr", pt_l, pto.pc.lr);
    take(j, "val_fraction", pt_v, pto.pc.val_fraction);
    take(j, "seed", pt_s, pto.pc.seed);
    pto.mf.apply(cfg);
    apply_env_seed(pto.pc.seed);
    cfg.seed = pto.pc.seed;
    graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
    std::vector<train::CorpusGraph> corpus = train::load_corpus(pto.corpus, feats);
    token::Vocabulary vocab = token::Vocabulary::load(pto.vocab);
    model::Model m(cfg, vocab.size());
    train::PretrainReport rep = train::pretrain(m, corpus, pto.pc);
    save_bundle(pto.out, m, vocab);
    write_file((fs::path(pto.out) / "report.json").string(), rep.to_json());
    std::cout << rep.to_json() << '\n';
  });

  // ---------------------------------------------------------------------- train
  auto* tr = app.add_subcommand("train", "train a quality predictor on a manifest");
  struct {
    std::string manifest, vocab, out, trunk, config;
    train::TrainConfig tc;
    bool f32 = false;
    ModelFlags mf;
  } tro;
  tr->add_option("--manifest", tro.manifest, "design manifest JSONL")->required();
  tr->add_option("--vocab", tro.vocab, "token vocabulary (default: manifest dir)");
  tr->add_option("--out", tro.out, "output bundle directory")->required();
  tr->add_option("--trunk", tro.trunk, "pretrained trunk bundle directory");
  auto* tr_e = tr->add_option("--epochs", tro.tc.epochs, "training epochs");
  auto* tr_b = tr->add_option("--batch", tro.tc.batch, "designs per batch");
  auto* tr_l = tr->add_option("--lr", tro.tc.lr_grid, "learning rate(s); repeat for a grid")
                   ->delimiter(',');
  auto* tr_w = tr->add_option("--weight-decay", tro.tc.weight_decay, "decoupled weight decay");
  auto* tr_s = tr->add_option("--seed", tro.tc.seed, "training seed");
  tr->add_flag("--f32", tro.f32, "round weights to float32 after each step");
  tr->add_option("--config", tro.config, "JSON defaults; flags win");
  tro.mf.add(tr, /*with_modality=*/true);
  tr->callback([&] {
    model::ModelConfig cfg;
    json j = load_config_file(tro.config, &cfg);
    take(j, "epochs", tr_e, tro.tc.epochs);
    take(j, "batch", tr_b, tro.tc.batch);
    take_lr_grid(j, tr_l, tro.tc.lr_grid);
    take(j, "weight_decay", tr_w, tro.tc.weight_decay);
    take(j, "seed", tr_s, tro.tc.seed);
    tro.mf.apply(cfg);
    apply_env_seed(tro.tc.seed);
    cfg.seed = tro.tc.seed;
    tro.tc.f32 = tro.f32 || tro.tc.f32;

    std::string vocab_path = tro.vocab;
    if (vocab_path.empty())
      vocab_path = (fs::path(tro.manifest).parent_path() / "vocab.txt").string();
    token::Vocabulary vocab = token::Vocabulary::load(vocab_path);
    graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
    std::vector<train::ManifestEntry> entries = train::load_manifest(tro.manifest);
    train::Dataset ds = train::load_dataset(entries, feats, vocab,
                                            static_cast<int>(cfg.max_len), tro.tc.seed);

    std::optional<Bundle> trunk;
    if (!tro.trunk.empty()) trunk = load_bundle(tro.trunk);
    train::FinetuneResult res =
        train::finetune(cfg, vocab.size(), ds, tro.tc,
                        trunk.has_value() ? trunk->m.get() : nullptr);
    save_bundle(tro.out, *res.model, vocab);
    write_file((fs::path(tro.out) / "report.json").string(), res.report.to_json());
    write_file((fs::path(tro.out) / "report.csv").string(), res.report.to_csv());
    std::cout << res.report.to_json() << '\n';
  });

  // -------------------------------------------------------------------- predict
  auto* pr = app.add_subcommand("predict", "predict targets for manifest designs");
  struct {
    std::string bundle, manifest, out = "-";
  } pro;
  pr->add_option("--bundle", pro.bundle, "trained bundle directory")->required();
  pr->add_option("--manifest", pro.manifest, "design manifest JSONL")->required();
  pr->add_option("--out", pro.out, "output path, - for stdout");
  pr->callback([&] {
    Bundle b = load_bundle(pro.bundle);
    graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
    std::vector<train::ManifestEntry> entries = train::load_manifest(pro.manifest);
    train::Dataset ds = train::load_dataset(entries, feats, b.vocab,
                                            static_cast<int>(b.cfg.max_len), 1);
    std::ostringstream csv;
    csv << "id,perf,util_lut,util_ff,util_dsp,util_bram\n";
    for (const auto& item : ds.items) {
      std::vector<double> y = predict5(*b.m, item.input);
      csv << item.id;
      for (double v : y) csv << ',' << fmt_double(v);
      csv << '\n';
    }
    emit(pro.out, csv.str());
  });

  // ------------------------------------------------------------------------ dse
  auto* ds_cmd = app.add_subcommand("dse", "search the pragma design space");
  struct {
    std::string pir, bundle, cheap_bundle, cost, out = "-", format = "json";
    std::string order = "seeded_random";
    bool oracle = false, true_oracle = false;
    int64_t budget_evals = 0, keep = 50, k = 10;
    double budget_seconds = 0;
    uint64_t seed = 1;
    int threads = 1;
  } dso;
  ds_cmd->add_option("--pir", dso.pir, "program file")->required();
  ds_cmd->add_option("--bundle", dso.bundle, "model bundle used as the scorer");
  ds_cmd->add_flag("--oracle", dso.oracle, "score with the analytic evaluator instead");
  ds_cmd->add_option("--cheap-bundle", dso.cheap_bundle,
                     "first-stage scorer; enables two-level search");
  ds_cmd->add_option("--keep", dso.keep, "candidates kept for the second stage");
  ds_cmd->add_option("--budget-evals", dso.budget_evals, "max scored points");
  ds_cmd->add_option("--budget-seconds", dso.budget_seconds, "max search seconds");
  ds_cmd->add_option("--k", dso.k, "result size");
  ds_cmd->add_option("--order", dso.order, "seeded_random|lexicographic");
  ds_cmd->add_option("--seed", dso.seed, "enumeration seed");
  ds_cmd->add_option("--threads", dso.threads, "scoring threads");
  ds_cmd->add_flag("--true-oracle", dso.true_oracle,
                   "annotate winners with analytic reference values");
  ds_cmd->add_option("--cost", dso.cost, "cost model JSON for oracle scoring");
  ds_cmd->add_option("--format", dso.format, "json|csv");
  ds_cmd->add_option("--out", dso.out, "output path, - for stdout");
  ds_cmd->callback([&] {
    apply_env_seed(dso.seed);
    if (dso.bundle.empty() == !dso.oracle)
      throw std::runtime_error("pick exactly one scorer: --bundle or --oracle");
    pir::Program p = pir::parse_pir_file(dso.pir);
    dse::DesignSpace space = dse::make_space(p);
    synthlab::CostModel cost = dso.cost.empty()
                                   ? synthlab::CostModel::defaults()
                                   : synthlab::CostModel::from_json(read_file(dso.cost));
    graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();

    dse::Scorer oracle_scorer = [&p, &cost](const pir::Assignment& a) {
      synthlab::OracleEval ev = synthlab::oracle_eval(p, a, cost);
      double perf = ev.fits ? -ev.latency : -std::numeric_limits<double>::infinity();
      return std::vector<double>{perf, ev.util[0], ev.util[1], ev.util[2], ev.util[3]};
    };
    auto model_scorer = [&p, &feats](const Bundle& b) {
      return dse::Scorer([&p, &feats, &b](const pir::Assignment& a) {
        return predict5(*b.m, make_input(p, a, b.vocab, feats,
                                         static_cast<int>(b.cfg.max_len)));
      });
    };

    std::optional<Bundle> full_b, cheap_b;
    dse::Scorer full = oracle_scorer;
    if (!dso.bundle.empty()) {
      full_b = load_bundle(dso.bundle);
      full = model_scorer(*full_b);
    }
    dse::Scorer true_eval = dso.true_oracle ? oracle_scorer : dse::Scorer();
    dse::Budget budget{dso.budget_evals, dso.budget_seconds};
    dse::Order order = dse::order_from_name(dso.order);

    dse::DseResult r;
    if (!dso.cheap_bundle.empty()) {
      cheap_b = load_bundle(dso.cheap_bundle);
      r = dse::explore_two_level(space, model_scorer(*cheap_b), full, dso.keep, dso.k,
                                 budget, order, dso.seed, true_eval, dso.threads);
    } else {
      r = dse::explore(space, full, budget, dso.k, order, dso.seed, true_eval,
                       dso.threads);
    }
    emit(dso.out, dso.format == "csv" ? dse::result_csv(r) : dse::result_json(r));
  });

  // ---------------------------------------------------------------- export-attn
  auto* ea = app.add_subcommand("export-attn",
                                "per-token attention mass for one design");
  struct {
    std::string bundle, pir, assign = "default", out = "-";
  } eao;
  ea->add_option("--bundle", eao.bundle, "trained bundle directory")->required();
  ea->add_option("--pir", eao.pir, "program file")->required();
  ea->add_option("--assign", eao.assign, "default | JSON file | KEY=VALUE,...");
  ea->add_option("--out", eao.out, "output path, - for stdout");
  ea->callback([&] {
    Bundle b = load_bundle(eao.bundle);
    if (b.cfg.modality == model::Modality::graph_only)
      throw std::runtime_error("bundle has no source encoder");
    pir::Program p = pir::parse_pir_file(eao.pir);
    pir::Assignment a = parse_assignment(eao.assign, p);
    std::string source = pir::render_design_source(p, a);
    token::TokenStream ts =
        token::tokenize(source, b.vocab, static_cast<int>(b.cfg.max_len));
    graph::HarpGraph g = graph::build_graph(p, a);
    std::vector<int> lines;
    for (const auto& tok : ts.tokens) lines.push_back(tok.line);
    auto alignment = graph::build_alignment(g, lines);
    graph::NodeFeatureVocab feats = graph::NodeFeatureVocab::standard();
    model::DesignInput in = model::make_design_input(g, feats, ts, alignment);

    ad::Tape t;
    model::AttnCapture cap;
    b.m->encode(t, in, &cap, false);

    // Lines whose first non-space text is "#pragma" carry directive tokens.
    std::vector<bool> pragma_line;
    {
      std::stringstream ss(source);
      std::string line;
      while (std::getline(ss, line)) {
        size_t at = line.find_first_not_of(" \t");
        pragma_line.push_back(at != std::string::npos &&
                              line.compare(at, 7, "#pragma") == 0);
      }
    }
    int payload = static_cast<int>(b.cfg.max_len) - 1;
    json tokens = json::array();
    double pragma_mass = 0, other_mass = 0;
    for (size_t m = 0; m < ts.chunks.size(); ++m) {
      auto [begin, end] = ts.chunks[m];
      for (int i = begin; i < end; ++i) {
        size_t flat = m * static_cast<size_t>(payload) + static_cast<size_t>(i - begin);
        double mass = flat < cap.token_mass.size() ? cap.token_mass[flat] : 0.0;
        const token::Token& tok = ts.tokens[static_cast<size_t>(i)];
        bool on_pragma = tok.line >= 1 &&
                         static_cast<size_t>(tok.line) <= pragma_line.size() &&
                         pragma_line[static_cast<size_t>(tok.line - 1)];
        (on_pragma ? pragma_mass : other_mass) += mass;
        tokens.push_back({{"text", tok.text},
                          {"line", tok.line},
                          {"col", tok.col},
                          {"mass", mass},
                          {"pragma", on_pragma}});
      }
    }
    json out{{"layers", cap.layers_seen},
             {"pragma_mass", pragma_mass},
             {"other_mass", other_mass},
             {"tokens", tokens}};
    emit(eao.out, out.dump());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
