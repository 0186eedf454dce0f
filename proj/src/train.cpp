#include "progsg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "progsg/adamw.hpp"

namespace progsg::train {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Target scaling.

std::vector<double> normalize_targets(double latency_cycles,
                                      const std::array<double, 4>& utils,
                                      double t_ref) {
  if (latency_cycles <= 0 || t_ref <= 0)
    throw std::invalid_argument("normalize targets: latencies must be positive");
  std::vector<double> y(5);
  y[0] = std::log2(1.0 + t_ref / latency_cycles);
  for (int i = 0; i < 4; ++i)
    y[static_cast<size_t>(i + 1)] = std::clamp(utils[static_cast<size_t>(i)], 0.0, 1.5);
  return y;
}

double latency_from_perf(double perf, double t_ref) {
  double ratio = std::exp2(perf) - 1.0;
  if (ratio <= 0) throw std::invalid_argument("perf score out of range");
  return t_ref / ratio;
}

// ---------------------------------------------------------------------------
// Manifest and dataset loading.

namespace {

pir::Assignment assignment_from_json(const json& j, const fs::path& base) {
  pir::Assignment a;
  if (j.is_string()) {
    // Indirect form: a JSON file holding the placeholder map.
    std::ifstream in(base / j.get<std::string>());
    if (!in) throw std::runtime_error("cannot open assignment file " + j.get<std::string>());
    json inner = json::parse(in);
    for (auto& [k, v] : inner.items()) a[k] = v.get<std::string>();
    return a;
  }
  if (!j.is_object()) throw std::runtime_error("assignment must be an object or a path");
  for (auto& [k, v] : j.items())
    a[k] = v.is_string() ? v.get<std::string>() : v.dump();
  return a;
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    ManifestEntry e;
    fs::path p = j.at("pir").get<std::string>();
    e.pir_path = p.is_absolute() ? p.string() : (base / p).string();
    if (j.contains("assignment")) e.assignment = assignment_from_json(j.at("assignment"), base);
    if (j.contains("y")) {
      e.y = j.at("y").get<std::vector<double>>();
      if (e.y.size() != 5)
        throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                 ": y must hold 5 targets");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train config: negative epochs");
  if (batch < 1) throw std::invalid_argument("train config: batch must be positive");
  if (lr_grid.empty()) throw std::invalid_argument("train config: empty lr grid");
  for (double lr : lr_grid)
    if (lr <= 0) throw std::invalid_argument("train config: lr must be positive");
  if (weight_decay < 0) throw std::invalid_argument("train config: negative weight decay");
}

Dataset load_dataset(const std::vector<ManifestEntry>& entries,
                     const graph::NodeFeatureVocab& feats,
                     const token::Vocabulary& vocab, int max_len, uint64_t seed) {
  Dataset ds;

  // Kernels are parsed once; the pragma-free graph is shared by all of a
  // kernel's designs because stripping removes exactly the assignment-
  // dependent nodes.
  struct KernelCtx {
    pir::Program program;
    model::DesignInput stripped;
  };
  std::map<std::string, KernelCtx> cache;
  std::vector<std::string> kernel_order;

  for (const ManifestEntry& e : entries) {
    auto it = cache.find(e.pir_path);
    if (it == cache.end()) {
      KernelCtx ctx;
      ctx.program = pir::parse_pir_file(e.pir_path);
      graph::HarpGraph stripped = graph::strip_pragma_nodes(
          graph::build_graph(ctx.program, graph::default_assignment(ctx.program)));
      ctx.stripped = model::make_graph_input(stripped, feats);
      it = cache.emplace(e.pir_path, std::move(ctx)).first;
      kernel_order.push_back(e.pir_path);
    }
    const KernelCtx& ctx = it->second;

    std::string source = pir::render_design_source(ctx.program, e.assignment);
    token::TokenStream ts = token::tokenize(source, vocab, max_len);
    graph::HarpGraph g = graph::build_graph(ctx.program, e.assignment);
    std::vector<int> token_lines;
    token_lines.reserve(ts.tokens.size());
    for (const token::Token& tk : ts.tokens) token_lines.push_back(tk.line);
    auto alignment = graph::build_alignment(g, token_lines);

    Dataset::Item item;
    item.input = model::make_design_input(g, feats, ts, alignment);
    item.input.y = e.y;
    item.stripped = ctx.stripped;
    item.kernel = e.pir_path;
    item.id = fs::path(e.pir_path).stem().string() + "#" +
              std::to_string(ds.items.size());
    ds.items.push_back(std::move(item));
  }

  // Deterministic 70:15:15 split drawn inside every kernel independently.
  std::map<std::string, std::vector<int>> by_kernel;
  for (size_t i = 0; i < ds.items.size(); ++i)
    by_kernel[ds.items[i].kernel].push_back(static_cast<int>(i));
  Rng rng(seed);
  for (const std::string& k : kernel_order) {
    std::vector<int>& ix = by_kernel[k];
    rng.shuffle(ix);
    int n = static_cast<int>(ix.size());
    int n_train = static_cast<int>(std::lround(0.7 * n));
    int n_val = static_cast<int>(std::lround(0.15 * n));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    for (int i = 0; i < n; ++i) {
      if (i < n_train)
        ds.train_ix.push_back(ix[static_cast<size_t>(i)]);
      else if (i < n_train + n_val)
        ds.val_ix.push_back(ix[static_cast<size_t>(i)]);
      else
        ds.test_ix.push_back(ix[static_cast<size_t>(i)]);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics.

Rmse rmse(const std::vector<std::vector<double>>& pred,
          const std::vector<std::vector<double>>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("rmse: prediction/target count mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: no rows");
  Rmse r;
  for (int t = 0; t < 5; ++t) {
    double acc = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      double d = pred[i].at(static_cast<size_t>(t)) - truth[i].at(static_cast<size_t>(t));
      acc += d * d;
    }
    r.per_target[static_cast<size_t>(t)] = std::sqrt(acc / static_cast<double>(pred.size()));
    r.total += r.per_target[static_cast<size_t>(t)];
  }
  return r;
}

std::vector<double> mean_targets(const Dataset& ds, const std::vector<int>& ix) {
  if (ix.empty()) throw std::invalid_argument("mean targets: empty index set");
  std::vector<double> mean(5, 0.0);
  for (int i : ix) {
    const std::vector<double>& y = ds.items[static_cast<size_t>(i)].input.y;
    if (y.size() != 5) throw std::invalid_argument("mean targets: unlabeled design");
    for (int t = 0; t < 5; ++t) mean[static_cast<size_t>(t)] += y[static_cast<size_t>(t)];
  }
  for (double& m : mean) m /= static_cast<double>(ix.size());
  return mean;
}

// ---------------------------------------------------------------------------
// Reports.

namespace {

json rmse_json(const Rmse& r) {
  json j;
  j["per_target"] = r.per_target;
  j["total"] = r.total;
  return j;
}

}  // namespace

std::string TrainReport::to_json() const {
  json j;
  j["epoch_loss"] = epoch_loss;
  j["val"] = rmse_json(val);
  j["test"] = rmse_json(test);
  j["baseline_val"] = rmse_json(baseline_val);
  j["baseline_test"] = rmse_json(baseline_test);
  j["best_epoch"] = best_epoch;
  j["best_lr"] = best_lr;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["n_test"] = n_test;
  return j.dump(2) + "\n";
}

std::string TrainReport::to_csv() const {
  std::ostringstream out;
  out << "split,perf,util_lut,util_ff,util_dsp,util_bram,total\n";
  auto row = [&](const char* name, const Rmse& r) {
    out << name;
    for (double v : r.per_target) out << "," << v;
    out << "," << r.total << "\n";
  };
  row("val", val);
  row("test", test);
  row("baseline_val", baseline_val);
  row("baseline_test", baseline_test);
  return out.str();
}

// ---------------------------------------------------------------------------
// Fine-tuning.

void transfer_trunk(const model::Model& src, model::Model& dst) {
  const int64_t l1 = dst.config().L1;
  std::vector<std::string> prefixes = {"node_table", "jk_base."};
  for (int64_t l = 0; l < l1; ++l) prefixes.push_back("gnn" + std::to_string(l) + ".");

  auto is_graph_side = [&](const std::string& id) {
    for (const std::string& p : prefixes)
      if (id.compare(0, p.size(), p) == 0) return true;
    return false;
  };

  // The source store is const in spirit; find() needs a mutable ref.
  auto& src_ps = const_cast<model::Model&>(src).params();
  for (const auto& p : dst.params().all()) {
    if (!is_graph_side(p->id)) continue;
    ad::Param* s = src_ps.find(p->id);
    if (!s) throw std::invalid_argument("trunk transfer: missing parameter " + p->id);
    if (s->value.shape != p->value.shape)
      throw std::invalid_argument("trunk transfer: shape mismatch for " + p->id);
    p->value = s->value;
  }
}

namespace {

std::vector<ad::Array> snapshot_params(const ad::ParamStore& ps) {
  std::vector<ad::Array> out;
  out.reserve(ps.size());
  for (const auto& p : ps.all()) out.push_back(p->value);
  return out;
}

void restore_params(ad::ParamStore& ps, const std::vector<ad::Array>& snap) {
  size_t i = 0;
  for (const auto& p : ps.all()) p->value = snap[i++];
}

std::vector<double> predict_one(const model::Model& m, const model::DesignInput& in) {
  ad::Tape t;
  model::Encoded enc = m.encode(t, in, nullptr, false);
  ad::Value yhat = m.decode(t, enc);
  const ad::Array& a = t.val(yhat);
  std::vector<double> out(5);
  for (int i = 0; i < 5; ++i) out[static_cast<size_t>(i)] = a.at(i);
  return out;
}

Rmse eval_rmse(const model::Model& m, const Dataset& ds, const std::vector<int>& ix) {
  std::vector<std::vector<double>> pred, truth;
  for (int i : ix) {
    pred.push_back(predict_one(m, ds.items[static_cast<size_t>(i)].input));
    truth.push_back(ds.items[static_cast<size_t>(i)].input.y);
  }
  return rmse(pred, truth);
}

Rmse constant_rmse(const std::vector<double>& c, const Dataset& ds,
                   const std::vector<int>& ix) {
  std::vector<std::vector<double>> pred, truth;
  for (int i : ix) {
    pred.push_back(c);
    truth.push_back(ds.items[static_cast<size_t>(i)].input.y);
  }
  return rmse(pred, truth);
}

}  // namespace

FinetuneResult finetune(const model::ModelConfig& cfg, int token_vocab_size,
                        const Dataset& ds, const TrainConfig& tc,
                        const model::Model* trunk) {
  tc.validate();
  if (ds.train_ix.empty()) throw std::invalid_argument("finetune: empty training split");
  if (ds.val_ix.empty()) throw std::invalid_argument("finetune: empty validation split");
  for (const Dataset::Item& it : ds.items)
    if (it.input.y.size() != 5)
      throw std::invalid_argument("finetune: unlabeled design " + it.id);
  auto wall0 = std::chrono::steady_clock::now();

  // Frozen pragma-free reference embeddings, one array per design. Only
  // needed when a trunk drives the consistency term.
  std::vector<ad::Array> frozen;
  const bool guided = trunk != nullptr && cfg.gamma3 != 0;
  if (guided) {
    frozen.reserve(ds.items.size());
    for (const Dataset::Item& it : ds.items)
      frozen.push_back(trunk->node_embeddings(it.stripped));
  }

  struct RunOutcome {
    std::vector<ad::Array> best_weights;
    std::vector<double> epoch_loss;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
  };

  auto run_one_lr = [&](double lr, model::Model& m) {
    if (trunk) transfer_trunk(*trunk, m);
    RunOutcome out;
    out.best_weights = snapshot_params(m.params());
    if (tc.epochs == 0) {
      out.best_val = eval_rmse(m, ds, ds.val_ix).total;
      return out;
    }
    ad::AdamWOptions opt;
    opt.lr = lr;
    opt.weight_decay = tc.weight_decay;
    ad::AdamW adamw(opt);
    std::vector<int> order = ds.train_ix;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
      Rng shuffle_rng(tc.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch));
      shuffle_rng.shuffle(order);
      double loss_sum = 0;
      size_t at = 0;
      while (at < order.size()) {
        size_t end = std::min(order.size(), at + static_cast<size_t>(tc.batch));
        m.params().zero_grad();
        for (size_t b = at; b < end; ++b) {
          int i = order[b];
          const Dataset::Item& item = ds.items[static_cast<size_t>(i)];
          ad::Tape t;
          const ad::Array* ref = guided ? &frozen[static_cast<size_t>(i)] : nullptr;
          model::LossParts parts = m.total_loss(t, item.input, ref, nullptr, true);
          loss_sum += t.val(parts.total).at(0);
          ad::Value scaled = ad::scale(parts.total,
                                       1.0 / static_cast<double>(end - at));
          t.backward(scaled);
        }
        adamw.step(m.params(), tc.f32);
        at = end;
      }
      out.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
      double val_total = eval_rmse(m, ds, ds.val_ix).total;
      if (val_total < out.best_val) {
        out.best_val = val_total;
        out.best_epoch = epoch;
        out.best_weights = snapshot_params(m.params());
      }
    }
    return out;
  };

  // Small validation-selected learning-rate grid; earlier entries win ties.
  std::unique_ptr<model::Model> best_model;
  RunOutcome best_out;
  double best_lr = 0;
  for (double lr : tc.lr_grid) {
    auto m = std::make_unique<model::Model>(cfg, token_vocab_size);
    RunOutcome out = run_one_lr(lr, *m);
    if (!best_model || out.best_val < best_out.best_val) {
      best_out = std::move(out);
      best_model = std::move(m);
      best_lr = lr;
    }
  }
  restore_params(best_model->params(), best_out.best_weights);

  FinetuneResult res;
  res.report.epoch_loss = best_out.epoch_loss;
  res.report.best_epoch = best_out.best_epoch;
  res.report.best_lr = best_lr;
  res.report.n_train = static_cast<int>(ds.train_ix.size());
  res.report.n_val = static_cast<int>(ds.val_ix.size());
  res.report.n_test = static_cast<int>(ds.test_ix.size());
  res.report.val = eval_rmse(*best_model, ds, ds.val_ix);
  std::vector<double> c = mean_targets(ds, ds.train_ix);
  res.report.baseline_val = constant_rmse(c, ds, ds.val_ix);
  if (!ds.test_ix.empty()) {
    res.report.test = eval_rmse(*best_model, ds, ds.test_ix);
    res.report.baseline_test = constant_rmse(c, ds, ds.test_ix);
  }
  std::chrono::duration<double> wall = std::chrono::steady_clock::now() - wall0;
  res.report.wall_seconds = wall.count();
  res.model = std::move(best_model);
  return res;
}


}  // namespace progsg::train
