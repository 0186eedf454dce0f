#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "progsg/adamw.hpp"
#include "progsg/train.hpp"

namespace progsg::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::string PretrainReport::to_json() const {
  json j;
  j["epoch_loss"] = epoch_loss;
  j["accuracy"] = accuracy;
  j["auc"] = auc;
  j["best_epoch"] = best_epoch;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  return j.dump(2) + "\n";
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

}  // namespace

// ---------------------------------------------------------------------------
// Pretraining.

std::vector<CorpusGraph> load_corpus(const std::string& path,
                                     const graph::NodeFeatureVocab& feats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path);
  fs::path base = fs::path(path).parent_path();
  std::vector<CorpusGraph> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    fs::path p = j.at("pir").get<std::string>();
    std::string pir_path = p.is_absolute() ? p.string() : (base / p).string();

    pir::Program prog = pir::parse_pir_file(pir_path);
    graph::HarpGraph g = graph::strip_pragma_nodes(
        graph::build_graph(prog, graph::default_assignment(prog)));

    CorpusGraph cg;
    cg.input = model::make_graph_input(g, feats);
    cg.id = pir_path;
    for (auto& [task_name, arr] : j.at("labels").items()) {
      dataflow::Task task = dataflow::task_from_name(task_name);
      dataflow::LabelSet ls;
      ls.task = task;
      for (const json& row : arr) {
        dataflow::LabelSet::Pair pr;
        pr.i = row.at(0).get<int>();
        pr.j = row.at(1).get<int>();
        pr.y = static_cast<uint8_t>(row.at(2).get<int>());
        ls.pairs.push_back(pr);
      }
      cg.labels[task] = std::move(ls);
    }
    out.push_back(std::move(cg));
  }
  return out;
}

void PretrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("pretrain config: negative epochs");
  if (batch < 1) throw std::invalid_argument("pretrain config: batch must be positive");
  if (lr <= 0) throw std::invalid_argument("pretrain config: lr must be positive");
  if (val_fraction < 0 || val_fraction >= 1)
    throw std::invalid_argument("pretrain config: val fraction must be in [0, 1)");
}

namespace {

// Joint relation loss of one graph; the tasks contribute symmetrically.
ad::Value corpus_loss(const model::Model& m, ad::Tape& t, const CorpusGraph& cg) {
  auto [node_emb, h_graph] = m.encode_graph(t, cg.input);
  (void)h_graph;
  ad::Value total = t.scalar(0.0);
  for (const auto& [task, ls] : cg.labels) {
    if (ls.pairs.empty()) continue;
    std::vector<std::pair<int, int>> pairs;
    std::vector<uint8_t> labels;
    pairs.reserve(ls.pairs.size());
    for (const auto& pr : ls.pairs) {
      pairs.emplace_back(pr.i, pr.j);
      labels.push_back(pr.y);
    }
    ad::Value probs = m.pretrain_probs(t, node_emb, pairs, task);
    total = ad::add(total, m.pretrain_pair_loss(t, probs, labels));
  }
  return total;
}

struct TaskScores {
  std::vector<double> p;
  std::vector<uint8_t> y;
};

// Mann-Whitney AUC with midranks for ties; degenerate label sets score 0.5.
double auc_of(const TaskScores& s) {
  size_t n_pos = 0;
  for (uint8_t v : s.y) n_pos += v;
  size_t n_neg = s.y.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  std::vector<size_t> ix(s.p.size());
  for (size_t i = 0; i < ix.size(); ++i) ix[i] = i;
  std::sort(ix.begin(), ix.end(), [&](size_t a, size_t b) { return s.p[a] < s.p[b]; });
  double rank_sum_pos = 0;
  size_t i = 0;
  while (i < ix.size()) {
    size_t j = i;
    while (j < ix.size() && s.p[ix[j]] == s.p[ix[i]]) ++j;
    double midrank = 0.5 * static_cast<double>(i + j + 1);  // 1-based average
    for (size_t k = i; k < j; ++k)
      if (s.y[ix[k]]) rank_sum_pos += midrank;
    i = j;
  }
  double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

PretrainReport pretrain(model::Model& m, const std::vector<CorpusGraph>& corpus,
                        const PretrainConfig& pc) {
  pc.validate();
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  auto wall0 = std::chrono::steady_clock::now();

  // Graph-level split; a one-graph corpus validates on its training graph.
  std::vector<int> ix(corpus.size());
  for (size_t i = 0; i < ix.size(); ++i) ix[i] = static_cast<int>(i);
  Rng split_rng(pc.seed);
  split_rng.shuffle(ix);
  std::vector<int> train_ix, val_ix;
  if (corpus.size() < 2) {
    train_ix = ix;
    val_ix = ix;
  } else {
    int n_val = std::max(1, static_cast<int>(std::lround(
                                pc.val_fraction * static_cast<double>(corpus.size()))));
    n_val = std::min(n_val, static_cast<int>(corpus.size()) - 1);
    val_ix.assign(ix.begin(), ix.begin() + n_val);
    train_ix.assign(ix.begin() + n_val, ix.end());
  }

  auto mean_val_loss = [&] {
    double sum = 0;
    for (int i : val_ix) {
      ad::Tape t;
      sum += t.val(corpus_loss(m, t, corpus[static_cast<size_t>(i)])).at(0);
    }
    return sum / static_cast<double>(val_ix.size());
  };

  PretrainReport rep;
  rep.n_train = static_cast<int>(train_ix.size());
  rep.n_val = static_cast<int>(val_ix.size());

  ad::AdamWOptions opt;
  opt.lr = pc.lr;
  ad::AdamW adamw(opt);
  std::vector<ad::Array> best_weights = snapshot_params(m.params());
  double best_val = mean_val_loss();
  rep.best_epoch = -1;

  std::vector<int> order = train_ix;
  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    Rng shuffle_rng(pc.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    size_t at = 0;
    while (at < order.size()) {
      size_t end = std::min(order.size(), at + static_cast<size_t>(pc.batch));
      m.params().zero_grad();
      for (size_t b = at; b < end; ++b) {
        ad::Tape t;
        ad::Value loss = corpus_loss(m, t, corpus[static_cast<size_t>(order[b])]);
        loss_sum += t.val(loss).at(0);
        t.backward(ad::scale(loss, 1.0 / static_cast<double>(end - at)));
      }
      adamw.step(m.params());
      at = end;
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    double val = mean_val_loss();
    if (val < best_val) {
      best_val = val;
      rep.best_epoch = epoch;
      best_weights = snapshot_params(m.params());
    }
  }
  restore_params(m.params(), best_weights);

  // Validation accuracy and ranking quality per task, pairs pooled over graphs.
  std::map<dataflow::Task, TaskScores> scores;
  for (int i : val_ix) {
    const CorpusGraph& cg = corpus[static_cast<size_t>(i)];
    ad::Tape t;
    auto [node_emb, h_graph] = m.encode_graph(t, cg.input);
    (void)h_graph;
    for (const auto& [task, ls] : cg.labels) {
      if (ls.pairs.empty()) continue;
      std::vector<std::pair<int, int>> pairs;
      for (const auto& pr : ls.pairs) pairs.emplace_back(pr.i, pr.j);
      ad::Value probs = m.pretrain_probs(t, node_emb, pairs, task);
      const ad::Array& pa = t.val(probs);
      TaskScores& ts = scores[task];
      for (size_t r = 0; r < ls.pairs.size(); ++r) {
        ts.p.push_back(pa.at(static_cast<int64_t>(r), 0));
        ts.y.push_back(ls.pairs[r].y);
      }
    }
  }
  for (const auto& [task, ts] : scores) {
    size_t hit = 0;
    for (size_t r = 0; r < ts.p.size(); ++r)
      hit += (ts.p[r] > 0.5) == (ts.y[r] != 0);
    rep.accuracy[dataflow::task_name(task)] =
        static_cast<double>(hit) / static_cast<double>(ts.p.size());
    rep.auc[dataflow::task_name(task)] = auc_of(ts);
  }

  std::chrono::duration<double> wall = std::chrono::steady_clock::now() - wall0;
  rep.wall_seconds = wall.count();
  return rep;
}

}  // namespace progsg::train
