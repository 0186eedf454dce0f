#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "progsg/dataflow.hpp"
#include "progsg/graph.hpp"
#include "progsg/model.hpp"
#include "progsg/token.hpp"

namespace progsg::train {

// Regression-target scaling. Index 0 is performance, log2(1 + t_ref/latency),
// so faster designs score higher and the reference design scores exactly 1.
// Indices 1..4 are LUT/FF/DSP/BRAM utilization clamped to [0, 1.5].
std::vector<double> normalize_targets(double latency_cycles,
                                      const std::array<double, 4>& utils,
                                      double t_ref);
double latency_from_perf(double perf, double t_ref);  // inverse of index 0

// One labeled (or unlabeled) design: a kernel file plus a pragma assignment.
struct ManifestEntry {
  std::string pir_path;
  pir::Assignment assignment;
  std::vector<double> y;  // 5 targets, or empty for prediction-only entries
};

// JSON-lines manifest: {"pir": path, "assignment": object-or-path, "y": [5]?}.
// Relative pir paths resolve against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::string& path);

struct TrainConfig {
  int epochs = 200;
  int batch = 8;
  std::vector<double> lr_grid = {1e-3};  // best grid point picked on validation
  double weight_decay = 0;
  uint64_t seed = 1;
  bool f32 = false;  // round weights to float32 after every optimizer step

  void validate() const;
};

// Designs grouped by kernel, with a deterministic 70:15:15 split drawn
// independently inside every kernel's design list.
struct Dataset {
  struct Item {
    model::DesignInput input;          // full graph + tokenized source
    model::DesignInput stripped;       // pragma-free graph, no source side
    std::string kernel;                // grouping key (the pir path)
    std::string id;                    // stable per-design identifier
  };
  std::vector<Item> items;
  std::vector<int> train_ix, val_ix, test_ix;
};

Dataset load_dataset(const std::vector<ManifestEntry>& entries,
                     const graph::NodeFeatureVocab& feats,
                     const token::Vocabulary& vocab, int max_len, uint64_t seed);

// Root-mean-squared error per target over (prediction, target) rows, plus
// their sum as the headline score.
struct Rmse {
  std::array<double, 5> per_target{};
  double total = 0;
};
Rmse rmse(const std::vector<std::vector<double>>& pred,
          const std::vector<std::vector<double>>& truth);

// Constant predictor fixed at the per-target mean of the training targets.
std::vector<double> mean_targets(const Dataset& ds, const std::vector<int>& ix);

struct TrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  Rmse val, test;
  Rmse baseline_val, baseline_test;  // constant mean-of-train predictor
  int best_epoch = -1;               // epoch whose weights were kept
  double best_lr = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  double wall_seconds = 0;  // informational only, never serialized

  std::string to_json() const;
  std::string to_csv() const;
};

struct FinetuneResult {
  std::unique_ptr<model::Model> model;
  TrainReport report;
};

// Gradient training of the regression model on the dataset's train split,
// keeping the weights of the epoch with the lowest validation RMSE total.
// When trunk is given, its graph-side weights seed the model and its frozen
// pragma-free node embeddings drive the consistency term; without a trunk
// that term is inactive regardless of its coefficient.
FinetuneResult finetune(const model::ModelConfig& cfg, int token_vocab_size,
                        const Dataset& ds, const TrainConfig& tc,
                        const model::Model* trunk = nullptr);

// Copy the graph-encoder weights (embedding table, message-passing layers,
// base aggregation head) from src into dst by parameter name.
void transfer_trunk(const model::Model& src, model::Model& dst);

// One pragma-free graph with its four relation label sets.
struct CorpusGraph {
  model::DesignInput input;
  std::map<dataflow::Task, dataflow::LabelSet> labels;
  std::string id;
};

// JSON-lines corpus: {"pir": path, "labels": {task: [[i,j,y], ...]}}.
std::vector<CorpusGraph> load_corpus(const std::string& path,
                                     const graph::NodeFeatureVocab& feats);

struct PretrainConfig {
  int epochs = 50;
  int batch = 4;
  double lr = 1e-3;
  double val_fraction = 0.2;
  uint64_t seed = 1;

  void validate() const;
};

struct PretrainReport {
  std::vector<double> epoch_loss;  // mean joint loss per epoch
  std::map<std::string, double> accuracy;  // per task, validation graphs
  std::map<std::string, double> auc;       // per task, validation graphs
  int best_epoch = -1;
  int n_train = 0, n_val = 0;
  double wall_seconds = 0;  // informational only, never serialized

  std::string to_json() const;
};

// Joint training of the graph encoder on all four relation-prediction tasks,
// keeping the weights of the epoch with the lowest mean validation loss.
PretrainReport pretrain(model::Model& m, const std::vector<CorpusGraph>& corpus,
                        const PretrainConfig& pc);

}  // namespace progsg::train
