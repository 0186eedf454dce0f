#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "progsg/pir.hpp"

namespace progsg::synthlab {

// Shape of one generated loop-nest kernel. Every loop level carries a
// PIPELINE, TILE, and PARALLEL placeholder, so the nest spans a full
// configuration space on its own.
struct KernelSpec {
  std::string name = "kernel";
  int depth = 2;                   // loop nesting depth, 1..3
  std::vector<int64_t> trips;      // trip count per level, outermost first
  int body_ops = 4;                // arithmetic instructions in the inner body
  int arrays = 2;                  // distinct arrays read; the first is written

  void validate() const;  // throws std::invalid_argument
};

// Closed-form cost surface used to label generated designs. Latency walks the
// nest from the innermost level outward; utilization scales with the total
// parallel replication and the tiled buffer footprint.
struct CostModel {
  std::map<std::string, int64_t> op_cycles;  // per opcode name
  int64_t lut_per_op = 60;
  int64_t ff_per_op = 40;
  int64_t dsp_per_mul = 3;
  int64_t dsp_per_div = 8;
  int64_t elems_per_bram = 512;
  int64_t avail_lut = 50000;
  int64_t avail_ff = 80000;
  int64_t avail_dsp = 600;
  int64_t avail_bram = 280;

  static CostModel defaults();
  int64_t cycles(pir::Opcode op) const;

  std::string to_json() const;
  static CostModel from_json(const std::string& text);
};

// Deterministic kernel text for the given shape; the text is both the loadable
// program and the design source, so instruction locations point into it.
std::string gen_kernel(const KernelSpec& spec, uint64_t seed);

struct OracleEval {
  double latency = 0;           // cycles for one kernel invocation
  std::array<double, 4> util{};  // LUT, FF, DSP, BRAM fractions of available
  bool fits = true;              // every utilization at most 1
};

// Analytic quality of one pragma assignment. Requires a single loop nest;
// throws std::invalid_argument otherwise.
OracleEval oracle_eval(const pir::Program& p, const pir::Assignment& a,
                       const CostModel& cost);

struct GenOptions {
  int n_kernels = 20;
  int designs_per_kernel = 10;
  uint64_t seed = 1;
  int min_depth = 1, max_depth = 3;
  std::vector<int64_t> trip_choices = {4, 8, 16};
  int min_body_ops = 2, max_body_ops = 5;
  int min_arrays = 1, max_arrays = 3;
  int label_pairs = 40;  // relation-label pairs sampled per task
  CostModel cost = CostModel::defaults();
  int threads = 1;
  // Emit raw (latency, utilization) labels instead of normalized targets.
  bool raw_targets = false;
};

struct GenSummary {
  int kernels = 0;
  int designs = 0;
  int skipped_unfit = 0;  // sampled designs rejected for overflowing the chip
  std::string manifest_path;
  std::string corpus_path;
  std::string vocab_path;
};

// Write a complete desk-scale dataset under out_dir:
//   kernels/<name>.pir      generated kernel texts
//   manifest.jsonl          labeled designs for regression training
//   corpus.jsonl            pragma-free graphs + relation labels for pretraining
//   vocab.txt               token vocabulary over all kernel texts
//   baselines.json          per-kernel reference latency (default assignment)
//   cost_model.json         the cost surface the labels came from
GenSummary gen_dataset(const GenOptions& opt, const std::string& out_dir);

}  // namespace progsg::synthlab
