#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "progsg/pir.hpp"
#include "progsg/rng.hpp"

namespace progsg::dse {

// One tunable pragma placeholder and its value domain.
struct Dimension {
  std::string placeholder;
  pir::PragmaKind kind = pir::PragmaKind::parallel;
  std::string loop_id;  // loop whose header carries the pragma, "" when none
  int64_t trip = -1;    // that loop's trip count, -1 when unknown
  std::vector<std::string> domain;
};

// The configuration space spanned by a program's pragma placeholders,
// dimensions in pragma declaration order.
struct DesignSpace {
  std::vector<Dimension> dims;

  int64_t raw_size() const;  // product of domain sizes, before any filtering
};

DesignSpace make_space(const pir::Program& p);

// Feasibility rules applied before a point is ever scored:
//  - TILE and PARALLEL factors must divide their loop's trip count when the
//    trip count is statically known;
//  - a loop pipelined "fg" is fully unrolled downstream, so it cannot also
//    carry a nonunit TILE factor.
bool valid_assignment(const DesignSpace& s, const pir::Assignment& a);

enum class Order { seeded_random, lexicographic };
const char* order_name(Order o);
Order order_from_name(const std::string& s);

// Lazy deterministic walk over the valid points of a space. seeded_random
// visits a fixed-seed uniform permutation of the raw index space; memory
// stays proportional to the number of points drawn, not to the space.
class AssignmentStream {
 public:
  AssignmentStream(const DesignSpace& s, Order order, uint64_t seed);

  // Next valid assignment, or nullopt once the space is exhausted.
  std::optional<pir::Assignment> next();

 private:
  pir::Assignment decode(int64_t index) const;
  int64_t permuted(int64_t t);

  const DesignSpace* space_;
  Order order_;
  int64_t n_ = 0;
  int64_t cursor_ = 0;
  std::map<int64_t, int64_t> swaps_;  // sparse Fisher-Yates state
  Rng rng_;
};

// Search budget; at least one limit must be set. A zero field alone means
// "no limit of that kind".
struct Budget {
  int64_t max_evals = 0;
  double max_seconds = 0;
};

// Maps an assignment to the five predicted targets; index 0 is the
// performance score (higher is better) used for ranking.
using Scorer = std::function<std::vector<double>(const pir::Assignment&)>;

struct Candidate {
  pir::Assignment assignment;
  std::vector<double> yhat;
  std::vector<double> ytrue;  // filled only when a reference evaluator is given
  int64_t seq = 0;            // enumeration position, the deterministic tie-break
};

struct DseResult {
  int64_t evaluated = 0;         // scored points; validity rejects don't count
  double elapsed_seconds = 0;    // informational only, never serialized
  std::vector<Candidate> top_k;  // by yhat[0] descending, ties by seq ascending
  int64_t budget_evals = 0;
  double budget_seconds = 0;
  std::string order;
  uint64_t seed = 0;
};

// Score points from the stream until the budget runs out, keep the best k.
// threads > 1 scores batches concurrently with a deterministic result.
DseResult explore(const DesignSpace& space, const Scorer& score, const Budget& budget,
                  int64_t k, Order order = Order::seeded_random, uint64_t seed = 1,
                  const Scorer& true_eval = nullptr, int threads = 1);

// Stage one ranks the whole budgeted sample with the cheap scorer and keeps
// the best keep_full; stage two rescores those with the full scorer and
// returns the best k. evaluated counts both stages.
DseResult explore_two_level(const DesignSpace& space, const Scorer& cheap,
                            const Scorer& full, int64_t keep_full, int64_t k,
                            const Budget& budget, Order order = Order::seeded_random,
                            uint64_t seed = 1, const Scorer& true_eval = nullptr,
                            int threads = 1);

struct SpeedupReport {
  std::vector<double> per_kernel;  // baseline latency / found latency
  double geomean = 0;
};

SpeedupReport speedup_report(const std::vector<double>& found_latency,
                             const std::vector<double>& baseline_latency);

// Deterministic serializations of a search result (elapsed time excluded).
std::string result_json(const DseResult& r);
std::string result_csv(const DseResult& r);

}  // namespace progsg::dse
