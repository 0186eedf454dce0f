#include "progsg/dse.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace progsg::dse {

using nlohmann::json;

int64_t DesignSpace::raw_size() const {
  int64_t n = 1;
  for (const Dimension& d : dims) {
    if (d.domain.empty()) return 0;
    int64_t size = static_cast<int64_t>(d.domain.size());
    if (n > (int64_t{1} << 62) / size)
      throw std::invalid_argument("design space too large to index");
    n *= size;
  }
  return n;
}

DesignSpace make_space(const pir::Program& p) {
  DesignSpace s;
  for (const pir::PragmaDecl& d : p.pragmas) {
    Dimension dim;
    dim.placeholder = d.placeholder;
    dim.kind = d.kind;
    dim.domain = d.domain;
    if (const pir::Loop* l = p.loop_of_block(d.attach_block)) {
      dim.loop_id = l->id;
      dim.trip = l->trip;
    }
    s.dims.push_back(std::move(dim));
  }
  return s;
}

namespace {

int64_t int_factor(const std::string& v) {
  try {
    size_t used = 0;
    int64_t x = std::stoll(v, &used);
    return used == v.size() && x >= 1 ? x : -1;
  } catch (...) {
    return -1;
  }
}

}  // namespace

bool valid_assignment(const DesignSpace& s, const pir::Assignment& a) {
  // Per-loop view of the chosen factors.
  std::map<std::string, std::pair<int64_t, int64_t>> trip_and_tile;  // loop -> (trip, tile)
  std::map<std::string, std::string> pipe;                           // loop -> mode
  for (const Dimension& d : s.dims) {
    auto it = a.find(d.placeholder);
    if (it == a.end()) return false;
    if (std::find(d.domain.begin(), d.domain.end(), it->second) == d.domain.end())
      return false;
    if (d.loop_id.empty()) continue;
    if (d.kind == pir::PragmaKind::pipeline) {
      pipe[d.loop_id] = it->second;
      continue;
    }
    int64_t f = int_factor(it->second);
    if (f < 1) return false;
    // Factors on loops with known trip counts must divide them evenly.
    if (d.trip > 0 && d.trip % f != 0) return false;
    auto& tt = trip_and_tile[d.loop_id];
    tt.first = d.trip;
    if (d.kind == pir::PragmaKind::tile) tt.second = std::max<int64_t>(tt.second, f);
  }
  // A fully unrolled ("fg") loop leaves nothing to tile.
  for (const auto& [loop, mode] : pipe) {
    if (mode != "fg") continue;
    auto it = trip_and_tile.find(loop);
    if (it != trip_and_tile.end() && it->second.second > 1) return false;
  }
  return true;
}

const char* order_name(Order o) {
  return o == Order::seeded_random ? "seeded_random" : "lexicographic";
}

Order order_from_name(const std::string& s) {
  if (s == "seeded_random") return Order::seeded_random;
  if (s == "lexicographic") return Order::lexicographic;
  throw std::invalid_argument("unknown enumeration order: " + s);
}

AssignmentStream::AssignmentStream(const DesignSpace& s, Order order, uint64_t seed)
    : space_(&s), order_(order), n_(s.raw_size()), rng_(seed) {}

pir::Assignment AssignmentStream::decode(int64_t index) const {
  // Mixed radix, first dimension most significant.
  pir::Assignment a;
  for (size_t i = space_->dims.size(); i-- > 0;) {
    const Dimension& d = space_->dims[i];
    int64_t size = static_cast<int64_t>(d.domain.size());
    a[d.placeholder] = d.domain[static_cast<size_t>(index % size)];
    index /= size;
  }
  return a;
}

int64_t AssignmentStream::permuted(int64_t t) {
  // Sparse Fisher-Yates: draw position t of a uniform permutation of [0, n)
  // while storing only the slots touched so far.
  int64_t j = t + static_cast<int64_t>(rng_.below(static_cast<uint64_t>(n_ - t)));
  auto value_at = [&](int64_t k) {
    auto it = swaps_.find(k);
    return it == swaps_.end() ? k : it->second;
  };
  int64_t vt = value_at(t), vj = value_at(j);
  swaps_[j] = vt;
  swaps_.erase(t);  // position t is never revisited
  return vj;
}

std::optional<pir::Assignment> AssignmentStream::next() {
  while (cursor_ < n_) {
    int64_t index = order_ == Order::lexicographic ? cursor_ : permuted(cursor_);
    ++cursor_;
    pir::Assignment a = decode(index);
    if (valid_assignment(*space_, a)) return a;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Search.

namespace {

bool better(const Candidate& x, const Candidate& y) {
  if (x.yhat[0] != y.yhat[0]) return x.yhat[0] > y.yhat[0];
  return x.seq < y.seq;
}

void keep_top(std::vector<Candidate>& best, int64_t k) {
  std::sort(best.begin(), best.end(), better);
  if (static_cast<int64_t>(best.size()) > k) best.resize(static_cast<size_t>(k));
}

// Scores a batch of assignments into slot order, optionally on worker threads.
std::vector<Candidate> score_batch(std::vector<Candidate> batch, const Scorer& score,
                                   int threads) {
  if (threads <= 1 || batch.size() <= 1) {
    for (Candidate& c : batch) c.yhat = score(c.assignment);
    return batch;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < batch.size(); i = next.fetch_add(1))
        batch[i].yhat = score(batch[i].assignment);
    });
  for (auto& th : pool) th.join();
  return batch;
}

void check_args(const Budget& budget, int64_t k) {
  if (k < 1) throw std::invalid_argument("top-k size must be positive");
  if (budget.max_evals <= 0 && budget.max_seconds <= 0)
    throw std::invalid_argument("empty budget");
}

// Runs the budgeted scoring loop and returns all retained candidates.
std::vector<Candidate> run_search(const DesignSpace& space, const Scorer& score,
                                  const Budget& budget, int64_t keep, Order order,
                                  uint64_t seed, int threads, int64_t* evaluated) {
  AssignmentStream stream(space, order, seed);
  auto t0 = std::chrono::steady_clock::now();
  auto out_of_time = [&] {
    if (budget.max_seconds <= 0) return false;
    std::chrono::duration<double> el = std::chrono::steady_clock::now() - t0;
    return el.count() >= budget.max_seconds;
  };

  std::vector<Candidate> best;
  int64_t seq = 0;
  const int64_t batch_size = std::max(1, threads) * 8;
  bool exhausted = false;
  while (!exhausted && !out_of_time() &&
         (budget.max_evals <= 0 || seq < budget.max_evals)) {
    std::vector<Candidate> batch;
    while (static_cast<int64_t>(batch.size()) < batch_size &&
           (budget.max_evals <= 0 || seq < budget.max_evals)) {
      auto a = stream.next();
      if (!a) {
        exhausted = true;
        break;
      }
      Candidate c;
      c.assignment = std::move(*a);
      c.seq = seq++;
      batch.push_back(std::move(c));
    }
    if (batch.empty()) break;
    batch = score_batch(std::move(batch), score, threads);
    for (Candidate& c : batch) best.push_back(std::move(c));
    keep_top(best, keep);
  }
  *evaluated = seq;
  return best;
}

}  // namespace

DseResult explore(const DesignSpace& space, const Scorer& score, const Budget& budget,
                  int64_t k, Order order, uint64_t seed, const Scorer& true_eval,
                  int threads) {
  check_args(budget, k);
  auto t0 = std::chrono::steady_clock::now();
  DseResult r;
  r.top_k = run_search(space, score, budget, k, order, seed, threads, &r.evaluated);
  if (true_eval)
    for (Candidate& c : r.top_k) c.ytrue = true_eval(c.assignment);
  std::chrono::duration<double> el = std::chrono::steady_clock::now() - t0;
  r.elapsed_seconds = el.count();
  r.budget_evals = budget.max_evals;
  r.budget_seconds = budget.max_seconds;
  r.order = order_name(order);
  r.seed = seed;
  return r;
}

DseResult explore_two_level(const DesignSpace& space, const Scorer& cheap,
                            const Scorer& full, int64_t keep_full, int64_t k,
                            const Budget& budget, Order order, uint64_t seed,
                            const Scorer& true_eval, int threads) {
  check_args(budget, k);
  if (keep_full < k)
    throw std::invalid_argument("second stage must keep at least top-k candidates");
  auto t0 = std::chrono::steady_clock::now();

  DseResult r;
  std::vector<Candidate> shortlist =
      run_search(space, cheap, budget, keep_full, order, seed, threads, &r.evaluated);

  // Rescore the shortlist with the full model; candidates keep their original
  // enumeration positions so ties resolve exactly as a one-level run would.
  for (Candidate& c : shortlist) c.yhat.clear();
  shortlist = score_batch(std::move(shortlist), full, threads);
  r.evaluated += static_cast<int64_t>(shortlist.size());
  keep_top(shortlist, k);
  r.top_k = std::move(shortlist);
  if (true_eval)
    for (Candidate& c : r.top_k) c.ytrue = true_eval(c.assignment);

  std::chrono::duration<double> el = std::chrono::steady_clock::now() - t0;
  r.elapsed_seconds = el.count();
  r.budget_evals = budget.max_evals;
  r.budget_seconds = budget.max_seconds;
  r.order = order_name(order);
  r.seed = seed;
  return r;
}

SpeedupReport speedup_report(const std::vector<double>& found_latency,
                             const std::vector<double>& baseline_latency) {
  if (found_latency.empty()) throw std::invalid_argument("speedup report: no kernels");
  if (found_latency.size() != baseline_latency.size())
    throw std::invalid_argument("speedup report: kernel count mismatch");
  SpeedupReport rep;
  double log_sum = 0;
  for (size_t i = 0; i < found_latency.size(); ++i) {
    if (found_latency[i] <= 0 || baseline_latency[i] <= 0)
      throw std::invalid_argument("speedup report: latencies must be positive");
    double s = baseline_latency[i] / found_latency[i];
    rep.per_kernel.push_back(s);
    log_sum += std::log(s);
  }
  rep.geomean = std::exp(log_sum / static_cast<double>(found_latency.size()));
  return rep;
}

namespace {

json candidate_json(const Candidate& c) {
  json j;
  j["assignment"] = json::object();
  for (const auto& [k, v] : c.assignment) j["assignment"][k] = v;
  j["yhat"] = c.yhat;
  if (!c.ytrue.empty()) j["ytrue"] = c.ytrue;
  j["seq"] = c.seq;
  return j;
}

}  // namespace

std::string result_json(const DseResult& r) {
  json j;
  j["evaluated"] = r.evaluated;
  j["budget_evals"] = r.budget_evals;
  j["budget_seconds"] = r.budget_seconds;
  j["order"] = r.order;
  j["seed"] = r.seed;
  j["top_k"] = json::array();
  for (const Candidate& c : r.top_k) j["top_k"].push_back(candidate_json(c));
  return j.dump(2) + "\n";
}

std::string result_csv(const DseResult& r) {
  std::ostringstream out;
  out << "rank,seq,perf,util_lut,util_ff,util_dsp,util_bram,assignment\n";
  int rank = 1;
  for (const Candidate& c : r.top_k) {
    out << rank++ << "," << c.seq;
    for (size_t i = 0; i < 5; ++i)
      out << "," << (i < c.yhat.size() ? std::to_string(c.yhat[i]) : "");
    std::string a;
    for (const auto& [k, v] : c.assignment) {
      if (!a.empty()) a += " ";
      a += k + "=" + v;
    }
    out << "," << a << "\n";
  }
  return out.str();
}

}  // namespace progsg::dse
