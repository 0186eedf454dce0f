#include <stdexcept>

#include "progsg/model.hpp"

namespace progsg::model {

using ad::Array;
using ad::Tape;
using ad::Value;

Value Model::task_loss(Tape& t, Value yhat, const std::vector<double>& y) const {
  if (y.size() != 5) throw std::invalid_argument("task_loss: expected 5 targets");
  return ad::sq_err_sum(yhat, t.constant(Array({5}, std::vector<double>(y))));
}

std::pair<Value, Value> Model::align_losses(Tape& t, const Encoded& enc,
                                            const DesignInput& in) const {
  if (!enc.h_src.ok() || !enc.h_graph.ok())
    throw std::invalid_argument("align_losses: both summaries required");
  Value one = t.scalar(1.0);
  Value coarse = ad::sub(one, ad::cosine(enc.h_src, enc.h_graph));

  Value fine;
  if (in.align_pairs.empty() || !enc.token_emb.ok() || !enc.node_emb.ok()) {
    fine = t.scalar(0.0);
  } else {
    const int64_t n_tokens = t.val(enc.token_emb).rows();
    std::vector<int64_t> nid, tid;
    for (auto [n, k] : in.align_pairs) {
      if (n < 0 || n >= t.val(enc.node_emb).rows() || k < 0 || k >= n_tokens)
        throw std::invalid_argument("align_losses: pair index out of range");
      nid.push_back(n);
      tid.push_back(k);
    }
    Value pn = ad::linear(ad::gather_rows(enc.node_emb, nid),
                          t.leaf(*proj_node_.w), t.leaf(*proj_node_.b));
    Value pt = ad::linear(ad::gather_rows(enc.token_emb, tid),
                          t.leaf(*proj_tok_.w), t.leaf(*proj_tok_.b));
    fine = ad::sub(one, ad::reduce_mean(ad::rows_cosine(pn, pt), -1));
  }
  return {fine, coarse};
}

Value Model::guide_loss(Tape& t, const Encoded& enc, const Array& frozen) const {
  if (!enc.node_emb.ok())
    throw std::invalid_argument("guide_loss: graph side not encoded");
  if (frozen.ndim() != 2 || frozen.cols() != cfg_.d)
    throw std::invalid_argument("guide_loss: reference shape mismatch");
  const int64_t shared = frozen.rows();
  if (shared == 0 || shared > t.val(enc.node_emb).rows())
    throw std::invalid_argument("guide_loss: reference row count out of range");
  std::vector<int64_t> ids(static_cast<size_t>(shared));
  for (int64_t i = 0; i < shared; ++i) ids[static_cast<size_t>(i)] = i;
  Value live = ad::gather_rows(enc.node_emb, ids);
  if (!cfg_.g_cont_identity) live = run_mlp(t, live, g_cont_);
  Value rc = ad::rows_cosine(live, t.constant(frozen));
  return ad::sub(t.scalar(1.0), ad::reduce_mean(rc, -1));
}

LossParts Model::total_loss(Tape& t, const DesignInput& in, const Array* frozen,
                            AttnCapture* capture, bool train_mode) const {
  if (in.y.size() != 5)
    throw std::invalid_argument("total_loss: design is unlabeled");
  Encoded enc = encode(t, in, capture, train_mode);
  LossParts parts;
  parts.task = task_loss(t, decode(t, enc), in.y);
  parts.total = parts.task;
  if (cfg_.modality == Modality::both) {
    auto [fine, coarse] = align_losses(t, enc, in);
    parts.fine = fine;
    parts.coarse = coarse;
  } else {
    parts.fine = t.scalar(0.0);
    parts.coarse = t.scalar(0.0);
  }
  if (cfg_.gamma1 != 0)
    parts.total = ad::add(parts.total, ad::scale(parts.fine, cfg_.gamma1));
  if (cfg_.gamma2 != 0)
    parts.total = ad::add(parts.total, ad::scale(parts.coarse, cfg_.gamma2));
  if (frozen != nullptr && cfg_.modality != Modality::src_only) {
    parts.guide = guide_loss(t, enc, *frozen);
    if (cfg_.gamma3 != 0)
      parts.total = ad::add(parts.total, ad::scale(parts.guide, cfg_.gamma3));
  } else {
    parts.guide = t.scalar(0.0);
  }
  return parts;
}

Value Model::pretrain_probs(Tape& t, Value node_emb,
                            const std::vector<std::pair<int, int>>& pairs,
                            dataflow::Task task) const {
  if (pairs.empty()) throw std::invalid_argument("pretrain_probs: no pairs");
  const int64_t n = t.val(node_emb).rows();
  std::vector<int64_t> a, b;
  for (auto [i, j] : pairs) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw std::invalid_argument("pretrain_probs: pair index out of range");
    a.push_back(i);
    b.push_back(j);
  }
  Value cat = ad::concat({ad::gather_rows(node_emb, a), ad::gather_rows(node_emb, b)}, 1);
  const MlpRef& head = pretrain_heads_.at(static_cast<size_t>(task));
  return ad::sigmoid(run_mlp(t, cat, head));
}

Value Model::pretrain_pair_loss(Tape& t, Value probs,
                                const std::vector<uint8_t>& labels) const {
  const Array& p = t.val(probs);
  if (p.ndim() != 2 || p.cols() != 1 ||
      p.rows() != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("pretrain_pair_loss: probs/labels mismatch");
  Array y({p.rows(), 1});
  for (int64_t i = 0; i < p.rows(); ++i)
    y.at(i, 0) = labels[static_cast<size_t>(i)] ? 1.0 : 0.0;
  Value per = cfg_.pretrain_loss == "focal" ? ad::focal(probs, y, cfg_.beta)
                                            : ad::cross_entropy(probs, y);
  return ad::reduce_mean(per, -1);
}

ad::Array Model::node_embeddings(const DesignInput& in) const {
  Tape t;
  auto [node_emb, h_graph] = encode_graph(t, in);
  (void)h_graph;
  return t.val(node_emb);
}

}  // namespace progsg::model
