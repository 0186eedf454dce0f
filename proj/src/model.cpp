#include "progsg/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace progsg::model {

using ad::Array;
using ad::Param;
using ad::Tape;
using ad::Value;

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::both: return "both";
    case Modality::graph_only: return "graph_only";
    case Modality::src_only: return "src_only";
  }
  return "?";
}

Modality modality_from_name(const std::string& s) {
  if (s == "both") return Modality::both;
  if (s == "graph_only") return Modality::graph_only;
  if (s == "src_only") return Modality::src_only;
  throw std::invalid_argument("unknown modality: " + s);
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::progsg: return "ProgSG";
    case Variant::progsg_si: return "ProgSG_si";
    case Variant::progsg_ca: return "ProgSG_ca";
    case Variant::no_ntmp: return "NoNTMP";
  }
  return "?";
}

Variant variant_from_name(const std::string& s) {
  if (s == "ProgSG") return Variant::progsg;
  if (s == "ProgSG_si") return Variant::progsg_si;
  if (s == "ProgSG_ca") return Variant::progsg_ca;
  if (s == "NoNTMP") return Variant::no_ntmp;
  throw std::invalid_argument("unknown variant: " + s);
}

const char* gnn_kind_name(GnnKind k) {
  return k == GnnKind::transformer_conv ? "transformer_conv" : "gat";
}

GnnKind gnn_kind_from_name(const std::string& s) {
  if (s == "transformer_conv") return GnnKind::transformer_conv;
  if (s == "gat") return GnnKind::gat;
  throw std::invalid_argument("unknown gnn_layer: " + s);
}

void ModelConfig::validate() const {
  if (d <= 0) throw std::invalid_argument("config: d must be positive");
  if (L1 < 1) throw std::invalid_argument("config: L1 must be >= 1");
  if (L2 < 0) throw std::invalid_argument("config: L2 must be >= 0");
  if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
  if (d % heads != 0) throw std::invalid_argument("config: heads must divide d");
  if (max_len < 2) throw std::invalid_argument("config: maxLen must be >= 2");
  if (gamma1 < 0 || gamma2 < 0 || gamma3 < 0)
    throw std::invalid_argument("config: gamma weights must be >= 0");
  if (beta < 0) throw std::invalid_argument("config: beta must be >= 0");
  if (dropout < 0 || dropout >= 1)
    throw std::invalid_argument("config: dropout must be in [0,1)");
  if (pretrain_loss != "ce" && pretrain_loss != "focal")
    throw std::invalid_argument("config: pretrain_loss must be ce or focal");
  for (int64_t h : decoder_dims)
    if (h < 1) throw std::invalid_argument("config: decoder_dims entries must be >= 1");
  for (int64_t h : decoder_dims_single)
    if (h < 1) throw std::invalid_argument("config: decoder_dims entries must be >= 1");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["d"] = d;
  j["L1"] = L1;
  j["L2"] = L2;
  j["maxLen"] = max_len;
  j["heads"] = heads;
  j["gamma1"] = gamma1;
  j["gamma2"] = gamma2;
  j["gamma3"] = gamma3;
  j["beta"] = beta;
  j["pretrain_loss"] = pretrain_loss;
  j["variant"] = variant_name(variant);
  j["gnn_layer"] = gnn_kind_name(gnn_layer);
  j["seed"] = seed;
  j["modality"] = modality_name(modality);
  j["summary_insertion"] = summary_insertion;
  j["g_cont_identity"] = g_cont_identity;
  j["dropout"] = dropout;
  j["decoder_dims"] = decoder_dims;
  j["decoder_dims_single"] = decoder_dims_single;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const nlohmann::json& v = it.value();
    if (k == "d") c.d = v.get<int64_t>();
    else if (k == "L1") c.L1 = v.get<int64_t>();
    else if (k == "L2") c.L2 = v.get<int64_t>();
    else if (k == "maxLen") c.max_len = v.get<int64_t>();
    else if (k == "heads") c.heads = v.get<int64_t>();
    else if (k == "gamma1") c.gamma1 = v.get<double>();
    else if (k == "gamma2") c.gamma2 = v.get<double>();
    else if (k == "gamma3") c.gamma3 = v.get<double>();
    else if (k == "beta") c.beta = v.get<double>();
    else if (k == "pretrain_loss") c.pretrain_loss = v.get<std::string>();
    else if (k == "variant") c.variant = variant_from_name(v.get<std::string>());
    else if (k == "gnn_layer") c.gnn_layer = gnn_kind_from_name(v.get<std::string>());
    else if (k == "seed") c.seed = v.get<uint64_t>();
    else if (k == "modality") c.modality = modality_from_name(v.get<std::string>());
    else if (k == "summary_insertion") c.summary_insertion = v.get<bool>();
    else if (k == "g_cont_identity") c.g_cont_identity = v.get<bool>();
    else if (k == "dropout") c.dropout = v.get<double>();
    else if (k == "decoder_dims") c.decoder_dims = v.get<std::vector<int64_t>>();
    else if (k == "decoder_dims_single")
      c.decoder_dims_single = v.get<std::vector<int64_t>>();
    else throw std::invalid_argument("config: unknown key: " + k);
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d = 512;
  c.L1 = 8;
  c.L2 = 6;
  c.max_len = 64;
  c.heads = 8;
  return c;
}

DesignInput make_design_input(const graph::HarpGraph& g,
                              const graph::NodeFeatureVocab& feats,
                              const token::TokenStream& ts,
                              const std::map<int, std::vector<int>>& alignment) {
  DesignInput in;
  in.n_nodes = static_cast<int64_t>(g.nodes.size());
  in.node_feats.reserve(g.nodes.size());
  for (const auto& n : g.nodes) in.node_feats.push_back(feats.id(n.feature_text));
  in.edge_src.reserve(g.edges.size());
  for (const auto& e : g.edges) {
    in.edge_src.push_back(e.src);
    in.edge_dst.push_back(e.dst);
    in.edge_kind.push_back(static_cast<int64_t>(e.kind));
  }
  in.block_nodes.assign(g.block_node_ids.begin(), g.block_node_ids.end());
  for (size_t m = 0; m < ts.chunks.size(); ++m) {
    auto ids = token::padded_chunk(ts, static_cast<int>(m));
    in.chunks.emplace_back(ids.begin(), ids.end());
    in.payload_len.push_back(ts.chunks[m].second - ts.chunks[m].first);
  }
  for (const auto& [node, toks] : alignment)
    for (int tk : toks) in.align_pairs.emplace_back(node, tk);
  return in;
}

DesignInput make_graph_input(const graph::HarpGraph& g,
                             const graph::NodeFeatureVocab& feats) {
  return make_design_input(g, feats, token::TokenStream{}, {});
}

// ---------------------------------------------------------------------------
// Construction. Creation order is fixed and variant-independent so that every
// config with equal dimensions owns an identically shaped, identically
// initialized parameter set.

namespace {

int64_t floor_half(int64_t v) { return std::max<int64_t>(1, v / 2); }

std::vector<int64_t> default_two_input_dims(int64_t d) {
  return {std::max<int64_t>(1, 3 * d / 2), d, floor_half(d),
          std::max<int64_t>(1, d / 4), std::max<int64_t>(1, d / 8)};
}

std::vector<int64_t> default_single_input_dims(int64_t d) {
  return {floor_half(d), std::max<int64_t>(1, d / 4), std::max<int64_t>(1, d / 8),
          std::max<int64_t>(1, d / 16), std::max<int64_t>(1, d / 32)};
}

}  // namespace

Model::Model(ModelConfig cfg, int64_t token_vocab_size)
    : cfg_(std::move(cfg)), token_vocab_(token_vocab_size) {
  cfg_.validate();
  if (token_vocab_ < token::Vocabulary::kReserved)
    throw std::invalid_argument("model: token vocab must include reserved ids");
  feat_vocab_ = graph::NodeFeatureVocab::standard().size();

  Rng rng(cfg_.seed);
  const int64_t d = cfg_.d;
  const int64_t dh = d / cfg_.heads;
  auto xav = [&](const std::string& id, std::vector<int64_t> shape) {
    return &ps_.create_xavier(id, std::move(shape), rng);
  };
  auto zero = [&](const std::string& id, std::vector<int64_t> shape) {
    return &ps_.create_zero(id, std::move(shape));
  };
  auto gain = [&](const std::string& id) {
    Param* p = &ps_.create(id, {d});
    for (double& x : p->value.data) x = 1.0;
    return p;
  };
  auto mlp = [&](const std::string& id, int64_t in, int64_t hid, int64_t out) {
    MlpRef m;
    m.w1 = xav(id + ".w1", {hid, in});
    m.b1 = zero(id + ".b1", {hid});
    m.w2 = xav(id + ".w2", {out, hid});
    m.b2 = zero(id + ".b2", {out});
    return m;
  };

  node_table_ = xav("node_table", {feat_vocab_, d});
  token_table_ = xav("token_table", {token_vocab_, d});
  pos_table_ = xav("pos_table", {cfg_.max_len, d});
  sum_proj_ = xav("sum_proj", {d, d});

  for (int64_t l = 0; l < cfg_.L1 + cfg_.L2; ++l) {
    std::string p = "gnn" + std::to_string(l) + ".";
    GnnRef g;
    g.W1 = xav(p + "W1", {d, d});
    g.W2 = xav(p + "W2", {d, d});
    g.W3 = xav(p + "W3", {d, d});
    g.W4 = xav(p + "W4", {d, d});
    g.We = xav(p + "We", {7, d});
    g.a1 = xav(p + "a1", {cfg_.heads, dh});
    g.a2 = xav(p + "a2", {cfg_.heads, dh});
    gnn_.push_back(g);
  }

  for (int64_t l = 0; l < cfg_.L2; ++l) {
    std::string p = "chunk" + std::to_string(l) + ".";
    ChunkLayerRef c;
    c.ln1_g = gain(p + "ln1_g");
    c.ln1_b = zero(p + "ln1_b", {d});
    c.Wq = xav(p + "Wq", {d, d});
    c.bq = zero(p + "bq", {d});
    c.Wk = xav(p + "Wk", {d, d});
    c.bk = zero(p + "bk", {d});
    c.Wv = xav(p + "Wv", {d, d});
    c.bv = zero(p + "bv", {d});
    c.Wo = xav(p + "Wo", {d, d});
    c.bo = zero(p + "bo", {d});
    c.ln2_g = gain(p + "ln2_g");
    c.ln2_b = zero(p + "ln2_b", {d});
    c.ff1_w = xav(p + "ff1_w", {2 * d, d});
    c.ff1_b = zero(p + "ff1_b", {2 * d});
    c.ff2_w = xav(p + "ff2_w", {d, 2 * d});
    c.ff2_b = zero(p + "ff2_b", {d});
    chunk_.push_back(c);
  }

  for (int64_t r = 0; r < cfg_.L2; ++r) {
    std::string p = "exch" + std::to_string(r) + ".";
    ExchangeRef e;
    e.Wb = xav(p + "Wb", {d, d});
    e.Ws = xav(p + "Ws", {d, d});
    e.msg_to_block = mlp(p + "msg_to_block", d, d, d);
    e.upd_block = mlp(p + "upd_block", d, d, d);
    e.msg_to_sum = mlp(p + "msg_to_sum", d, d, d);
    e.upd_sum = mlp(p + "upd_sum", d, d, d);
    exch_.push_back(e);
  }

  jk_base_ = {xav("jk_base.w", {d, cfg_.L1 * d}), zero("jk_base.b", {d})};
  jk_full_ = {xav("jk_full.w", {d, (cfg_.L1 + cfg_.L2) * d}), zero("jk_full.b", {d})};
  proj_node_ = {xav("proj_node.w", {d, d}), zero("proj_node.b", {d})};
  proj_tok_ = {xav("proj_tok.w", {d, d}), zero("proj_tok.b", {d})};
  g_cont_ = mlp("g_cont", d, d, d);

  auto make_heads = [&](const std::string& name, int64_t in,
                        const std::vector<int64_t>& hidden) {
    std::vector<std::vector<LinearRef>> heads;
    for (int64_t h = 0; h < 5; ++h) {
      std::vector<LinearRef> chain;
      int64_t prev = in;
      for (size_t i = 0; i < hidden.size(); ++i) {
        std::string id = name + std::to_string(h) + ".l" + std::to_string(i);
        chain.push_back({xav(id + ".w", {hidden[i], prev}), zero(id + ".b", {hidden[i]})});
        prev = hidden[i];
      }
      std::string id = name + std::to_string(h) + ".out";
      chain.push_back({xav(id + ".w", {1, prev}), zero(id + ".b", {1})});
      heads.push_back(std::move(chain));
    }
    return heads;
  };
  dec_two_ = make_heads("dec_two.h", 2 * d,
                        cfg_.decoder_dims.empty() ? default_two_input_dims(d)
                                                  : cfg_.decoder_dims);
  dec_single_ = make_heads("dec_single.h", d,
                           cfg_.decoder_dims_single.empty()
                               ? default_single_input_dims(d)
                               : cfg_.decoder_dims_single);

  for (dataflow::Task task :
       {dataflow::Task::reachability, dataflow::Task::dominators,
        dataflow::Task::datadep, dataflow::Task::liveness}) {
    pretrain_heads_.push_back(
        mlp(std::string("head_") + dataflow::task_name(task), 2 * d, d, 1));
  }
}

void Model::check_edges(const DesignInput& in) const {
  if (in.edge_src.size() != in.edge_dst.size() ||
      in.edge_src.size() != in.edge_kind.size())
    throw std::invalid_argument("design input: ragged edge arrays");
  if (static_cast<int64_t>(in.node_feats.size()) != in.n_nodes)
    throw std::invalid_argument("design input: node feature count mismatch");
  for (int64_t f : in.node_feats)
    if (f < 0 || f >= feat_vocab_)
      throw std::invalid_argument("design input: node feature id out of range");
  for (size_t i = 0; i < in.edge_src.size(); ++i) {
    if (in.edge_src[i] < 0 || in.edge_src[i] >= in.n_nodes ||
        in.edge_dst[i] < 0 || in.edge_dst[i] >= in.n_nodes)
      throw std::invalid_argument("dangling edge index");
    if (in.edge_kind[i] < 0 || in.edge_kind[i] >= 7)
      throw std::invalid_argument("design input: edge kind out of range");
  }
  for (int64_t b : in.block_nodes)
    if (b < 0 || b >= in.n_nodes)
      throw std::invalid_argument("design input: block node id out of range");
}

// ---------------------------------------------------------------------------
// Graph side.

Value Model::gnn_layer(Tape& t, Value x, const DesignInput& in, int64_t layer) const {
  const GnnRef& L = gnn_.at(static_cast<size_t>(layer));
  const int64_t d = cfg_.d;
  const int64_t dh = d / cfg_.heads;
  Value self = ad::linear(x, t.leaf(*L.W1), Value{});
  const int64_t E = static_cast<int64_t>(in.edge_src.size());
  if (E == 0) return self;

  Value we_rows = ad::gather_rows(t.leaf(*L.We), in.edge_kind);
  Value qe = ad::gather_rows(ad::linear(x, t.leaf(*L.W3), Value{}), in.edge_dst);
  Value ke = ad::add(
      ad::gather_rows(ad::linear(x, t.leaf(*L.W4), Value{}), in.edge_src), we_rows);
  Value ve = ad::add(
      ad::gather_rows(ad::linear(x, t.leaf(*L.W2), Value{}), in.edge_src), we_rows);

  std::vector<Value> head_msgs;
  for (int64_t h = 0; h < cfg_.heads; ++h) {
    Value qh = ad::slice_cols(qe, h * dh, (h + 1) * dh);
    Value kh = ad::slice_cols(ke, h * dh, (h + 1) * dh);
    Value scores;  // [E]
    if (cfg_.gnn_layer == GnnKind::transformer_conv) {
      Value ones = t.constant(Array::full({dh, 1}, 1.0));
      scores = ad::scale(ad::as_vec(ad::matmul(ad::mul(qh, kh), ones)),
                         1.0 / std::sqrt(static_cast<double>(dh)));
    } else {
      Value sa = ad::matmul_nt(qh, ad::gather_rows(t.leaf(*L.a1), {h}));
      Value sb = ad::matmul_nt(kh, ad::gather_rows(t.leaf(*L.a2), {h}));
      scores = ad::leaky_relu(ad::as_vec(ad::add(sa, sb)), 0.2);
    }
    Value alpha = ad::segment_softmax(scores, in.edge_dst, in.n_nodes);
    head_msgs.push_back(
        ad::scale_rows(ad::slice_cols(ve, h * dh, (h + 1) * dh), alpha));
  }
  Value msg = cfg_.heads == 1 ? head_msgs[0] : ad::concat(head_msgs, 1);
  return ad::add(self, ad::scatter_sum_rows(msg, in.edge_dst, in.n_nodes));
}

Value Model::project_nodes(Tape& t, Value cat, int64_t n_layers) const {
  const LinearRef& jk = n_layers == cfg_.L1 ? jk_base_ : jk_full_;
  return ad::linear(cat, t.leaf(*jk.w), t.leaf(*jk.b));
}

std::pair<Value, Value> Model::encode_graph(Tape& t, const DesignInput& in) const {
  check_edges(in);
  if (in.n_nodes == 0) throw std::invalid_argument("encode_graph: empty graph");
  Value x = ad::gather_rows(t.leaf(*node_table_), in.node_feats);
  std::vector<Value> outs;
  for (int64_t l = 0; l < cfg_.L1; ++l) {
    x = ad::elu(gnn_layer(t, x, in, l));
    outs.push_back(x);
  }
  Value cat = outs.size() == 1 ? outs[0] : ad::concat(outs, 1);
  Value node_emb = project_nodes(t, cat, cfg_.L1);
  return {node_emb, ad::reduce_mean(node_emb, 0)};
}

// ---------------------------------------------------------------------------
// Source side.

Value Model::run_mlp(Tape& t, Value x, const MlpRef& m) const {
  Value h = ad::elu(ad::linear(x, t.leaf(*m.w1), t.leaf(*m.b1)));
  return ad::linear(h, t.leaf(*m.w2), t.leaf(*m.b2));
}

Value Model::chunk_layer(Tape& t, Value x, int64_t payload, int64_t layer,
                         AttnCapture* capture, int64_t chunk_index,
                         bool train_mode, uint64_t* drop_seed) const {
  const ChunkLayerRef& L = chunk_.at(static_cast<size_t>(layer));
  const int64_t T = cfg_.max_len;
  const int64_t d = cfg_.d;
  const int64_t dh = d / cfg_.heads;

  // Padding columns are hidden from every query with an additive mask.
  Array mask({T, T});
  for (int64_t r = 0; r < T; ++r)
    for (int64_t c = payload + 1; c < T; ++c) mask.at(r, c) = -1e9;
  Value mask_v = t.constant(std::move(mask));

  Value n1 = ad::layer_norm(x, t.leaf(*L.ln1_g), t.leaf(*L.ln1_b));
  Value Q = ad::linear(n1, t.leaf(*L.Wq), t.leaf(*L.bq));
  Value K = ad::linear(n1, t.leaf(*L.Wk), t.leaf(*L.bk));
  Value V = ad::linear(n1, t.leaf(*L.Wv), t.leaf(*L.bv));
  std::vector<Value> ctx;
  for (int64_t h = 0; h < cfg_.heads; ++h) {
    Value qh = ad::slice_cols(Q, h * dh, (h + 1) * dh);
    Value kh = ad::slice_cols(K, h * dh, (h + 1) * dh);
    Value vh = ad::slice_cols(V, h * dh, (h + 1) * dh);
    Value scores = ad::add(
        ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))),
        mask_v);
    Value alpha = ad::softmax(scores, 1);
    if (capture) {
      const Array& a = t.val(alpha);
      const int64_t payload_cap = cfg_.max_len - 1;
      size_t need = static_cast<size_t>((chunk_index + 1) * payload_cap);
      if (capture->token_mass.size() < need) capture->token_mass.resize(need, 0.0);
      for (int64_t q = 0; q <= payload; ++q)
        for (int64_t c = 1; c <= payload; ++c)
          capture->token_mass[static_cast<size_t>(chunk_index * payload_cap + c - 1)] +=
              a.at(q, c) / static_cast<double>(cfg_.heads);
    }
    ctx.push_back(ad::matmul(alpha, vh));
  }
  Value attn = ad::linear(cfg_.heads == 1 ? ctx[0] : ad::concat(ctx, 1),
                          t.leaf(*L.Wo), t.leaf(*L.bo));
  if (train_mode && cfg_.dropout > 0)
    attn = ad::dropout(attn, cfg_.dropout, (*drop_seed)++);
  Value x2 = ad::add(x, attn);
  Value n2 = ad::layer_norm(x2, t.leaf(*L.ln2_g), t.leaf(*L.ln2_b));
  Value f = ad::linear(ad::elu(ad::linear(n2, t.leaf(*L.ff1_w), t.leaf(*L.ff1_b))),
                       t.leaf(*L.ff2_w), t.leaf(*L.ff2_b));
  if (train_mode && cfg_.dropout > 0)
    f = ad::dropout(f, cfg_.dropout, (*drop_seed)++);
  return ad::add(x2, f);
}

Model::SourceEncoding Model::encode_source(Tape& t, const DesignInput& in,
                                           Value h_ins, AttnCapture* capture,
                                           bool train_mode) const {
  if (in.chunks.empty())
    throw std::invalid_argument("encode_source: no chunks");
  Value pos = t.leaf(*pos_table_);
  std::vector<Value> state;
  for (size_t m = 0; m < in.chunks.size(); ++m) {
    if (static_cast<int64_t>(in.chunks[m].size()) != cfg_.max_len)
      throw std::invalid_argument("encode_source: chunk width != maxLen");
    Value e = ad::add(ad::gather_rows(t.leaf(*token_table_), in.chunks[m]), pos);
    if (h_ins.ok()) {
      Value slot = ad::add(ad::linear(ad::as_row(h_ins), t.leaf(*sum_proj_), Value{}),
                           ad::gather_rows(pos, {0}));
      e = ad::set_rows(e, {0}, slot);
    }
    state.push_back(e);
  }
  uint64_t drop_seed = cfg_.seed * 0x9e3779b97f4a7c15ULL + 1;
  if (capture) capture->layers_seen += cfg_.L2;
  for (int64_t l = 0; l < cfg_.L2; ++l)
    for (size_t m = 0; m < state.size(); ++m)
      state[m] = chunk_layer(t, state[m], in.payload_len[m], l, capture,
                             static_cast<int64_t>(m), train_mode, &drop_seed);

  SourceEncoding out;
  std::vector<Value> sums;
  std::vector<Value> toks;
  for (size_t m = 0; m < state.size(); ++m) {
    sums.push_back(ad::gather_rows(state[m], {0}));
    if (in.payload_len[m] > 0) {
      std::vector<int64_t> idx(static_cast<size_t>(in.payload_len[m]));
      for (int64_t i = 0; i < in.payload_len[m]; ++i) idx[static_cast<size_t>(i)] = 1 + i;
      toks.push_back(ad::gather_rows(state[m], idx));
    }
  }
  out.chunk_summaries = sums.size() == 1 ? sums[0] : ad::concat(sums, 0);
  if (!toks.empty())
    out.token_emb = toks.size() == 1 ? toks[0] : ad::concat(toks, 0);
  out.h_src = ad::reduce_mean(out.chunk_summaries, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Cross-modality exchange.

Model::ExchangeResult Model::ntmp_exchange(Tape& t, Value block_emb,
                                           Value chunk_summaries,
                                           int64_t round) const {
  ExchangeResult r;
  if (!block_emb.ok() || !chunk_summaries.ok() || t.val(block_emb).rows() == 0 ||
      t.val(chunk_summaries).rows() == 0) {
    r.block_emb = block_emb;
    r.chunk_summaries = chunk_summaries;
    r.skipped = true;
    return r;
  }
  const ExchangeRef& X = exch_.at(static_cast<size_t>(round));
  double inv = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
  Value qb = ad::linear(block_emb, t.leaf(*X.Wb), Value{});
  Value ks = ad::linear(chunk_summaries, t.leaf(*X.Ws), Value{});
  Value alpha_bs = ad::softmax(ad::scale(ad::matmul_nt(qb, ks), inv), 1);  // [N,M]
  Value alpha_sb = ad::softmax(ad::scale(ad::matmul_nt(ks, qb), inv), 1);  // [M,N]
  Value to_block = ad::matmul(alpha_bs, run_mlp(t, chunk_summaries, X.msg_to_block));
  Value to_sum = ad::matmul(alpha_sb, run_mlp(t, block_emb, X.msg_to_sum));
  r.block_emb = ad::add(block_emb, run_mlp(t, to_block, X.upd_block));
  r.chunk_summaries = ad::add(chunk_summaries, run_mlp(t, to_sum, X.upd_sum));
  return r;
}

// ---------------------------------------------------------------------------
// Full encoder.

Encoded Model::encode(Tape& t, const DesignInput& in, AttnCapture* capture,
                      bool train_mode) const {
  const bool graph_side = cfg_.modality != Modality::src_only;
  const bool src_side = cfg_.modality != Modality::graph_only;
  Encoded enc;

  Value x;  // running graph state
  Value h_ins;
  std::vector<Value> outs;
  if (graph_side) {
    check_edges(in);
    if (in.n_nodes == 0) throw std::invalid_argument("encode: empty graph");
    x = ad::gather_rows(t.leaf(*node_table_), in.node_feats);
    for (int64_t l = 0; l < cfg_.L1; ++l) {
      x = ad::elu(gnn_layer(t, x, in, l));
      outs.push_back(x);
    }
    h_ins = ad::reduce_mean(x, 0);
  }

  const bool interleaved = src_side && graph_side && cfg_.L2 > 0 &&
                           (cfg_.variant == Variant::progsg ||
                            cfg_.variant == Variant::no_ntmp);
  const bool insert = src_side && graph_side && cfg_.summary_insertion &&
                      cfg_.variant != Variant::progsg_ca;

  if (src_side && !interleaved) {
    SourceEncoding se =
        encode_source(t, in, insert ? h_ins : Value{}, capture, train_mode);
    enc.token_emb = se.token_emb;
    enc.chunk_summaries = se.chunk_summaries;
    enc.h_src = se.h_src;
  }

  if (interleaved) {
    if (in.chunks.empty()) throw std::invalid_argument("encode: no chunks");
    Value pos = t.leaf(*pos_table_);
    std::vector<Value> state;
    for (size_t m = 0; m < in.chunks.size(); ++m) {
      if (static_cast<int64_t>(in.chunks[m].size()) != cfg_.max_len)
        throw std::invalid_argument("encode: chunk width != maxLen");
      Value e = ad::add(ad::gather_rows(t.leaf(*token_table_), in.chunks[m]), pos);
      if (insert) {
        Value slot = ad::add(ad::linear(ad::as_row(h_ins), t.leaf(*sum_proj_), Value{}),
                             ad::gather_rows(pos, {0}));
        e = ad::set_rows(e, {0}, slot);
      }
      state.push_back(e);
    }
    uint64_t drop_seed = cfg_.seed * 0x9e3779b97f4a7c15ULL + 1;
    if (capture) capture->layers_seen += cfg_.L2;
    for (int64_t r = 0; r < cfg_.L2; ++r) {
      for (size_t m = 0; m < state.size(); ++m)
        state[m] = chunk_layer(t, state[m], in.payload_len[m], r, capture,
                               static_cast<int64_t>(m), train_mode, &drop_seed);
      x = ad::elu(gnn_layer(t, x, in, cfg_.L1 + r));
      if (cfg_.variant == Variant::progsg) {
        std::vector<Value> sums;
        for (auto& s : state) sums.push_back(ad::gather_rows(s, {0}));
        Value S = sums.size() == 1 ? sums[0] : ad::concat(sums, 0);
        Value B = in.block_nodes.empty() ? Value{} : ad::gather_rows(x, in.block_nodes);
        ExchangeResult ex = ntmp_exchange(t, B, S, r);
        if (ex.skipped) {
          enc.exchange_skipped = true;
        } else {
          x = ad::set_rows(x, in.block_nodes, ex.block_emb);
          for (size_t m = 0; m < state.size(); ++m)
            state[m] = ad::set_rows(
                state[m], {0},
                ad::gather_rows(ex.chunk_summaries, {static_cast<int64_t>(m)}));
        }
      }
      outs.push_back(x);
    }
    std::vector<Value> sums;
    std::vector<Value> toks;
    for (size_t m = 0; m < state.size(); ++m) {
      sums.push_back(ad::gather_rows(state[m], {0}));
      if (in.payload_len[m] > 0) {
        std::vector<int64_t> idx(static_cast<size_t>(in.payload_len[m]));
        for (int64_t i = 0; i < in.payload_len[m]; ++i) idx[static_cast<size_t>(i)] = 1 + i;
        toks.push_back(ad::gather_rows(state[m], idx));
      }
    }
    enc.chunk_summaries = sums.size() == 1 ? sums[0] : ad::concat(sums, 0);
    if (!toks.empty())
      enc.token_emb = toks.size() == 1 ? toks[0] : ad::concat(toks, 0);
    enc.h_src = ad::reduce_mean(enc.chunk_summaries, 0);
  }

  if (graph_side) {
    Value cat = outs.size() == 1 ? outs[0] : ad::concat(outs, 1);
    enc.node_emb = project_nodes(t, cat, static_cast<int64_t>(outs.size()));
    enc.h_graph = ad::reduce_mean(enc.node_emb, 0);
    if (!in.block_nodes.empty())
      enc.block_emb = ad::gather_rows(enc.node_emb, in.block_nodes);
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Decoder.

Value Model::decode_chain(Tape& t, Value row, const std::vector<LinearRef>& chain) const {
  Value z = row;
  for (size_t i = 0; i < chain.size(); ++i) {
    z = ad::linear(z, t.leaf(*chain[i].w), t.leaf(*chain[i].b));
    if (i + 1 < chain.size()) z = ad::elu(z);
  }
  return z;  // [1,1]
}

Value Model::decode(Tape& t, const Encoded& enc) const {
  Value input;
  const std::vector<std::vector<LinearRef>>* heads;
  if (cfg_.modality == Modality::both) {
    if (!enc.h_src.ok() || !enc.h_graph.ok())
      throw std::invalid_argument("decode: both summaries required");
    input = ad::as_row(ad::concat({enc.h_src, enc.h_graph}, 0));
    heads = &dec_two_;
  } else {
    Value h = cfg_.modality == Modality::graph_only ? enc.h_graph : enc.h_src;
    if (!h.ok()) throw std::invalid_argument("decode: missing summary");
    input = ad::as_row(h);
    heads = &dec_single_;
  }
  std::vector<Value> outs;
  for (const auto& chain : *heads) outs.push_back(decode_chain(t, input, chain));
  return ad::as_vec(ad::concat(outs, 1));
}

}  // namespace progsg::model
