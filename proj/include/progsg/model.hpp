#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "progsg/dataflow.hpp"
#include "progsg/graph.hpp"
#include "progsg/ops.hpp"
#include "progsg/tape.hpp"
#include "progsg/token.hpp"

namespace progsg::model {

// Which input sides the encoder consumes.
enum class Modality { both, graph_only, src_only };
const char* modality_name(Modality m);
Modality modality_from_name(const std::string& s);

// Encoder wiring: full cross-modal exchange, summary insertion only,
// fully independent sides, or extra layers without exchange.
enum class Variant { progsg, progsg_si, progsg_ca, no_ntmp };
const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);

enum class GnnKind { transformer_conv, gat };
const char* gnn_kind_name(GnnKind k);
GnnKind gnn_kind_from_name(const std::string& s);

struct ModelConfig {
  int64_t d = 64;        // embedding width
  int64_t L1 = 4;        // graph layers before any interaction
  int64_t L2 = 2;        // chunk-attention / interaction rounds
  int64_t max_len = 32;  // chunk length including the summary slot
  int64_t heads = 4;     // attention heads (must divide d)
  double gamma1 = 1.0;   // fine alignment weight
  double gamma2 = 1.0;   // coarse alignment weight
  double gamma3 = 1.0;   // guidance weight
  double beta = 2.0;     // focal exponent
  std::string pretrain_loss = "ce";  // "ce" | "focal"
  Variant variant = Variant::progsg;
  GnnKind gnn_layer = GnnKind::transformer_conv;
  uint64_t seed = 1;
  Modality modality = Modality::both;
  bool summary_insertion = true;  // write the graph summary into chunk slot 0
  bool g_cont_identity = false;   // guidance head as identity instead of MLP
  double dropout = 0.0;           // chunk-layer dropout rate in training mode
  // Hidden sizes of the two-input decoder; empty = derived from d.
  std::vector<int64_t> decoder_dims;
  // Hidden sizes of the single-input decoder; empty = derived from d.
  std::vector<int64_t> decoder_dims_single;

  void validate() const;  // throws std::invalid_argument
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  // Large preset: d=512, L1=8, L2=6, maxLen=64, heads=8.
  static ModelConfig full_scale();
};

// Model-ready tensors for one design: integer feature/edge lists for the
// graph side and padded token chunks for the source side, plus the
// instruction-to-token alignment and optional regression targets.
struct DesignInput {
  int64_t n_nodes = 0;
  std::vector<int64_t> node_feats;  // feature-vocab id per node
  std::vector<int64_t> edge_src;
  std::vector<int64_t> edge_dst;
  std::vector<int64_t> edge_kind;
  std::vector<int64_t> block_nodes;          // auxiliary block-node ids
  std::vector<std::vector<int64_t>> chunks;  // each padded to max_len
  std::vector<int64_t> payload_len;          // real token count per chunk
  std::vector<std::pair<int64_t, int64_t>> align_pairs;  // (node id, token index)
  std::vector<double> y;  // 5 targets for labeled designs, else empty
};

DesignInput make_design_input(const graph::HarpGraph& g,
                              const graph::NodeFeatureVocab& feats,
                              const token::TokenStream& ts,
                              const std::map<int, std::vector<int>>& alignment);

// Graph-side-only input (no token chunks, no alignment), for graph-only runs.
DesignInput make_graph_input(const graph::HarpGraph& g,
                             const graph::NodeFeatureVocab& feats);

// Tape handles for one encoded design. Handles on the unused side of a
// single-modality run are left invalid.
struct Encoded {
  ad::Value node_emb;         // [V,d] layer-aggregated node embeddings
  ad::Value token_emb;        // [I,d] payload tokens in source order
  ad::Value chunk_summaries;  // [M,d] final slot-0 embedding per chunk
  ad::Value block_emb;        // [N,d] node_emb rows at the block nodes
  ad::Value h_graph;          // [d]
  ad::Value h_src;            // [d]
  bool exchange_skipped = false;  // an exchange round had no rows to pair
};

// Attention mass received per source token, accumulated over every chunk
// self-attention layer and head; queries are the chunk's real rows.
struct AttnCapture {
  std::vector<double> token_mass;  // flat payload-token index -> mass
  int64_t layers_seen = 0;
};

struct LossParts {
  ad::Value total;
  ad::Value task;
  ad::Value fine;
  ad::Value coarse;
  ad::Value guide;
};

// The full two-sided encoder/decoder with its parameter set. All forward
// methods append to a caller-owned tape; weights live in the param store and
// are shared across tapes, so concurrent read-only forwards are safe.
class Model {
 public:
  Model(ModelConfig cfg, int64_t token_vocab_size);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return ps_; }
  const ad::ParamStore& params() const { return ps_; }
  int64_t token_vocab_size() const { return token_vocab_; }
  int64_t feature_vocab_size() const { return feat_vocab_; }

  // One graph attention layer over typed edges; x [V,d] -> [V,d] with
  // x_i' = W1 x_i + sum_j alpha_ij (W2 x_j + We e_ij). No activation.
  ad::Value gnn_layer(ad::Tape& t, ad::Value x, const DesignInput& in,
                      int64_t layer) const;

  // Layer stack + per-node concat-projection aggregation + mean pooling.
  // Runs the first L1 layers only. Returns (node_emb [V,d], h_graph [d]).
  std::pair<ad::Value, ad::Value> encode_graph(ad::Tape& t,
                                               const DesignInput& in) const;

  // Chunk self-attention encoder. h_ins, when valid, is projected into slot 0
  // of every chunk before the layers run. Returns (token_emb or invalid when
  // there is no payload, chunk_summaries [M,d], h_src [d]).
  struct SourceEncoding {
    ad::Value token_emb;
    ad::Value chunk_summaries;
    ad::Value h_src;
  };
  SourceEncoding encode_source(ad::Tape& t, const DesignInput& in,
                               ad::Value h_ins,
                               AttnCapture* capture = nullptr,
                               bool train_mode = false) const;

  // One bidirectional block/summary exchange round. Returns updated
  // (block_emb, chunk_summaries); `skipped` is set instead when either side
  // has zero rows and the inputs are passed through unchanged.
  struct ExchangeResult {
    ad::Value block_emb;
    ad::Value chunk_summaries;
    bool skipped = false;
  };
  ExchangeResult ntmp_exchange(ad::Tape& t, ad::Value block_emb,
                               ad::Value chunk_summaries, int64_t round) const;

  // Full encoder for the configured variant and modality.
  Encoded encode(ad::Tape& t, const DesignInput& in,
                 AttnCapture* capture = nullptr, bool train_mode = false) const;

  // Five regression heads on the encoded design -> [5].
  ad::Value decode(ad::Tape& t, const Encoded& enc) const;

  // Sum of squared differences against a 5-target vector.
  ad::Value task_loss(ad::Tape& t, ad::Value yhat,
                      const std::vector<double>& y) const;

  // (fine, coarse): mean projected-pair cosine distance over aligned
  // node/token pairs, and cosine distance between the two pooled summaries.
  std::pair<ad::Value, ad::Value> align_losses(ad::Tape& t, const Encoded& enc,
                                               const DesignInput& in) const;

  // Mean cosine distance between the mapped live node embeddings and frozen
  // reference rows; row k of `frozen` corresponds to node id k.
  ad::Value guide_loss(ad::Tape& t, const Encoded& enc,
                       const ad::Array& frozen) const;

  // task + gamma1*fine + gamma2*coarse + gamma3*guide; the guide term is 0
  // when `frozen` is null. Requires in.y to hold 5 targets.
  LossParts total_loss(ad::Tape& t, const DesignInput& in,
                       const ad::Array* frozen = nullptr,
                       AttnCapture* capture = nullptr,
                       bool train_mode = false) const;

  // Pair-probability head for one relation task; emb [V,d] -> [P,1].
  ad::Value pretrain_probs(ad::Tape& t, ad::Value node_emb,
                           const std::vector<std::pair<int, int>>& pairs,
                           dataflow::Task task) const;

  // Mean elementwise ce/focal loss of probabilities against 0/1 labels.
  ad::Value pretrain_pair_loss(ad::Tape& t, ad::Value probs,
                               const std::vector<uint8_t>& labels) const;

  // Graph-side node embeddings as plain values (fresh local tape, no grads).
  ad::Array node_embeddings(const DesignInput& in) const;

 private:
  struct MlpRef {  // two-layer block
    ad::Param* w1;
    ad::Param* b1;
    ad::Param* w2;
    ad::Param* b2;
  };
  struct GnnRef {
    ad::Param* W1;
    ad::Param* W2;
    ad::Param* W3;
    ad::Param* W4;
    ad::Param* We;
    ad::Param* a1;
    ad::Param* a2;
  };
  struct ChunkLayerRef {
    ad::Param* ln1_g;
    ad::Param* ln1_b;
    ad::Param* Wq;
    ad::Param* bq;
    ad::Param* Wk;
    ad::Param* bk;
    ad::Param* Wv;
    ad::Param* bv;
    ad::Param* Wo;
    ad::Param* bo;
    ad::Param* ln2_g;
    ad::Param* ln2_b;
    ad::Param* ff1_w;
    ad::Param* ff1_b;
    ad::Param* ff2_w;
    ad::Param* ff2_b;
  };
  struct ExchangeRef {
    ad::Param* Wb;  // block-side score map
    ad::Param* Ws;  // summary-side score map
    MlpRef msg_to_block;
    MlpRef upd_block;
    MlpRef msg_to_sum;
    MlpRef upd_sum;
  };
  struct LinearRef {
    ad::Param* w;
    ad::Param* b;
  };

  ad::Value chunk_layer(ad::Tape& t, ad::Value x, int64_t payload,
                        int64_t layer, AttnCapture* capture,
                        int64_t chunk_index, bool train_mode,
                        uint64_t* drop_seed) const;
  ad::Value run_mlp(ad::Tape& t, ad::Value x, const MlpRef& m) const;
  ad::Value decode_chain(ad::Tape& t, ad::Value row,
                         const std::vector<LinearRef>& chain) const;
  ad::Value project_nodes(ad::Tape& t, ad::Value cat, int64_t n_layers) const;
  void check_edges(const DesignInput& in) const;

  ModelConfig cfg_;
  int64_t token_vocab_ = 0;
  int64_t feat_vocab_ = 0;

  ad::ParamStore ps_;
  ad::Param* node_table_;
  ad::Param* token_table_;
  ad::Param* pos_table_;
  ad::Param* sum_proj_;
  std::vector<GnnRef> gnn_;
  std::vector<ChunkLayerRef> chunk_;
  std::vector<ExchangeRef> exch_;
  LinearRef jk_base_;  // aggregation over the first L1 layer outputs
  LinearRef jk_full_;  // aggregation over L1+L2 layer outputs
  LinearRef proj_node_;
  LinearRef proj_tok_;
  MlpRef g_cont_;
  std::vector<std::vector<LinearRef>> dec_two_;     // 5 heads, two-input
  std::vector<std::vector<LinearRef>> dec_single_;  // 5 heads, single-input
  std::vector<MlpRef> pretrain_heads_;              // one per relation task
};

}  // namespace progsg::model
