#pragma once

// GNN encoders (node-level GCN, graph-level GIN) and downstream MLP heads.
//
// Message passing runs on the autodiff tape over the doubled directed edge
// list. Propagation is always edge-weighted; the unweighted forward is the
// all-ones special case, so supplying weights of 1 reproduces it bitwise.
// GCN normalization uses weighted degrees, deg_i(w) = 1 + sum_j w_ij, which
// makes weight 0 on an edge exactly equivalent to deleting the edge. Self
// messages are never scaled by edge weights, so masking cannot erase a
// node's own features.

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "tage/graph.hpp"
#include "tage/rng.hpp"
#include "tage/tape.hpp"

namespace tage {

enum class LayerKind : std::uint8_t { Gcn, Gin };
enum class Pooling : std::uint8_t { None, Mean };

struct GcnLayer {
  ad::Tensor weight;  // d_in x d_out
  ad::Tensor bias;    // 1 x d_out
};

struct GinLayer {
  ad::Tensor w1, b1, w2, b2;  // two-layer perceptron d_in -> d_h -> d_out
  double eps = 0.0;
};

namespace detail {

inline ad::Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols) {
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  ad::Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

}  // namespace detail

struct Encoder {
  LayerKind kind = LayerKind::Gcn;
  Pooling pooling = Pooling::None;
  std::vector<GcnLayer> gcn;
  std::vector<GinLayer> gin;

  std::size_t depth() const { return kind == LayerKind::Gcn ? gcn.size() : gin.size(); }

  std::size_t input_dim() const {
    return kind == LayerKind::Gcn ? gcn.front().weight.rows() : gin.front().w1.rows();
  }

  std::size_t output_dim() const {
    return kind == LayerKind::Gcn ? gcn.back().weight.cols() : gin.back().w2.cols();
  }

  void collect_params(std::vector<ad::Tensor*>& out, std::vector<std::string>* names = nullptr) {
    auto add = [&](ad::Tensor& t, const std::string& n) {
      out.push_back(&t);
      if (names) names->push_back(n);
    };
    for (std::size_t i = 0; i < gcn.size(); ++i) {
      add(gcn[i].weight, "gcn." + std::to_string(i) + ".weight");
      add(gcn[i].bias, "gcn." + std::to_string(i) + ".bias");
    }
    for (std::size_t i = 0; i < gin.size(); ++i) {
      add(gin[i].w1, "gin." + std::to_string(i) + ".w1");
      add(gin[i].b1, "gin." + std::to_string(i) + ".b1");
      add(gin[i].w2, "gin." + std::to_string(i) + ".w2");
      add(gin[i].b2, "gin." + std::to_string(i) + ".b2");
    }
  }
};

/// Chained GCN stack: dims = [d_f, h1, ..., d].
inline Encoder make_gcn_encoder(const std::vector<std::size_t>& dims, Pooling pooling, Rng& rng) {
  if (dims.size() < 2) throw graph_error("encoder: need at least one layer");
  Encoder e;
  e.kind = LayerKind::Gcn;
  e.pooling = pooling;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    e.gcn.push_back({detail::glorot(rng, dims[i], dims[i + 1]), ad::Tensor(1, dims[i + 1])});
  return e;
}

/// Chained GIN stack; each layer's internal perceptron widens to the layer
/// output dimension.
inline Encoder make_gin_encoder(const std::vector<std::size_t>& dims, Pooling pooling, Rng& rng,
                                double eps = 0.0) {
  if (dims.size() < 2) throw graph_error("encoder: need at least one layer");
  Encoder e;
  e.kind = LayerKind::Gin;
  e.pooling = pooling;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    GinLayer l;
    l.w1 = detail::glorot(rng, dims[i], dims[i + 1]);
    l.b1 = ad::Tensor(1, dims[i + 1]);
    l.w2 = detail::glorot(rng, dims[i + 1], dims[i + 1]);
    l.b2 = ad::Tensor(1, dims[i + 1]);
    l.eps = eps;
    e.gin.push_back(std::move(l));
  }
  return e;
}

// ---- staged (on-tape) forms ----

struct StagedEncoder {
  LayerKind kind;
  Pooling pooling;
  struct Layer {
    ad::Var weight, bias;          // GCN
    ad::Var w1, b1, w2, b2;        // GIN
    double eps = 0.0;
  };
  std::vector<Layer> layers;

  /// Staged parameter handles in collect_params order.
  std::vector<ad::Var> param_vars() const {
    std::vector<ad::Var> out;
    for (const Layer& l : layers) {
      if (kind == LayerKind::Gcn) {
        out.push_back(l.weight);
        out.push_back(l.bias);
      } else {
        out.push_back(l.w1);
        out.push_back(l.b1);
        out.push_back(l.w2);
        out.push_back(l.b2);
      }
    }
    return out;
  }
};

inline StagedEncoder stage_encoder(ad::Tape& tape, const Encoder& enc) {
  StagedEncoder s;
  s.kind = enc.kind;
  s.pooling = enc.pooling;
  if (enc.kind == LayerKind::Gcn) {
    for (const GcnLayer& l : enc.gcn) {
      StagedEncoder::Layer sl;
      sl.weight = tape.input(l.weight);
      sl.bias = tape.input(l.bias);
      s.layers.push_back(sl);
    }
  } else {
    for (const GinLayer& l : enc.gin) {
      StagedEncoder::Layer sl;
      sl.w1 = tape.input(l.w1);
      sl.b1 = tape.input(l.b1);
      sl.w2 = tape.input(l.w2);
      sl.b2 = tape.input(l.b2);
      sl.eps = l.eps;
      s.layers.push_back(sl);
    }
  }
  return s;
}

/// Node embeddings on the tape. edge_weights, when present, is a 2E x 1
/// column aligned with the doubled directed list and may be any tape value
/// (so explainer scores can flow gradients through the encoder).
inline ad::Var encode_nodes_on_tape(ad::Tape& tape, const Graph& g, const StagedEncoder& enc,
                                    std::optional<ad::Var> edge_weights = std::nullopt) {
  if (g.num_nodes == 0) throw graph_error("encode: empty graph");
  const std::size_t n = g.num_nodes;
  std::vector<std::uint32_t> src = g.directed_src();
  std::vector<std::uint32_t> dst = g.directed_dst();

  ad::Var w = edge_weights ? *edge_weights
                           : tape.input(ad::Tensor(src.size(), 1, 1.0));
  if (w.val().rows() != src.size() || w.val().cols() != 1)
    throw graph_error("encode: edge weights must be (2*num_edges) x 1");

  ad::Var h{};
  ad::Var features = tape.input(g.features);

  if (enc.kind == LayerKind::Gcn) {
    // Weighted-degree symmetric normalization, recomputed from w.
    ad::Var wd = tape.add_scalar(tape.row_scatter_add(w, dst, n), 1.0);
    ad::Var rs = tape.rsqrt(wd);
    ad::Var coeff = tape.mul(tape.mul(tape.row_gather(rs, src), tape.row_gather(rs, dst)), w);
    ad::Var self_coeff = tape.mul(rs, rs);
    h = features;
    for (std::size_t li = 0; li < enc.layers.size(); ++li) {
      const auto& l = enc.layers[li];
      ad::Var xw = tape.matmul(h, l.weight);
      ad::Var msgs = tape.mul_colvec(tape.row_gather(xw, src), coeff);
      ad::Var agg = tape.row_scatter_add(msgs, dst, n);
      ad::Var self = tape.mul_colvec(xw, self_coeff);
      h = tape.add_rowvec(tape.add(agg, self), l.bias);
      if (li + 1 < enc.layers.size()) h = tape.relu(h);
    }
  } else {
    h = features;
    for (std::size_t li = 0; li < enc.layers.size(); ++li) {
      const auto& l = enc.layers[li];
      ad::Var msgs = tape.mul_colvec(tape.row_gather(h, src), w);
      ad::Var agg = tape.row_scatter_add(msgs, dst, n);
      ad::Var combined = tape.add(agg, tape.scale(h, 1.0 + l.eps));
      ad::Var hidden = tape.relu(tape.add_rowvec(tape.matmul(combined, l.w1), l.b1));
      h = tape.add_rowvec(tape.matmul(hidden, l.w2), l.b2);
      if (li + 1 < enc.layers.size()) h = tape.relu(h);
    }
  }
  return h;
}

inline ad::Var encode_graph_on_tape(ad::Tape& tape, const Graph& g, const StagedEncoder& enc,
                                    std::optional<ad::Var> edge_weights = std::nullopt) {
  return tape.col_mean(encode_nodes_on_tape(tape, g, enc, edge_weights));
}

// ---- plain (value-only) forwards ----

inline ad::Tensor encode_nodes(const Graph& g, const Encoder& enc,
                               const std::vector<double>* edge_weights = nullptr) {
  ad::Tape tape;
  StagedEncoder staged = stage_encoder(tape, enc);
  std::optional<ad::Var> w;
  if (edge_weights) w = tape.input(ad::Tensor::col(*edge_weights));
  return encode_nodes_on_tape(tape, g, staged, w).val();
}

inline ad::Tensor encode_graph(const Graph& g, const Encoder& enc,
                               const std::vector<double>* edge_weights = nullptr) {
  ad::Tape tape;
  StagedEncoder staged = stage_encoder(tape, enc);
  std::optional<ad::Var> w;
  if (edge_weights) w = tape.input(ad::Tensor::col(*edge_weights));
  return encode_graph_on_tape(tape, g, staged, w).val();
}

// ---- downstream heads ----

/// Two-layer perceptron d -> d_h -> C with a row-softmax output.
struct DownstreamHead {
  ad::Tensor w1, b1, w2, b2;

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t num_classes() const { return w2.cols(); }

  void collect_params(std::vector<ad::Tensor*>& out, std::vector<std::string>* names = nullptr) {
    auto add = [&](ad::Tensor& t, const std::string& n) {
      out.push_back(&t);
      if (names) names->push_back(n);
    };
    add(w1, "head.w1");
    add(b1, "head.b1");
    add(w2, "head.w2");
    add(b2, "head.b2");
  }
};

inline DownstreamHead make_head(std::size_t d, std::size_t hidden, std::size_t classes,
                                Rng& rng) {
  DownstreamHead h;
  h.w1 = detail::glorot(rng, d, hidden);
  h.b1 = ad::Tensor(1, hidden);
  h.w2 = detail::glorot(rng, hidden, classes);
  h.b2 = ad::Tensor(1, classes);
  return h;
}

struct StagedHead {
  ad::Var w1, b1, w2, b2;

  std::vector<ad::Var> param_vars() const { return {w1, b1, w2, b2}; }
};

inline StagedHead stage_head(ad::Tape& tape, const DownstreamHead& h) {
  return {tape.input(h.w1), tape.input(h.b1), tape.input(h.w2), tape.input(h.b2)};
}

inline ad::Var head_logits_on_tape(ad::Tape& tape, const StagedHead& h, ad::Var z) {
  ad::Var hidden = tape.relu(tape.add_rowvec(tape.matmul(z, h.w1), h.b1));
  return tape.add_rowvec(tape.matmul(hidden, h.w2), h.b2);
}

/// Class probabilities for one or more embedding rows; rows sum to 1.
inline ad::Tensor predict_proba(const DownstreamHead& h, const ad::Tensor& z) {
  ad::Tape tape;
  StagedHead staged = stage_head(tape, h);
  ad::Var logits = head_logits_on_tape(tape, staged, tape.input(z));
  return tape.row_softmax(logits).val();
}

// ---- parameter checksums (frozen-model contract) ----

inline std::uint64_t params_checksum(const std::vector<ad::Tensor*>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFF;
      h *= 1099511628211ull;
    }
  };
  for (const ad::Tensor* t : params) {
    mix(t->rows());
    mix(t->cols());
    for (std::size_t i = 0; i < t->size(); ++i) {
      std::uint64_t bits;
      double d = (*t)[i];
      static_assert(sizeof(bits) == sizeof(d));
      std::memcpy(&bits, &d, sizeof(bits));
      mix(bits);
    }
  }
  return h;
}

inline std::uint64_t encoder_checksum(const Encoder& enc) {
  std::vector<ad::Tensor*> params;
  const_cast<Encoder&>(enc).collect_params(params);
  return params_checksum(params);
}

}  // namespace tage
