#pragma once

// Stage-1 encoder training routes and stage-2 downstream heads. Every loop
// rebuilds a fresh tape per optimizer step; parameters live in the model
// structs between steps.

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "tage/adam.hpp"
#include "tage/encoder.hpp"
#include "tage/graph.hpp"
#include "tage/rng.hpp"

namespace tage {

struct EncoderSpec {
  LayerKind kind = LayerKind::Gcn;
  Pooling pooling = Pooling::None;
  std::vector<std::size_t> hidden_dims = {20, 20};  // layer outputs; last is the embedding dim
  double gin_eps = 0.0;
};

inline Encoder build_encoder(const EncoderSpec& spec, std::size_t input_dim, Rng& rng) {
  std::vector<std::size_t> dims = {input_dim};
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  return spec.kind == LayerKind::Gcn ? make_gcn_encoder(dims, spec.pooling, rng)
                                     : make_gin_encoder(dims, spec.pooling, rng, spec.gin_eps);
}

namespace detail {

/// Uniformly sampled node pairs that do not appear as edges.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_non_edges(const Graph& g,
                                                                             std::size_t count,
                                                                             Rng& rng) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set;
  for (auto [u, v] : g.edges) edge_set.insert({std::min(u, v), std::max(u, v)});
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  while (out.size() < count) {
    auto u = static_cast<std::uint32_t>(rng.integer(g.num_nodes));
    auto v = static_cast<std::uint32_t>(rng.integer(g.num_nodes));
    if (u == v) continue;
    if (edge_set.count({std::min(u, v), std::max(u, v)})) continue;
    out.emplace_back(u, v);
  }
  return out;
}

/// Inner-product link logits for the given pairs: row (z_u . z_v) per pair.
inline ad::Var pair_logits(ad::Tape& tape, ad::Var z,
                           const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
  std::vector<std::uint32_t> us, vs;
  us.reserve(pairs.size());
  vs.reserve(pairs.size());
  for (auto [u, v] : pairs) {
    us.push_back(u);
    vs.push_back(v);
  }
  return tape.row_sum(tape.mul(tape.row_gather(z, us), tape.row_gather(z, vs)));
}

inline std::size_t argmax_row(const ad::Tensor& t, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c)
    if (t.at(row, c) > t.at(row, best)) best = c;
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph autoencoder: BCE link reconstruction against equal-count sampled
// non-edges.
// ---------------------------------------------------------------------------

struct GaeConfig {
  EncoderSpec encoder;
  std::size_t epochs = 60;
  double lr = 1e-2;
};

inline Encoder pretrain_gae(const Dataset& data, const GaeConfig& cfg, std::uint64_t seed,
                            std::vector<double>* loss_trace = nullptr) {
  for (const Graph& g : data.graphs)
    if (g.num_edges() == 0) throw graph_error("pretrain_gae: graph with no edges");
  Rng rng(seed);
  Encoder enc = build_encoder(cfg.encoder, data.feature_dim(), rng);
  std::vector<ad::Tensor*> params;
  enc.collect_params(params);
  ad::Adam opt({cfg.lr});

  std::vector<std::size_t> train = data.train_or_all();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t gi : train) {
      const Graph& g = data.graphs[gi];
      auto negatives = detail::sample_non_edges(g, g.num_edges(), rng);

      ad::Tape tape;
      StagedEncoder staged = stage_encoder(tape, enc);
      ad::Var z = encode_nodes_on_tape(tape, g, staged);
      ad::Var pos = detail::pair_logits(tape, z, g.edges);
      ad::Var neg = detail::pair_logits(tape, z, negatives);
      // BCE with logits: -log sigma(pos) - log(1 - sigma(neg))
      ad::Var loss = tape.add(tape.mean_all(tape.softplus(tape.scale(pos, -1.0))),
                              tape.mean_all(tape.softplus(neg)));
      epoch_loss += loss.val().item();
      ad::Gradients grads = tape.backward(loss);
      opt.step(params, ad::grads_of(grads, staged.param_vars()));
    }
    if (loss_trace) loss_trace->push_back(epoch_loss / static_cast<double>(train.size()));
  }
  return enc;
}

// ---------------------------------------------------------------------------
// GRACE-lite: two stochastic views (edge drop + feature column mask), node-
// wise InfoNCE on cosine similarities between corresponding nodes across
// views. In-batch inter-view negatives only.
// ---------------------------------------------------------------------------

struct GraceLiteConfig {
  EncoderSpec encoder;
  std::size_t epochs = 40;
  double lr = 1e-2;
  double edge_drop = 0.2;
  double feature_mask = 0.2;
  double temperature = 0.5;
};

namespace detail {

inline Graph make_view(const Graph& g, double edge_drop, double feature_mask, Rng& rng) {
  Graph view;
  view.num_nodes = g.num_nodes;
  view.features = g.features;
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (!rng.bernoulli(edge_drop)) view.edges.push_back(g.edges[e]);
  for (std::size_t j = 0; j < g.feature_dim(); ++j)
    if (rng.bernoulli(feature_mask))
      for (std::size_t i = 0; i < g.num_nodes; ++i) view.features.at(i, j) = 0.0;
  return view;
}

}  // namespace detail

inline Encoder pretrain_grace_lite(const Dataset& data, const GraceLiteConfig& cfg,
                                   std::uint64_t seed,
                                   std::vector<double>* loss_trace = nullptr) {
  if (cfg.edge_drop >= 1.0 || cfg.feature_mask >= 1.0 || cfg.edge_drop < 0.0 ||
      cfg.feature_mask < 0.0)
    throw graph_error("pretrain_grace_lite: view rates must lie in [0, 1)");
  Rng rng(seed);
  Encoder enc = build_encoder(cfg.encoder, data.feature_dim(), rng);
  std::vector<ad::Tensor*> params;
  enc.collect_params(params);
  ad::Adam opt({cfg.lr});

  std::vector<std::size_t> train = data.train_or_all();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t gi : train) {
      const Graph& g = data.graphs[gi];
      Graph view_a = detail::make_view(g, cfg.edge_drop, cfg.feature_mask, rng);
      Graph view_b = detail::make_view(g, cfg.edge_drop, cfg.feature_mask, rng);

      ad::Tape tape;
      StagedEncoder staged = stage_encoder(tape, enc);
      ad::Var ua = tape.l2_normalize_rows(encode_nodes_on_tape(tape, view_a, staged));
      ad::Var ub = tape.l2_normalize_rows(encode_nodes_on_tape(tape, view_b, staged));
      ad::Var sim = tape.scale(tape.matmul(ua, tape.transpose(ub)), 1.0 / cfg.temperature);
      ad::Var diag = tape.row_sum(tape.mul(sim, tape.input(ad::Tensor::identity(g.num_nodes))));
      ad::Var loss_ab = tape.mean_all(tape.sub(tape.row_logsumexp(sim), diag));
      ad::Var loss_ba =
          tape.mean_all(tape.sub(tape.row_logsumexp(tape.transpose(sim)), diag));
      ad::Var loss = tape.scale(tape.add(loss_ab, loss_ba), 0.5);
      epoch_loss += loss.val().item();

      ad::Gradients grads = tape.backward(loss);
      opt.step(params, ad::grads_of(grads, staged.param_vars()));
    }
    if (loss_trace) loss_trace->push_back(epoch_loss / static_cast<double>(train.size()));
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Supervised end-to-end training (node classification), returning encoder
// and head separately so the pipeline can treat them as stage-1/stage-2
// artifacts.
// ---------------------------------------------------------------------------

struct SupervisedConfig {
  EncoderSpec encoder;
  std::size_t head_hidden = 20;
  std::size_t epochs = 400;
  double lr = 1e-2;
};

struct SupervisedResult {
  Encoder encoder;
  DownstreamHead head;
  std::vector<double> accuracy_trace;
};

inline SupervisedResult train_supervised(const Dataset& data, const SupervisedConfig& cfg,
                                         std::uint64_t seed) {
  if (data.graphs.empty()) throw graph_error("train_supervised: empty dataset");
  const Graph& g = data.graphs.front();
  if (g.node_labels.empty()) throw graph_error("train_supervised: missing node labels");

  int num_classes = 0;
  for (int y : g.node_labels) num_classes = std::max(num_classes, y + 1);

  Rng rng(seed);
  Encoder enc = build_encoder(cfg.encoder, data.feature_dim(), rng);
  DownstreamHead head = make_head(enc.output_dim(), cfg.head_hidden,
                                  static_cast<std::size_t>(num_classes), rng);

  std::vector<ad::Tensor*> params;
  enc.collect_params(params);
  head.collect_params(params);
  ad::Adam opt({cfg.lr});

  ad::Tensor onehot(g.num_nodes, static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    onehot.at(i, static_cast<std::size_t>(g.node_labels[i])) = 1.0;

  SupervisedResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::Tape tape;
    StagedEncoder senc = stage_encoder(tape, enc);
    StagedHead shead = stage_head(tape, head);
    ad::Var z = encode_nodes_on_tape(tape, g, senc);
    ad::Var logits = head_logits_on_tape(tape, shead, z);
    ad::Var logp = tape.row_log_softmax(logits);
    ad::Var loss = tape.scale(tape.sum_all(tape.mul(logp, tape.input(onehot))),
                              -1.0 / static_cast<double>(g.num_nodes));

    const ad::Tensor& lp = logp.val();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      if (detail::argmax_row(lp, i) == static_cast<std::size_t>(g.node_labels[i])) ++correct;
    result.accuracy_trace.push_back(static_cast<double>(correct) /
                                    static_cast<double>(g.num_nodes));

    ad::Gradients grads = tape.backward(loss);
    std::vector<ad::Var> vars = senc.param_vars();
    for (ad::Var v : shead.param_vars()) vars.push_back(v);
    opt.step(params, ad::grads_of(grads, vars));
  }

  result.encoder = std::move(enc);
  result.head = std::move(head);
  return result;
}

// ---------------------------------------------------------------------------
// Downstream heads on frozen embeddings.
// ---------------------------------------------------------------------------

struct DownstreamConfig {
  std::size_t hidden = 20;
  std::size_t epochs = 300;
  double lr = 1e-2;
};

/// Cross-entropy training of a head on fixed embeddings; the embedding table
/// is read-only throughout.
inline DownstreamHead train_downstream(const ad::Tensor& embeddings,
                                       const std::vector<int>& labels,
                                       const DownstreamConfig& cfg, std::uint64_t seed,
                                       std::vector<double>* loss_trace = nullptr) {
  if (embeddings.rows() != labels.size())
    throw graph_error("train_downstream: label/embedding count mismatch");
  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);
  if (num_classes < 2) num_classes = 2;

  Rng rng(seed);
  DownstreamHead head =
      make_head(embeddings.cols(), cfg.hidden, static_cast<std::size_t>(num_classes), rng);
  std::vector<ad::Tensor*> params;
  head.collect_params(params);
  ad::Adam opt({cfg.lr});

  ad::Tensor onehot(embeddings.rows(), static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::Tape tape;
    StagedHead shead = stage_head(tape, head);
    ad::Var logits = head_logits_on_tape(tape, shead, tape.input(embeddings));
    ad::Var logp = tape.row_log_softmax(logits);
    ad::Var loss = tape.scale(tape.sum_all(tape.mul(logp, tape.input(onehot))),
                              -1.0 / static_cast<double>(embeddings.rows()));
    if (loss_trace) loss_trace->push_back(loss.val().item());
    ad::Gradients grads = tape.backward(loss);
    opt.step(params, ad::grads_of(grads, shead.param_vars()));
  }
  return head;
}

inline double head_accuracy(const DownstreamHead& head, const ad::Tensor& embeddings,
                            const std::vector<int>& labels) {
  ad::Tensor probs = predict_proba(head, embeddings);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (detail::argmax_row(probs, i) == static_cast<std::size_t>(labels[i])) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace tage
