#pragma once

// Conditioned contrastive losses, size/entropy regularization, and the
// self-supervised embedding-explainer training loop.
//
// Both losses mask embeddings with the condition vector before comparing:
// s_ij = (p * z_i) . (p * z_{j,theta}). If p[k] = 0 the loss and all its
// gradients are exactly independent of embedding column k.
//
//   JSE:     L = (1/N)      sum_i    softplus(-s_ii)
//              + (1/(N^2-N)) sum_{i!=j} softplus(s_ij)
//            (equivalently -log sigma(pos) - log(1 - sigma(neg)))
//   InfoNCE: L = -(1/N) sum_i [ s_ii - logsumexp_{j != i} s_ij ]

#include <cstdint>
#include <vector>

#include "tage/adam.hpp"
#include "tage/encoder.hpp"
#include "tage/explainer.hpp"
#include "tage/graph.hpp"
#include "tage/rng.hpp"
#include "tage/tape.hpp"

namespace tage {

enum class ContrastiveKind : std::uint8_t { Jse, InfoNce };

struct ContrastiveBatch {
  ad::Var z;        // N x d original embeddings
  ad::Var z_theta;  // N x d explained (soft-masked) embeddings
  ad::Var p;        // 1 x d condition
};

namespace detail {

inline ad::Var masked_similarities(ad::Tape& tape, const ContrastiveBatch& b) {
  if (b.z.rows() != b.z_theta.rows() || b.z.cols() != b.z_theta.cols())
    throw graph_error("contrastive: embedding batch shapes differ");
  if (b.z.rows() < 2) throw graph_error("contrastive: batch needs N >= 2");
  if (b.p.val().cols() != b.z.cols())
    throw graph_error("contrastive: condition length != embedding dim");
  ad::Var u = tape.mul_rowvec(b.z, b.p);
  ad::Var v = tape.mul_rowvec(b.z_theta, b.p);
  return tape.matmul(u, tape.transpose(v));
}

}  // namespace detail

inline ad::Var conditioned_jse(ad::Tape& tape, const ContrastiveBatch& b) {
  ad::Var s = detail::masked_similarities(tape, b);
  const std::size_t n = s.rows();
  ad::Tensor eye = ad::Tensor::identity(n);
  ad::Tensor off(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off.at(i, i) = 0.0;
  ad::Var pos = tape.sum_all(tape.mul(tape.softplus(tape.scale(s, -1.0)), tape.input(eye)));
  ad::Var neg = tape.sum_all(tape.mul(tape.softplus(s), tape.input(off)));
  double nn = static_cast<double>(n);
  return tape.add(tape.scale(pos, 1.0 / nn), tape.scale(neg, 1.0 / (nn * nn - nn)));
}

inline ad::Var conditioned_infonce(ad::Tape& tape, const ContrastiveBatch& b) {
  ad::Var s = detail::masked_similarities(tape, b);
  const std::size_t n = s.rows();
  ad::Var lse = tape.row_logsumexp(s, /*exclude_diag=*/true);
  ad::Var diag = tape.row_sum(tape.mul(s, tape.input(ad::Tensor::identity(n))));
  return tape.scale(tape.sum_all(tape.sub(lse, diag)), 1.0 / static_cast<double>(n));
}

// ---- value-only conveniences (used by tests and oracles) ----

inline double conditioned_jse(const ad::Tensor& z, const ad::Tensor& z_theta,
                              const ad::Tensor& p) {
  ad::Tape tape;
  ContrastiveBatch b{tape.input(z), tape.input(z_theta), tape.input(p)};
  return conditioned_jse(tape, b).val().item();
}

inline double conditioned_infonce(const ad::Tensor& z, const ad::Tensor& z_theta,
                                  const ad::Tensor& p) {
  ad::Tape tape;
  ContrastiveBatch b{tape.input(z), tape.input(z_theta), tape.input(p)};
  return conditioned_infonce(tape, b).val().item();
}

// ---- size / entropy regularization ----

struct RegularizationConfig {
  double lambda_size = 0.05;
  double lambda_entropy = 0.002;
};

/// R = sum_e [ lambda_s * w_e + lambda_e * H_b(w_e) ] with binary entropy
/// H_b(w) = -w log w - (1-w) log(1-w). Boundary values contribute zero
/// entropy (the limit).
inline double size_entropy_reg(const std::vector<double>& w, const RegularizationConfig& cfg) {
  double r = 0.0;
  for (double x : w) {
    r += cfg.lambda_size * x;
    if (x > 0.0 && x < 1.0)
      r += cfg.lambda_entropy * (-x * std::log(x) - (1.0 - x) * std::log(1.0 - x));
  }
  return r;
}

/// Tape form used during training. The size term is the exact sum of
/// undirected scores. The entropy term is evaluated per directed orientation
/// from the pre-sigmoid logits (sigmoid_bentropy), which is saturation-proof;
/// the two orientations are averaged, which agrees with the undirected
/// entropy whenever both orientations score alike.
inline ad::Var size_entropy_reg_on_tape(ad::Tape& tape, const EdgeScoreVars& scores,
                                        const RegularizationConfig& cfg) {
  ad::Var r = tape.scale(tape.sum_all(scores.undirected), cfg.lambda_size);
  if (cfg.lambda_entropy != 0.0)
    r = tape.add(r, tape.scale(tape.sum_all(tape.sigmoid_bentropy(scores.raw_directed)),
                               0.5 * cfg.lambda_entropy));
  return r;
}

// ---- explainer training ----

struct ExplainerTrainConfig {
  ContrastiveKind loss = ContrastiveKind::Jse;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t epochs = 1;
  double laplace_b = 0.2;
  RegularizationConfig reg;
  std::size_t explainer_hidden = 0;  // 0 = no bottleneck
  std::size_t k_hop = 0;             // node mode; 0 = encoder depth
};

struct ExplainerTrainLogRow {
  std::size_t step;
  double contrastive_loss;
  double reg_loss;
  double mean_edge_score;
};

struct ExplainerTrainResult {
  EmbeddingExplainer explainer;
  std::vector<ExplainerTrainLogRow> log;
};

/// Counts train_embedding_explainer invocations process-wide; the multitask
/// report asserts the task-agnostic property with it.
inline std::size_t& explainer_train_invocations() {
  static std::size_t count = 0;
  return count;
}

namespace detail {

/// One contrastive training instance: a whole graph (graph mode) or a node
/// with its k-hop explanation scope (node mode).
struct TrainInstance {
  const Graph* graph = nullptr;  // graph mode: borrowed from the dataset
  Subgraph sub;                  // node mode: owned scope
  bool node_mode = false;
  ad::Tensor z;        // plain embeddings of the scope's nodes
  ad::Tensor anchor;   // 1 x d original embedding (graph pooled / target row)
  std::uint32_t target = 0;

  const Graph& scope() const { return node_mode ? sub.graph : *graph; }
};

inline double tensor_mean(const ad::Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
  return s / static_cast<double>(t.size());
}

}  // namespace detail

/// Trains the embedding explainer against a frozen encoder with conditioned
/// contrastive self-supervision. Per step: one Laplace condition p, a batch
/// of instances, edge scores conditioned on p, soft-masked re-encoding with
/// the scores as edge weights, contrastive loss plus regularization, one
/// Adam step on the explainer only.
///
/// Graph mode (pooled encoders): instances are training graphs. Node mode:
/// instances are nodes of the training graphs, each explained inside its
/// k-hop subgraph (k = encoder depth by default); isolated nodes are
/// skipped.
inline ExplainerTrainResult train_embedding_explainer(const Encoder& encoder,
                                                      const Dataset& data,
                                                      const ExplainerTrainConfig& cfg,
                                                      std::uint64_t seed) {
  ++explainer_train_invocations();
  const std::uint64_t checksum_before = encoder_checksum(encoder);
  const bool graph_mode = encoder.pooling == Pooling::Mean;
  const std::size_t d = encoder.output_dim();
  Rng rng(seed);

  EmbeddingExplainer explainer = make_embedding_explainer(
      graph_mode ? ExplainerMode::Graph : ExplainerMode::Node, d, rng, cfg.explainer_hidden);
  std::vector<ad::Tensor*> params;
  explainer.collect_params(params);
  ad::Adam opt({cfg.lr});

  std::vector<std::size_t> train = data.train_or_all();

  // Precompute anchors, scope embeddings and (node mode) k-hop subgraphs.
  std::vector<detail::TrainInstance> instances;
  if (graph_mode) {
    for (std::size_t idx : train) {
      const Graph& g = data.graphs[idx];
      if (g.num_edges() == 0) continue;
      detail::TrainInstance inst;
      inst.graph = &g;
      inst.z = encode_nodes(g, encoder);
      inst.anchor = encode_graph(g, encoder);
      instances.push_back(std::move(inst));
    }
  } else {
    std::size_t k = cfg.k_hop ? cfg.k_hop : encoder.depth();
    for (std::size_t idx : train) {
      const Graph& g = data.graphs[idx];
      for (std::uint32_t v = 0; v < g.num_nodes; ++v) {
        Subgraph sub = k_hop_subgraph(g, v, k);
        if (sub.graph.num_edges() == 0) continue;
        detail::TrainInstance inst;
        inst.node_mode = true;
        inst.z = encode_nodes(sub.graph, encoder);
        inst.target = sub.target;
        inst.anchor = ad::Tensor(1, d);
        for (std::size_t c = 0; c < d; ++c) inst.anchor.at(0, c) = inst.z.at(sub.target, c);
        inst.sub = std::move(sub);
        instances.push_back(std::move(inst));
      }
    }
  }
  if (instances.size() < 2)
    throw graph_error("train_embedding_explainer: fewer than two usable instances");

  ExplainerTrainResult result;
  std::size_t step = 0;
  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start + 1 < order.size(); start += cfg.batch) {
      std::size_t end = std::min(start + cfg.batch, order.size());
      if (end - start < 2) break;  // contrastive losses need N >= 2
      const double batch_n = static_cast<double>(end - start);

      ConditionVector p = sample_condition(d, cfg.laplace_b, rng);

      ad::Tape tape;
      StagedExplainer sx = stage_explainer(tape, explainer);
      StagedEncoder senc = stage_encoder(tape, encoder);
      ad::Var pv = tape.input(p.p);

      std::vector<ad::Var> anchors, explained;
      ad::Var reg{};
      double mean_score = 0.0;

      for (std::size_t bi = start; bi < end; ++bi) {
        const detail::TrainInstance& inst = instances[order[bi]];
        const Graph& scope = inst.scope();
        ad::Var z_const = tape.input(inst.z);
        EdgeScoreVars sc =
            inst.node_mode
                ? score_edges_node_on_tape(tape, z_const, inst.target, pv, scope, sx)
                : score_edges_graph_on_tape(tape, z_const, pv, scope, sx);
        ad::Var w_dir = tape.concat_rows({sc.undirected, sc.undirected});
        ad::Var h = encode_nodes_on_tape(tape, scope, senc, w_dir);
        explained.push_back(inst.node_mode
                                ? tape.row_gather(h, {inst.target})
                                : tape.col_mean(h));
        anchors.push_back(tape.input(inst.anchor));

        ad::Var r = size_entropy_reg_on_tape(tape, sc, cfg.reg);
        reg = reg.valid() ? tape.add(reg, r) : r;
        mean_score += detail::tensor_mean(sc.undirected.val());
      }

      ContrastiveBatch batch{tape.concat_rows(anchors), tape.concat_rows(explained), pv};
      ad::Var closs = cfg.loss == ContrastiveKind::Jse ? conditioned_jse(tape, batch)
                                                       : conditioned_infonce(tape, batch);
      ad::Var reg_mean = tape.scale(reg, 1.0 / batch_n);
      ad::Var total = tape.add(closs, reg_mean);

      result.log.push_back(
          {step, closs.val().item(), reg_mean.val().item(), mean_score / batch_n});

      ad::Gradients grads = tape.backward(total);
      opt.step(params, ad::grads_of(grads, sx.param_vars()));
      ++step;
    }
  }

  const std::uint64_t checksum_after = encoder_checksum(encoder);
  if (checksum_before != checksum_after)
    throw graph_error("train_embedding_explainer: frozen encoder was mutated");
  result.explainer = std::move(explainer);
  return result;
}

}  // namespace tage
