#pragma once

// Embedding explainer: a condition projection and a two-layer perceptron
// scoring every edge, conditioned on which embedding dimensions matter.
//
//   graph mode: w_ij = MLP([z_i; z_j]      * sigmoid(f(p)))   f: d -> 2d
//   node mode:  w_ij = MLP([z_i; z_j; z_t] * sigmoid(f(p)))   f: d -> 3d
//
// Scores are computed per directed edge; the undirected score is the mean
// of both orientations, so it is independent of edge orientation in the
// stored list.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "tage/encoder.hpp"
#include "tage/graph.hpp"
#include "tage/rng.hpp"
#include "tage/tape.hpp"

namespace tage {

enum class ExplainerMode : std::uint8_t { Graph, Node };
enum class ConditionNorm : std::uint8_t { MaxAbs, L2 };

struct EmbeddingExplainer {
  ExplainerMode mode = ExplainerMode::Graph;
  ad::Tensor proj_w, proj_b;  // condition projection, d -> 2d or 3d
  ad::Tensor w1, b1, w2, b2;  // perceptron (2d|3d) -> hidden -> 1

  std::size_t embedding_dim() const { return proj_w.rows(); }
  std::size_t concat_dim() const { return proj_w.cols(); }

  void collect_params(std::vector<ad::Tensor*>& out, std::vector<std::string>* names = nullptr) {
    auto add = [&](ad::Tensor& t, const char* n) {
      out.push_back(&t);
      if (names) names->push_back(n);
    };
    add(proj_w, "proj_w");
    add(proj_b, "proj_b");
    add(w1, "mlp.w1");
    add(b1, "mlp.b1");
    add(w2, "mlp.w2");
    add(b2, "mlp.b2");
  }
};

/// hidden = 0 picks the no-bottleneck default (the concatenated width).
inline EmbeddingExplainer make_embedding_explainer(ExplainerMode mode, std::size_t d,
                                                   Rng& rng, std::size_t hidden = 0) {
  std::size_t cat = (mode == ExplainerMode::Graph ? 2 : 3) * d;
  if (hidden == 0) hidden = cat;
  EmbeddingExplainer e;
  e.mode = mode;
  e.proj_w = detail::glorot(rng, d, cat);
  e.proj_b = ad::Tensor(1, cat);
  e.w1 = detail::glorot(rng, cat, hidden);
  e.b1 = ad::Tensor(1, hidden);
  e.w2 = detail::glorot(rng, hidden, 1);
  e.b2 = ad::Tensor(1, 1);
  return e;
}

struct StagedExplainer {
  ExplainerMode mode;
  ad::Var proj_w, proj_b, w1, b1, w2, b2;

  std::vector<ad::Var> param_vars() const { return {proj_w, proj_b, w1, b1, w2, b2}; }
};

inline StagedExplainer stage_explainer(ad::Tape& tape, const EmbeddingExplainer& e) {
  return {e.mode,           tape.input(e.proj_w), tape.input(e.proj_b), tape.input(e.w1),
          tape.input(e.b1), tape.input(e.w2),     tape.input(e.b2)};
}

// ---- condition vectors ----

struct ConditionVector {
  enum class Provenance : std::uint8_t { Sampled, Downstream, OneHot };

  ad::Tensor p;  // 1 x d, entries >= 0, max entry 1 after normalization
  Provenance provenance = Provenance::Sampled;
  bool uniform_fallback = false;  // downstream gradient vanished entirely
};

/// |Laplace(0, b)| draws scaled so the max entry is 1.
inline ConditionVector sample_condition(std::size_t d, double scale_b, Rng& rng) {
  if (scale_b <= 0.0) throw graph_error("sample_condition: scale must be positive");
  ad::Tensor p(1, d);
  for (;;) {
    double mx = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      p[i] = std::abs(rng.laplace(scale_b));
      mx = std::max(mx, p[i]);
    }
    if (mx > 0.0) {
      for (std::size_t i = 0; i < d; ++i) p[i] /= mx;
      return {p, ConditionVector::Provenance::Sampled, false};
    }
  }
}

inline ConditionVector one_hot_condition(std::size_t k, std::size_t d) {
  if (k >= d) throw graph_error("one_hot_condition: index out of range");
  ad::Tensor p(1, d);
  p[k] = 1.0;
  return {p, ConditionVector::Provenance::OneHot, false};
}

/// Gradient of the maximal class probability w.r.t. the embedding, rectified
/// and normalized: p = relu(norm(g)). A gradient with no positive component
/// falls back to the uniform condition.
inline ConditionVector downstream_condition(const DownstreamHead& head, const ad::Tensor& z,
                                            ConditionNorm norm = ConditionNorm::MaxAbs) {
  if (z.rows() != 1 || z.cols() != head.input_dim())
    throw graph_error("downstream_condition: embedding/head dimension mismatch");

  ad::Tensor grad(1, z.cols());
  {
    ad::Tape tape;
    StagedHead staged = stage_head(tape, head);
    ad::Var zv = tape.input(z);
    ad::Var probs = tape.row_softmax(head_logits_on_tape(tape, staged, zv));
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.val().cols(); ++c)
      if (probs.val().at(0, c) > probs.val().at(0, best)) best = c;
    ad::Tensor pick(1, probs.val().cols());
    pick[best] = 1.0;
    ad::Var target = tape.sum_all(tape.mul_rowvec(probs, tape.input(pick)));
    grad = tape.backward(target).at(zv);
  }

  bool all_zero = true;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (grad[i] != 0.0) all_zero = false;
  if (all_zero)
    return {ad::Tensor(1, z.cols(), 1.0), ConditionVector::Provenance::Downstream, true};

  ad::Tensor p(1, z.cols());
  {
    ad::Tape tape;
    ad::Var g = tape.input(grad);
    ad::Var normed = norm == ConditionNorm::MaxAbs ? tape.max_abs_normalize(g)
                                                   : tape.l2_normalize_rows(g);
    p = tape.relu(normed).val();
  }

  double mx = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) mx = std::max(mx, p[i]);
  if (mx == 0.0)  // gradient was entirely negative
    return {ad::Tensor(1, z.cols(), 1.0), ConditionVector::Provenance::Downstream, true};
  for (std::size_t i = 0; i < p.size(); ++i) p[i] /= mx;
  return {p, ConditionVector::Provenance::Downstream, false};
}

// ---- edge scoring ----

/// Per-undirected-edge importance scores aligned with the graph's edge list.
struct EdgeScores {
  std::vector<double> w;
};

/// Tape handles produced by a scoring pass: undirected scores (E x 1),
/// directed scores (2E x 1, both orientations of edge e at rows e and e+E),
/// and the pre-sigmoid logits used by the stable regularizer.
struct EdgeScoreVars {
  ad::Var undirected;
  ad::Var directed;
  ad::Var raw_directed;
};

namespace detail {

inline EdgeScoreVars score_edges_on_tape(ad::Tape& tape, ad::Var z, ad::Var p, const Graph& g,
                                         const StagedExplainer& ex,
                                         std::optional<std::uint32_t> target) {
  if ((ex.mode == ExplainerMode::Node) != target.has_value())
    throw graph_error("score_edges: target node required exactly in node mode");
  if (g.num_edges() == 0) throw graph_error("score_edges: graph has no edges");
  if (z.val().rows() != g.num_nodes)
    throw graph_error("score_edges: embedding rows != num_nodes");
  if (p.val().cols() != z.val().cols())
    throw graph_error("score_edges: condition length != embedding dim");
  if (target && *target >= g.num_nodes) throw graph_error("score_edges: target outside graph");

  const std::size_t e2 = 2 * g.num_edges();
  ad::Var zi = tape.row_gather(z, g.directed_src());
  ad::Var zj = tape.row_gather(z, g.directed_dst());
  std::vector<ad::Var> parts = {zi, zj};
  if (target)
    parts.push_back(tape.row_gather(z, std::vector<std::uint32_t>(e2, *target)));
  ad::Var pairs = tape.concat_cols(parts);

  ad::Var cond = tape.sigmoid(tape.add_rowvec(tape.matmul(p, ex.proj_w), ex.proj_b));
  ad::Var masked = tape.mul_rowvec(pairs, cond);
  ad::Var hidden = tape.relu(tape.add_rowvec(tape.matmul(masked, ex.w1), ex.b1));
  ad::Var raw = tape.add_rowvec(tape.matmul(hidden, ex.w2), ex.b2);
  ad::Var directed = tape.sigmoid(raw);

  std::vector<std::uint32_t> fwd(g.num_edges()), bwd(g.num_edges());
  for (std::uint32_t e = 0; e < g.num_edges(); ++e) {
    fwd[e] = e;
    bwd[e] = e + static_cast<std::uint32_t>(g.num_edges());
  }
  ad::Var undirected = tape.scale(
      tape.add(tape.row_gather(directed, fwd), tape.row_gather(directed, bwd)), 0.5);
  return {undirected, directed, raw};
}

}  // namespace detail

inline EdgeScoreVars score_edges_graph_on_tape(ad::Tape& tape, ad::Var z, ad::Var p,
                                               const Graph& g, const StagedExplainer& ex) {
  if (ex.mode != ExplainerMode::Graph)
    throw graph_error("score_edges_graph: explainer is not in graph mode");
  return detail::score_edges_on_tape(tape, z, p, g, ex, std::nullopt);
}

inline EdgeScoreVars score_edges_node_on_tape(ad::Tape& tape, ad::Var z, std::uint32_t target,
                                              ad::Var p, const Graph& g,
                                              const StagedExplainer& ex) {
  if (ex.mode != ExplainerMode::Node)
    throw graph_error("score_edges_node: explainer is not in node mode");
  return detail::score_edges_on_tape(tape, z, p, g, ex, target);
}

inline EdgeScores score_edges_graph(const ad::Tensor& z, const ConditionVector& p,
                                    const Graph& g, const EmbeddingExplainer& ex) {
  ad::Tape tape;
  StagedExplainer staged = stage_explainer(tape, ex);
  EdgeScoreVars v =
      score_edges_graph_on_tape(tape, tape.input(z), tape.input(p.p), g, staged);
  return {v.undirected.val().values()};
}

/// Node-mode scoring. The graph passed in is the explanation scope (the
/// caller extracts the k-hop subgraph; edges outside it get no score).
inline EdgeScores score_edges_node(const ad::Tensor& z, std::uint32_t target,
                                   const ConditionVector& p, const Graph& g,
                                   const EmbeddingExplainer& ex) {
  ad::Tape tape;
  StagedExplainer staged = stage_explainer(tape, ex);
  EdgeScoreVars v =
      score_edges_node_on_tape(tape, tape.input(z), target, tape.input(p.p), g, staged);
  return {v.undirected.val().values()};
}

// ---- edge selection ----

/// Boolean mask over undirected edges marking the ceil(k% * E) highest
/// scores; ties break toward the lower edge index.
inline std::vector<std::uint8_t> select_topk_edges(const EdgeScores& scores, double k_percent) {
  if (k_percent <= 0.0 || k_percent > 100.0)
    throw graph_error("select_topk_edges: k must be in (0, 100]");
  if (scores.w.empty()) throw graph_error("select_topk_edges: no edges");
  std::size_t count = static_cast<std::size_t>(
      std::ceil(k_percent / 100.0 * static_cast<double>(scores.w.size())));
  count = std::min(count, scores.w.size());
  std::vector<std::size_t> order(scores.w.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.w[a] != scores.w[b]) return scores.w[a] > scores.w[b];
    return a < b;
  });
  std::vector<std::uint8_t> mask(scores.w.size(), 0);
  for (std::size_t i = 0; i < count; ++i) mask[order[i]] = 1;
  return mask;
}

}  // namespace tage
