#pragma once

// Fidelity / sparsity metrics, ground-truth edge AUC, fidelity-sparsity
// sweeps, cheap baselines, and the multitask timing report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "tage/objectives.hpp"

namespace tage {

// ---- node masks and node removal ----

/// Endpoints of the selected edges. The target node of a node-level
/// explanation is never part of the removable mask.
inline std::vector<std::uint8_t> node_mask_from_edges(
    const Graph& g, const std::vector<std::uint8_t>& selected_edges,
    std::optional<std::uint32_t> target = std::nullopt) {
  if (selected_edges.size() != g.num_edges())
    throw graph_error("node_mask_from_edges: selection length != edge count");
  std::vector<std::uint8_t> mask(g.num_nodes, 0);
  for (std::size_t e = 0; e < g.num_edges(); ++e)
    if (selected_edges[e]) {
      mask[g.edges[e].first] = 1;
      mask[g.edges[e].second] = 1;
    }
  if (target) mask[*target] = 0;
  return mask;
}

struct MaskedGraph {
  Graph graph;                        // masked nodes and incident edges removed
  std::vector<std::int64_t> new_id;   // original node -> new index, -1 if removed
};

/// Rebuilds the graph without the masked nodes; surviving node indices are
/// remapped compactly in their original order.
inline MaskedGraph remove_nodes(const Graph& g, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != g.num_nodes) throw graph_error("remove_nodes: mask length != num_nodes");
  MaskedGraph out;
  out.new_id.assign(g.num_nodes, -1);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (!mask[i]) out.new_id[i] = static_cast<std::int64_t>(kept++);
  out.graph.num_nodes = kept;
  out.graph.features = ad::Tensor(kept, g.feature_dim());
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (out.new_id[i] >= 0)
      for (std::size_t j = 0; j < g.feature_dim(); ++j)
        out.graph.features.at(static_cast<std::size_t>(out.new_id[i]), j) = g.features.at(i, j);
  if (!g.node_labels.empty())
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      if (out.new_id[i] >= 0) out.graph.node_labels.push_back(g.node_labels[i]);
  out.graph.graph_labels = g.graph_labels;
  out.graph.gt_edges.resize(g.gt_edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    auto [u, v] = g.edges[e];
    if (out.new_id[u] < 0 || out.new_id[v] < 0) continue;
    out.graph.edges.emplace_back(static_cast<std::uint32_t>(out.new_id[u]),
                                 static_cast<std::uint32_t>(out.new_id[v]));
    for (std::size_t t = 0; t < g.gt_edges.size(); ++t)
      out.graph.gt_edges[t].push_back(g.gt_edges[t][e]);
  }
  return out;
}

// ---- model forward for evaluation ----

/// Class probabilities of the model head-compose-encoder on a graph with the
/// masked nodes removed. Graph level: pooled prediction; a fully masked
/// graph carries no information, so the head is applied to the zero
/// embedding. Node level: prediction re-read at the target's new index.
inline ad::Tensor masked_prediction(const Encoder& enc, const DownstreamHead& head,
                                    const Graph& g, const std::vector<std::uint8_t>& node_mask,
                                    std::optional<std::uint32_t> target = std::nullopt) {
  MaskedGraph masked = remove_nodes(g, node_mask);
  if (target) {
    if (node_mask[*target]) throw graph_error("masked_prediction: target is masked");
    ad::Tensor z = encode_nodes(masked.graph, enc);
    auto row = static_cast<std::size_t>(masked.new_id[*target]);
    ad::Tensor zt(1, z.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) zt.at(0, c) = z.at(row, c);
    return predict_proba(head, zt);
  }
  ad::Tensor z = masked.graph.num_nodes == 0 ? ad::Tensor(1, enc.output_dim())
                                             : encode_graph(masked.graph, enc);
  return predict_proba(head, z);
}

// ---- fidelity and sparsity ----

enum class ClassRule : std::uint8_t { Predicted, BestOfClasses };

/// One explanation to evaluate: a graph (or a node with its scope graph) and
/// the node mask derived from the selected edges.
struct EvalInstance {
  const Graph* graph = nullptr;
  std::optional<std::uint32_t> target;
  std::vector<std::uint8_t> node_mask;
};

struct FidelityStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

/// Probability drop for one instance: f(G)_c - f(G^{1-m})_c, with c the
/// predicted class, or the best drop over all classes.
inline double fidelity_from_probs(const ad::Tensor& before, const ad::Tensor& after,
                                  ClassRule rule) {
  if (rule == ClassRule::Predicted) {
    std::size_t c = 0;
    for (std::size_t j = 1; j < before.cols(); ++j)
      if (before.at(0, j) > before.at(0, c)) c = j;
    return before.at(0, c) - after.at(0, c);
  }
  double best = -2.0;
  for (std::size_t c = 0; c < before.cols(); ++c)
    best = std::max(best, before.at(0, c) - after.at(0, c));
  return best;
}

/// Mean +- std of f(G)_c - f(G^{1-m})_c over the instances.
inline FidelityStats fidelity_prob(const Encoder& enc, const DownstreamHead& head,
                                   const std::vector<EvalInstance>& instances,
                                   ClassRule rule = ClassRule::Predicted) {
  std::vector<double> fid;
  fid.reserve(instances.size());
  for (const EvalInstance& inst : instances) {
    const Graph& g = *inst.graph;
    std::vector<std::uint8_t> empty_mask(g.num_nodes, 0);
    ad::Tensor before = masked_prediction(enc, head, g, empty_mask, inst.target);
    ad::Tensor after = masked_prediction(enc, head, g, inst.node_mask, inst.target);
    fid.push_back(fidelity_from_probs(before, after, rule));
  }
  FidelityStats s;
  s.n = fid.size();
  for (double f : fid) s.mean += f;
  s.mean /= static_cast<double>(s.n);
  for (double f : fid) s.stddev += (f - s.mean) * (f - s.mean);
  s.stddev = s.n > 1 ? std::sqrt(s.stddev / static_cast<double>(s.n)) : 0.0;
  return s;
}

/// Mean masked-node fraction |m| / |V|.
inline double sparsity(const std::vector<EvalInstance>& instances) {
  double s = 0.0;
  for (const EvalInstance& inst : instances) {
    if (inst.graph->num_nodes == 0) throw graph_error("sparsity: empty graph");
    std::size_t m = 0;
    for (auto b : inst.node_mask) m += b;
    s += static_cast<double>(m) / static_cast<double>(inst.graph->num_nodes);
  }
  return s / static_cast<double>(instances.size());
}

// ---- ground-truth edge AUC ----

/// Probability that a uniformly random ground-truth edge outranks a random
/// non-ground-truth edge; ties count one half. Rank-statistic form.
inline double edge_auc(const std::vector<double>& scores,
                       const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw graph_error("edge_auc: length mismatch");
  std::size_t pos = 0;
  for (auto l : labels) pos += (l != 0);
  std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw graph_error("edge_auc: need both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over tied groups, 1-based
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t e = 0; e < scores.size(); ++e)
    if (labels[e]) rank_sum += rank[e];
  double pos_n = static_cast<double>(pos), neg_n = static_cast<double>(neg);
  return (rank_sum - pos_n * (pos_n + 1.0) / 2.0) / (pos_n * neg_n);
}

// ---- baselines ----

/// Seeded uniform scores in [0, 1).
inline EdgeScores baseline_random(const Graph& g, Rng& rng) {
  EdgeScores s;
  s.w.reserve(g.num_edges());
  for (std::size_t e = 0; e < g.num_edges(); ++e) s.w.push_back(rng.uniform());
  return s;
}

/// |d max-class-probability / d edge-weight| at all-ones weights, per
/// undirected edge (both orientations share one weight), max-normalized to
/// [0, 1].
inline EdgeScores baseline_gradient_saliency(const Encoder& enc, const DownstreamHead& head,
                                             const Graph& g,
                                             std::optional<std::uint32_t> target = std::nullopt) {
  if (g.num_edges() == 0) throw graph_error("baseline_gradient_saliency: no edges");
  ad::Tape tape;
  StagedEncoder senc = stage_encoder(tape, enc);
  StagedHead shead = stage_head(tape, head);
  ad::Var w = tape.input(ad::Tensor(2 * g.num_edges(), 1, 1.0));
  ad::Var h = encode_nodes_on_tape(tape, g, senc, w);
  ad::Var z = target ? tape.row_gather(h, {*target}) : tape.col_mean(h);
  ad::Var probs = tape.row_softmax(head_logits_on_tape(tape, shead, z));
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.val().cols(); ++c)
    if (probs.val().at(0, c) > probs.val().at(0, best)) best = c;
  ad::Tensor pick(1, probs.val().cols());
  pick[best] = 1.0;
  ad::Var objective = tape.sum_all(tape.mul_rowvec(probs, tape.input(pick)));
  const ad::Tensor& gw = tape.backward(objective).at(w);

  EdgeScores s;
  s.w.resize(g.num_edges());
  double mx = 0.0;
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    s.w[e] = std::abs(gw.at(e, 0) + gw.at(e + g.num_edges(), 0));
    mx = std::max(mx, s.w[e]);
  }
  if (mx > 0.0)
    for (double& v : s.w) v /= mx;
  return s;
}

// ---- sweeps ----

struct MetricPoint {
  double k_percent = 0.0;
  double sparsity_masked = 0.0;   // masked-node fraction
  double sparsity_kept = 0.0;     // 1 - masked fraction (the figures' axis)
  double fidelity_mean = 0.0;
  double fidelity_std = 0.0;
};

/// One scored explanation ready for thresholding at different k.
struct ScoredExplanation {
  const Graph* graph = nullptr;
  std::optional<std::uint32_t> target;
  EdgeScores scores;
};

inline std::vector<EvalInstance> instances_at_k(const std::vector<ScoredExplanation>& scored,
                                                double k_percent) {
  std::vector<EvalInstance> out;
  out.reserve(scored.size());
  for (const ScoredExplanation& s : scored) {
    EvalInstance inst;
    inst.graph = s.graph;
    inst.target = s.target;
    if (k_percent <= 0.0)
      inst.node_mask.assign(s.graph->num_nodes, 0);
    else
      inst.node_mask =
          node_mask_from_edges(*s.graph, select_topk_edges(s.scores, k_percent), s.target);
    out.push_back(std::move(inst));
  }
  return out;
}

/// Fidelity/sparsity at each k in the list. Sparsity is nondecreasing in k.
inline std::vector<MetricPoint> sweep_curve(const Encoder& enc, const DownstreamHead& head,
                                            const std::vector<ScoredExplanation>& scored,
                                            const std::vector<double>& k_list,
                                            ClassRule rule = ClassRule::Predicted) {
  std::vector<MetricPoint> out;
  for (double k : k_list) {
    std::vector<EvalInstance> inst = instances_at_k(scored, k);
    MetricPoint pt;
    pt.k_percent = k;
    pt.sparsity_masked = sparsity(inst);
    pt.sparsity_kept = 1.0 - pt.sparsity_masked;
    FidelityStats f = fidelity_prob(enc, head, inst, rule);
    pt.fidelity_mean = f.mean;
    pt.fidelity_std = f.stddev;
    out.push_back(pt);
  }
  return out;
}

/// Binary search for the k whose measured mean sparsity is within the given
/// tolerance of the requested level (sparsity is monotone in k). Returns the
/// closest k found.
inline double find_k_for_sparsity(const std::vector<ScoredExplanation>& scored,
                                  double target_sparsity, double tol = 0.02) {
  double lo = 0.0, hi = 100.0;
  double best_k = 100.0, best_err = 1e9;
  for (int it = 0; it < 40; ++it) {
    double mid = 0.5 * (lo + hi);
    double s = mid <= 0.0 ? 0.0 : sparsity(instances_at_k(scored, mid));
    double err = std::abs(s - target_sparsity);
    if (err < best_err) {
      best_err = err;
      best_k = mid;
    }
    if (err <= tol) break;
    if (s < target_sparsity)
      lo = mid;
    else
      hi = mid;
  }
  return best_k;
}

// ---- multitask report ----

struct TimingReport {
  double train_seconds = 0.0;
  std::vector<double> inference_seconds;  // one entry per task

  double total_seconds() const {
    double t = train_seconds;
    for (double s : inference_seconds) t += s;
    return t;
  }
};

struct TaskMetrics {
  std::size_t task = 0;
  double auc = 0.5;
  double fidelity_mean = 0.0;
  double fidelity_std = 0.0;
  double sparsity_masked = 0.0;
};

struct MultitaskReport {
  TimingReport timing;
  std::vector<TaskMetrics> tasks;
  EmbeddingExplainer explainer;
  std::size_t train_invocations = 0;  // how often explainer training ran during the report
};

/// Trains ONE embedding explainer (timed), then serves every task with
/// gradient conditions from its own head (timed per task). Verifies the
/// task-agnostic property: training runs exactly once however many heads
/// there are. Per-task metrics are fidelity at the fixed sparsity level and
/// ground-truth edge AUC on the evaluation graphs.
inline MultitaskReport multitask_report(const Encoder& enc, const Dataset& data,
                                        const ExplainerTrainConfig& train_cfg,
                                        const std::vector<DownstreamHead>& heads,
                                        double fixed_sparsity, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  MultitaskReport report;

  std::size_t invocations_before = explainer_train_invocations();
  auto t0 = clock::now();
  ExplainerTrainResult trained = train_embedding_explainer(enc, data, train_cfg, seed);
  report.timing.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  report.explainer = std::move(trained.explainer);

  std::vector<std::size_t> eval_idx =
      data.splits.empty() ? data.train_or_all() : data.indices_of(Split::Test);

  for (std::size_t t = 0; t < heads.size(); ++t) {
    auto t1 = clock::now();
    std::vector<ScoredExplanation> scored;
    std::vector<double> all_scores;
    std::vector<std::uint8_t> all_labels;
    for (std::size_t gi : eval_idx) {
      const Graph& g = data.graphs[gi];
      if (g.num_edges() == 0) continue;
      ad::Tensor zg = encode_graph(g, enc);
      ConditionVector p = downstream_condition(heads[t], zg);
      EdgeScores s = score_edges_graph(encode_nodes(g, enc), p, g, report.explainer);
      if (t < g.gt_edges.size()) {
        all_scores.insert(all_scores.end(), s.w.begin(), s.w.end());
        all_labels.insert(all_labels.end(), g.gt_edges[t].begin(), g.gt_edges[t].end());
      }
      scored.push_back({&g, std::nullopt, std::move(s)});
    }
    report.timing.inference_seconds.push_back(
        std::chrono::duration<double>(clock::now() - t1).count());

    TaskMetrics tm;
    tm.task = t;
    double k = find_k_for_sparsity(scored, fixed_sparsity);
    std::vector<EvalInstance> inst = instances_at_k(scored, k);
    FidelityStats f = fidelity_prob(enc, heads[t], inst);
    tm.fidelity_mean = f.mean;
    tm.fidelity_std = f.stddev;
    tm.sparsity_masked = sparsity(inst);
    bool has_pos = false, has_neg = false;
    for (auto l : all_labels) (l ? has_pos : has_neg) = true;
    if (has_pos && has_neg) tm.auc = edge_auc(all_scores, all_labels);
    report.tasks.push_back(tm);
  }

  report.train_invocations = explainer_train_invocations() - invocations_before;
  if (report.train_invocations != 1)
    throw graph_error("multitask_report: explainer training must run exactly once");
  return report;
}

}  // namespace tage
