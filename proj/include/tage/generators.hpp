#pragma once

// Synthetic datasets with explanation ground truth. Both generators are
// pure functions of (config, seed).

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tage/graph.hpp"
#include "tage/rng.hpp"

namespace tage {

// ---------------------------------------------------------------------------
// BA-Shapes: a Barabasi-Albert base graph with five-node house motifs hung
// off random base nodes. Node classes: 0 base, 1 house top, 2 house middle,
// 3 house bottom. The 6 intra-house edges are the explanation ground truth;
// attachment and perturbation edges are not.
// ---------------------------------------------------------------------------

struct BaShapesConfig {
  std::size_t base_nodes = 300;   // n0
  std::size_t attachment = 5;     // edges per new node during BA growth
  std::size_t num_houses = 80;
  double perturb_frac = 0.1;      // random extra edges as a fraction of the edge count
  std::size_t feature_dim = 10;   // constant all-ones features
};

inline Graph generate_ba_shapes(const BaShapesConfig& cfg, std::uint64_t seed) {
  if (cfg.attachment >= cfg.base_nodes)
    throw graph_error("ba-shapes: attachment m must be < base node count");
  if (cfg.base_nodes == 0) throw graph_error("ba-shapes: empty base");
  Rng rng(seed);

  Graph g;
  g.num_nodes = cfg.base_nodes + 5 * cfg.num_houses;
  g.node_labels.assign(g.num_nodes, 0);
  g.gt_edges.resize(1);

  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  auto add_edge = [&](std::uint32_t u, std::uint32_t v, bool ground_truth) {
    if (u > v) std::swap(u, v);
    if (u == v || !seen.insert({u, v}).second) return false;
    g.edges.emplace_back(u, v);
    g.gt_edges[0].push_back(ground_truth ? 1 : 0);
    return true;
  };

  // BA growth: complete seed on m nodes, then preferential attachment via a
  // repeated-endpoint list.
  const std::size_t m = cfg.attachment;
  std::vector<std::uint32_t> endpoint_pool;
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = i + 1; j < m; ++j) {
      add_edge(i, j, false);
      endpoint_pool.push_back(i);
      endpoint_pool.push_back(j);
    }
  for (std::uint32_t node = static_cast<std::uint32_t>(m); node < cfg.base_nodes; ++node) {
    std::set<std::uint32_t> targets;
    while (targets.size() < m)
      targets.insert(endpoint_pool[rng.integer(endpoint_pool.size())]);
    for (std::uint32_t t : targets) {
      add_edge(node, t, false);
      endpoint_pool.push_back(node);
      endpoint_pool.push_back(t);
    }
  }

  // Houses: square base (two bottom, two middle) with a roof node on top.
  for (std::size_t h = 0; h < cfg.num_houses; ++h) {
    auto base = static_cast<std::uint32_t>(cfg.base_nodes + 5 * h);
    std::uint32_t top = base, mid1 = base + 1, mid2 = base + 2, bot1 = base + 3, bot2 = base + 4;
    g.node_labels[top] = 1;
    g.node_labels[mid1] = g.node_labels[mid2] = 2;
    g.node_labels[bot1] = g.node_labels[bot2] = 3;
    add_edge(bot1, bot2, true);
    add_edge(bot1, mid1, true);
    add_edge(bot2, mid2, true);
    add_edge(mid1, mid2, true);
    add_edge(mid1, top, true);
    add_edge(mid2, top, true);
    auto anchor = static_cast<std::uint32_t>(rng.integer(cfg.base_nodes));
    auto house_node = static_cast<std::uint32_t>(base + rng.integer(5));
    add_edge(house_node, anchor, false);
  }

  // Random perturbation edges, never marked as ground truth.
  auto extra = static_cast<std::size_t>(cfg.perturb_frac * static_cast<double>(g.edges.size()) + 0.5);
  std::size_t added = 0;
  while (added < extra) {
    auto u = static_cast<std::uint32_t>(rng.integer(g.num_nodes));
    auto v = static_cast<std::uint32_t>(rng.integer(g.num_nodes));
    if (add_edge(u, v, false)) ++added;
  }

  g.features = ad::Tensor(g.num_nodes, cfg.feature_dim, 1.0);
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Motif multitask: each graph is a random tree backbone with independently
// sampled cycle motifs attached. Task m is the presence of motif m; the
// per-task ground truth is that motif's edges. Tree backbones keep the tasks
// unambiguous: the only cycles in a graph are the planted motifs.
// ---------------------------------------------------------------------------

struct MotifMultitaskConfig {
  std::size_t num_graphs = 500;
  std::size_t backbone_min = 8;
  std::size_t backbone_max = 16;
  std::vector<std::size_t> motif_cycle_lengths = {3, 4, 5};  // one task per entry
  std::size_t feature_dim = 8;
  double balance_lo = 0.4;
  double balance_hi = 0.6;
  double train_frac = 0.8;
  double val_frac = 0.1;
};

inline Graph make_motif_graph(std::size_t backbone_nodes,
                              const std::vector<std::size_t>& cycle_lengths,
                              const std::vector<std::uint8_t>& present, std::size_t feature_dim,
                              Rng& rng) {
  Graph g;
  std::size_t total = backbone_nodes;
  for (std::size_t t = 0; t < present.size(); ++t)
    if (present[t]) total += cycle_lengths[t];
  g.num_nodes = total;
  g.gt_edges.resize(present.size());
  auto push_edge = [&](std::uint32_t u, std::uint32_t v, int gt_task) {
    g.edges.emplace_back(u, v);
    for (std::size_t t = 0; t < present.size(); ++t)
      g.gt_edges[t].push_back(gt_task == static_cast<int>(t) ? 1 : 0);
  };

  // Random tree backbone: node i attaches to a uniform earlier node.
  for (std::uint32_t i = 1; i < backbone_nodes; ++i)
    push_edge(i, static_cast<std::uint32_t>(rng.integer(i)), -1);

  std::uint32_t next = static_cast<std::uint32_t>(backbone_nodes);
  for (std::size_t t = 0; t < present.size(); ++t) {
    if (!present[t]) continue;
    std::size_t len = cycle_lengths[t];
    std::uint32_t first = next;
    for (std::size_t i = 0; i + 1 < len; ++i)
      push_edge(first + static_cast<std::uint32_t>(i), first + static_cast<std::uint32_t>(i) + 1,
                static_cast<int>(t));
    push_edge(first + static_cast<std::uint32_t>(len) - 1, first, static_cast<int>(t));
    auto anchor = static_cast<std::uint32_t>(rng.integer(backbone_nodes));
    push_edge(first + static_cast<std::uint32_t>(rng.integer(len)), anchor, -1);
    next += static_cast<std::uint32_t>(len);
  }

  g.graph_labels.assign(present.begin(), present.end());
  g.features = ad::Tensor(g.num_nodes, feature_dim, 1.0);
  return g;
}

inline Dataset generate_motif_multitask(const MotifMultitaskConfig& cfg, std::uint64_t seed) {
  if (cfg.num_graphs == 0 || cfg.motif_cycle_lengths.empty() || cfg.backbone_min < 2 ||
      cfg.backbone_max < cfg.backbone_min)
    throw graph_error("motif-multitask: infeasible config");
  for (std::size_t len : cfg.motif_cycle_lengths)
    if (len < 3) throw graph_error("motif-multitask: cycle length must be >= 3");
  Rng rng(seed);
  const std::size_t M = cfg.motif_cycle_lengths.size();

  // Presence table, rejection-sampled per task until the positive rate lands
  // inside the balance window.
  std::vector<std::vector<std::uint8_t>> presence(cfg.num_graphs,
                                                  std::vector<std::uint8_t>(M, 0));
  for (std::size_t t = 0; t < M; ++t) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000)
        throw graph_error("motif-multitask: could not satisfy class balance");
      std::size_t positives = 0;
      for (std::size_t i = 0; i < cfg.num_graphs; ++i) {
        presence[i][t] = rng.bernoulli(0.5) ? 1 : 0;
        positives += presence[i][t];
      }
      double rate = static_cast<double>(positives) / static_cast<double>(cfg.num_graphs);
      if (rate >= cfg.balance_lo && rate <= cfg.balance_hi) break;
    }
  }

  Dataset ds;
  ds.num_tasks = M;
  ds.graphs.reserve(cfg.num_graphs);
  for (std::size_t i = 0; i < cfg.num_graphs; ++i) {
    std::size_t backbone =
        cfg.backbone_min + rng.integer(cfg.backbone_max - cfg.backbone_min + 1);
    ds.graphs.push_back(
        make_motif_graph(backbone, cfg.motif_cycle_lengths, presence[i], cfg.feature_dim, rng));
  }
  ds.splits = assign_splits(cfg.num_graphs, cfg.train_frac, cfg.val_frac, rng.fork(1));
  ds.validate();
  return ds;
}

}  // namespace tage
