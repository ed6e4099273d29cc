#pragma once

// Graph data model. Undirected edges are stored once; message passing and
// per-edge scoring run over the doubled directed list, where directed edge e
// and e + num_edges are the two orientations of undirected edge e.

#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "tage/rng.hpp"
#include "tage/tensor.hpp"

namespace tage {

struct graph_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Graph {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // undirected, stored once
  ad::Tensor features;                                         // num_nodes x d_f
  std::vector<int> node_labels;                                // optional, per node
  std::vector<int> graph_labels;                               // optional, one per task
  std::vector<std::vector<std::uint8_t>> gt_edges;             // optional, per task: flag per edge

  std::size_t num_edges() const { return edges.size(); }
  std::size_t feature_dim() const { return features.cols(); }

  void validate() const {
    if (features.rows() != num_nodes)
      throw graph_error("graph: feature rows != num_nodes");
    for (auto [u, v] : edges) {
      if (u == v) throw graph_error("graph: self-loop in stored edge list");
      if (u >= num_nodes || v >= num_nodes)
        throw graph_error("graph: edge endpoint out of range");
    }
    if (!node_labels.empty() && node_labels.size() != num_nodes)
      throw graph_error("graph: node label count mismatch");
    for (const auto& flags : gt_edges)
      if (flags.size() != edges.size())
        throw graph_error("graph: ground-truth flag count != edge count");
  }

  /// Source indices of the doubled directed list: [u... then v...].
  std::vector<std::uint32_t> directed_src() const {
    std::vector<std::uint32_t> s;
    s.reserve(2 * edges.size());
    for (auto [u, v] : edges) s.push_back(u);
    for (auto [u, v] : edges) s.push_back(v);
    return s;
  }

  /// Destination indices of the doubled directed list: [v... then u...].
  std::vector<std::uint32_t> directed_dst() const {
    std::vector<std::uint32_t> d;
    d.reserve(2 * edges.size());
    for (auto [u, v] : edges) d.push_back(v);
    for (auto [u, v] : edges) d.push_back(u);
    return d;
  }

  std::vector<std::vector<std::uint32_t>> adjacency() const {
    std::vector<std::vector<std::uint32_t>> adj(num_nodes);
    for (auto [u, v] : edges) {
      adj[u].push_back(v);
      adj[v].push_back(u);
    }
    return adj;
  }

  std::vector<std::uint32_t> degrees() const {
    std::vector<std::uint32_t> deg(num_nodes, 0);
    for (auto [u, v] : edges) {
      ++deg[u];
      ++deg[v];
    }
    return deg;
  }
};

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct Dataset {
  std::vector<Graph> graphs;
  std::vector<Split> splits;  // aligned with graphs; empty means unassigned
  std::size_t num_tasks = 0;

  std::size_t feature_dim() const { return graphs.empty() ? 0 : graphs[0].feature_dim(); }

  std::vector<std::size_t> indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }

  /// Training indices, or every graph when no split is assigned.
  std::vector<std::size_t> train_or_all() const {
    if (splits.empty()) {
      std::vector<std::size_t> all(graphs.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }
    return indices_of(Split::Train);
  }

  void validate() const {
    for (const Graph& g : graphs) {
      g.validate();
      if (g.feature_dim() != feature_dim())
        throw graph_error("dataset: graphs disagree on feature dimension");
    }
    if (!splits.empty() && splits.size() != graphs.size())
      throw graph_error("dataset: split assignment count mismatch");
  }
};

/// Per-directed-edge and per-node coefficients of D^{-1/2} (A + I) D^{-1/2},
/// aligned with the doubled directed list.
struct NormalizedAdjacency {
  std::vector<double> edge_coeff;  // 2 * num_edges
  std::vector<double> self_coeff;  // num_nodes
};

/// Coefficient for directed edge (i, j) is 1 / sqrt((deg_i + 1) (deg_j + 1));
/// an isolated node keeps self coefficient 1.
inline NormalizedAdjacency sym_normalize(const Graph& g) {
  std::vector<std::uint32_t> deg = g.degrees();
  NormalizedAdjacency norm;
  norm.edge_coeff.reserve(2 * g.num_edges());
  auto coeff = [&](std::uint32_t a, std::uint32_t b) {
    return 1.0 / std::sqrt(static_cast<double>(deg[a] + 1) * static_cast<double>(deg[b] + 1));
  };
  for (auto [u, v] : g.edges) norm.edge_coeff.push_back(coeff(u, v));
  for (auto [u, v] : g.edges) norm.edge_coeff.push_back(coeff(v, u));
  norm.self_coeff.reserve(g.num_nodes);
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    norm.self_coeff.push_back(1.0 / static_cast<double>(deg[i] + 1));
  return norm;
}

struct Subgraph {
  Graph graph;
  std::vector<std::uint32_t> node_map;  // subgraph index -> original node id
  std::uint32_t target = 0;             // new index of the extraction center
  std::vector<std::uint32_t> edge_map;  // subgraph edge -> original edge id
};

/// Induced subgraph on the nodes within k hops of v. Nodes are ordered by
/// BFS discovery, so the extraction is deterministic; features, labels and
/// ground-truth flags are carried over.
inline Subgraph k_hop_subgraph(const Graph& g, std::uint32_t v, std::size_t k) {
  if (v >= g.num_nodes) throw graph_error("k_hop_subgraph: target out of range");
  if (k == 0) throw graph_error("k_hop_subgraph: k must be >= 1");
  auto adj = g.adjacency();

  std::vector<std::uint32_t> dist(g.num_nodes, UINT32_MAX);
  std::vector<std::uint32_t> order;
  std::queue<std::uint32_t> q;
  dist[v] = 0;
  q.push(v);
  order.push_back(v);
  while (!q.empty()) {
    std::uint32_t u = q.front();
    q.pop();
    if (dist[u] == k) continue;
    for (std::uint32_t w : adj[u])
      if (dist[w] == UINT32_MAX) {
        dist[w] = dist[u] + 1;
        q.push(w);
        order.push_back(w);
      }
  }

  std::vector<std::uint32_t> new_id(g.num_nodes, UINT32_MAX);
  for (std::size_t i = 0; i < order.size(); ++i) new_id[order[i]] = static_cast<std::uint32_t>(i);

  Subgraph sub;
  sub.node_map = order;
  sub.target = 0;  // v is discovered first
  sub.graph.num_nodes = order.size();
  sub.graph.features = ad::Tensor(order.size(), g.feature_dim());
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < g.feature_dim(); ++j)
      sub.graph.features.at(i, j) = g.features.at(order[i], j);
  if (!g.node_labels.empty()) {
    sub.graph.node_labels.reserve(order.size());
    for (std::uint32_t n : order) sub.graph.node_labels.push_back(g.node_labels[n]);
  }
  sub.graph.graph_labels = g.graph_labels;
  sub.graph.gt_edges.resize(g.gt_edges.size());

  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    auto [u, w] = g.edges[e];
    if (new_id[u] == UINT32_MAX || new_id[w] == UINT32_MAX) continue;
    sub.graph.edges.emplace_back(new_id[u], new_id[w]);
    sub.edge_map.push_back(static_cast<std::uint32_t>(e));
    for (std::size_t t = 0; t < g.gt_edges.size(); ++t)
      sub.graph.gt_edges[t].push_back(g.gt_edges[t][e]);
  }
  return sub;
}

/// Deterministic train/val/test assignment by shuffled index.
inline std::vector<Split> assign_splits(std::size_t n, double train_frac, double val_frac,
                                        Rng rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<Split> s(n, Split::Test);
  auto n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
  auto n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      s[idx[i]] = Split::Train;
    else if (i < n_train + n_val)
      s[idx[i]] = Split::Val;
  }
  return s;
}

}  // namespace tage
