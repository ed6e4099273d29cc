#pragma once

// Line-oriented text container for graph datasets.
//
//   GRAPHS <count> FDIM <d_f> TASKS <M>
//   G <num_nodes> <num_edges>
//   E <u> <v> [one 0/1 ground-truth flag per task]   (num_edges lines)
//   X <d_f reals>                                    (num_nodes lines)
//   Y <num_nodes node labels>                        (optional)
//   L <M graph labels>                               (optional)
//
// Reals are written with 17 significant digits so a write/read round trip
// reproduces every double exactly.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tage/graph.hpp"

namespace tage {

struct container_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] inline void fail(std::size_t line, const std::string& what) {
  throw container_error("container: line " + std::to_string(line) + ": " + what);
}

struct LineReader {
  std::istream& in;
  std::size_t line_no = 0;
  std::string line;
  bool pushed = false;

  bool next() {
    if (pushed) {
      pushed = false;
      return true;
    }
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty()) return true;
    }
    return false;
  }

  void push_back() { pushed = true; }
};

}  // namespace detail

inline void write_container(const Dataset& ds, std::ostream& out) {
  out << "GRAPHS " << ds.graphs.size() << " FDIM " << ds.feature_dim() << " TASKS "
      << ds.num_tasks << "\n";
  for (const Graph& g : ds.graphs) {
    out << "G " << g.num_nodes << " " << g.edges.size() << "\n";
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      out << "E " << g.edges[e].first << " " << g.edges[e].second;
      for (const auto& flags : g.gt_edges) out << " " << static_cast<int>(flags[e]);
      out << "\n";
    }
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
      out << "X";
      for (std::size_t j = 0; j < g.feature_dim(); ++j)
        out << " " << detail::fmt_real(g.features.at(i, j));
      out << "\n";
    }
    if (!g.node_labels.empty()) {
      out << "Y";
      for (int y : g.node_labels) out << " " << y;
      out << "\n";
    }
    if (!g.graph_labels.empty()) {
      out << "L";
      for (int l : g.graph_labels) out << " " << l;
      out << "\n";
    }
  }
}

inline void write_container(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw container_error("container: cannot open for writing: " + path);
  write_container(ds, f);
  if (!f) throw container_error("container: write failed: " + path);
}

inline Dataset read_container(std::istream& in) {
  detail::LineReader r{in};
  if (!r.next()) detail::fail(1, "missing header");

  std::istringstream hs(r.line);
  std::string kw_graphs, kw_fdim, kw_tasks;
  std::size_t count = 0, fdim = 0, tasks = 0;
  if (!(hs >> kw_graphs >> count >> kw_fdim >> fdim >> kw_tasks >> tasks) ||
      kw_graphs != "GRAPHS" || kw_fdim != "FDIM" || kw_tasks != "TASKS")
    detail::fail(r.line_no, "malformed header, expected 'GRAPHS <n> FDIM <d> TASKS <m>'");

  Dataset ds;
  ds.num_tasks = tasks;
  ds.graphs.reserve(count);

  for (std::size_t gi = 0; gi < count; ++gi) {
    if (!r.next()) detail::fail(r.line_no + 1, "truncated file: expected graph record");
    std::istringstream gs(r.line);
    std::string tag;
    std::size_t n = 0, m = 0;
    if (!(gs >> tag >> n >> m) || tag != "G")
      detail::fail(r.line_no, "expected 'G <num_nodes> <num_edges>'");

    Graph g;
    g.num_nodes = n;
    bool saw_gt = false;
    for (std::size_t e = 0; e < m; ++e) {
      if (!r.next()) detail::fail(r.line_no + 1, "truncated file: expected edge line");
      std::istringstream es(r.line);
      std::uint32_t u = 0, v = 0;
      if (!(es >> tag >> u >> v) || tag != "E") detail::fail(r.line_no, "expected 'E <u> <v>'");
      if (u >= n || v >= n)
        detail::fail(r.line_no, "edge endpoint " + std::to_string(std::max(u, v)) +
                                    " out of range for " + std::to_string(n) + " nodes");
      g.edges.emplace_back(u, v);
      std::vector<int> flags;
      int flag;
      while (es >> flag) flags.push_back(flag);
      if (!flags.empty()) {
        if (flags.size() != tasks)
          detail::fail(r.line_no, "expected one ground-truth flag per task");
        if (!saw_gt) {
          g.gt_edges.assign(tasks, {});
          saw_gt = true;
        }
        for (std::size_t t = 0; t < tasks; ++t)
          g.gt_edges[t].push_back(static_cast<std::uint8_t>(flags[t] != 0));
      } else if (saw_gt) {
        detail::fail(r.line_no, "mixed edges with and without ground-truth flags");
      }
    }

    g.features = ad::Tensor(n, fdim);
    for (std::size_t i = 0; i < n; ++i) {
      if (!r.next()) detail::fail(r.line_no + 1, "truncated file: expected feature row");
      std::istringstream xs(r.line);
      if (!(xs >> tag) || tag != "X") detail::fail(r.line_no, "expected 'X <features>'");
      for (std::size_t j = 0; j < fdim; ++j)
        if (!(xs >> g.features.at(i, j)))
          detail::fail(r.line_no, "feature row has fewer than " + std::to_string(fdim) +
                                      " values");
    }

    // Optional Y / L lines belong to this graph; anything else starts the next one.
    while (true) {
      if (!r.next()) break;
      if (r.line[0] == 'Y') {
        std::istringstream ys(r.line);
        ys >> tag;
        int y;
        while (ys >> y) g.node_labels.push_back(y);
        if (g.node_labels.size() != n)
          detail::fail(r.line_no, "node label count != num_nodes");
      } else if (r.line[0] == 'L') {
        std::istringstream ls(r.line);
        ls >> tag;
        int l;
        while (ls >> l) g.graph_labels.push_back(l);
        if (g.graph_labels.size() != tasks)
          detail::fail(r.line_no, "graph label count != task count");
      } else {
        r.push_back();
        break;
      }
    }

    try {
      g.validate();
    } catch (const graph_error& err) {
      detail::fail(r.line_no, err.what());
    }
    ds.graphs.push_back(std::move(g));
  }

  ds.validate();
  return ds;
}

inline Dataset read_container(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw container_error("container: cannot open: " + path);
  return read_container(f);
}

inline bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.num_tasks != b.num_tasks || a.graphs.size() != b.graphs.size()) return false;
  for (std::size_t i = 0; i < a.graphs.size(); ++i) {
    const Graph& x = a.graphs[i];
    const Graph& y = b.graphs[i];
    if (x.num_nodes != y.num_nodes || x.edges != y.edges || !(x.features == y.features) ||
        x.node_labels != y.node_labels || x.graph_labels != y.graph_labels ||
        x.gt_edges != y.gt_edges)
      return false;
  }
  return true;
}

}  // namespace tage
