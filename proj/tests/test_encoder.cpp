#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tage/checkpoint.hpp"
#include "tage/encoder.hpp"
#include "tage/generators.hpp"
#include "tage/grad_check.hpp"
#include "tage/pretrain.hpp"
#include "test_support.hpp"

using namespace tage;
using ad::Tensor;

namespace {

Graph random_graph(Rng& rng, std::size_t n, std::size_t extra_edges, std::size_t fdim) {
  Graph g;
  g.num_nodes = n;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (std::uint32_t i = 1; i < n; ++i) {
    auto j = static_cast<std::uint32_t>(rng.integer(i));
    g.edges.emplace_back(j, i);
    seen.insert({j, i});
  }
  std::size_t added = 0;
  while (added < extra_edges) {
    auto u = static_cast<std::uint32_t>(rng.integer(n));
    auto v = static_cast<std::uint32_t>(rng.integer(n));
    if (u == v) continue;
    auto key = std::minmax(u, v);
    if (!seen.insert({key.first, key.second}).second) continue;
    g.edges.emplace_back(key.first, key.second);
    ++added;
  }
  g.features = tage::test::random_tensor(rng, n, fdim);
  return g;
}

Encoder random_encoder(Rng& rng, LayerKind kind, Pooling pooling, std::size_t fdim) {
  return kind == LayerKind::Gcn ? make_gcn_encoder({fdim, 6, 5}, pooling, rng)
                                : make_gin_encoder({fdim, 6, 5}, pooling, rng);
}

}  // namespace

TEST_CASE("all-ones edge weights reproduce the unweighted forward bitwise") {
  Rng rng(3);
  Graph g = random_graph(rng, 12, 6, 4);
  for (LayerKind kind : {LayerKind::Gcn, LayerKind::Gin}) {
    Encoder enc = random_encoder(rng, kind, Pooling::None, 4);
    std::vector<double> ones(2 * g.num_edges(), 1.0);
    Tensor without = encode_nodes(g, enc);
    Tensor with = encode_nodes(g, enc, &ones);
    REQUIRE(with == without);
  }
}

TEST_CASE("zero weight on an edge equals deleting the edge, exactly") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed * 131);
    Graph g = random_graph(rng, 10 + rng.integer(8), rng.integer(8), 3);
    for (LayerKind kind : {LayerKind::Gcn, LayerKind::Gin}) {
      Encoder enc = random_encoder(rng, kind, Pooling::None, 3);
      std::size_t victim = rng.integer(g.num_edges());

      std::vector<double> w(2 * g.num_edges(), 1.0);
      w[victim] = 0.0;
      w[victim + g.num_edges()] = 0.0;
      Tensor masked = encode_nodes(g, enc, &w);

      Graph without = g;
      without.edges.erase(without.edges.begin() + static_cast<std::ptrdiff_t>(victim));
      Tensor deleted = encode_nodes(without, enc);

      REQUIRE(masked == deleted);
    }
  }
}

TEST_CASE("zeroing several edges equals deleting them") {
  Rng rng(77);
  Graph g = random_graph(rng, 14, 8, 3);
  Encoder enc = random_encoder(rng, LayerKind::Gcn, Pooling::None, 3);
  std::vector<std::size_t> victims = {0, 3, g.num_edges() - 1};
  std::vector<double> w(2 * g.num_edges(), 1.0);
  Graph without = g;
  without.edges.clear();
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    bool drop = std::find(victims.begin(), victims.end(), e) != victims.end();
    if (drop) {
      w[e] = 0.0;
      w[e + g.num_edges()] = 0.0;
    } else {
      without.edges.push_back(g.edges[e]);
    }
  }
  REQUIRE(encode_nodes(g, enc, &w) == encode_nodes(without, enc));
}

TEST_CASE("permutation equivariance") {
  Rng rng(5);
  Graph g = random_graph(rng, 9, 5, 3);
  Encoder enc = random_encoder(rng, LayerKind::Gcn, Pooling::None, 3);
  Tensor z = encode_nodes(g, enc);

  std::vector<std::uint32_t> perm(g.num_nodes);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
  rng.shuffle(perm);

  Graph pg;
  pg.num_nodes = g.num_nodes;
  for (auto [u, v] : g.edges) pg.edges.emplace_back(perm[u], perm[v]);
  pg.features = Tensor(g.num_nodes, g.feature_dim());
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t j = 0; j < g.feature_dim(); ++j)
      pg.features.at(perm[i], j) = g.features.at(i, j);
  Tensor pz = encode_nodes(pg, enc);

  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t c = 0; c < z.cols(); ++c)
      REQUIRE(pz.at(perm[i], c) == Catch::Approx(z.at(i, c)).margin(1e-12));

  Encoder pooled = random_encoder(rng, LayerKind::Gin, Pooling::Mean, 3);
  Tensor zg = encode_graph(g, pooled);
  Tensor pzg = encode_graph(pg, pooled);
  REQUIRE(tage::test::max_abs_diff(zg, pzg) <= 1e-12);
}

TEST_CASE("graph pooling behaviour") {
  Rng rng(8);

  SECTION("single-node graph pools to that node's embedding") {
    Graph g;
    g.num_nodes = 1;
    g.features = tage::test::random_tensor(rng, 1, 3);
    Encoder enc = random_encoder(rng, LayerKind::Gin, Pooling::Mean, 3);
    Tensor zn = encode_nodes(g, enc);
    Tensor zg = encode_graph(g, enc);
    REQUIRE(zg == zn);
  }

  SECTION("duplicating a graph as two disjoint copies keeps the mean embedding") {
    Graph g = random_graph(rng, 7, 4, 3);
    Encoder enc = random_encoder(rng, LayerKind::Gin, Pooling::Mean, 3);
    Graph doubled;
    doubled.num_nodes = 2 * g.num_nodes;
    doubled.features = Tensor(2 * g.num_nodes, g.feature_dim());
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      for (std::size_t j = 0; j < g.feature_dim(); ++j) {
        doubled.features.at(i, j) = g.features.at(i, j);
        doubled.features.at(i + g.num_nodes, j) = g.features.at(i, j);
      }
    auto off = static_cast<std::uint32_t>(g.num_nodes);
    for (auto [u, v] : g.edges) {
      doubled.edges.emplace_back(u, v);
      doubled.edges.emplace_back(u + off, v + off);
    }
    REQUIRE(tage::test::max_abs_diff(encode_graph(g, enc), encode_graph(doubled, enc)) <= 1e-12);
  }

  SECTION("empty graph is rejected") {
    Graph g;
    g.features = Tensor(0, 3);
    Encoder enc = random_encoder(rng, LayerKind::Gin, Pooling::Mean, 3);
    REQUIRE_THROWS_AS(encode_graph(g, enc), graph_error);
  }
}

TEST_CASE("encoder gradients match finite differences through edge weights") {
  Rng rng(13);
  Graph g = random_graph(rng, 6, 3, 3);
  Encoder enc = random_encoder(rng, LayerKind::Gcn, Pooling::Mean, 3);

  auto eval = [&](const std::vector<ad::Tensor>& inputs) {
    std::vector<double> w(inputs[0].values());
    return encode_graph(g, enc, &w).values()[0];
  };
  Tensor w0(2 * g.num_edges(), 1, 1.0);
  for (std::size_t i = 0; i < w0.size(); ++i) w0[i] = rng.uniform(0.2, 1.0);

  ad::Tape tape;
  StagedEncoder staged = stage_encoder(tape, enc);
  ad::Var wv = tape.input(w0);
  ad::Var zg = encode_graph_on_tape(tape, g, staged, wv);
  ad::Var first = tape.sum_all(tape.mul_rowvec(zg, tape.input([&] {
    Tensor pick(1, enc.output_dim());
    pick[0] = 1.0;
    return pick;
  }())));
  ad::Gradients grads = tape.backward(first);

  REQUIRE(ad::grad_check(eval, {w0}, {grads.at(wv)}) <= 1e-5);
}

TEST_CASE("downstream head probabilities") {
  Rng rng(21);

  SECTION("zero head gives the uniform distribution") {
    DownstreamHead h;
    h.w1 = Tensor(4, 3);
    h.b1 = Tensor(1, 3);
    h.w2 = Tensor(3, 5);
    h.b2 = Tensor(1, 5);
    Tensor z = tage::test::random_tensor(rng, 1, 4);
    Tensor p = predict_proba(h, z);
    for (std::size_t c = 0; c < 5; ++c) REQUIRE(p.at(0, c) == Catch::Approx(0.2).margin(1e-15));
  }

  SECTION("rows sum to one") {
    DownstreamHead h = make_head(4, 6, 3, rng);
    Tensor z = tage::test::random_tensor(rng, 10, 4, -2.0, 2.0);
    Tensor p = predict_proba(h, z);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) {
        s += p.at(i, c);
        REQUIRE(p.at(i, c) >= 0.0);
      }
      REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
    }
  }

  SECTION("softmax shift invariance") {
    DownstreamHead h = make_head(3, 4, 4, rng);
    Tensor z = tage::test::random_tensor(rng, 1, 3);
    Tensor p1 = predict_proba(h, z);
    for (std::size_t c = 0; c < h.b2.size(); ++c) h.b2[c] += 7.25;
    Tensor p2 = predict_proba(h, z);
    REQUIRE(tage::test::max_abs_diff(p1, p2) <= 1e-12);
  }
}

TEST_CASE("checkpoints round trip exactly") {
  Rng rng(31);
  auto tmp = std::filesystem::temp_directory_path();

  SECTION("encoder") {
    for (LayerKind kind : {LayerKind::Gcn, LayerKind::Gin}) {
      Encoder enc = random_encoder(rng, kind, Pooling::Mean, 5);
      std::string path = (tmp / "tage_test_encoder.ckpt").string();
      save_encoder(enc, path);
      Encoder back = load_encoder(path);
      REQUIRE(encoder_checksum(enc) == encoder_checksum(back));
      REQUIRE(back.pooling == Pooling::Mean);
      REQUIRE(back.depth() == enc.depth());
    }
  }

  SECTION("head and explainer") {
    DownstreamHead head = make_head(5, 7, 3, rng);
    std::string hpath = (tmp / "tage_test_head.ckpt").string();
    save_head(head, hpath);
    DownstreamHead hback = load_head(hpath);
    REQUIRE(head.w1 == hback.w1);
    REQUIRE(head.b2 == hback.b2);

    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Node, 5, rng);
    std::string epath = (tmp / "tage_test_explainer.ckpt").string();
    save_explainer(ex, epath);
    EmbeddingExplainer eback = load_explainer(epath);
    REQUIRE(eback.mode == ExplainerMode::Node);
    REQUIRE(ex.proj_w == eback.proj_w);
    REQUIRE(ex.w2 == eback.w2);
  }

  SECTION("denormal and negative-zero doubles survive") {
    DownstreamHead head = make_head(2, 2, 2, rng);
    head.w1[0] = -0.0;
    head.w1[1] = 5e-324;
    head.w1[2] = 1.0 + 2.220446049250313e-16;
    std::string path = (tmp / "tage_test_exact.ckpt").string();
    save_head(head, path);
    DownstreamHead back = load_head(path);
    REQUIRE(back.w1 == head.w1);
    REQUIRE(std::signbit(back.w1[0]));
  }
}
