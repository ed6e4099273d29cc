#include <catch2/catch_amalgamated.hpp>

#include "tage/explainer.hpp"
#include "tage/generators.hpp"
#include "tage/grad_check.hpp"
#include "test_support.hpp"

using namespace tage;
using ad::Tensor;

namespace {

Graph small_graph(std::size_t n, std::vector<std::pair<std::uint32_t, std::uint32_t>> edges,
                  Rng& rng, std::size_t fdim = 3) {
  Graph g;
  g.num_nodes = n;
  g.edges = std::move(edges);
  g.features = tage::test::random_tensor(rng, n, fdim);
  return g;
}

}  // namespace

TEST_CASE("graph-mode edge scoring") {
  Rng rng(101);
  Graph g = small_graph(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {1, 3}}, rng);
  Tensor z = tage::test::random_tensor(rng, 5, 4);
  ConditionVector p = sample_condition(4, 0.2, rng);

  SECTION("zeroed output layer gives sigma(bias) everywhere") {
    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Graph, 4, rng);
    ex.w2.fill(0.0);
    ex.b2.fill(0.0);
    EdgeScores s = score_edges_graph(z, p, g, ex);
    for (double w : s.w) REQUIRE(w == 0.5);
    ex.b2[0] = 1.3;
    EdgeScores s2 = score_edges_graph(z, p, g, ex);
    double expect = 1.0 / (1.0 + std::exp(-1.3));
    for (double w : s2.w) REQUIRE(w == Catch::Approx(expect).epsilon(1e-15));
  }

  SECTION("undirected score is invariant to edge orientation") {
    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Graph, 4, rng);
    EdgeScores s1 = score_edges_graph(z, p, g, ex);
    Graph flipped = g;
    std::swap(flipped.edges[2].first, flipped.edges[2].second);
    EdgeScores s2 = score_edges_graph(z, p, flipped, ex);
    for (std::size_t e = 0; e < s1.w.size(); ++e)
      REQUIRE(s1.w[e] == Catch::Approx(s2.w[e]).margin(1e-15));
  }

  SECTION("scores react to every condition entry (soft conditioning)") {
    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Graph, 4, rng);
    EdgeScores base = score_edges_graph(z, p, g, ex);
    for (std::size_t k = 0; k < 4; ++k) {
      ConditionVector q = p;
      q.p[k] = q.p[k] * 0.5 + 0.25;
      EdgeScores s = score_edges_graph(z, q, g, ex);
      double diff = 0.0;
      for (std::size_t e = 0; e < s.w.size(); ++e) diff += std::abs(s.w[e] - base.w[e]);
      REQUIRE(diff > 0.0);
    }
  }

  SECTION("scoring is deterministic") {
    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Graph, 4, rng);
    EdgeScores a = score_edges_graph(z, p, g, ex);
    EdgeScores b = score_edges_graph(z, p, g, ex);
    REQUIRE(a.w == b.w);
  }

  SECTION("scores stay strictly inside (0, 1)") {
    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Graph, 4, rng);
    EdgeScores s = score_edges_graph(z, p, g, ex);
    for (double w : s.w) {
      REQUIRE(w > 0.0);
      REQUIRE(w < 1.0);
    }
  }

  SECTION("mode and dimension errors") {
    EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Node, 4, rng);
    REQUIRE_THROWS_AS(score_edges_graph(z, p, g, ex), graph_error);
  }
}

TEST_CASE("node-mode edge scoring") {
  Rng rng(555);
  Graph g = small_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {0, 3}}, rng);
  Tensor z = tage::test::random_tensor(rng, 6, 4);
  ConditionVector p = sample_condition(4, 0.1, rng);
  EmbeddingExplainer ex = make_embedding_explainer(ExplainerMode::Node, 4, rng);

  SECTION("different targets give different scores") {
    EdgeScores a = score_edges_node(z, 0, p, g, ex);
    EdgeScores b = score_edges_node(z, 3, p, g, ex);
    double diff = 0.0;
    for (std::size_t e = 0; e < a.w.size(); ++e) diff += std::abs(a.w[e] - b.w[e]);
    REQUIRE(diff > 1e-9);
  }

  SECTION("zero output layer gives one half") {
    EmbeddingExplainer zex = ex;
    zex.w2.fill(0.0);
    zex.b2.fill(0.0);
    EdgeScores s = score_edges_node(z, 2, p, g, zex);
    for (double w : s.w) REQUIRE(w == 0.5);
  }

  SECTION("target outside the graph is rejected") {
    REQUIRE_THROWS_AS(score_edges_node(z, 17, p, g, ex), graph_error);
  }
}

TEST_CASE("condition vectors") {
  Rng rng(202);

  SECTION("sampled conditions are nonnegative with max exactly 1") {
    for (double b : {0.1, 0.2, 0.25}) {
      ConditionVector c = sample_condition(8, b, rng);
      double mx = 0.0;
      for (std::size_t i = 0; i < c.p.size(); ++i) {
        REQUIRE(c.p[i] >= 0.0);
        mx = std::max(mx, c.p[i]);
      }
      REQUIRE(mx == 1.0);
      REQUIRE(c.provenance == ConditionVector::Provenance::Sampled);
    }
  }

  SECTION("one-hot basics") {
    ConditionVector c = one_hot_condition(0, 4);
    REQUIRE(c.p.values() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) sum += c.p[i];
    REQUIRE(sum == 1.0);
    REQUIRE_THROWS_AS(one_hot_condition(4, 4), graph_error);
  }

  SECTION("downstream condition zeroes dimensions the head ignores") {
    DownstreamHead head = make_head(5, 6, 3, rng);
    for (std::size_t j = 0; j < head.w1.cols(); ++j) head.w1.at(2, j) = 0.0;
    Tensor z = tage::test::random_tensor(rng, 1, 5);
    ConditionVector c = downstream_condition(head, z);
    REQUIRE(c.p[2] == 0.0);
    REQUIRE(c.provenance == ConditionVector::Provenance::Downstream);
  }

  SECTION("downstream gradient matches finite differences") {
    DownstreamHead head = make_head(4, 5, 3, rng);
    Tensor z = tage::test::random_tensor(rng, 1, 4);
    // fix the argmax class from the unperturbed input, then probe
    Tensor probs = predict_proba(head, z);
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs.at(0, c) > probs.at(0, best)) best = c;
    auto f = [&](const std::vector<Tensor>& in) {
      return predict_proba(head, in[0]).at(0, best);
    };

    ad::Tape tape;
    StagedHead sh = stage_head(tape, head);
    ad::Var zv = tape.input(z);
    ad::Var p = tape.row_softmax(head_logits_on_tape(tape, sh, zv));
    Tensor pick(1, probs.cols());
    pick[best] = 1.0;
    ad::Var obj = tape.sum_all(tape.mul_rowvec(p, tape.input(pick)));
    Tensor grad = tape.backward(obj).at(zv);

    REQUIRE(ad::grad_check(f, {z}, {grad}) <= 1e-5);
  }

  SECTION("uniform fallback when the rectified gradient vanishes") {
    // A head with one overwhelmingly dominant class everywhere can have an
    // all-nonpositive gradient for the winning class only in contrived
    // setups; instead, force it: zero hidden weights make the probabilities
    // constant, so the gradient is exactly zero.
    DownstreamHead head = make_head(3, 4, 2, rng);
    head.w1.fill(0.0);
    Tensor z = tage::test::random_tensor(rng, 1, 3);
    ConditionVector c = downstream_condition(head, z);
    REQUIRE(c.uniform_fallback);
    for (std::size_t i = 0; i < c.p.size(); ++i) REQUIRE(c.p[i] == 1.0);
  }

  SECTION("normalization is insensitive to gradient scale") {
    Tensor g = tage::test::random_tensor(rng, 1, 6);
    auto normalize = [](const Tensor& t) {
      ad::Tape tape;
      return tape.relu(tape.max_abs_normalize(tape.input(t))).val();
    };
    Tensor p1 = normalize(g);
    Tensor scaled = g;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 37.5;
    Tensor p2 = normalize(scaled);
    REQUIRE(tage::test::max_abs_diff(p1, p2) <= 1e-12);
  }
}

TEST_CASE("top-k edge selection") {
  SECTION("k = 100 selects everything") {
    EdgeScores s{{0.5, 0.1, 0.9, 0.3}};
    auto mask = select_topk_edges(s, 100.0);
    for (auto m : mask) REQUIRE(m == 1);
  }

  SECTION("k = 10 percent of 40 edges selects exactly 4") {
    EdgeScores s;
    Rng rng(4);
    for (int i = 0; i < 40; ++i) s.w.push_back(rng.uniform());
    auto mask = select_topk_edges(s, 10.0);
    std::size_t count = 0;
    for (auto m : mask) count += m;
    REQUIRE(count == 4);
  }

  SECTION("ties break toward lower edge indices") {
    EdgeScores s{{0.7, 0.7, 0.7, 0.7, 0.7}};
    auto mask = select_topk_edges(s, 40.0);
    REQUIRE(mask == std::vector<std::uint8_t>{1, 1, 0, 0, 0});
  }

  SECTION("highest scores win") {
    EdgeScores s{{0.2, 0.9, 0.1, 0.8}};
    auto mask = select_topk_edges(s, 50.0);
    REQUIRE(mask == std::vector<std::uint8_t>{0, 1, 0, 1});
  }

  SECTION("bad k is rejected") {
    EdgeScores s{{0.5}};
    REQUIRE_THROWS_AS(select_topk_edges(s, 0.0), graph_error);
    REQUIRE_THROWS_AS(select_topk_edges(s, 101.0), graph_error);
  }
}
