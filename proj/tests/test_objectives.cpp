#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tage/evaluation.hpp"
#include "tage/generators.hpp"
#include "tage/grad_check.hpp"
#include "tage/objectives.hpp"
#include "tage/pretrain.hpp"
#include "test_support.hpp"

using namespace tage;
using ad::Tensor;

namespace {

// Independent scalar evaluations of the conditioned losses, written with
// plain loops and no shared code with the tape path. These are the oracles.

double sim(const Tensor& z, const Tensor& zt, const Tensor& p, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < z.cols(); ++k)
    s += (p[k] * z.at(i, k)) * (p[k] * zt.at(j, k));
  return s;
}

double infonce_oracle(const Tensor& z, const Tensor& zt, const Tensor& p) {
  const std::size_t n = z.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) den += std::exp(sim(z, zt, p, i, j));
    total += std::log(std::exp(sim(z, zt, p, i, i)) / den);
  }
  return -total / static_cast<double>(n);
}

double jse_oracle(const Tensor& z, const Tensor& zt, const Tensor& p) {
  const std::size_t n = z.rows();
  auto sigma = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < n; ++i) pos += std::log(sigma(sim(z, zt, p, i, i)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) neg += std::log(1.0 - sigma(sim(z, zt, p, i, j)));
  double nn = static_cast<double>(n);
  return -pos / nn - neg / (nn * nn - nn);
}

}  // namespace

TEST_CASE("conditioned JSE") {
  Rng rng(1);

  SECTION("two zero embeddings give 2 log 2") {
    Tensor z(2, 3), zt(2, 3), p(1, 3, 1.0);
    REQUIRE(conditioned_jse(z, zt, p) == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  }

  SECTION("matches the independent oracle on random batches") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Rng r(seed * 31);
      std::size_t n = 2 + r.integer(3);
      Tensor z = tage::test::random_tensor(r, n, 4);
      Tensor zt = tage::test::random_tensor(r, n, 4);
      Tensor p = sample_condition(4, 0.2, r).p;
      REQUIRE(conditioned_jse(z, zt, p) ==
              Catch::Approx(jse_oracle(z, zt, p)).margin(1e-10));
    }
  }

  SECTION("masked dimension is exactly inert") {
    Tensor z = tage::test::random_tensor(rng, 3, 4);
    Tensor zt = tage::test::random_tensor(rng, 3, 4);
    Tensor p = sample_condition(4, 0.2, rng).p;
    p[2] = 0.0;
    double base = conditioned_jse(z, zt, p);
    for (std::size_t i = 0; i < 3; ++i) {
      z.at(i, 2) += rng.uniform(-5.0, 5.0);
      zt.at(i, 2) += rng.uniform(-5.0, 5.0);
    }
    REQUIRE(conditioned_jse(z, zt, p) == base);
  }

  SECTION("batch permutation invariance") {
    Tensor z = tage::test::random_tensor(rng, 5, 3);
    Tensor zt = tage::test::random_tensor(rng, 5, 3);
    Tensor p = sample_condition(3, 0.2, rng).p;
    double base = conditioned_jse(z, zt, p);
    std::vector<std::uint32_t> perm = {3, 0, 4, 1, 2};
    Tensor pz(5, 3), pzt(5, 3);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        pz.at(i, c) = z.at(perm[i], c);
        pzt.at(i, c) = zt.at(perm[i], c);
      }
    REQUIRE(conditioned_jse(pz, pzt, p) == Catch::Approx(base).margin(1e-12));
  }

  SECTION("gradient with respect to the explained embeddings") {
    Tensor z = tage::test::random_tensor(rng, 3, 4);
    Tensor zt = tage::test::random_tensor(rng, 3, 4);
    Tensor p = sample_condition(4, 0.2, rng).p;
    auto f = [&](const std::vector<Tensor>& in) { return conditioned_jse(z, in[0], p); };
    ad::Tape tape;
    ContrastiveBatch b{tape.input(z), tape.input(zt), tape.input(p)};
    ad::Var loss = conditioned_jse(tape, b);
    Tensor grad = tape.backward(loss).at(b.z_theta);
    REQUIRE(ad::grad_check(f, {zt}, {grad}) <= 1e-5);
  }

  SECTION("batches of one are rejected") {
    Tensor z(1, 3), zt(1, 3), p(1, 3, 1.0);
    REQUIRE_THROWS_AS(conditioned_jse(z, zt, p), graph_error);
  }
}

TEST_CASE("conditioned InfoNCE") {
  Rng rng(2);

  SECTION("hand-evaluated two-sample case") {
    Tensor z = Tensor::from(2, 2, {1, 0, 0, 1});
    Tensor zt = z;
    Tensor p(1, 2, 1.0);
    REQUIRE(conditioned_infonce(z, zt, p) == Catch::Approx(-1.0).margin(1e-12));
  }

  SECTION("matches the independent oracle within 1e-10") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
      Rng r(seed * 97);
      std::size_t n = 2 + r.integer(3);  // N <= 4
      Tensor z = tage::test::random_tensor(r, n, 5);
      Tensor zt = tage::test::random_tensor(r, n, 5);
      Tensor p = sample_condition(5, 0.25, r).p;
      REQUIRE(conditioned_infonce(z, zt, p) ==
              Catch::Approx(infonce_oracle(z, zt, p)).margin(1e-10));
    }
  }

  SECTION("one-hot condition: only the chosen column matters") {
    Tensor z = tage::test::random_tensor(rng, 4, 5);
    Tensor zt = tage::test::random_tensor(rng, 4, 5);
    Tensor p = one_hot_condition(1, 5).p;
    double base = conditioned_infonce(z, zt, p);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 5; ++c)
        if (c != 1) {
          z.at(i, c) = rng.uniform(-9.0, 9.0);
          zt.at(i, c) = rng.uniform(-9.0, 9.0);
        }
    REQUIRE(conditioned_infonce(z, zt, p) == base);
  }

  SECTION("gradient check") {
    Tensor z = tage::test::random_tensor(rng, 3, 4);
    Tensor zt = tage::test::random_tensor(rng, 3, 4);
    Tensor p = sample_condition(4, 0.25, rng).p;
    auto f = [&](const std::vector<Tensor>& in) { return conditioned_infonce(in[0], zt, p); };
    ad::Tape tape;
    ContrastiveBatch b{tape.input(z), tape.input(zt), tape.input(p)};
    ad::Var loss = conditioned_infonce(tape, b);
    Tensor grad = tape.backward(loss).at(b.z);
    REQUIRE(ad::grad_check(f, {z}, {grad}) <= 1e-5);
  }
}

TEST_CASE("size and entropy regularization") {
  SECTION("defaults carry the public-data setting") {
    RegularizationConfig cfg;
    REQUIRE(cfg.lambda_size == 0.05);
    REQUIRE(cfg.lambda_entropy == 0.002);
  }

  SECTION("half scores contribute log 2 of entropy per edge") {
    RegularizationConfig cfg{0.05, 0.002};
    double r = size_entropy_reg({0.5, 0.5}, cfg);
    REQUIRE(r == Catch::Approx(2.0 * (0.05 * 0.5 + 0.002 * std::log(2.0))).epsilon(1e-15));
  }

  SECTION("vanishing scores vanish") {
    RegularizationConfig cfg{0.5, 0.0};
    REQUIRE(size_entropy_reg({1e-15, 1e-15}, cfg) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(size_entropy_reg({0.0, 0.0}, cfg) == 0.0);
  }

  SECTION("tape form agrees with the plain form for symmetric scores") {
    Rng rng(7);
    ad::Tape tape;
    std::size_t e = 5;
    Tensor raw = tage::test::random_tensor(rng, e, 1, -2.0, 2.0);
    Tensor raw2(2 * e, 1);
    for (std::size_t i = 0; i < e; ++i) {
      raw2.at(i, 0) = raw.at(i, 0);
      raw2.at(i + e, 0) = raw.at(i, 0);
    }
    ad::Var rawv = tape.input(raw2);
    ad::Var directed = tape.sigmoid(rawv);
    std::vector<std::uint32_t> fwd(e), bwd(e);
    for (std::uint32_t i = 0; i < e; ++i) {
      fwd[i] = i;
      bwd[i] = i + static_cast<std::uint32_t>(e);
    }
    EdgeScoreVars sv{tape.scale(tape.add(tape.row_gather(directed, fwd),
                                         tape.row_gather(directed, bwd)),
                                0.5),
                     directed, rawv};
    RegularizationConfig cfg{0.05, 0.002};
    double tape_val = size_entropy_reg_on_tape(tape, sv, cfg).val().item();
    double plain_val = size_entropy_reg(sv.undirected.val().values(), cfg);
    REQUIRE(tape_val == Catch::Approx(plain_val).margin(1e-12));
  }
}

TEST_CASE("explainer training loop") {
  MotifMultitaskConfig dcfg;
  dcfg.num_graphs = 24;
  dcfg.backbone_min = 5;
  dcfg.backbone_max = 8;
  Dataset data = generate_motif_multitask(dcfg, 11);

  Rng erng(3);
  Encoder enc = make_gin_encoder({dcfg.feature_dim, 8, 6}, Pooling::Mean, erng);
  std::uint64_t frozen = encoder_checksum(enc);

  ExplainerTrainConfig cfg;
  cfg.batch = 6;
  cfg.epochs = 2;
  cfg.lr = 1e-3;

  SECTION("trains, logs, and leaves the encoder untouched") {
    std::size_t before = explainer_train_invocations();
    ExplainerTrainResult r = train_embedding_explainer(enc, data, cfg, 42);
    REQUIRE(explainer_train_invocations() == before + 1);
    REQUIRE(encoder_checksum(enc) == frozen);
    REQUIRE(!r.log.empty());
    for (const auto& row : r.log) {
      REQUIRE(std::isfinite(row.contrastive_loss));
      REQUIRE(std::isfinite(row.reg_loss));
      REQUIRE(row.mean_edge_score > 0.0);
      REQUIRE(row.mean_edge_score < 1.0);
    }
    REQUIRE(r.explainer.mode == ExplainerMode::Graph);
  }

  SECTION("same seed gives bit-identical explainers") {
    ExplainerTrainResult a = train_embedding_explainer(enc, data, cfg, 7);
    ExplainerTrainResult b = train_embedding_explainer(enc, data, cfg, 7);
    REQUIRE(a.explainer.proj_w == b.explainer.proj_w);
    REQUIRE(a.explainer.w1 == b.explainer.w1);
    REQUIRE(a.explainer.w2 == b.explainer.w2);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      REQUIRE(a.log[i].contrastive_loss == b.log[i].contrastive_loss);
      REQUIRE(a.log[i].mean_edge_score == b.log[i].mean_edge_score);
    }
  }

  SECTION("node mode trains against a node-level encoder") {
    Dataset node_data;
    node_data.num_tasks = 1;
    node_data.graphs.push_back(generate_ba_shapes({40, 3, 4, 0.0, 6}, 5));
    Rng r2(9);
    Encoder node_enc = make_gcn_encoder({6, 8, 6}, Pooling::None, r2);
    ExplainerTrainConfig ncfg;
    ncfg.batch = 4;
    ncfg.epochs = 1;
    ncfg.laplace_b = 0.1;
    ExplainerTrainResult r = train_embedding_explainer(node_enc, node_data, ncfg, 13);
    REQUIRE(r.explainer.mode == ExplainerMode::Node);
    REQUIRE(!r.log.empty());
  }

  SECTION("stronger size pressure lowers the mean edge score") {
    ExplainerTrainConfig weak = cfg;
    weak.epochs = 6;
    weak.reg.lambda_size = 0.05;
    ExplainerTrainConfig strong = weak;
    strong.reg.lambda_size = 0.5;
    double weak_score = train_embedding_explainer(enc, data, weak, 21).log.back().mean_edge_score;
    double strong_score =
        train_embedding_explainer(enc, data, strong, 21).log.back().mean_edge_score;
    REQUIRE(strong_score < weak_score);
  }
}
