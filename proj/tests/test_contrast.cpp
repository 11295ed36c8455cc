#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tcgl/contrast.hpp"
#include "tcgl/gradcheck.hpp"

using namespace tcgl;
using tcgl::testing::random_tensor;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows rows(const Tensor<double>& t) {
  Rows r(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) r[i][j] = t(i, j);
  return r;
}

/// Straight transcription of the objective, one term at a time.
struct NaiveContrast {
  Tensor<double> w1, w2;
  double tau;

  std::vector<double> project(const std::vector<double>& x) const {
    std::vector<double> h(w1.cols()), z(w2.cols());
    for (std::size_t j = 0; j < h.size(); ++j) {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w1(i, j);
      h[j] = s > 0 ? s : 0;
    }
    for (std::size_t j = 0; j < z.size(); ++j) {
      double s = 0;
      for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w2(i, j);
      z[j] = s;
    }
    return z;
  }

  double phi(const std::vector<double>& a, const std::vector<double>& b) const {
    const auto za = project(a), zb = project(b);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < za.size(); ++i) {
      dot += za[i] * zb[i];
      na += za[i] * za[i];
      nb += zb[i] * zb[i];
    }
    return dot / std::sqrt((na + 1e-12) * (nb + 1e-12));
  }

  double ell(const Rows& u, const Rows& v, std::size_t i) const {
    const double positive = std::exp(phi(u[i], v[i]) / tau);
    double inter_view = 0, intra_view = 0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      if (k != i) inter_view += std::exp(phi(u[i], v[k]) / tau);
      if (k != i) intra_view += std::exp(phi(u[i], u[k]) / tau);
    }
    return -std::log(positive / (positive + inter_view + intra_view));
  }

  double graph(const Rows& u, const Rows& v) const {
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += 0.5 * (ell(u, v, i) + ell(v, u, i));
    return s / static_cast<double>(u.size());
  }
};

struct Case {
  Tensor<double> u, v, w1, w2;
  double tau;
};

Case random_case(Rng& rng, std::size_t n, std::size_t f = 5, std::size_t fp = 4) {
  return {random_tensor<double>(rng, Shape{n, f}), random_tensor<double>(rng, Shape{n, f}), random_tensor<double>(rng, Shape{f, fp}),
          random_tensor<double>(rng, Shape{fp, fp}), rng.uniform(0.1, 1.0)};
}

}  // namespace

TEST(Relation, SelfSimilarityIsOne) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Case c = random_case(rng, 1);
    Tape<double> tape;
    const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
    const auto u = row(tape.constant(c.u), 0);
    const double phi = relation(u, u, p).value().item();
    // The stabiliser in the denominator pulls the value below 1 by eps / |z|^2.
    double z2 = 0;
    for (double z : project(reshape(u, Shape{1, c.u.cols()}), p).value().data()) z2 += z * z;
    if (tape.diagnostics().guarded_normalizations == 0) {
      EXPECT_LE(phi, 1.0);
      EXPECT_NEAR(phi, z2 / (z2 + 1e-12), 1e-14);
    }
  }
}

TEST(Relation, OrthogonalProjectionsGiveZero) {
  Tape<double> tape;
  const ProjectionVars<double> p{tape.constant(Tensor<double>::identity(2)), tape.constant(Tensor<double>::identity(2))};
  const auto u = tape.constant(Tensor<double>::vector({1.0, 0.0}));
  const auto v = tape.constant(Tensor<double>::vector({0.0, 3.0}));
  EXPECT_DOUBLE_EQ(relation(u, v, p).value().item(), 0.0);
}

TEST(Relation, ZeroProjectionIsGuardedAndFlagged) {
  Tape<double> tape;
  const ProjectionVars<double> p{tape.constant(Tensor<double>::identity(2)), tape.constant(Tensor<double>::identity(2))};
  const auto u = tape.constant(Tensor<double>::vector({-1.0, -2.0}));
  const auto v = tape.constant(Tensor<double>::vector({1.0, 1.0}));
  const double phi = relation(u, v, p).value().item();
  EXPECT_TRUE(std::isfinite(phi));
  EXPECT_EQ(phi, 0.0);
  EXPECT_GE(tape.diagnostics().guarded_normalizations, 1u);
}

TEST(PairwiseLoss, SingleNodeIsZero) {
  Rng rng(2);
  const Case c = random_case(rng, 1);
  Tape<double> tape;
  const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
  const auto u = tape.constant(c.u), v = tape.constant(c.v);
  EXPECT_NEAR(pairwise_loss(u, v, 0, c.tau, p).value().item(), 0.0, 1e-15);
  EXPECT_NEAR(graph_loss(u, v, c.tau, p).value().item(), 0.0, 1e-15);
}

TEST(PairwiseLoss, MatchesNaiveOracle) {
  Rng rng(3);
  for (std::size_t n = 2; n <= 8; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      const Case c = random_case(rng, n);
      const NaiveContrast oracle{c.w1, c.w2, c.tau};
      Tape<double> tape;
      const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
      const auto u = tape.constant(c.u), v = tape.constant(c.v);
      for (std::size_t i = 0; i < n; ++i) {
        EXPECT_NEAR(pairwise_loss(u, v, i, c.tau, p).value().item(), oracle.ell(rows(c.u), rows(c.v), i), 1e-10);
        EXPECT_NEAR(pairwise_loss(v, u, i, c.tau, p).value().item(), oracle.ell(rows(c.v), rows(c.u), i), 1e-10);
        EXPECT_NEAR(relation(row(u, i), row(v, i), p).value().item(), oracle.phi(rows(c.u)[i], rows(c.v)[i]), 1e-12);
      }
      EXPECT_NEAR(graph_loss(u, v, c.tau, p).value().item(), oracle.graph(rows(c.u), rows(c.v)), 1e-10);
    }
  }
}

TEST(PairwiseLoss, RejectsBadArguments) {
  Rng rng(4);
  const Case c = random_case(rng, 3);
  Tape<double> tape;
  const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
  const auto u = tape.constant(c.u);
  const auto short_v = tape.constant(random_tensor<double>(rng, Shape{2, 5}));
  EXPECT_THROW(pairwise_loss(u, u, 3, 0.5, p), std::invalid_argument);
  EXPECT_THROW(pairwise_loss(u, short_v, 0, 0.5, p), std::invalid_argument);
  EXPECT_THROW(graph_loss(u, short_v, 0.5, p), std::invalid_argument);
  EXPECT_THROW(graph_loss(u, u, 0.0, p), std::invalid_argument);
}

TEST(PairwiseLoss, FiniteAtExtremeTemperatures) {
  Rng rng(5);
  for (double tau : {0.01, 0.0101, 100.0}) {
    const Case c = random_case(rng, 6);
    Tape<double> tape;
    const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
    const auto l = graph_loss(tape.constant(c.u), tape.constant(c.v), tau, p).value().item();
    EXPECT_TRUE(std::isfinite(l)) << "tau " << tau;
    EXPECT_GE(l, 0.0);
  }
}

TEST(PairwiseLoss, InvariantToEmbeddingScale) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Case c = random_case(rng, 4);
    const double before = [&] {
      Tape<double> tape;
      const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
      return graph_loss(tape.constant(c.u), tape.constant(c.v), c.tau, p).value().item();
    }();
    const std::size_t node = static_cast<std::size_t>(rng.below(4));
    const double k = rng.uniform(0.1, 10.0);
    for (std::size_t j = 0; j < c.u.cols(); ++j) c.u(node, j) *= k;
    Tape<double> tape;
    const ProjectionVars<double> p{tape.constant(c.w1), tape.constant(c.w2)};
    const double after = graph_loss(tape.constant(c.u), tape.constant(c.v), c.tau, p).value().item();
    if (tape.diagnostics().guarded_normalizations == 0) {
      EXPECT_NEAR(after, before, 1e-10);
    }
  }
}

TEST(GraphLoss, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const Case c = random_case(rng, 4, 5, 4);
    TapeFunction<double> f = [&](Tape<double>&, std::span<const Var<double>> x) {
      return graph_loss(x[0], x[1], c.tau, ProjectionVars<double>{x[2], x[3]});
    };
    const auto eps = default_epsilons<double>();
    const auto r = finite_diff_check<double>(f, {c.u, c.v, c.w1, c.w2}, std::span<const double>(eps));
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_LE(r.coordinates_skipped * 20, r.coordinates_checked);
  }
}

TEST(TotalGraphLoss, Weighting) {
  Tape<double> tape;
  const auto inter = tape.constant(Tensor<double>::scalar(2.0));
  const std::vector<Var<double>> intra = {tape.constant(Tensor<double>::scalar(0.5)), tape.constant(Tensor<double>::scalar(0.25)),
                                          tape.constant(Tensor<double>::scalar(1.0))};
  const std::span<const Var<double>> s(intra);
  EXPECT_DOUBLE_EQ(total_graph_loss(s, inter, 0.0, 0.0).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(total_graph_loss(s, inter, 1.0, 1.0).value().item(), 3.75);
  EXPECT_DOUBLE_EQ(total_graph_loss(s, inter, 1.0, 0.1).value().item(), 1.75 + 0.2);
}

TEST(Projection, BiasFreeAndShapes) {
  Rng rng(8);
  const auto p = init_projection<double>(rng, 6, 4);
  EXPECT_EQ(p.hidden.shape(), (Shape{6, 4}));
  EXPECT_EQ(p.output.shape(), (Shape{4, 4}));
  Tape<double> tape;
  const ProjectionVars<double> v{tape.constant(p.hidden), tape.constant(p.output)};
  EXPECT_EQ(project(tape.constant(Tensor<double>(Shape{3, 6})), v).value(), Tensor<double>(Shape{3, 4}));
}
