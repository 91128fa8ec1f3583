#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "dwl/embedding.hpp"
#include "test_util.hpp"

using namespace dwl;

TEST_CASE("cost_matrix") {
  CHECK(cost_matrix(Mat::Zero(3, 4)).isApprox(Mat::Zero(4, 4)));

  Mat theta(1, 2);
  theta << 0.0, 3.0;
  Mat c = cost_matrix(theta);
  CHECK(c(0, 1) == doctest::Approx(9.0));
  CHECK(c(1, 0) == doctest::Approx(9.0));
  CHECK(c(0, 0) == 0.0);

  // permutation equivariance
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Mat t2(2, 4);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) t2(i, j) = g(rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(4);
  p.indices() << 2, 0, 3, 1;
  Mat left = cost_matrix((t2 * p.transpose()).eval());
  Mat right = p * cost_matrix(t2) * p.transpose();
  CHECK((left - right).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("distill") {
  Mat c(2, 2);
  c << 0.0, 4.0, 4.0, 0.0;
  CHECK(distill(c, 1.0).isApprox(c));
  Mat half = distill(c, 0.5);
  CHECK(half(0, 1) == doctest::Approx(2.0));
  CHECK(half(0, 0) == 0.0);
  CHECK_THROWS_AS(distill(c, 0.0), ParameterError);
  CHECK_THROWS_AS(distill(c, 1.5), ParameterError);
  CHECK_THROWS_AS(distill(c, -0.3), ParameterError);

  std::ostringstream warn;
  distill(c, 0.2, &warn);
  CHECK(warn.str().find("oversmoothed") != std::string::npos);

  // entrywise monotonicity is preserved for any power in (0,1]
  std::mt19937_64 rng(5);
  Mat cost = dwltest::random_cost(rng, 5);
  for (double tau : {0.3, 0.5, 0.9}) {
    Mat d = distill(cost, tau);
    for (Eigen::Index i = 0; i < 5; ++i)
      for (Eigen::Index j = 0; j < 5; ++j)
        for (Eigen::Index l = 0; l < 5; ++l)
          if (cost(i, j) < cost(i, l)) CHECK(d(i, j) <= d(i, l));
  }
}

TEST_CASE("aggregate_transports") {
  Mat p1(2, 2);
  p1 << 0.1, 0.2, 0.3, 0.4;
  CHECK(aggregate_transports({p1}).isApprox(p1));
  CHECK(aggregate_transports({p1, p1}).isApprox((2.0 * p1).eval()));
  CHECK(aggregate_transports({}, 3).isApprox(Mat::Zero(3, 3)));
  CHECK_THROWS_AS(aggregate_transports({}), ShapeError);
  CHECK_THROWS_AS(aggregate_transports({p1, Mat::Zero(3, 3)}), ShapeError);
}

TEST_CASE("laplacian") {
  Mat t(2, 2);
  t << 0.0, 1.0, 0.0, 0.0;
  Mat l = laplacian(t);
  CHECK(l(0, 0) == doctest::Approx(0.5));
  CHECK(l(0, 1) == doctest::Approx(-0.5));
  CHECK(l(1, 0) == doctest::Approx(-0.5));
  CHECK(l(1, 1) == doctest::Approx(0.5));

  Mat diag = Vec{{0.4, 0.6, 1.0}}.asDiagonal();
  CHECK(laplacian(diag).cwiseAbs().maxCoeff() < 1e-15);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Index n = 2 + trial % 6;
    Mat transport(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) transport(i, j) = u(rng);
    Mat lap = laplacian(transport);
    CHECK((lap - lap.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(lap.rowwise().sum().cwiseAbs().maxCoeff() < 1e-9);
    Eigen::SelfAdjointEigenSolver<Mat> es(lap);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("embedding_objective") {
  EmbeddingModel m;
  m.theta = Mat::Random(2, 3);
  m.theta_current = m.theta;
  CHECK(embedding_objective(m, Mat::Zero(3, 3), 0.5) == doctest::Approx(0.0));

  // coincident embeddings kill the Laplacian term
  EmbeddingModel coin;
  coin.theta = Vec{{1.0, 2.0}}.replicate(1, 3);
  coin.theta_current = Mat::Zero(2, 3);
  Mat t = Mat::Ones(3, 3);
  CHECK(embedding_objective(coin, laplacian(t), 0.0) == doctest::Approx(0.0));

  // 2-word 1-D case, checked against the direct pairwise-sum form
  EmbeddingModel two;
  two.theta = Mat(1, 2);
  two.theta << 0.0, 1.0;
  two.theta_current = two.theta;
  Mat tt(2, 2);
  tt << 0.0, 1.0, 0.0, 0.0;
  Mat lap = laplacian(tt);
  // direct evaluation of sum_{nn'} sbar_{nn'} ||x_n - x_{n'}||^2 with sbar
  // the symmetrized plan; equals Tr(X L X^T)
  Mat s = 0.5 * (tt + tt.transpose());
  double direct = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      direct += 0.5 * s(i, j) * std::pow(two.theta(0, i) - two.theta(0, j), 2);
  CHECK(embedding_objective(two, lap, 0.123) == doctest::Approx(0.5));
  CHECK(direct == doctest::Approx(embedding_objective(two, lap, 0.123)).epsilon(1e-12));
}

TEST_CASE("embedding objective translation invariance") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat transport(4, 4);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) transport(i, j) = u(rng);
  Mat lap = laplacian(transport);

  EmbeddingModel m;
  m.theta = Mat::Random(3, 4);
  m.theta_current = Mat::Random(3, 4);
  Vec shift = Vec::Random(3);
  EmbeddingModel shifted = m;
  shifted.theta.colwise() += shift;
  shifted.theta_current.colwise() += shift;
  CHECK(embedding_objective(m, lap, 0.0) ==
        doctest::Approx(embedding_objective(shifted, lap, 0.0)).epsilon(1e-9));
}

TEST_CASE("embedding_gradient_step") {
  EmbeddingModel m;
  m.theta = Mat::Random(2, 3);
  m.theta_current = m.theta;

  // zero gradient fixed point
  auto still = embedding_gradient_step(m, Mat::Zero(3, 3), 5.0, 0.1);
  CHECK(still.theta.isApprox(m.theta));

  // pure proximal pull: step is exactly -2 rho beta (theta - theta_c)
  EmbeddingModel off = m;
  off.theta_current = Mat::Random(2, 3);
  auto pulled = embedding_gradient_step(off, Mat::Zero(3, 3), 10.0, 0.01);
  Mat expect = off.theta - 0.01 * 2.0 * 10.0 * (off.theta - off.theta_current);
  CHECK(pulled.theta.isApprox(expect, 1e-12));
}

TEST_CASE("embedding gradient matches central differences") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat transport(3, 3);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) transport(i, j) = u(rng);
  Mat lap = laplacian(transport);

  EmbeddingModel m;
  m.theta = Mat::Random(2, 3);
  m.theta_current = Mat::Random(2, 3);
  const double beta = 0.37;
  Mat analytic = embedding_gradient(m, lap, beta);
  const double h = 1e-6;
  Mat fd(2, 3);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      EmbeddingModel plus = m, minus = m;
      plus.theta(i, j) += h;
      minus.theta(i, j) -= h;
      fd(i, j) =
          (embedding_objective(plus, lap, beta) - embedding_objective(minus, lap, beta)) /
          (2 * h);
    }
  CHECK((analytic - fd).norm() / fd.norm() < 1e-6);
}

TEST_CASE("a small enough step strictly decreases the objective") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Mat transport(4, 4);
    for (Eigen::Index i = 0; i < 4; ++i)
      for (Eigen::Index j = 0; j < 4; ++j) transport(i, j) = u(rng);
    Mat lap = laplacian(transport);
    EmbeddingModel m;
    m.theta = Mat::Random(2, 4);
    m.theta_current = Mat::Random(2, 4);
    double before = embedding_objective(m, lap, 0.1);
    if (embedding_gradient(m, lap, 0.1).norm() < 1e-12) continue;
    double rho = 0.5;
    bool decreased = false;
    for (int halving = 0; halving < 20 && !decreased; ++halving, rho /= 2)
      decreased = embedding_objective(embedding_gradient_step(m, lap, 0.1, rho), lap, 0.1) <
                  before;
    CHECK(decreased);
  }
}
