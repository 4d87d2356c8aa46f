#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "eac/error.hpp"
#include "eac/graph.hpp"
#include "helpers.hpp"

using namespace eac;

namespace {

Matrix m2(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_graph(Rng& rng, Eigen::Index n, double density) {
  Matrix a = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (rng.uniform() < density) a(i, j) = a(j, i) = rng.uniform(0.01, 1.0);
    }
  }
  return a;
}

PeriodGraph graph_of(std::vector<NodeId> ids) {
  PeriodGraph g;
  g.nodes = std::move(ids);
  const auto n = static_cast<Eigen::Index>(g.nodes.size());
  g.distances = Matrix::Zero(n, n);
  g.adjacency = Matrix::Zero(n, n);
  return g;
}

}  // namespace

TEST_CASE("kernel adjacency on the three-node chain") {
  const Matrix d = m2({{0, 1, 2}, {1, 0, 1}, {2, 1, 0}});
  const Matrix a = build_adjacency(d, 0.1, 1.0);
  CHECK(a(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(a(0, 2) == 0.0);
  CHECK(a(1, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  for (int i = 0; i < 3; ++i) CHECK(a(i, i) == 0.0);
  CHECK(a.isApprox(a.transpose()));
}

TEST_CASE("high threshold keeps only pairs with d^2/sigma^2 <= -ln r") {
  const double r = 0.99;
  const double cut = -std::log(r);
  Matrix d = m2({{0, 0.09, 0.11}, {0.09, 0, 0.5}, {0.11, 0.5, 0}});
  const Matrix a = build_adjacency(d, r, 1.0);
  CHECK(0.09 * 0.09 <= cut);
  CHECK(0.11 * 0.11 > cut);
  CHECK(a(0, 1) > 0.0);
  CHECK(a(0, 2) == 0.0);
  CHECK(a(1, 2) == 0.0);
}

TEST_CASE("default sigma is the population std of off-diagonal distances") {
  const Matrix d = m2({{0, 1, 3}, {1, 0, 2}, {3, 2, 0}});
  // off-diagonal values 1,3,1,2,3,2: mean 2, population variance 2/3
  const double sigma = std::sqrt(2.0 / 3.0);
  const Matrix a = build_adjacency(d, 0.0);
  CHECK(a(0, 1) == doctest::Approx(std::exp(-1.0 / (sigma * sigma))).epsilon(1e-12));
  CHECK(a(0, 2) == doctest::Approx(std::exp(-9.0 / (sigma * sigma))).epsilon(1e-12));
}

TEST_CASE("non-finite distance means no edge and constant distances use sigma 1") {
  const double inf = std::numeric_limits<double>::infinity();
  Matrix d = m2({{0, 1, inf}, {1, 0, 1}, {inf, 1, 0}});
  const Matrix a = build_adjacency(d, 0.0);
  CHECK(a(0, 2) == 0.0);
  CHECK(a(0, 1) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("adjacency rejects bad input") {
  CHECK_THROWS_AS(build_adjacency(Matrix::Zero(2, 3), 0.5), ArgumentError);
  CHECK_THROWS_AS(build_adjacency(m2({{0, -1}, {-1, 0}}), 0.5), ArgumentError);
  CHECK_THROWS_AS(build_adjacency(m2({{0, 1}, {1, 0}}), 1.0), ArgumentError);
  CHECK_THROWS_AS(build_adjacency(m2({{0, 1}, {1, 0}}), -0.1), ArgumentError);
}

TEST_CASE("normalized adjacency hand cases") {
  const Matrix a_hat = normalize_adjacency(m2({{0, 1}, {1, 0}}));
  CHECK(a_hat.isApprox(m2({{0.5, 0.5}, {0.5, 0.5}})));
  CHECK(normalize_adjacency(Matrix::Zero(4, 4)).isApprox(Matrix::Identity(4, 4)));
}

TEST_CASE("normalized adjacency is symmetric for symmetric input") {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = random_graph(rng, 8, 0.4);
    const Matrix h = normalize_adjacency(a);
    CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    // Independent oracle: entrywise definition.
    Eigen::VectorXd deg = (a + Matrix::Identity(8, 8)).rowwise().sum();
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        const double aij = a(i, j) + (i == j ? 1.0 : 0.0);
        CHECK(h(i, j) == doctest::Approx(aij / std::sqrt(deg(i) * deg(j))).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("scaled Laplacian hand cases") {
  CHECK(scaled_laplacian(m2({{0, 1}, {1, 0}})).isApprox(m2({{0, -1}, {-1, 0}}), 1e-9));
  CHECK(scaled_laplacian(Matrix::Zero(3, 3)).isApprox(-Matrix::Identity(3, 3)));
}

TEST_CASE("power iteration agrees with a dense eigensolver") {
  Rng rng(12);
  for (int t = 0; t < 30; ++t) {
    const Matrix a = random_graph(rng, 10, 0.3);
    const Matrix l = Matrix(a.rowwise().sum().asDiagonal()) - a;
    const double oracle = Eigen::SelfAdjointEigenSolver<Matrix>(l).eigenvalues().maxCoeff();
    const auto r = largest_eigenvalue(l);
    CHECK(r.converged);
    CHECK(r.eigenvalue == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("scaled Laplacian spectral radius is at most 1 on random graphs") {
  Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(12));
    const Matrix lt = scaled_laplacian(random_graph(rng, n, rng.uniform(0.1, 0.9)));
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Matrix>(lt).eigenvalues();
    CHECK(ev.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
  }
}

TEST_CASE("node diff") {
  const auto d = diff_nodes(graph_of({"a", "b"}), graph_of({"a", "b", "c"}));
  CHECK(d.new_ids == std::vector<NodeId>{"c"});
  CHECK(d.carry_index == std::vector<std::size_t>{0, 1});
  CHECK(diff_nodes(graph_of({"a", "b"}), graph_of({"a", "b"})).new_ids.empty());
  CHECK_THROWS_AS(diff_nodes(graph_of({"a", "b"}), graph_of({"a", "c"})), DataError);
}

TEST_CASE("stream validation rejects drops and reorders") {
  StreamGraph ok{{graph_of({"a", "b"}), graph_of({"a", "b", "c"})}};
  CHECK_NOTHROW(ok.validate());
  StreamGraph dropped{{graph_of({"a", "b"}), graph_of({"a", "c"})}};
  CHECK_THROWS_AS(dropped.validate(), DataError);
  StreamGraph reordered{{graph_of({"a", "b"}), graph_of({"b", "a", "c"})}};
  CHECK_THROWS_AS(reordered.validate(), DataError);
}

TEST_CASE("induced submatrix keeps the requested order") {
  const Matrix m = m2({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  CHECK(induced_submatrix(m, {2, 0}).isApprox(m2({{9, 7}, {3, 1}})));
}

TEST_CASE("distance files: dense and edge list forms") {
  const auto dir = test::scratch_dir("graph");
  const std::vector<NodeId> nodes{"a", "b", "c"};
  {
    std::ofstream f(dir / "dense.csv");
    f << "0,1,2\n1,0,1\n2,1,0\n";
  }
  CHECK(read_distances((dir / "dense.csv").string(), nodes).isApprox(m2({{0, 1, 2}, {1, 0, 1}, {2, 1, 0}})));
  {
    std::ofstream f(dir / "edges.csv");
    f << "from_id,to_id,distance\na,b,1.5\nc,b,2\n";
  }
  const Matrix e = read_distances((dir / "edges.csv").string(), nodes);
  CHECK(e(0, 1) == 1.5);
  CHECK(e(1, 0) == 1.5);
  CHECK(e(1, 2) == 2.0);
  CHECK(std::isinf(e(0, 2)));
  {
    std::ofstream f(dir / "conflict.csv");
    f << "a,b,1\nb,a,2\n";
  }
  CHECK_THROWS_AS(read_distances((dir / "conflict.csv").string(), nodes), DataError);
  {
    std::ofstream f(dir / "unknown.csv");
    f << "a,z,1\n";
  }
  CHECK_THROWS_AS(read_distances((dir / "unknown.csv").string(), nodes), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dense matrix round trip is exact") {
  const auto dir = test::scratch_dir("dense");
  Rng rng(14);
  const Matrix m = test::random_matrix(rng, 5, 3);
  write_dense_matrix((dir / "m.csv").string(), m);
  CHECK(read_dense_matrix((dir / "m.csv").string()) == m);
  {
    std::ofstream f(dir / "bad.csv");
    f << "1,2\n3,x\n";
  }
  CHECK_THROWS_AS(read_dense_matrix((dir / "bad.csv").string()), DataError);
  {
    std::ofstream f(dir / "ragged.csv");
    f << "1,2\n3\n";
  }
  CHECK_THROWS_AS(read_dense_matrix((dir / "ragged.csv").string()), DataError);
  std::filesystem::remove_all(dir);
}
