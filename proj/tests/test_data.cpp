#include <cmath>
#include <fstream>

#include "doctest.h"
#include "eac/data.hpp"
#include "eac/error.hpp"
#include "helpers.hpp"

using namespace eac;
using nn::Tensor;

namespace {

PeriodGraph two_nodes() {
  PeriodGraph g;
  g.nodes = {"a", "b"};
  g.distances = Matrix::Zero(2, 2);
  g.adjacency = Matrix::Zero(2, 2);
  return g;
}

Matrix series(Eigen::Index t, Eigen::Index n) {
  Matrix m(t, n);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = static_cast<double>(i * 10 + j);
  }
  return m;
}

std::vector<WindowSample> dummy_windows(std::size_t count) {
  std::vector<WindowSample> w(count);
  for (std::size_t i = 0; i < count; ++i) w[i].start_index = i;
  return w;
}

}  // namespace

TEST_CASE("ingest reorders columns to the graph order and forward-fills gaps") {
  const auto dir = test::scratch_dir("ingest");
  const auto path = (dir / "obs.csv").string();
  {
    std::ofstream f(path);
    f << "time,b,a\n";
    for (int t = 0; t < 8; ++t) {
      f << t << "," << 100 + t << ",";
      if (t != 5) f << t;
      f << "\n";
    }
  }
  const auto s = ingest_period(path, two_nodes());
  CHECK(s.node_ids == std::vector<NodeId>{"a", "b"});
  CHECK(s.values(0, 0) == 0.0);
  CHECK(s.values(0, 1) == 100.0);
  CHECK(s.values(5, 0) == 4.0);
  CHECK(s.values(6, 0) == 6.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("leading gaps take the column mean") {
  const auto dir = test::scratch_dir("ingest_lead");
  const auto path = (dir / "obs.csv").string();
  {
    std::ofstream f(path);
    f << "time,a,b\n0,,1\n1,2,1\n2,4,1\n";
  }
  const auto s = ingest_period(path, two_nodes());
  CHECK(s.values(0, 0) == 3.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ingest errors name the offender") {
  const auto dir = test::scratch_dir("ingest_err");
  const auto path = (dir / "obs.csv").string();
  PeriodGraph g = two_nodes();
  g.nodes.push_back("c");
  g.distances = Matrix::Zero(3, 3);
  g.adjacency = Matrix::Zero(3, 3);
  {
    std::ofstream f(path);
    f << "time,a,b\n0,1,2\n";
  }
  try {
    ingest_period(path, g);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }
  {
    std::ofstream f(path);
    f << "time,a,b\n0,1,x\n";
  }
  CHECK_THROWS_AS(ingest_period(path, two_nodes()), DataError);
  {
    std::ofstream f(path);
    f << "time,a,b,z\n0,1,2,3\n";
  }
  CHECK_THROWS_AS(ingest_period(path, two_nodes()), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("observations round trip through the CSV writer") {
  const auto dir = test::scratch_dir("obs_rt");
  ObservationSeries s;
  s.node_ids = {"a", "b"};
  Rng rng(1);
  s.values = test::random_matrix(rng, 30, 2, 10.0);
  write_observations((dir / "o.csv").string(), s);
  CHECK(ingest_period((dir / "o.csv").string(), two_nodes()).values == s.values);
  std::filesystem::remove_all(dir);
}

TEST_CASE("chronological split sizes") {
  auto s = chrono_split(series(100, 1), 4, 4);
  CHECK(s.train.rows() == 60);
  CHECK(s.val.rows() == 20);
  CHECK(s.test.rows() == 20);
  s = chrono_split(series(101, 1), 4, 4);
  CHECK(s.train.rows() == 60);
  CHECK(s.val.rows() == 20);
  CHECK(s.test.rows() == 21);
  CHECK(s.val_start == 60);
  CHECK(s.test_start == 80);
  CHECK_THROWS_AS(chrono_split(series(70, 1), 12, 12), DataError);
}

TEST_CASE("window counts") {
  CHECK(make_windows(series(36, 2), 12, 12).size() == 13);
  CHECK(make_windows(series(24, 2), 12, 12).size() == 1);
  CHECK_THROWS_AS(make_windows(series(23, 2), 12, 12), DataError);
  // brute-force oracle over lengths and strides
  for (Eigen::Index t = 24; t < 60; ++t) {
    for (std::size_t stride = 1; stride <= 5; ++stride) {
      std::size_t expected = 0;
      for (Eigen::Index s = 0; s + 24 <= t; s += static_cast<Eigen::Index>(stride)) ++expected;
      CHECK(make_windows(series(t, 1), 12, 12, stride).size() == expected);
    }
  }
}

TEST_CASE("target immediately follows input") {
  const auto w = make_windows(series(30, 2), 3, 2, 1, 100);
  REQUIRE(w.size() == 26);
  const auto& s = w[4];
  CHECK(s.start_index == 104);
  CHECK(s.input.shape() == nn::Shape{3, 2});
  CHECK(s.input[0] == 40.0);
  CHECK(s.input[5] == 61.0);
  CHECK(s.target[0] == 70.0);
  CHECK(s.target[3] == 81.0);
}

TEST_CASE("normalizer") {
  const Normalizer c = Normalizer::fit(Matrix::Constant(10, 3, 5.0));
  CHECK(c.mean == 5.0);
  CHECK(c.std == Normalizer::kMinStd);
  CHECK(c.apply(5.0) == 0.0);
  Rng rng(2);
  const Matrix m = test::random_matrix(rng, 50, 4, 30.0);
  const Normalizer n = Normalizer::fit(m);
  CHECK(n.apply(n.mean) == 0.0);
  Tensor t({100});
  for (double& v : t.storage()) v = 1000.0 * rng.normal();
  const Tensor back = n.invert(n.apply(t));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(back[i] - t[i]) <= 1e-9 * (1.0 + std::abs(t[i])));
}

TEST_CASE("few-shot subsampling") {
  const auto fifty = dummy_windows(50);
  const auto kept = few_shot_subsample(fifty, 0.2);
  REQUIRE(kept.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(kept[i].start_index == i);
  CHECK(few_shot_subsample(fifty, 1.0).size() == 50);
  CHECK_THROWS_AS(few_shot_subsample(dummy_windows(3), 0.2), DataError);
  const auto r1 = few_shot_subsample(fifty, 0.2, true, 5);
  const auto r2 = few_shot_subsample(fifty, 0.2, true, 5);
  REQUIRE(r1.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(r1[i].start_index == r2[i].start_index);
  for (std::size_t i = 1; i < 10; ++i) CHECK(r1[i - 1].start_index < r1[i].start_index);
}

TEST_CASE("synthetic stream shape and determinism") {
  SynthSpec spec = parse_synth_spec("n0=40,growth=10,periods=3,T=200,seed=3");
  const auto a = synth_stream(spec);
  const auto b = synth_stream(spec);
  REQUIRE(a.graph.periods.size() == 3);
  CHECK(a.graph.periods[0].size() == 40);
  CHECK(a.graph.periods[1].size() == 50);
  CHECK(a.graph.periods[2].size() == 60);
  CHECK_NOTHROW(a.graph.validate());
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(a.series[p].values == b.series[p].values);
    CHECK(a.series[p].values.rows() == 200);
    CHECK(a.graph.periods[p].adjacency == b.graph.periods[p].adjacency);
  }
  spec.seed = 4;
  CHECK(synth_stream(spec).series[0].values != a.series[0].values);
}

TEST_CASE("noise-free co-located nodes produce identical series") {
  const auto s = synth_stream(parse_synth_spec("n0=5,growth=0,periods=1,T=50,noise=0,offset=0"));
  const Matrix& v = s.series[0].values;
  for (Eigen::Index j = 1; j < v.cols(); ++j) CHECK((v.col(j) - v.col(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("synth spec parsing") {
  const auto s = parse_synth_spec("n0=12,T=300,r=0.9");
  CHECK(s.n0 == 12);
  CHECK(s.steps == 300);
  CHECK(s.threshold == 0.9);
  CHECK(parse_synth_spec(to_string(s)).steps == 300);
  CHECK_THROWS_AS(parse_synth_spec("n0=12,bogus=3"), ConfigError);
  CHECK_THROWS_AS(parse_synth_spec("n0=abc"), ConfigError);
}

TEST_CASE("stream directory round trip through the manifest") {
  const auto dir = test::scratch_dir("stream");
  const auto stream = synth_stream(parse_synth_spec("n0=6,growth=2,periods=2,T=80,seed=1"));
  const std::string manifest = write_stream(stream, dir.string(), 0.5);
  const auto back = load_stream_manifest(manifest);
  REQUIRE(back.series.size() == 2);
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(back.graph.periods[p].nodes == stream.graph.periods[p].nodes);
    CHECK(back.series[p].values == stream.series[p].values);
    CHECK((back.graph.periods[p].adjacency - stream.graph.periods[p].adjacency).cwiseAbs().maxCoeff() < 1e-12);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("period dataset and node restriction") {
  const auto stream = synth_stream(parse_synth_spec("n0=6,growth=0,periods=1,T=100,seed=1"));
  DatasetOptions o;
  o.t_in = 4;
  o.t_out = 3;
  const auto ds = build_period_dataset(stream.series[0], stream.graph.periods[0], o);
  CHECK(ds.train.size() == 60 - 7 + 1);
  CHECK(ds.val.size() == 20 - 7 + 1);
  CHECK(ds.test.size() == 20 - 7 + 1);
  CHECK(ds.val.front().start_index == 60);
  const auto sub = restrict_to_nodes(ds, {4, 1});
  CHECK(sub.graph.nodes == std::vector<NodeId>{ds.graph.nodes[4], ds.graph.nodes[1]});
  CHECK(sub.train[3].input[0] == ds.train[3].input[4]);
  CHECK(sub.train[3].input[1] == ds.train[3].input[1]);
  o.few_shot_fraction = 0.2;
  CHECK(build_period_dataset(stream.series[0], stream.graph.periods[0], o).train.size() == 10);
}
