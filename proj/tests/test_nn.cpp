#include <cmath>
#include <vector>

#include "doctest.h"
#include "eac/error.hpp"
#include "eac/nn/adam.hpp"
#include "eac/nn/checkpoint.hpp"
#include "eac/nn/gradcheck.hpp"
#include "eac/nn/ops.hpp"
#include "eac/nn/tape.hpp"
#include "eac/rng.hpp"

using namespace eac;
using namespace eac::nn;

namespace {

Tensor randn(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

Var sum_all(Var x) {
  const std::size_t n = x.value().size();
  return matmul(reshape(x, {1, n}), x.tape()->constant(Tensor({n, 1}, 1.0)));
}

}  // namespace

TEST_CASE("tensor construction and reshape") {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ArgumentError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ArgumentError);
  CHECK(Tensor::scalar(4).item() == 4.0);
  CHECK_THROWS_AS(t.item(), ArgumentError);
}

TEST_CASE("linear identity") {
  Tape tape;
  Var x = tape.constant(Tensor::from({1, 2}, {1, 2}));
  Var w = tape.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
  Var b = tape.constant(Tensor::from({2}, {0, 0}));
  CHECK(linear(x, w, b).value() == Tensor::from({1, 2}, {1, 2}));
}

TEST_CASE("spatial graph convolution hand case") {
  Tape tape;
  const Tensor a = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
  Var h = tape.constant(Tensor::from({2, 1}, {2, 0}));
  Var w = tape.constant(Tensor::from({1, 1}, {1}));
  CHECK(graph_conv_spatial(a, h, w).value() == Tensor::from({2, 1}, {1, 1}));
}

TEST_CASE("spatial graph convolution matches a per-slice loop") {
  Rng rng(1);
  Tape tape;
  const Tensor a = randn(rng, {3, 3});
  const Tensor h = randn(rng, {2, 4, 3, 5});
  const Tensor w = randn(rng, {5, 2});
  const Tensor out = graph_conv_spatial(a, tape.constant(h), tape.constant(w)).value();
  REQUIRE(out.shape() == Shape{2, 4, 3, 2});
  for (std::size_t s = 0; s < 8; ++s) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t o = 0; o < 2; ++o) {
        double ref = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          for (std::size_t c = 0; c < 5; ++c) ref += a[i * 3 + j] * h[(s * 3 + j) * 5 + c] * w[c * 2 + o];
        }
        CHECK(out[(s * 3 + i) * 2 + o] == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("Chebyshev convolution matches explicit polynomial matrices") {
  Rng rng(2);
  const std::size_t n = 4, d = 3, e = 2;
  Tensor l = randn(rng, {n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) l[i * n + j] = l[j * n + i];
  }
  const Tensor h = randn(rng, {n, d});
  std::vector<Tensor> th;
  for (int k = 0; k < 3; ++k) th.push_back(randn(rng, {d, e}));
  Tape tape;
  std::vector<Var> thetas;
  for (const auto& t : th) thetas.push_back(tape.constant(t));
  const Tensor out = graph_conv_cheb(l, tape.constant(h), thetas).value();
  // T0 = I, T1 = L, T2 = 2 L^2 - I.
  auto mat = [&](std::size_t k, std::size_t i, std::size_t j) {
    if (k == 0) return i == j ? 1.0 : 0.0;
    if (k == 1) return l[i * n + j];
    double l2 = 0.0;
    for (std::size_t m = 0; m < n; ++m) l2 += l[i * n + m] * l[m * n + j];
    return 2.0 * l2 - (i == j ? 1.0 : 0.0);
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < e; ++o) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < d; ++c) ref += mat(k, i, j) * h[j * d + c] * th[k][c * e + o];
        }
      }
      CHECK(out[i * e + o] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

// Banded operator with 28 of 100 entries nonzero, so it is stored sparse.
Tensor banded_operator(Rng& rng, bool symmetric) {
  const std::size_t n = 10;
  Tensor m({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    m[i * n + i] = rng.normal();
    if (i + 1 < n) {
      m[i * n + i + 1] = rng.normal();
      m[(i + 1) * n + i] = symmetric ? m[i * n + i + 1] : rng.normal();
    }
  }
  return m;
}

TEST_CASE("graph convolutions with a sparse operator match explicit loops") {
  Rng rng(21);
  const std::size_t n = 10, d = 3, e = 2, slices = 4;
  const Tensor a = banded_operator(rng, false);
  const Tensor l = banded_operator(rng, true);
  const Tensor h = randn(rng, {slices, n, d});
  const Tensor w = randn(rng, {d, e});
  std::vector<Tensor> th;
  for (int k = 0; k < 3; ++k) th.push_back(randn(rng, {d, e}));
  Tape tape;
  std::vector<Var> thetas;
  for (const auto& t : th) thetas.push_back(tape.constant(t));
  const Tensor spatial = graph_conv_spatial(a, tape.constant(h), tape.constant(w)).value();
  const Tensor cheb = graph_conv_cheb(l, tape.constant(h), thetas).value();
  auto l2 = [&](std::size_t i, std::size_t j) {
    double v = 0.0;
    for (std::size_t m = 0; m < n; ++m) v += l[i * n + m] * l[m * n + j];
    return v;
  };
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < e; ++o) {
        double ref_a = 0.0, ref_l = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double t0 = i == j ? 1.0 : 0.0, t1 = l[i * n + j], t2 = 2.0 * l2(i, j) - t0;
          for (std::size_t c = 0; c < d; ++c) {
            const double x = h[(s * n + j) * d + c];
            ref_a += a[i * n + j] * x * w[c * e + o];
            ref_l += x * (t0 * th[0][c * e + o] + t1 * th[1][c * e + o] + t2 * th[2][c * e + o]);
          }
        }
        CHECK(spatial[(s * n + i) * e + o] == doctest::Approx(ref_a).epsilon(1e-12));
        CHECK(cheb[(s * n + i) * e + o] == doctest::Approx(ref_l).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gradient check on graph convolutions with a sparse operator") {
  Rng rng(22);
  const Tensor a = banded_operator(rng, false);
  const Tensor l = banded_operator(rng, true);
  const Tensor r = randn(rng, {2, 10, 2});
  const LossBuilder spatial = [a, r](Tape&, const std::vector<Var>& v) {
    return mse_loss(graph_conv_spatial(a, v[0], v[1]), r);
  };
  CHECK(grad_check(spatial, {{"h", randn(rng, {2, 10, 3})}, {"w", randn(rng, {3, 2})}}).max_relative_error < 1e-4);
  const LossBuilder cheb = [l, r](Tape&, const std::vector<Var>& v) {
    const std::vector<Var> th(v.begin() + 1, v.end());
    return mse_loss(graph_conv_cheb(l, v[0], th), r);
  };
  const auto res = grad_check(cheb, {{"h", randn(rng, {2, 10, 3})},
                                     {"t0", randn(rng, {3, 2})},
                                     {"t1", randn(rng, {3, 2})},
                                     {"t2", randn(rng, {3, 2})}});
  CHECK(res.max_relative_error < 1e-4);
}

TEST_CASE("temporal convolution matches a zero-padded loop") {
  Rng rng(3);
  const std::size_t B = 2, T = 5, n = 3, d = 2, e = 4, K = 3;
  const Tensor x = randn(rng, {B, T, n, d});
  const Tensor w = randn(rng, {K, d, e});
  const Tensor b = randn(rng, {e});
  Tape tape;
  const Tensor out = temporal_conv(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  REQUIRE(out.shape() == Shape{B, T, n, e});
  for (std::size_t bb = 0; bb < B; ++bb) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < e; ++o) {
          double ref = b[o];
          for (std::size_t k = 0; k < K; ++k) {
            const long src = static_cast<long>(t) + static_cast<long>(k) - 1;
            if (src < 0 || src >= static_cast<long>(T)) continue;
            for (std::size_t c = 0; c < d; ++c) {
              ref += x[((bb * T + static_cast<std::size_t>(src)) * n + i) * d + c] * w[(k * d + c) * e + o];
            }
          }
          CHECK(out[((bb * T + t) * n + i) * e + o] == doctest::Approx(ref).epsilon(1e-12));
        }
      }
    }
  }
  CHECK_THROWS_AS(temporal_conv(tape.constant(x), tape.constant(Tensor({2, d, e})), tape.constant(b)),
                  ArgumentError);
}

TEST_CASE("shape errors name the op") {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL("expected a shape error");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("mse hand case") {
  Tape tape;
  CHECK(mse_loss(tape.constant(Tensor::from({2}, {1, 3})), Tensor::from({2}, {1, 2})).value().item() == 0.5);
}

TEST_CASE("dropout is inverted, seeded and the identity at p = 0") {
  Tape tape;
  Var x = tape.constant(Tensor({1000}, 1.0));
  CHECK(dropout(x, 0.0, 1).id() == x.id());
  const Tensor a = dropout(x, 0.5, 7).value();
  const Tensor b = dropout(x, 0.5, 7).value();
  CHECK(a == b);
  std::size_t kept = 0;
  for (double v : a.storage()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("gradient of w^2 at 3 is 6") {
  Tape tape;
  Var w = tape.param({"w", Tensor::from({1, 1}, {3}), true});
  const auto g = tape.backward(matmul(w, w));
  CHECK(g.at("w")[0] == 6.0);
}

TEST_CASE("frozen parameters are absent from the gradient map") {
  Tape tape;
  Var w = tape.param({"w", Tensor::from({1, 1}, {3}), false});
  Var v = tape.param({"v", Tensor::from({1, 1}, {2}), true});
  const auto g = tape.backward(matmul(w, v));
  CHECK(g.count("w") == 0);
  CHECK(g.at("v")[0] == 3.0);
}

TEST_CASE("parameters off the loss path get zero gradients") {
  Tape tape;
  Var w = tape.param({"w", Tensor::from({1, 1}, {3}), true});
  tape.param({"u", Tensor::from({2}, {1, 1}), true});
  const auto g = tape.backward(matmul(w, tape.constant(Tensor::from({1, 1}, {0}))));
  CHECK(g.at("w")[0] == 0.0);
  CHECK(g.at("u") == Tensor({2}, 0.0));
}

TEST_CASE("tape is single use and needs a scalar loss") {
  Tape tape;
  Var w = tape.param({"w", Tensor::from({2}, {1, 2}), true});
  CHECK_THROWS_AS(tape.backward(w), ArgumentError);
  Tape t2;
  Var s = sum_all(t2.param({"w", Tensor::from({2}, {1, 2}), true}));
  t2.backward(s);
  CHECK_THROWS_AS(t2.backward(s), ArgumentError);
}

TEST_CASE("non-finite values abort with the op name") {
  Tape tape;
  Var a = tape.constant(Tensor::from({1, 1}, {1e200}));
  try {
    matmul(a, a);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("first Adam step closed form") {
  Parameter w{"w", Tensor::from({1}, {0.0}), true};
  std::vector<Parameter*> ps{&w};
  Adam adam;
  adam.step(ps, {{"w", Tensor::from({1}, {1.0})}}, 0.1);
  const double m_hat = 0.1 / (1 - 0.9);
  const double v_hat = 0.001 / (1 - 0.999);
  CHECK(w.value[0] == doctest::Approx(-0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-14));
  CHECK(w.value[0] == doctest::Approx(-0.0999999990).epsilon(1e-9));
}

TEST_CASE("zero gradient leaves parameters unchanged and counts the step") {
  Parameter w{"w", Tensor::from({2}, {1.5, -2.0}), true};
  std::vector<Parameter*> ps{&w};
  Adam adam;
  adam.step(ps, {{"w", Tensor({2}, 0.0)}}, 0.1);
  CHECK(w.value == Tensor::from({2}, {1.5, -2.0}));
  CHECK(adam.steps() == 1);
}

TEST_CASE("Adam rejects contract violations") {
  Parameter frozen{"f", Tensor::from({1}, {1.0}), false};
  Parameter live{"w", Tensor::from({1}, {1.0}), true};
  std::vector<Parameter*> ps{&frozen, &live};
  Adam adam;
  CHECK_THROWS_AS(adam.step(ps, {{"f", Tensor({1}, 1.0)}, {"w", Tensor({1}, 1.0)}}, 0.1), ArgumentError);
  CHECK_THROWS_AS(adam.step(ps, {}, 0.1), ArgumentError);
  CHECK_THROWS_AS(adam.step(ps, {{"w", Tensor({2}, 1.0)}}, 0.1), ArgumentError);
  CHECK(frozen.value[0] == 1.0);
}

TEST_CASE("Adam matches a scalar reference over many steps") {
  Rng rng(4);
  Parameter w{"w", Tensor::from({1}, {0.3}), true};
  std::vector<Parameter*> ps{&w};
  Adam adam;
  double ref = 0.3, m = 0.0, v = 0.0;
  for (int t = 1; t <= 50; ++t) {
    const double g = rng.normal();
    adam.step(ps, {{"w", Tensor::from({1}, {g})}}, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(w.value[0] == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(5);
  std::vector<Parameter> ps{{"a", randn(rng, {3, 4}), true}, {"b", randn(rng, {5}), false},
                            {"c", Tensor::scalar(1.0 / 3.0), true}};
  std::map<std::string, std::string> header{{"variant", "spatial"}};
  const std::string text = serialize_parameters(ps, header);
  std::map<std::string, std::string> back_header;
  const auto back = parse_parameters(text, &back_header);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == ps[i].name);
    CHECK(back[i].value == ps[i].value);
  }
  CHECK(back_header.at("variant") == "spatial");
  CHECK(parameter_hash(back) == parameter_hash(ps));
  CHECK_THROWS_AS(parse_parameters("eac-params v9\n"), DataError);
  CHECK_THROWS_AS(parse_parameters("eac-params v1\na 2x2 1 2 3\n"), DataError);
}

TEST_CASE("gradient check on a linear layer") {
  Rng rng(6);
  const LossBuilder loss = [](Tape&, const std::vector<Var>& v) { return sum_all(linear(v[0], v[1], v[2])); };
  const auto r = grad_check(loss, {{"x", randn(rng, {3, 4})}, {"w", randn(rng, {4, 2})}, {"b", randn(rng, {2})}});
  CHECK(r.max_relative_error < 1e-6);
  CHECK(r.coordinates == 12 + 8 + 2);
}

TEST_CASE("gradient check on Chebyshev convolution of order 2") {
  Rng rng(7);
  Tensor l = randn(rng, {4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < i; ++j) l[i * 4 + j] = l[j * 4 + i];
  }
  const Tensor r = randn(rng, {4, 2});
  const LossBuilder loss = [l, r](Tape& t, const std::vector<Var>& v) {
    const std::vector<Var> th(v.begin() + 1, v.end());
    return mse_loss(graph_conv_cheb(l, v[0], th), r);
  };
  const auto res = grad_check(
      loss, {{"h", randn(rng, {4, 3})}, {"t0", randn(rng, {3, 2})}, {"t1", randn(rng, {3, 2})}, {"t2", randn(rng, {3, 2})}});
  CHECK(res.max_relative_error < 1e-4);
}

TEST_CASE("a scaled backward pass is caught") {
  Rng rng(8);
  const LossBuilder loss = [](Tape&, const std::vector<Var>& v) { return sum_all(relu(v[0])); };
  const auto r = grad_check(loss, {{"x", Tensor::from({3}, {1.0, 2.0, -1.0})}}, 1e-5, 1.5);
  CHECK(r.max_relative_error > 0.1);
}

TEST_CASE("relu at the kink is rejected") {
  CHECK_THROWS_AS(require_away_from_kink(Tensor::from({2}, {0.0, 1.0})), ArgumentError);
  CHECK_NOTHROW(require_away_from_kink(Tensor::from({2}, {-0.5, 1.0})));
}

TEST_CASE("concat rows and swap last two") {
  Tape tape;
  Var a = tape.constant(Tensor::from({1, 2}, {1, 2}));
  Var b = tape.constant(Tensor::from({2, 2}, {3, 4, 5, 6}));
  const std::vector<Var> blocks{a, b};
  CHECK(concat_rows(blocks).value() == Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}));
  CHECK(swap_last_two(b).value() == Tensor::from({2, 2}, {3, 5, 4, 6}));
}
