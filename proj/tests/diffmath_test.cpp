#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alm/diffmath/ops.hpp"
#include "alm/diffmath/optim.hpp"
#include "alm/error.hpp"
#include "finite_diff.hpp"

namespace alm {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_vector;

TEST(Matmul, IdentityAndHandArithmetic) {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor col = Tensor::matrix(2, 1, {3, 4});
  const Tensor prod = matmul(eye, col);
  EXPECT_EQ(prod.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(prod[0], 3.0);
  EXPECT_DOUBLE_EQ(prod[1], 4.0);

  const Tensor row = Tensor::matrix(1, 2, {1, 2});
  EXPECT_DOUBLE_EQ(matmul(row, col).item(), 11.0);
}

TEST(Matmul, GradientOfSumWrtLeftOperand) {
  Tape tape;
  const Tensor a = tape.leaf(Tensor::matrix(1, 2, {1, 2}));
  const Tensor b = Tensor::matrix(2, 1, {3, 4});
  const Gradients g = tape.backward(sum(matmul(a, b)));
  const auto da = g.wrt(a);
  // Frozen from the finite-difference oracle below.
  EXPECT_NEAR(da[0], 3.0, 1e-12);
  EXPECT_NEAR(da[1], 4.0, 1e-12);
  const auto fd = numeric_gradient(
      [&](const std::vector<double>& x) {
        return sum(matmul(Tensor::matrix(1, 2, x), b)).item();
      },
      {1, 2});
  EXPECT_LE(max_relative_error(da, fd), 1e-8);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
}

TEST(Elementwise, DefinitionBoundaries) {
  EXPECT_DOUBLE_EQ(elu(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(elu(Tensor::scalar(-50.0)).item(), -1.0, 1e-15);
  EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), 0.693147180559945, 1e-12);

  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(tape.backward(tanh(x)).wrt(x)[0], 1.0);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::scalar(-2.0)), DomainError);
}

TEST(Elementwise, BroadcastOnlyScalarOrEqualShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  EXPECT_NO_THROW(add(a, Tensor::scalar(1.0)));
  EXPECT_NO_THROW(mul(Tensor::scalar(2.0), a));
  EXPECT_THROW(add(a, Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(add(a, Tensor::zeros({1, 3})), DimensionError);
  const Tensor s = add(Tensor::scalar(2.0), Tensor::vector({1, 2}));
  EXPECT_DOUBLE_EQ(s[1], 4.0);
}

TEST(Reduce, SumMeanAndGradient) {
  EXPECT_DOUBLE_EQ(sum(Tensor::vector({1, 2, 3})).item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(Tensor::vector({2, 4})).item(), 3.0);
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({5, 7}));
  const auto g = tape.backward(mean(x)).wrt(x);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
}

TEST(Reduce, AxisReductions) {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor rows = sum(m, 1);
  EXPECT_EQ(rows.shape(), Shape{2});
  EXPECT_DOUBLE_EQ(rows[0], 6.0);
  EXPECT_DOUBLE_EQ(rows[1], 15.0);
  const Tensor cols = mean(m, 0);
  EXPECT_EQ(cols.shape(), Shape{3});
  EXPECT_DOUBLE_EQ(cols[2], 4.5);
  EXPECT_THROW(sum(m, 2), DimensionError);
}

TEST(LayerNorm, ZeroVarianceAndSymmetricRow) {
  const Tensor gain = Tensor::vector({1, 1});
  const Tensor bias = Tensor::vector({0, 0});
  const Tensor flat = layer_norm(Tensor::matrix(1, 2, {5, 5}), gain, bias);
  EXPECT_DOUBLE_EQ(flat[0], 0.0);
  EXPECT_DOUBLE_EQ(flat[1], 0.0);
  const Tensor spread = layer_norm(Tensor::matrix(1, 2, {0, 2}), gain, bias);
  EXPECT_NEAR(spread[0], -1.0, 1e-7);
  EXPECT_NEAR(spread[1], 1.0, 1e-7);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto xv = random_vector(12, rng, -2, 2);
  const auto gv = random_vector(4, rng, 0.5, 1.5);
  const auto bv = random_vector(4, rng);
  const auto wv = random_vector(12, rng);
  const Tensor w = Tensor::matrix(3, 4, wv);
  auto loss = [&](const Tensor& x, const Tensor& g, const Tensor& b) {
    return sum(mul(layer_norm(x, g, b), w));
  };
  Tape tape;
  const Tensor x = tape.leaf(Tensor::matrix(3, 4, xv));
  const Tensor g = tape.leaf(Tensor::vector(gv));
  const Tensor b = tape.leaf(Tensor::vector(bv));
  const Gradients grads = tape.backward(loss(x, g, b));
  const auto fx = numeric_gradient(
      [&](const std::vector<double>& v) {
        return loss(Tensor::matrix(3, 4, v), Tensor::vector(gv), Tensor::vector(bv)).item();
      },
      xv);
  const auto fg = numeric_gradient(
      [&](const std::vector<double>& v) {
        return loss(Tensor::matrix(3, 4, xv), Tensor::vector(v), Tensor::vector(bv)).item();
      },
      gv);
  EXPECT_LE(max_relative_error(grads.wrt(x), fx), 1e-5);
  EXPECT_LE(max_relative_error(grads.wrt(g), fg), 1e-5);
}

TEST(LayerNorm, RowsAreStandardizedBeforeAffine) {
  std::mt19937_64 rng(11);
  const Tensor gain = Tensor::filled({8}, 1.0);
  const Tensor bias = Tensor::zeros({8});
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = Tensor::matrix(5, 8, random_vector(40, rng, -3, 3));
    const Tensor y = layer_norm(x, gain, bias);
    for (std::size_t r = 0; r < 5; ++r) {
      double mu = 0, var = 0;
      for (std::size_t j = 0; j < 8; ++j) mu += y.at(r, j);
      mu /= 8;
      for (std::size_t j = 0; j < 8; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu);
      var /= 8;
      EXPECT_LE(std::abs(mu), 1e-10);
      EXPECT_LE(std::abs(var - 1.0), 1e-6);
    }
  }
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(3.0));
  EXPECT_DOUBLE_EQ(tape.backward(square(x)).wrt(x)[0], 6.0);
}

TEST(Backward, UnrolledLinearChain) {
  std::mt19937_64 rng(5);
  const auto wv = random_vector(9, rng, -0.8, 0.8);
  const auto zv = random_vector(3, rng);
  auto chain = [](const Tensor& w, Tensor z) {
    for (int t = 0; t < 3; ++t) z = matmul(z, w);
    return sum(z);
  };
  Tape tape;
  const Tensor w = tape.leaf(Tensor::matrix(3, 3, wv));
  const Tensor z = tape.leaf(Tensor::matrix(1, 3, zv));
  const Gradients g = tape.backward(chain(w, z));
  const auto fw = numeric_gradient(
      [&](const std::vector<double>& v) {
        return chain(Tensor::matrix(3, 3, v), Tensor::matrix(1, 3, zv)).item();
      },
      wv);
  const auto fz = numeric_gradient(
      [&](const std::vector<double>& v) {
        return chain(Tensor::matrix(3, 3, wv), Tensor::matrix(1, 3, v)).item();
      },
      zv);
  EXPECT_LE(max_relative_error(g.wrt(w), fw), 1e-4);
  EXPECT_LE(max_relative_error(g.wrt(z), fz), 1e-4);
}

TEST(Backward, DetachedSubgraphGetsNoGradient) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  const Tensor y = tape.leaf(Tensor::vector({3, 4}));
  const Tensor loss = sum(mul(x, x)) + sum(mul(y.detach(), x.detach()));
  const Gradients g = tape.backward(loss);
  EXPECT_DOUBLE_EQ(g.wrt(y)[0], 0.0);
  EXPECT_DOUBLE_EQ(g.wrt(y)[1], 0.0);
  EXPECT_DOUBLE_EQ(g.wrt(x)[1], 4.0);
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(square(x)), ContractError);
  Tape other;
  EXPECT_THROW(other.backward(sum(x)), ContractError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Backward, MixingTapesIsRejected) {
  Tape a, b;
  const Tensor x = a.leaf(Tensor::scalar(1.0));
  const Tensor y = b.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(add(x, y), ContractError);
}

// Every differentiable op, 20 random small inputs each, against central
// differences with step 1e-6.
TEST(GradientCheck, AllOpsOnRandomInputs) {
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&, const Tensor&)> op;  // (x[2x3], y[2x3])
    double lo = -1.5, hi = 1.5;
  };
  const Tensor w3x2 = Tensor::matrix(3, 2, {0.3, -0.2, 0.5, 0.1, -0.4, 0.7});
  const Tensor bias2 = Tensor::vector({0.1, -0.3});
  const Tensor gain3 = Tensor::vector({1.2, 0.7, -0.5});
  const Tensor beta3 = Tensor::vector({0.2, 0.0, -0.1});
  const std::vector<Case> cases = {
      {"add", [](auto& x, auto& y) { return add(x, y); }},
      {"sub", [](auto& x, auto& y) { return sub(x, y); }},
      {"mul", [](auto& x, auto& y) { return mul(x, y); }},
      {"div", [](auto& x, auto& y) { return div(x, add_scalar(square(y), 0.5)); }},
      {"scalar_mul", [](auto& x, auto& y) { return mul(sum(y), x); }},
      {"exp", [](auto& x, auto&) { return exp(x); }},
      {"log", [](auto& x, auto&) { return log(add_scalar(square(x), 0.2)); }},
      {"tanh", [](auto& x, auto&) { return tanh(x); }},
      {"elu", [](auto& x, auto&) { return elu(x); }},
      {"softplus", [](auto& x, auto&) { return softplus(x); }},
      {"sigmoid", [](auto& x, auto&) { return sigmoid(x); }},
      {"square", [](auto& x, auto&) { return square(x); }},
      {"negate_scale", [](auto& x, auto&) { return scale(negate(x), 2.5); }},
      {"clamp", [](auto& x, auto&) { return clamp(x, -0.7, 0.9); }},
      {"matmul", [w3x2](auto& x, auto&) { return matmul(x, w3x2); }},
      {"affine", [w3x2, bias2](auto& x, auto&) { return affine(x, w3x2, bias2); }},
      {"matmul_both", [](auto& x, auto& y) { return matmul(x, reshape(y, {3, 2})); }},
      {"sum_axis", [](auto& x, auto&) { return sum(x, 1); }},
      {"mean_axis", [](auto& x, auto&) { return mean(x, 0); }},
      {"layer_norm", [gain3, beta3](auto& x, auto&) { return layer_norm(x, gain3, beta3); }},
      {"concat_slice",
       [](auto& x, auto& y) { return slice_cols(concat_cols({x, y}), 2, 5); }},
  };
  std::mt19937_64 rng(42);
  for (const auto& c : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto xv = random_vector(6, rng, c.lo, c.hi);
      const auto yv = random_vector(6, rng, c.lo, c.hi);
      auto weights = random_vector(64, rng);
      auto scalarize = [&](const Tensor& out) {
        std::vector<double> w(weights.begin(), weights.begin() + out.size());
        return sum(mul(out, Tensor(out.shape(), w)));
      };
      Tape tape;
      const Tensor x = tape.leaf(Tensor::matrix(2, 3, xv));
      const Tensor y = tape.leaf(Tensor::matrix(2, 3, yv));
      const Gradients g = tape.backward(scalarize(c.op(x, y)));
      const auto fx = numeric_gradient(
          [&](const std::vector<double>& v) {
            return scalarize(c.op(Tensor::matrix(2, 3, v), Tensor::matrix(2, 3, yv))).item();
          },
          xv);
      const auto fy = numeric_gradient(
          [&](const std::vector<double>& v) {
            return scalarize(c.op(Tensor::matrix(2, 3, xv), Tensor::matrix(2, 3, v))).item();
          },
          yv);
      EXPECT_LE(max_relative_error(g.wrt(x), fx), 1e-4) << c.name << " trial " << trial;
      EXPECT_LE(max_relative_error(g.wrt(y), fy), 1e-4) << c.name << " trial " << trial;
    }
  }
}

TEST(ClipGlobalNorm, BelowThresholdUnchanged) {
  GradList g = {{30, 40}};  // norm 50
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 100.0), 50.0);
  EXPECT_DOUBLE_EQ(g[0][0], 30.0);
  EXPECT_DOUBLE_EQ(g[0][1], 40.0);
}

TEST(ClipGlobalNorm, ScalesDownToMaxNorm) {
  GradList g = {{300, 400}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 100.0), 500.0);
  EXPECT_NEAR(g[0][0], 60.0, 1e-12);
  EXPECT_NEAR(g[0][1], 80.0, 1e-12);
}

TEST(ClipGlobalNorm, NeverIncreasesComponentsAndBoundsNorm) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> scale_dist(0.01, 500.0);
  for (int trial = 0; trial < 200; ++trial) {
    GradList g = {random_vector(5, rng, -100, 100), random_vector(3, rng, -100, 100)};
    const GradList before = g;
    const double max_norm = scale_dist(rng);
    clip_global_norm(g, max_norm);
    EXPECT_LE(global_norm(g), max_norm * (1 + 1e-12));
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < g[i].size(); ++j)
        EXPECT_LE(std::abs(g[i][j]), std::abs(before[i][j]));
  }
  GradList g = {{1.0}};
  EXPECT_THROW(clip_global_norm(g, 0.0), ContractError);
}

std::vector<Param> make_params(std::vector<double> v) {
  return {Param{"w", Tensor::vector(std::move(v))}};
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  auto params = make_params({1.0, -2.0});
  AdamState state(params, 1e-4);
  adam_step(state, params, {{0.0, 0.0}});
  EXPECT_DOUBLE_EQ(params[0].value[0], 1.0);
  EXPECT_DOUBLE_EQ(params[0].value[1], -2.0);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  auto params = make_params({1.0, 1.0, 1.0});
  AdamState state(params, 1e-4);
  adam_step(state, params, {{0.3, -7.0, 1e3}});
  // m_hat = g and v_hat = g^2 after one step, so |delta| = lr * |g|/(|g|+eps).
  EXPECT_NEAR(params[0].value[0], 1.0 - 1e-4, 1e-10);
  EXPECT_NEAR(params[0].value[1], 1.0 + 1e-4, 1e-10);
  EXPECT_NEAR(params[0].value[2], 1.0 - 1e-4, 1e-10);
}

TEST(Adam, DeterministicAcrossIdenticalRuns) {
  auto run = [] {
    std::mt19937_64 rng(123);
    auto params = make_params(random_vector(10, rng));
    AdamState state(params, 1e-3);
    for (int i = 0; i < 50; ++i) adam_step(state, params, {random_vector(10, rng)});
    return std::vector<double>(params[0].value.values().begin(), params[0].value.values().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto params = make_params({1.0});
  params[0].name = "policy.l0.weight";
  AdamState state(params, 1e-4);
  try {
    adam_step(state, params, {{std::nan("")}});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("policy.l0.weight"), std::string::npos);
  }
  EXPECT_DOUBLE_EQ(params[0].value[0], 1.0);
  EXPECT_EQ(state.step, 0);
}

TEST(Polyak, HardAndSoftUpdates) {
  auto target = make_params({0.0, 0.0});
  const auto online = make_params({1.0, -3.0});
  polyak_update(target, online, 1.0);
  EXPECT_DOUBLE_EQ(target[0].value[1], -3.0);

  auto soft = make_params({0.0});
  polyak_update(soft, make_params({1.0}), 0.005);
  EXPECT_DOUBLE_EQ(soft[0].value[0], 0.005);
  EXPECT_THROW(polyak_update(soft, online, 0.0), ContractError);
}

TEST(Polyak, ConvergesGeometrically) {
  auto target = make_params({0.0});
  const auto online = make_params({1.0});
  const double tau = 0.005;
  for (int n = 1; n <= 1000; ++n) {
    polyak_update(target, online, tau);
    // Closed form of the repeated update: 1 - (1 - tau)^n.
    ASSERT_NEAR(target[0].value[0], 1.0 - std::pow(1.0 - tau, n), 1e-12);
  }
}

}  // namespace
}  // namespace alm
