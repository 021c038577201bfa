#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evsee/tensor.hpp"

using namespace evsee;
using namespace evsee::nn;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-4;

// Uniform values in [lo, hi], pushed at least `gap` away from zero so
// kinked primitives are probed off their kink.
NdArray random_array(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, double gap = 0.0) {
  std::mt19937_64 rng(seed);
  NdArray a = NdArray::uniform(std::move(shape), lo, hi, rng);
  for (double& v : a.data)
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  return a;
}

// Contracts an arbitrary tensor to a scalar with fixed non-uniform weights
// so every output element carries a distinct upstream gradient.
Var weighted_sum(Tape& t, const Var& v) {
  NdArray w(v.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.3 + 0.1 * static_cast<double>(i % 7) - 0.05 * static_cast<double>(i % 3);
  return sum(mul(v, t.constant(w)));
}

}  // namespace

TEST(Tape, ForwardValues) {
  Tape t;
  auto a = t.leaf(NdArray({2, 2}, {1, 2, 3, 4}));
  auto b = t.leaf(NdArray({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(add(a, b).array().data, (std::vector<double>{6, 8, 10, 12}));
  EXPECT_EQ(sub(a, b).array().data, (std::vector<double>{-4, -4, -4, -4}));
  EXPECT_EQ(mul(a, b).array().data, (std::vector<double>{5, 12, 21, 32}));
  EXPECT_EQ(matmul(a, b).array().data, (std::vector<double>{19, 22, 43, 50}));
  EXPECT_EQ(transpose(a).array().data, (std::vector<double>{1, 3, 2, 4}));
  EXPECT_EQ(scale(a, 2).array().data, (std::vector<double>{2, 4, 6, 8}));
  EXPECT_EQ(add_scalar(a, -1).array().data, (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(sum(a).item(), 10.0);
  EXPECT_EQ(mean(a).item(), 2.5);
  EXPECT_EQ(concat_lastdim({a, b}).array().data, (std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8}));
  EXPECT_EQ(slice_lastdim(a, 1, 2).array().data, (std::vector<double>{2, 4}));
  auto row = t.leaf(NdArray({2}, {10, 20}));
  EXPECT_EQ(add_row(a, row).array().data, (std::vector<double>{11, 22, 13, 24}));
  EXPECT_EQ(mul_row(a, row).array().data, (std::vector<double>{10, 40, 30, 80}));
}

TEST(Tape, ElementwiseValues) {
  Tape t;
  auto a = t.leaf(NdArray({4}, {-2, -0.5, 0.5, 4}));
  EXPECT_EQ(relu(a).array().data, (std::vector<double>{0, 0, 0.5, 4}));
  EXPECT_EQ(abs(a).array().data, (std::vector<double>{2, 0.5, 0.5, 4}));
  EXPECT_EQ(square(a).array().data, (std::vector<double>{4, 0.25, 0.25, 16}));
  EXPECT_DOUBLE_EQ(sigmoid(a).value()[3], 1.0 / (1.0 + std::exp(-4.0)));
  EXPECT_EQ(sqrt(abs(a)).value()[3], 2.0);
}

TEST(Tape, SoftmaxRowsSumToOne) {
  Tape t;
  auto a = t.leaf(random_array({5, 7}, 3, -5, 5));
  const auto s = softmax_lastdim(a).array();
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(s.data[r * 7 + c], 0.0);
      z += s.data[r * 7 + c];
    }
    EXPECT_NEAR(z, 1.0, 1e-14);
  }
  // shift invariance
  const auto shifted = softmax_lastdim(add_scalar(a, 100.0)).array();
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.data[i], shifted.data[i], 1e-14);
}

TEST(Tape, LayerNormStandardisesRows) {
  Tape t;
  auto a = t.leaf(random_array({4, 9}, 5, -3, 3));
  const auto y = layer_norm_lastdim(a).array();
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 9; ++c) mu += y.data[r * 9 + c];
    mu /= 9;
    for (std::size_t c = 0; c < 9; ++c) var += (y.data[r * 9 + c] - mu) * (y.data[r * 9 + c] - mu);
    var /= 9;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(Tape, ForwardDifferencesZeroOnFarBorder) {
  Tape t;
  // 2 x 3 image, one channel: rows (1 2 4), (7 11 16)
  auto a = t.leaf(NdArray({6, 1}, {1, 2, 4, 7, 11, 16}));
  EXPECT_EQ(diff_x(a, 2, 3).array().data, (std::vector<double>{1, 2, 0, 4, 5, 0}));
  EXPECT_EQ(diff_y(a, 2, 3).array().data, (std::vector<double>{6, 9, 12, 0, 0, 0}));
}

TEST(Tape, BackwardOfSharedInputAccumulates) {
  Tape t;
  auto x = t.leaf(NdArray({1}, {3.0}));
  auto y = add(mul(x, x), scale(x, 2.0));  // x^2 + 2x
  t.backward(y);
  EXPECT_EQ(x.grad()[0], 8.0);
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape t;
  auto x = t.leaf(NdArray({2}, {1, 2}));
  auto c = t.constant(NdArray({2}, {3, 4}));
  t.backward(sum(mul(x, c)));
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_TRUE(c.grad().empty());
}

TEST(Tape, BackwardTwiceResetsGradients) {
  Tape t;
  auto x = t.leaf(NdArray({2}, {1, 2}));
  auto y = sum(square(x));
  t.backward(y);
  t.backward(y);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Tape, Errors) {
  Tape t, other;
  auto a = t.leaf(NdArray({2, 3}));
  auto b = t.leaf(NdArray({3, 2}));
  EXPECT_THROW(add(a, b), DomainError);
  EXPECT_THROW(matmul(a, a), DomainError);
  EXPECT_THROW(reshape(a, {4}), DomainError);
  EXPECT_THROW(slice_lastdim(a, 2, 2), DomainError);
  EXPECT_THROW(slice_lastdim(a, 0, 4), DomainError);
  EXPECT_THROW(add_row(a, t.leaf(NdArray({2}))), DomainError);
  EXPECT_THROW(t.backward(a), DomainError);
  EXPECT_THROW(add(a, other.leaf(NdArray({2, 3}))), DomainError);
  EXPECT_THROW(NdArray({2, 2}, std::vector<double>{1, 2, 3}), DomainError);
  EXPECT_THROW(diff_x(a, 2, 2), DomainError);
  EXPECT_THROW(transpose(t.leaf(NdArray({2, 2, 2}))), DomainError);
}

TEST(Tape, SqrtDomainErrors) {
  Tape t;
  EXPECT_THROW(nn::sqrt(t.leaf(NdArray({2}, {1.0, -1e-9}))), NumericError);
  auto z = t.leaf(NdArray({1}, {0.0}));
  auto y = nn::sqrt(z);
  EXPECT_EQ(y.item(), 0.0);
  EXPECT_THROW(t.backward(y), NumericError);
}

// ---- finite-difference checks per primitive -------------------------------

struct UnaryCase {
  const char* name;
  std::function<Var(Tape&, const Var&)> fn;
  double lo, hi, gap;
};

TEST(GradCheck, UnaryPrimitives) {
  const std::vector<UnaryCase> cases = {
      {"relu", [](Tape& t, const Var& x) { return weighted_sum(t, relu(x)); }, -1, 1, 0.05},
      {"sigmoid", [](Tape& t, const Var& x) { return weighted_sum(t, sigmoid(x)); }, -3, 3, 0},
      {"abs", [](Tape& t, const Var& x) { return weighted_sum(t, nn::abs(x)); }, -1, 1, 0.05},
      {"square", [](Tape& t, const Var& x) { return weighted_sum(t, square(x)); }, -2, 2, 0},
      {"sqrt", [](Tape& t, const Var& x) { return weighted_sum(t, nn::sqrt(x)); }, 0.1, 2, 0},
      {"scale", [](Tape& t, const Var& x) { return weighted_sum(t, scale(x, -1.7)); }, -1, 1, 0},
      {"add_scalar", [](Tape& t, const Var& x) { return weighted_sum(t, add_scalar(x, 0.3)); }, -1, 1, 0},
      {"sum", [](Tape&, const Var& x) { return scale(sum(x), 0.7); }, -1, 1, 0},
      {"mean", [](Tape&, const Var& x) { return mean(square(x)); }, -1, 1, 0},
      {"reshape", [](Tape& t, const Var& x) { return weighted_sum(t, reshape(x, {6, 2})); }, -1, 1, 0},
      {"transpose", [](Tape& t, const Var& x) { return weighted_sum(t, transpose(x)); }, -1, 1, 0},
      {"slice", [](Tape& t, const Var& x) { return weighted_sum(t, slice_lastdim(x, 1, 3)); }, -1, 1, 0},
      {"softmax", [](Tape& t, const Var& x) { return weighted_sum(t, softmax_lastdim(x)); }, -2, 2, 0},
      {"layer_norm", [](Tape& t, const Var& x) { return weighted_sum(t, layer_norm_lastdim(x)); }, -2, 2, 0},
      {"diff_x", [](Tape& t, const Var& x) { return weighted_sum(t, square(diff_x(x, 2, 2))); }, -1, 1, 0},
      {"diff_y", [](Tape& t, const Var& x) { return weighted_sum(t, square(diff_y(x, 2, 2))); }, -1, 1, 0},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    const auto x = random_array({4, 3}, seed++, c.lo, c.hi, c.gap);
    const auto res = grad_check(c.fn, x, kStep, kTol);
    EXPECT_TRUE(res.passed) << c.name << " max_rel_err=" << res.max_rel_err;
    EXPECT_EQ(res.checked, 12u) << c.name;
  }
}

TEST(GradCheck, BinaryPrimitives) {
  struct Case {
    const char* name;
    MultiFn fn;
    Shape a, b;
  };
  const std::vector<Case> cases = {
      {"add", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, add(v[0], v[1])); }, {3, 4}, {3, 4}},
      {"sub", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, sub(v[0], v[1])); }, {3, 4}, {3, 4}},
      {"mul", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, mul(v[0], v[1])); }, {3, 4}, {3, 4}},
      {"matmul", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, matmul(v[0], v[1])); }, {3, 4}, {4, 5}},
      {"add_row", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, square(add_row(v[0], v[1]))); }, {3, 4}, {4}},
      {"mul_row", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, mul_row(v[0], v[1])); }, {3, 4}, {4}},
      {"concat", [](Tape& t, std::span<const Var> v) { return weighted_sum(t, square(concat_lastdim(v))); }, {3, 4}, {3, 2}},
  };
  std::uint64_t seed = 200;
  for (const auto& c : cases) {
    const std::vector<NdArray> xs = {random_array(c.a, seed++), random_array(c.b, seed++)};
    const auto res = grad_check(c.fn, xs, kStep, kTol);
    EXPECT_TRUE(res.passed) << c.name << " max_rel_err=" << res.max_rel_err;
  }
}

TEST(GradCheck, ComposedAttentionLikeGraph) {
  // softmax(Q K^T) V with shared inputs, exercising accumulation through
  // several paths.
  MultiFn f = [](Tape& t, std::span<const Var> v) {
    const Var q = matmul(v[0], v[1]);
    const Var att = softmax_lastdim(matmul(q, transpose(v[0])));
    return weighted_sum(t, layer_norm_lastdim(matmul(att, v[0])));
  };
  const auto res = grad_check(f, {random_array({5, 3}, 301), random_array({3, 3}, 302)}, kStep, kTol);
  EXPECT_TRUE(res.passed) << res.max_rel_err;
}

TEST(GradCheck, DetectsAWrongGradient) {
  // a primitive with a deliberately wrong derivative must fail the check
  auto bad = [](Tape& t, const Var& x) {
    std::vector<double> out(x.value().begin(), x.value().end());
    for (double& v : out) v = v * v;
    Var y = t.record(x.shape(), out, {x}, [](Tape& tt, std::size_t self) {
      const auto& g = tt.grad(self);
      const auto& xv = tt.input_value(self, 0);
      auto gx = tt.input_grad(self, 0);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * 3.0 * xv[i];
    });
    return sum(y);
  };
  const auto res = grad_check(bad, random_array({3}, 9, 0.5, 1.0), kStep, kTol);
  EXPECT_FALSE(res.passed);
  EXPECT_NEAR(res.max_rel_err, 1.0 / 3.0, 1e-6);
}

TEST(GradCheck, ErrorMetric) {
  EXPECT_EQ(grad_error(1.0, 1.0), 0.0);
  EXPECT_NEAR(grad_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(grad_error(1e-10, 3e-10), 2e-10);  // absolute below 1e-8
  EXPECT_THROW(grad_check([](Tape&, const Var& x) { return sum(x); }, NdArray({2}), 0.0, 1e-4), DomainError);
  EXPECT_THROW(grad_check([](Tape&, const Var& x) { return x; }, NdArray({2}), 1e-6, 1e-4), DomainError);
}
