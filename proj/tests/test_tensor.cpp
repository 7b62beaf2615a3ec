#include <gtest/gtest.h>

#include <cmath>

#include "latentlab/gradcheck.hpp"
#include "latentlab/ops.hpp"
#include "latentlab/random.hpp"

using namespace latentlab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  return Tensor::from_vector(shape, rng.normal_vector(shape_numel(shape), stddev));
}

}  // namespace

TEST(Tensor, ScalarBackwardOfSquareIsTwoX) {
  Tensor x = Tensor::from_vector({3}, {1.0, -2.0, 0.5}, true);
  sum(square(x)).backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 1.0);
}

TEST(Tensor, BackwardOnNonScalarThrows) {
  Tensor x = Tensor::from_vector({2}, {1.0, 2.0}, true);
  EXPECT_THROW(square(x).backward(), ShapeError);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  add(y, y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, RepeatedBackwardDoesNotLeakInteriorGrads) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = square(x);
  Tensor z = scale(y, 3.0);
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::scalar(1.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, DetachAndStopGradientBlockFlow) {
  Tensor x = Tensor::scalar(1.5, true);
  Tensor y = add(mul(x, stop_gradient(x)), x.detach());
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.5);
}

TEST(Tensor, BroadcastSuffixAdd) {
  Tensor a = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from_vector({3}, {10, 20, 30}, true);
  Tensor c = add(a, b);
  EXPECT_DOUBLE_EQ(c.values()[4], 25.0);
  sum(c).backward();
  EXPECT_DOUBLE_EQ(b.grad()[0], 2.0);
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
}

TEST(Tensor, MatmulShapesAndValues) {
  Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_vector({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c.values()[0], 17.0);
  EXPECT_DOUBLE_EQ(c.values()[1], 39.0);
  EXPECT_THROW(matmul(a, Tensor::zeros({3, 1})), ShapeError);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  Rng rng(3);
  Tensor s = softmax_last(random_tensor({4, 5}, rng, 10.0));
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 5; ++c) total += s.values()[r * 5 + c];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Tensor, LayerNormStandardizesRows) {
  Tensor y = layer_norm_last(Tensor::from_vector({1, 4}, {1, 2, 3, 4}), 0.0);
  double mean = 0.0, var = 0.0;
  for (double v : y.values()) mean += v / 4.0;
  for (double v : y.values()) var += (v - mean) * (v - mean) / 4.0;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-12);
}

TEST(Tensor, CrossEntropyOfUniformLogitsIsLogV) {
  Tensor logits = Tensor::zeros({3, 8});
  std::vector<std::size_t> t{0, 5, 7};
  EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(8.0), 1e-15);
}

TEST(Tensor, MaximumPassesGradientOnlyAboveFloor) {
  Tensor kl = Tensor::scalar(0.4, true);
  maximum(kl, 1.0).backward();
  EXPECT_EQ(kl.grad()[0], 0.0);
  Tensor kl2 = Tensor::scalar(1.7, true);
  maximum(kl2, 1.0).backward();
  EXPECT_EQ(kl2.grad()[0], 1.0);
}

TEST(Tensor, ConcatSliceGatherRoundTrip) {
  Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_vector({2, 1}, {9, 8});
  Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.to_vector(), (std::vector<double>{1, 2, 9, 3, 4, 8}));
  EXPECT_EQ(slice(c, 1, 2, 1).to_vector(), b.to_vector());
  std::vector<std::size_t> perm{2, 0, 1};
  EXPECT_EQ(gather_last(c, perm).to_vector(), (std::vector<double>{9, 1, 2, 8, 3, 4}));
}

TEST(GradCheck, ElementwiseOps) {
  Rng rng(11);
  Tensor x = random_tensor({3, 4}, rng);
  EXPECT_LE(finite_diff_check([](const Tensor& t) { return sum(tanh(mul(t, t))); }, x), 1e-6);
  EXPECT_LE(finite_diff_check([](const Tensor& t) { return mean(exp(scale(t, 0.3))); }, x), 1e-6);
  EXPECT_LE(finite_diff_check([](const Tensor& t) { return sum(log(add_scalar(square(t), 1.0))); }, x), 1e-6);
}

TEST(GradCheck, MatmulSoftmaxLayerNormCrossEntropy) {
  Rng rng(12);
  Tensor w = random_tensor({5, 6}, rng, 0.5);
  Tensor x = random_tensor({4, 5}, rng);
  std::vector<std::size_t> targets{0, 3, 5, 1};
  auto f = [&](const Tensor& t) {
    Tensor h = layer_norm_last(matmul(x, t));
    return add(cross_entropy(h, targets), mean(softmax_last(h)));
  };
  EXPECT_LE(finite_diff_check(f, w), 1e-6);
  auto g = [&](const Tensor& t) { return cross_entropy(matmul(t, w), targets); };
  EXPECT_LE(finite_diff_check(g, x), 1e-6);
}

TEST(GradCheck, EmbeddingAndReshapeBackward) {
  Rng rng(13);
  Tensor table = random_tensor({6, 3}, rng);
  std::vector<std::size_t> ids{1, 4, 1};
  auto f = [&](const Tensor& t) { return sum(square(reshape(embedding(t, ids), {9}))); };
  EXPECT_LE(finite_diff_check(f, table), 1e-6);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(99), b(99);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.below(7), b.below(7));
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
