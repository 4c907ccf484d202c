#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <type_traits>
#include <vector>

#include "sepp/tensor.hpp"
#include "test_support.hpp"

using sepp::Shape;
using sepp::Tensor;
using sepp::testing::FdDefaults;
using sepp::testing::max_rel_grad_err;
using sepp::testing::random_tensor;
using sepp::testing::random_values;
using sepp::testing::to_scalar_loss;

namespace {

// Runs one finite-difference check. The analytic gradient comes from the
// build-precision graph; the central-difference oracle always evaluates the
// same graph rebuilt in double, at the build-precision input points, so the
// oracle's own roundoff never drowns the comparison.
template <typename Real, typename Builder>
void expect_grad_matches(Builder build, Shape shape, std::uint64_t seed,
                         double lo = -2.0, double hi = 2.0) {
    const std::size_t n = sepp::shape_numel(shape);
    const std::vector<double> base = random_values<double>(n, seed, lo, hi);
    std::vector<Real> x0(n);
    for (std::size_t i = 0; i < n; ++i) {
        x0[i] = static_cast<Real>(base[i]);
    }
    Tensor<Real> x = Tensor<Real>::from_values(shape, x0, true);
    Tensor<Real> loss = build(x);
    ASSERT_TRUE(loss.is_scalar());
    sepp::backward(loss);
    auto eval = [&](const std::vector<double>& v) {
        Tensor<double> probe = Tensor<double>::from_values(shape, v, false);
        return build(probe).values()[0];
    };
    const std::vector<double> x0d(x0.begin(), x0.end());
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    const double err =
        max_rel_grad_err<double>(eval, x0d, analytic, FdDefaults<Real>::eps);
    EXPECT_LE(err, FdDefaults<Real>::tol);
}

template <typename Real>
class TensorGradTest : public ::testing::Test {};

using RealTypes = ::testing::Types<float, double>;
TYPED_TEST_SUITE(TensorGradTest, RealTypes);

} // namespace

TEST(TensorBasics, SumBackwardGivesOnes) {
    auto x = random_tensor<float>({3, 4}, 11);
    auto loss = sepp::sum(x);
    sepp::backward(loss);
    ASSERT_EQ(x.grad().size(), 12u);
    for (float g : x.grad()) {
        EXPECT_FLOAT_EQ(g, 1.0f);
    }
}

TEST(TensorBasics, ZeroScaledLossGivesZeroGrad) {
    auto x = random_tensor<float>({5}, 12);
    auto loss = sepp::scalar_mul(sepp::sum(x), 0.0f);
    sepp::backward(loss);
    for (float g : x.grad()) {
        EXPECT_FLOAT_EQ(g, 0.0f);
    }
}

TEST(TensorBasics, MatmulIdentityCases) {
    auto eye = Tensor<float>::from_values({2, 2}, {1, 0, 0, 1});
    auto prod = sepp::matmul(eye, eye);
    EXPECT_EQ(prod.values(), (std::vector<float>{1, 0, 0, 1}));

    auto a = Tensor<float>::from_values({2, 2}, {1, 2, 3, 4});
    auto b = sepp::matmul(a, eye);
    EXPECT_EQ(b.values(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(TensorBasics, L2NormalizeKnownRow) {
    auto x = Tensor<float>::from_values({1, 2}, {3, 4});
    auto y = sepp::l2_normalize_rows(x);
    EXPECT_NEAR(y.values()[0], 0.6f, 1e-7);
    EXPECT_NEAR(y.values()[1], 0.8f, 1e-7);
}

TEST(TensorBasics, L2NormalizeIdempotentAndUnitNorm) {
    auto x = random_tensor<float>({5, 8}, 13, -2.0, 2.0, false);
    auto once = sepp::l2_normalize_rows(x);
    auto twice = sepp::l2_normalize_rows(once);
    for (std::size_t r = 0; r < 5; ++r) {
        double sq = 0;
        for (std::size_t c = 0; c < 8; ++c) {
            sq += double(once.at2(r, c)) * once.at2(r, c);
            EXPECT_NEAR(once.at2(r, c), twice.at2(r, c), 1e-6);
        }
        EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
    }
}

TEST(TensorBasics, L2NormalizeZeroRowNamesRowIndex) {
    auto x = Tensor<float>::from_values({3, 2}, {1, 2, 0, 0, 5, 6});
    try {
        sepp::l2_normalize_rows(x);
        FAIL() << "expected degenerate-input error";
    } catch (const sepp::Error& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
}

TEST(TensorBasics, ExpOfZeroIsOne) {
    auto x = Tensor<float>::from_values({1}, {0.0f}, true);
    auto y = sepp::exp(x);
    EXPECT_FLOAT_EQ(y.values()[0], 1.0f);
    sepp::backward(y);
    EXPECT_FLOAT_EQ(x.grad()[0], 1.0f);
}

TEST(TensorBasics, SoftmaxConstantRowIsUniform) {
    auto x = Tensor<float>::from_values({1, 3}, {0.7f, 0.7f, 0.7f});
    auto y = sepp::softmax_rows(x);
    for (float v : y.values()) {
        EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);
    }
}

TEST(TensorBasics, RepeatedBackwardAccumulatesLeafGrads) {
    auto x = random_tensor<float>({4}, 14);
    auto loss = sepp::sum(x);
    sepp::backward(loss);
    sepp::backward(loss);
    for (float g : x.grad()) {
        EXPECT_FLOAT_EQ(g, 2.0f);
    }
    x.zero_grad();
    sepp::backward(loss);
    for (float g : x.grad()) {
        EXPECT_FLOAT_EQ(g, 1.0f);
    }
}

TEST(TensorBasics, SharedLeafMultiTermGradsAdd) {
    auto x = random_tensor<float>({4}, 15);
    // loss = sum(x) + 2*mean(x); d/dx_i = 1 + 2/4
    auto loss = sepp::weighted_sum<float>({sepp::sum(x), sepp::mean(x)}, {1.0f, 2.0f});
    sepp::backward(loss);
    for (float g : x.grad()) {
        EXPECT_NEAR(g, 1.5f, 1e-6);
    }
}

TEST(TensorErrors, DetachedGraphRejected) {
    auto x = random_tensor<float>({3}, 16, -2.0, 2.0, false);
    auto loss = sepp::sum(x);
    try {
        sepp::backward(loss);
        FAIL() << "expected detached-graph error";
    } catch (const sepp::Error& e) {
        EXPECT_NE(std::string(e.what()).find("detached"), std::string::npos);
    }
}

TEST(TensorErrors, NonScalarLossRejected) {
    auto x = random_tensor<float>({3}, 17);
    EXPECT_THROW(sepp::backward(x), sepp::Error);
}

TEST(TensorErrors, MatmulShapeMismatchReportsBothShapes) {
    auto a = random_tensor<float>({2, 3}, 18);
    auto b = random_tensor<float>({2, 2}, 19);
    try {
        sepp::matmul(a, b);
        FAIL() << "expected dimension error";
    } catch (const sepp::Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2x2]"), std::string::npos) << msg;
    }
}

TEST(TensorErrors, AddShapeMismatchRejected) {
    auto a = random_tensor<float>({2, 3}, 20);
    auto b = random_tensor<float>({3, 2}, 21);
    EXPECT_THROW(sepp::add(a, b), sepp::Error);
}

TEST(TensorErrors, LogRequiresPositiveInput) {
    auto x = Tensor<float>::from_values({2}, {1.0f, -0.5f});
    EXPECT_THROW(sepp::log(x), sepp::Error);
}

TEST(TensorErrors, SoftmaxRejectsNonFinite) {
    auto x = Tensor<float>::from_values({1, 2},
                                        {1.0f, std::numeric_limits<float>::quiet_NaN()});
    EXPECT_THROW(sepp::softmax_rows(x), sepp::Error);
}

TEST(TensorBasics, DeterministicReplayBitIdentical) {
    auto build = [] {
        auto x = random_tensor<float>({6, 5}, 99, -1.5, 1.5, false);
        auto y = sepp::softmax_rows(sepp::matmul_nt(sepp::l2_normalize_rows(x),
                                                    sepp::l2_normalize_rows(x)));
        return y.values();
    };
    EXPECT_EQ(build(), build());
}

TYPED_TEST(TensorGradTest, AddSubMulChain) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            using R = typename std::decay_t<decltype(x)>::value_type;
            auto y = sepp::mul(sepp::add(x, x), sepp::sub(x, sepp::scalar_mul(x, R(0.25))));
            return to_scalar_loss(y, 31);
        },
        {3, 4}, 101);
}

TYPED_TEST(TensorGradTest, ExpGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) { return to_scalar_loss(sepp::exp(x), 32); },
        {2, 5}, 102, -1.0, 1.0);
}

TYPED_TEST(TensorGradTest, LogGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) { return to_scalar_loss(sepp::log(x), 33); },
        {7}, 103, 0.5, 3.0);
}

TYPED_TEST(TensorGradTest, ReluGrad) {
    // Keep inputs away from the kink where finite differences are ill-posed.
    expect_grad_matches<TypeParam>(
        [](const auto& x) { return to_scalar_loss(sepp::relu(x), 34); },
        {11}, 104, 0.2, 2.0);
    expect_grad_matches<TypeParam>(
        [](const auto& x) { return to_scalar_loss(sepp::relu(x), 35); },
        {11}, 105, -2.0, -0.2);
}

TYPED_TEST(TensorGradTest, SoftmaxRowsGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) { return to_scalar_loss(sepp::softmax_rows(x), 36); },
        {3, 6}, 106);
}

TYPED_TEST(TensorGradTest, MeanGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) { return sepp::mean(x); }, {4, 3}, 107);
}

TYPED_TEST(TensorGradTest, AddRowvecGradOnMatrix) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            using R = typename std::decay_t<decltype(x)>::value_type;
            auto bias = random_tensor<R>({4}, 55, -1.0, 1.0, false);
            return to_scalar_loss(sepp::add_rowvec(x, bias), 37);
        },
        {3, 4}, 108);
}

TYPED_TEST(TensorGradTest, AddRowvecGradOnVector) {
    expect_grad_matches<TypeParam>(
        [](const auto& b) {
            using R = typename std::decay_t<decltype(b)>::value_type;
            auto mat = random_tensor<R>({3, 4}, 56, -1.0, 1.0, false);
            return to_scalar_loss(sepp::add_rowvec(mat, b), 38);
        },
        {4}, 109);
}

TYPED_TEST(TensorGradTest, MatmulRandom3x4by4x2BothSides) {
    expect_grad_matches<TypeParam>(
        [](const auto& a) {
            using R = typename std::decay_t<decltype(a)>::value_type;
            auto b = random_tensor<R>({4, 2}, 57, -2.0, 2.0, false);
            return to_scalar_loss(sepp::matmul(a, b), 39);
        },
        {3, 4}, 110);
    expect_grad_matches<TypeParam>(
        [](const auto& b) {
            using R = typename std::decay_t<decltype(b)>::value_type;
            auto a = random_tensor<R>({3, 4}, 58, -2.0, 2.0, false);
            return to_scalar_loss(sepp::matmul(a, b), 40);
        },
        {4, 2}, 111);
}

TYPED_TEST(TensorGradTest, MatmulNtBothSides) {
    expect_grad_matches<TypeParam>(
        [](const auto& a) {
            using R = typename std::decay_t<decltype(a)>::value_type;
            auto b = random_tensor<R>({5, 4}, 59, -2.0, 2.0, false);
            return to_scalar_loss(sepp::matmul_nt(a, b), 41);
        },
        {3, 4}, 112);
    expect_grad_matches<TypeParam>(
        [](const auto& b) {
            using R = typename std::decay_t<decltype(b)>::value_type;
            auto a = random_tensor<R>({3, 4}, 60, -2.0, 2.0, false);
            return to_scalar_loss(sepp::matmul_nt(a, b), 42);
        },
        {5, 4}, 113);
}

TYPED_TEST(TensorGradTest, L2NormalizeRowsGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            return to_scalar_loss(sepp::l2_normalize_rows(x), 43);
        },
        {5, 8}, 114, 0.3, 2.0);
}

TYPED_TEST(TensorGradTest, ReshapeConcatSelectGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            using R = typename std::decay_t<decltype(x)>::value_type;
            auto mat = sepp::reshape(x, {3, 4});
            auto other = random_tensor<R>({2, 4}, 61, -1.0, 1.0, false);
            auto stacked = sepp::concat_rows<R>({mat, other});
            auto probe = to_scalar_loss(stacked, 44);
            return sepp::weighted_sum<R>(
                {probe, sepp::select_entry(stacked, 1, 2)}, {R(1), R(2)});
        },
        {12}, 115);
}

TYPED_TEST(TensorGradTest, RowLseSubsetGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            return sepp::row_lse_subset(x, 1, {0, 2, 3, 5});
        },
        {3, 6}, 116);
}

TYPED_TEST(TensorGradTest, CrossEntropyRowsGrad) {
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            return sepp::cross_entropy_rows(x, {2, 0, 1, 1});
        },
        {4, 3}, 117);
}

TYPED_TEST(TensorGradTest, DeepCompositeGraph) {
    // Three-plus ops deep, touching normalization, similarity, softmax, mean.
    expect_grad_matches<TypeParam>(
        [](const auto& x) {
            using R = typename std::decay_t<decltype(x)>::value_type;
            auto z = sepp::l2_normalize_rows(x);
            auto sims = sepp::matmul_nt(z, z);
            auto scaled = sepp::scalar_mul(sims, R(1) / R(0.25));
            auto probs = sepp::softmax_rows(scaled);
            return sepp::sum(sepp::mul(probs, sims));
        },
        {4, 6}, 118, 0.3, 2.0);
}

TEST(TensorBasics, FiniteGradsThroughEveryOp) {
    auto x = random_tensor<float>({4, 9}, 119, 0.4, 1.6);
    auto z = sepp::l2_normalize_rows(x);
    auto sims = sepp::matmul_nt(z, z);
    auto soft = sepp::softmax_rows(sims);
    auto logp = sepp::log(soft);
    auto act = sepp::relu(sepp::sub(sepp::exp(sepp::scalar_mul(logp, 0.5f)), soft));
    auto mixed = sepp::mul(sepp::add(act, soft), soft);
    auto flat = sepp::reshape(mixed, {16});
    auto back = sepp::reshape(flat, {4, 4});
    auto vec = random_tensor<float>({4}, 120, -1.0, 1.0, false);
    auto shifted = sepp::add_rowvec(back, vec);
    auto stacked = sepp::concat_rows<float>({shifted, shifted});
    auto lse = sepp::row_lse_subset(stacked, 0, {0, 1, 2});
    auto picked = sepp::select_entry(stacked, 3, 3);
    auto ce = sepp::cross_entropy_rows(shifted, {0, 1, 2, 3});
    auto loss = sepp::weighted_sum<float>(
        {sepp::mean(stacked), lse, picked, ce, sepp::sum(sepp::matmul(back, back))},
        {1.0f, 0.5f, 0.25f, 1.0f, 0.1f});
    sepp::backward(loss);
    ASSERT_EQ(x.grad().size(), x.numel());
    for (float g : x.grad()) {
        EXPECT_TRUE(std::isfinite(g));
    }
}
