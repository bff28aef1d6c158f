#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "op_cases.hpp"
#include "pospool/tensor/grad_check.hpp"
#include "pospool/tensor/tensor.hpp"

using namespace pospool;
using testing_util::direct_conv;
using testing_util::max_abs_diff;
using testing_util::random_array;
using testing_util::make_op_case;
using testing_util::OpCase;

namespace {

Array<float> filled(Shape s, std::vector<float> v) { return Array<float>(std::move(s), std::move(v)); }

const PaddingMode kModes[] = {PaddingMode::Zero, PaddingMode::Reflect, PaddingMode::Replicate};

}  // namespace

TEST(Conv2d, IdentityKernel) {
    const auto y = kernels::conv2d(filled({1, 1, 1, 1}, {5}), filled({1, 1, 1, 1}, {1}), filled({1}, {0}), {1, 0});
    ASSERT_EQ(y.shape, (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y.data[0], 5.0f);
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
    const Array<float> x({2, 3, 6, 6});
    const auto w = random_array({4, 3, 3, 3}, 1);
    for (PaddingMode mode : kModes) {
        const auto y = kernels::conv2d(x, w, Array<float>({4}), {1, 1, mode});
        for (float v : y.data) EXPECT_EQ(v, 0.0f);
    }
}

TEST(Conv2d, StrideTwoMatchesDirectLoop) {
    const auto x = random_array({1, 2, 5, 5}, 11);
    const auto w = random_array({3, 2, 3, 3}, 12);
    const auto b = random_array({3}, 13);
    const auto y = kernels::conv2d(x, w, b, {2, 1, PaddingMode::Zero});
    const auto ref = direct_conv(cast<double>(x), cast<double>(w), cast<double>(b), 2, 1, PaddingMode::Zero);
    ASSERT_EQ(y.shape, (Shape{1, 3, 3, 3}));
    EXPECT_LT(max_abs_diff(y, ref), 1e-6);
}

TEST(Conv2d, AllPaddingModesMatchDirectLoop) {
    std::uint64_t seed = 100;
    for (PaddingMode mode : kModes) {
        for (int stride : {1, 2, 3}) {
            for (int pad : {0, 1, 2}) {
                for (int k : {1, 3, 5}) {
                    const auto x = random_array({2, 3, 6, 5}, ++seed);
                    const auto w = random_array({4, 3, k, k}, ++seed);
                    const auto b = random_array({4}, ++seed);
                    const Conv2dOptions opt{stride, pad, mode};
                    const auto ref = direct_conv(cast<double>(x), cast<double>(w), cast<double>(b), stride, pad, mode);

                    const auto y64 = kernels::conv2d(cast<double>(x), cast<double>(w), cast<double>(b), opt);
                    ASSERT_EQ(y64.shape, ref.shape);
                    EXPECT_LT(max_abs_diff(y64, ref), 1e-6)
                        << to_string(mode) << " stride " << stride << " pad " << pad << " k " << k;

                    // 32-bit sums of up to 75 products round relative to the
                    // sum of the products' magnitudes, not the result's.
                    auto abs_of = [](Array<double> a) {
                        for (double& v : a.data) v = std::abs(v);
                        return a;
                    };
                    const auto magnitude = direct_conv(abs_of(cast<double>(x)), abs_of(cast<double>(w)),
                                                       abs_of(cast<double>(b)), stride, pad, mode);
                    const auto y32 = kernels::conv2d(x, w, b, opt);
                    for (std::size_t i = 0; i < ref.size(); ++i)
                        ASSERT_NEAR(y32.data[i], ref.data[i], 1e-6 * std::max(1.0, magnitude.data[i]));
                }
            }
        }
    }
}

TEST(Conv2d, SmallShapesMatchDirectLoopIn32Bit) {
    std::uint64_t seed = 500;
    for (PaddingMode mode : kModes) {
        for (int trial = 0; trial < 10; ++trial) {
            const auto x = random_array({1, 2, 5, 5}, ++seed);
            const auto w = random_array({3, 2, 3, 3}, ++seed);
            const auto b = random_array({3}, ++seed);
            const int stride = 1 + trial % 2;
            const auto y = kernels::conv2d(x, w, b, {stride, 1, mode});
            const auto ref = direct_conv(cast<double>(x), cast<double>(w), cast<double>(b), stride, 1, mode);
            EXPECT_LT(max_abs_diff(y, ref), 1e-6) << to_string(mode);
        }
    }
}

TEST(Conv2d, ReflectDoesNotRepeatBorder) {
    EXPECT_EQ(resolve_padded_index(-1, 4, PaddingMode::Reflect), 1);
    EXPECT_EQ(resolve_padded_index(-2, 4, PaddingMode::Reflect), 2);
    EXPECT_EQ(resolve_padded_index(4, 4, PaddingMode::Reflect), 2);
    EXPECT_EQ(resolve_padded_index(-1, 4, PaddingMode::Replicate), 0);
    EXPECT_EQ(resolve_padded_index(5, 4, PaddingMode::Replicate), 3);
    EXPECT_EQ(resolve_padded_index(-1, 4, PaddingMode::Zero), -1);
}

TEST(Conv2d, ChannelMismatchNamesDimension) {
    try {
        kernels::conv2d(Array<float>({1, 3, 4, 4}), Array<float>({2, 2, 3, 3}), Array<float>({2}), {1, 1});
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.op(), "conv2d");
        EXPECT_EQ(e.operand(), "weight");
        EXPECT_EQ(e.dim(), 1);
        EXPECT_EQ(e.expected(), 3);
        EXPECT_EQ(e.actual(), 2);
    }
}

TEST(Conv2d, ReflectPadTooLargeIsRejected) {
    const Conv2dOptions opt{1, 2, PaddingMode::Reflect};
    EXPECT_THROW(kernels::conv2d(Array<float>({1, 1, 2, 2}), Array<float>({1, 1, 1, 1}), Array<float>({1}), opt),
                 Error);
    EXPECT_NO_THROW(kernels::conv2d(Array<float>({1, 1, 3, 3}), Array<float>({1, 1, 1, 1}), Array<float>({1}), opt));
}

TEST(Conv2d, KernelLargerThanPaddedInputIsRejected) {
    EXPECT_THROW(kernels::conv2d(Array<float>({1, 1, 2, 2}), Array<float>({1, 1, 5, 5}), Array<float>({1}), {1, 1}),
                 ShapeError);
}

TEST(Conv2d, ZeroPadShiftEquivarianceOnInterior) {
    const int size = 12, s = 2;
    const auto x = random_array({1, 2, size, size}, 5);
    Array<float> shifted({1, 2, size, size});
    for (int c = 0; c < 2; ++c)
        for (int y = s; y < size; ++y)
            for (int xx = s; xx < size; ++xx)
                shifted.data[(c * size + y) * size + xx] = x.data[(c * size + y - s) * size + xx - s];
    const auto w = random_array({3, 2, 3, 3}, 6);
    const auto b = random_array({3}, 7);
    const auto y0 = kernels::conv2d(x, w, b, {1, 1});
    const auto y1 = kernels::conv2d(shifted, w, b, {1, 1});
    // Outputs whose receptive field avoids both the padding and the vacated
    // band agree after the shift.
    for (int c = 0; c < 3; ++c)
        for (int y = 1; y < size - 1 - s; ++y)
            for (int xx = 1; xx < size - 1 - s; ++xx)
                EXPECT_NEAR(y1.data[(c * size + y + s) * size + xx + s], y0.data[(c * size + y) * size + xx], 1e-5);
}

TEST(GlobalAvgPool, Constant) {
    const auto y = kernels::global_avg_pool(Array<float>({2, 3, 4, 5}, 3.5f));
    ASSERT_EQ(y.shape, (Shape{2, 3}));
    for (float v : y.data) EXPECT_EQ(v, 3.5f);
}

TEST(GlobalAvgPool, ArithmeticMean) {
    EXPECT_EQ(kernels::global_avg_pool(filled({1, 1, 2, 2}, {1, 2, 3, 4})).data[0], 2.5f);
}

TEST(GlobalAvgPool, MatchesHighPrecisionMean) {
    const auto x = random_array({2, 8, 4, 4}, 21);
    const auto y = kernels::global_avg_pool(x);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 8; ++c) {
            long double acc = 0;
            for (int i = 0; i < 16; ++i) acc += x.data[(n * 8 + c) * 16 + i];
            EXPECT_NEAR(y.data[n * 8 + c], static_cast<double>(acc / 16), 1e-6);
        }
}

TEST(ChannelPermute, Identity) {
    const auto x = random_array({2, 4, 3, 3}, 3);
    EXPECT_EQ(kernels::channel_permute(x, std::vector<int>{0, 1, 2, 3}), x);
}

TEST(ChannelPermute, ScatterConvention) {
    const auto x = filled({1, 3}, {10, 20, 30});  // (a, b, c)
    const auto y = kernels::channel_permute(x, std::vector<int>{2, 0, 1});
    EXPECT_EQ(y.data, (std::vector<float>{20, 30, 10}));  // (b, c, a)
}

TEST(ChannelPermute, InverseRestoresInput) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_array({3, 7, 2, 2}, 100 + trial);
        const auto p = rng.permutation(7);
        std::vector<int> inv(7);
        for (int c = 0; c < 7; ++c) inv[p[c]] = c;
        EXPECT_EQ(kernels::channel_permute(kernels::channel_permute(x, p), inv), x);
    }
}

TEST(ChannelPermute, CommutesWithGlobalAvgPool) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_array({2, 6, 3, 4}, 200 + trial);
        const auto p = rng.permutation(6);
        EXPECT_EQ(kernels::global_avg_pool(kernels::channel_permute(x, p)),
                  kernels::channel_permute(kernels::global_avg_pool(x), p));
    }
}

TEST(ChannelPermute, RejectsNonBijection) {
    EXPECT_THROW(kernels::channel_permute(Array<float>({1, 3}), std::vector<int>{0, 0, 1}), Error);
    EXPECT_THROW(kernels::channel_permute(Array<float>({1, 3}), std::vector<int>{0, 1, 3}), Error);
    EXPECT_THROW(kernels::channel_permute(Array<float>({1, 3}), std::vector<int>{0, 1}), ShapeError);
}

TEST(Relu, Values) {
    EXPECT_EQ(kernels::relu(filled({3}, {-1, 0, 2})).data, (std::vector<float>{0, 0, 2}));
}

TEST(Relu, SubgradientAtZeroIsZero) {
    Graph g;
    Tensor x(filled({3}, {-1, 0, 2}), true);
    g.backward(g.sum(g.relu(x)));
    EXPECT_EQ(x.grad().data, (std::vector<float>{0, 0, 1}));
}

TEST(Linear, IdentityWeight) {
    const auto x = random_array({3, 4}, 4);
    Array<float> eye({4, 4});
    for (int i = 0; i < 4; ++i) eye.data[i * 4 + i] = 1;
    EXPECT_EQ(kernels::linear(x, eye, Array<float>({4})), x);
}

TEST(Linear, MatchesDotProducts) {
    const auto x = random_array({5, 7}, 31);
    const auto w = random_array({3, 7}, 32);
    const auto b = random_array({3}, 33);
    const auto y = kernels::linear(x, w, b);
    for (int n = 0; n < 5; ++n)
        for (int o = 0; o < 3; ++o) {
            double acc = b.data[o];
            for (int i = 0; i < 7; ++i) acc += double(x.data[n * 7 + i]) * w.data[o * 7 + i];
            EXPECT_NEAR(y.data[n * 3 + o], acc, 1e-6);
        }
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
    const std::vector<int> labels{3, 7};
    EXPECT_NEAR(kernels::softmax_cross_entropy(Array<float>({2, 10}), std::span<const int>(labels)), std::log(10.0),
                1e-6);
}

TEST(SoftmaxCrossEntropy, Saturated) {
    const std::vector<int> labels{1};
    const float loss = kernels::softmax_cross_entropy(filled({1, 4}, {0, 1000, 0, 0}), std::span<const int>(labels));
    EXPECT_LT(loss, 1e-6);
    EXPECT_TRUE(std::isfinite(loss));
}

TEST(SoftmaxCrossEntropy, ClosedForm) {
    const std::vector<int> labels{2};
    const double expected = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
    EXPECT_NEAR(kernels::softmax_cross_entropy(filled({1, 3}, {1, 2, 3}), std::span<const int>(labels)), expected,
                1e-6);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
    const std::vector<int> labels{3};
    EXPECT_THROW(kernels::softmax_cross_entropy(Array<float>({1, 3}), std::span<const int>(labels)), Error);
}

TEST(Mse, Values) {
    const auto a = random_array({2, 3}, 1);
    EXPECT_EQ(kernels::mse(a, a), 0.0f);
    EXPECT_EQ(kernels::mse(filled({1, 2}, {0, 0}), filled({1, 2}, {1, 1})), 1.0f);
}

TEST(Mse, MatchesReferenceLoop) {
    const auto a = random_array({4, 9}, 41);
    const auto b = random_array({4, 9}, 42);
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (double(a.data[i]) - b.data[i]) * (double(a.data[i]) - b.data[i]);
    EXPECT_NEAR(kernels::mse(a, b), acc / 36, 1e-6);
}

TEST(Backward, SumGivesOnes) {
    Graph g;
    Tensor x(filled({3}, {4, -2, 7}), true);
    g.backward(g.sum(x));
    EXPECT_EQ(x.grad().data, (std::vector<float>{1, 1, 1}));
}

TEST(Backward, QuadraticMinimumHasZeroGrad) {
    Graph g;
    const auto c = random_array({2, 3}, 5);
    Tensor x(c, true);
    g.backward(g.mse_loss(x, Tensor(c)));
    for (float v : x.grad().data) EXPECT_EQ(v, 0.0f);
}

TEST(Backward, UnreachableTensorKeepsZeroGrad) {
    Graph g;
    Tensor x(random_array({3}, 1), true);
    Tensor unused(random_array({3}, 2), true);
    g.relu(unused);
    g.backward(g.sum(x));
    for (float v : unused.grad().data) EXPECT_EQ(v, 0.0f);
}

TEST(Backward, RejectsNonScalarLoss) {
    Graph g;
    Tensor x(random_array({3}, 1), true);
    EXPECT_THROW(g.backward(g.relu(x)), Error);
}

TEST(Backward, RejectsSecondCall) {
    Graph g;
    Tensor x(random_array({3}, 1), true);
    const Tensor loss = g.sum(x);
    g.backward(loss);
    EXPECT_TRUE(g.consumed());
    EXPECT_THROW(g.backward(loss), Error);
    EXPECT_THROW(g.relu(x), Error);
}

TEST(Backward, RecordsOnlyWhenGradientNeeded) {
    Graph g;
    Tensor constant(random_array({2, 3}, 1));
    g.relu(constant);
    EXPECT_EQ(g.size(), 0u);
    Tensor x(random_array({2, 3}, 2), true);
    g.relu(x);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g.kind(0), OpKind::Relu);
}

TEST(Backward, PaddedTapsScatterToSourcePixels) {
    // 3x3 input, all-ones 3x3 kernel, pad 1: along each axis the outputs read
    // taps (-1,0,1), (0,1,2), (1,2,3), so a pixel's gradient is the product of
    // its row and column read counts.
    const std::pair<PaddingMode, std::vector<float>> cases[] = {
        {PaddingMode::Zero, {2, 3, 2}},
        {PaddingMode::Reflect, {2, 5, 2}},
        {PaddingMode::Replicate, {3, 3, 3}},
    };
    for (const auto& [mode, counts] : cases) {
        Graph g;
        Tensor x(random_array({1, 1, 3, 3}, 1), true);
        Tensor w(Array<float>({1, 1, 3, 3}, 1.0f), true);
        Tensor b(Array<float>({1}), true);
        g.backward(g.sum(g.conv2d(x, w, b, {1, 1, mode})));
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(x.grad().data[r * 3 + c], counts[r] * counts[c]) << to_string(mode);
    }
}

TEST(GradCheck, EmptyParameterListGivesEmptyReport) {
    const auto report = grad_check({}, [](Graph&) { return Tensor::scalar(0); },
                                   [](std::span<const Array<double>>) { return 0.0; });
    EXPECT_TRUE(report.entries.empty());
    EXPECT_TRUE(report.passed(1e-3));
}

TEST(GradCheck, RelativeErrorDefinition) {
    EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0), 0.5);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_NEAR(relative_error(1e-9, 0.0), 0.1, 1e-12);
}

TEST(GradCheck, DetectsCorruptedGradient) {
    std::vector<NamedTensor> params{{"w", Tensor(random_array({2, 3}, 3), true)}};
    const auto target = cast<double>(random_array({2, 3}, 4));
    const auto reference = [&](std::span<const Array<double>> p) { return kernels::mse(p[0], target); };
    const auto build = [&](Graph& g) { return g.mse_loss(params[0].tensor, Tensor(cast<float>(target))); };

    EXPECT_TRUE(grad_check(params, build, reference).passed(1e-3));

    std::vector<Array<float>> analytic{params[0].tensor.grad()};
    EXPECT_TRUE(compare_gradients(params, analytic, reference).passed(1e-3));
    analytic[0].data[4] += 0.05f;
    const auto report = compare_gradients(params, analytic, reference);
    EXPECT_FALSE(report.passed(1e-3));
    EXPECT_EQ(report.entries[0].worst_index, 4u);
}

TEST(GradCheck, PerturbationsAcrossAReluKinkAreSkipped) {
    Array<float> w0({3});
    w0.data = {0.0f, 0.5f, -0.5f};
    std::vector<NamedTensor> params{{"w", Tensor(w0, true)}};
    const auto build = [&](Graph& g) { return g.sum(g.relu(params[0].tensor)); };
    const auto piecewise = [](std::span<const Array<double>> p) {
        Evaluator<double> ex;
        ReferenceValue r;
        ex.relu_region = &r.region;
        const auto y = ex.relu(p[0]);
        r.loss = y.data[0] + y.data[1] + y.data[2];
        return r;
    };
    const auto report = grad_check(params, build, piecewise);
    EXPECT_EQ(report.skipped(), 1u);
    EXPECT_EQ(report.checked(), 2u);
    EXPECT_TRUE(report.passed(1e-6));

    // Without the region the kink entry compares 0 against a one-sided 0.5.
    const auto plain = [&](std::span<const Array<double>> p) { return piecewise(p).loss; };
    const auto blind = grad_check(params, build, plain);
    EXPECT_EQ(blind.skipped(), 0u);
    EXPECT_EQ(blind.entries[0].worst_index, 0u);
    EXPECT_NEAR(blind.max_rel_error(), 1.0, 1e-9);
}

TEST(GradCheck, EveryOpOnRandomShapes) {
    for (std::uint64_t seed = 0; seed < 160; ++seed) {
        OpCase oc = make_op_case(static_cast<int>(seed), 1000 + seed * 17);
        const auto report = grad_check(oc.params, oc.build, oc.reference);
        EXPECT_TRUE(report.passed(1e-3)) << "case " << seed << " op " << seed % 8 << " max rel "
                                         << report.max_rel_error();
    }
}

TEST(Determinism, RepeatedForwardBackwardIsBitIdentical) {
    auto run = [] {
        Graph g;
        Tensor x(random_array({2, 3, 6, 6}, 1), true);
        Tensor w(random_array({4, 3, 3, 3}, 2), true);
        Tensor b(random_array({4}, 3), true);
        const auto y = g.global_avg_pool(g.relu(g.conv2d(x, w, b, {2, 1, PaddingMode::Reflect})));
        g.backward(g.mse_loss(y, Tensor(random_array({2, 4}, 4))));
        return std::vector<Array<float>>{y.value(), x.grad(), w.grad(), b.grad()};
    };
    EXPECT_EQ(run(), run());
}
