#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "pospool/tensor/grad_check.hpp"
#include "pospool/tensor/tensor.hpp"

namespace testing_util {

using namespace pospool;

inline const PaddingMode kOpModes[] = {PaddingMode::Zero, PaddingMode::Reflect, PaddingMode::Replicate};

// Each case wraps one op between random parameters and an MSE readout so
// the scalar loss depends on every output entry.
struct OpCase {
    std::vector<NamedTensor> params;
    LossBuilder build;
    ReferenceLoss reference;
};

inline Array<float> away_from_zero(Array<float> a) {
    for (float& v : a.data)
        if (std::abs(v) < 0.05f) v = v < 0 ? -0.05f : 0.05f;
    return a;
}

inline OpCase make_op_case(int which, std::uint64_t seed) {
    Rng rng(seed);
    const int n = rng.range(1, 3), c = rng.range(1, 4), h = rng.range(2, 5), w = rng.range(2, 5);
    OpCase oc;
    auto param = [&](const std::string& name, Array<float> a) {
        oc.params.push_back({name, Tensor(std::move(a), true)});
        return oc.params.back().tensor;
    };
    switch (which % 8) {
        case 0: {
            const int k = rng.range(1, std::min(3, std::min(h, w)));
            const PaddingMode mode = kOpModes[rng.below(3)];
            const int pad = std::min(rng.range(0, 1), std::min(h, w) - 1);
            const Conv2dOptions opt{rng.range(1, 2), pad, mode};
            const int cout = rng.range(1, 3);
            Tensor x = param("x", random_array({n, c, h, w}, seed + 1));
            Tensor wt = param("w", random_array({cout, c, k, k}, seed + 2));
            Tensor b = param("b", random_array({cout}, seed + 3));
            const Shape ys{n, cout, conv_out_extent(h, k, opt.stride, pad), conv_out_extent(w, k, opt.stride, pad)};
            const auto target = random_array(ys, seed + 4);
            oc.build = [=](Graph& g) { return g.mse_loss(g.conv2d(x, wt, b, opt), Tensor(target)); };
            const auto t64 = cast<double>(target);
            oc.reference = [=](std::span<const Array<double>> p) {
                return kernels::mse(kernels::conv2d(p[0], p[1], p[2], opt), t64);
            };
            break;
        }
        case 1: {
            Tensor x = param("x", away_from_zero(random_array({n, c, h, w}, seed + 1)));
            const auto target = random_array({n, c, h, w}, seed + 2);
            oc.build = [=](Graph& g) { return g.mse_loss(g.relu(x), Tensor(target)); };
            const auto t64 = cast<double>(target);
            oc.reference = [=](std::span<const Array<double>> p) { return kernels::mse(kernels::relu(p[0]), t64); };
            break;
        }
        case 2: {
            Tensor x = param("x", random_array({n, c, h, w}, seed + 1));
            const auto target = random_array({n, c}, seed + 2);
            oc.build = [=](Graph& g) { return g.mse_loss(g.global_avg_pool(x), Tensor(target)); };
            const auto t64 = cast<double>(target);
            oc.reference = [=](std::span<const Array<double>> p) {
                return kernels::mse(kernels::global_avg_pool(p[0]), t64);
            };
            break;
        }
        case 3: {
            const auto perm = rng.permutation(c);
            Tensor x = param("x", random_array({n, c, h, w}, seed + 1));
            const auto target = random_array({n, c, h, w}, seed + 2);
            oc.build = [=](Graph& g) { return g.mse_loss(g.channel_permute(x, perm), Tensor(target)); };
            const auto t64 = cast<double>(target);
            oc.reference = [=](std::span<const Array<double>> p) {
                return kernels::mse(kernels::channel_permute(p[0], perm), t64);
            };
            break;
        }
        case 4: {
            const int out = rng.range(1, 4);
            Tensor x = param("x", random_array({n, c * h}, seed + 1));
            Tensor wt = param("w", random_array({out, c * h}, seed + 2));
            Tensor b = param("b", random_array({out}, seed + 3));
            const auto target = random_array({n, out}, seed + 4);
            oc.build = [=](Graph& g) { return g.mse_loss(g.linear(x, wt, b), Tensor(target)); };
            const auto t64 = cast<double>(target);
            oc.reference = [=](std::span<const Array<double>> p) {
                return kernels::mse(kernels::linear(p[0], p[1], p[2]), t64);
            };
            break;
        }
        case 5: {
            const int k = rng.range(2, 6);
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (int& l : labels) l = rng.range(0, k - 1);
            Tensor x = param("logits", random_array({n, k}, seed + 1, -3, 3));
            oc.build = [=](Graph& g) { return g.softmax_cross_entropy(x, labels); };
            oc.reference = [=](std::span<const Array<double>> p) {
                return kernels::softmax_cross_entropy(p[0], std::span<const int>(labels));
            };
            break;
        }
        case 6: {
            Tensor a = param("a", random_array({n, c}, seed + 1));
            Tensor b = param("b", random_array({n, c}, seed + 2));
            oc.build = [=](Graph& g) { return g.mse_loss(a, b); };
            oc.reference = [](std::span<const Array<double>> p) { return kernels::mse(p[0], p[1]); };
            break;
        }
        default: {
            std::vector<int> masked;
            for (int ch = 0; ch < c; ++ch)
                if (rng.below(2)) masked.push_back(ch);
            Tensor a = param("a", random_array({n, c}, seed + 1));
            const double factor = rng.uniform(-2, 2);
            const auto target = random_array({n, c}, seed + 2);
            oc.build = [=](Graph& g) {
                return g.add(g.scale(g.mse_loss(g.mask_channels(a, masked), Tensor(target)), factor), g.sum(a));
            };
            const auto t64 = cast<double>(target);
            oc.reference = [=](std::span<const Array<double>> p) {
                double s = 0;
                for (double v : p[0].data) s += v;
                return factor * kernels::mse(kernels::mask_channels(p[0], masked), t64) + s;
            };
            break;
        }
    }
    return oc;
}

}  // namespace testing_util
