#pragma once

#include <cmath>
#include <cstdint>

#include "pospool/rng.hpp"
#include "pospool/tensor/array.hpp"
#include "pospool/tensor/kernels.hpp"

namespace testing_util {

using pospool::Array;
using pospool::Shape;

inline Array<float> random_array(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Array<float> a(std::move(shape));
    pospool::Rng rng(seed);
    for (float& v : a.data) v = static_cast<float>(rng.uniform(lo, hi));
    return a;
}

template <class A, class B>
double max_abs_diff(const Array<A>& a, const Array<B>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
    return m;
}

// Source index of a padded coordinate, spelled out case by case.
inline int padded_source(int i, int n, pospool::PaddingMode mode) {
    using pospool::PaddingMode;
    if (i >= 0 && i < n) return i;
    if (mode == PaddingMode::Zero) return -1;
    if (mode == PaddingMode::Replicate) return i < 0 ? 0 : n - 1;
    // mirror without repeating the border pixel
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

// Direct nested-loop cross-correlation.
inline Array<double> direct_conv(const Array<double>& x, const Array<double>& w, const Array<double>& b, int stride,
                                 int pad, pospool::PaddingMode mode) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
    Array<double> y({n, cout, ho, wo});
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < cout; ++o)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = b.data[o];
                    for (int c = 0; c < cin; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int sy = padded_source(oy * stride - pad + ky, h, mode);
                                const int sx = padded_source(ox * stride - pad + kx, wd, mode);
                                if (sy < 0 || sx < 0) continue;
                                acc += w.data[((o * cin + c) * kh + ky) * kw + kx] *
                                       x.data[((s * cin + c) * h + sy) * wd + sx];
                            }
                    y.data[((s * cout + o) * ho + oy) * wo + ox] = acc;
                }
    return y;
}

}  // namespace testing_util
