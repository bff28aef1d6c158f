#include "pospool/data/transforms.hpp"

#include <algorithm>

#include "pospool/rng.hpp"

namespace pospool {

namespace {

struct Planes {
    std::size_t count;
    int h;
    int w;
};

Planes planes_of(const Array<float>& x, const char* op) {
    if (x.rank() < 2) throw ShapeError(op, "x", -1, 2, x.rank());
    const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    return {plane == 0 ? 0 : x.size() / plane, h, w};
}

}  // namespace

Array<float> shift_image(const Array<float>& x, int dx, int dy, PaddingMode fill) {
    const auto [count, h, w] = planes_of(x, "shift_image");
    Array<float> out(x.shape);
    std::vector<int> src_x(static_cast<std::size_t>(w)), src_y(static_cast<std::size_t>(h));
    for (int i = 0; i < w; ++i) src_x[i] = resolve_padded_index(i - dx, w, fill);
    for (int i = 0; i < h; ++i) src_y[i] = resolve_padded_index(i - dy, h, fill);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < count; ++p) {
        const float* src = x.ptr() + p * plane;
        float* dst = out.ptr() + p * plane;
        for (int y = 0; y < h; ++y) {
            const int sy = src_y[y];
            if (sy < 0) continue;
            for (int xx = 0; xx < w; ++xx) {
                const int sx = src_x[xx];
                if (sx >= 0) dst[static_cast<std::size_t>(y) * w + xx] = src[static_cast<std::size_t>(sy) * w + sx];
            }
        }
    }
    return out;
}

Array<float> hflip(const Array<float>& x) {
    const auto [count, h, w] = planes_of(x, "hflip");
    Array<float> out(x.shape);
    const std::size_t rows = count * static_cast<std::size_t>(h);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = x.ptr() + r * w;
        std::reverse_copy(src, src + w, out.ptr() + r * w);
    }
    return out;
}

std::pair<ShiftDraw, ShiftDraw> draw_shift_pair(int max_shift, std::uint64_t seed) {
    if (max_shift < 0) throw Error(ErrorKind::InvalidArgument, "max_shift must be >= 0");
    Rng rng(seed);
    ShiftDraw a, b;
    a.dx = rng.range(-max_shift, max_shift);
    a.dy = rng.range(-max_shift, max_shift);
    b.dx = rng.range(-max_shift, max_shift);
    b.dy = rng.range(-max_shift, max_shift);
    return {a, b};
}

AugShiftPair augshift_pair(const Array<float>& x, int max_shift, std::uint64_t seed) {
    const auto [s1, s2] = draw_shift_pair(max_shift, seed);
    return {shift_image(x, s1.dx, s1.dy), shift_image(x, s2.dx, s2.dy), s1, s2};
}

}  // namespace pospool
