#pragma once

#include <cstdint>
#include <utility>

#include "pospool/tensor/array.hpp"
#include "pospool/tensor/kernels.hpp"

namespace pospool {

// The transforms below act on the last two axes (H, W) of an array of rank
// >= 2, so they apply equally to one [C, H, W] image or an [N, C, H, W] batch.

// Translates content by dx columns and dy rows: out[y][x] = in[y - dy][x - dx].
// Vacated pixels are zero, the nearest edge pixel (Replicate), or the
// mirror image without edge repeat (Reflect).
Array<float> shift_image(const Array<float>& x, int dx, int dy, PaddingMode fill = PaddingMode::Zero);

// Width-axis reversal.
Array<float> hflip(const Array<float>& x);

struct ShiftDraw {
    int dx = 0;
    int dy = 0;
};

struct AugShiftPair {
    Array<float> x1;
    Array<float> x2;
    ShiftDraw s1;
    ShiftDraw s2;
};

// Two independent shifts uniform on [-max_shift, max_shift]^2 drawn from the
// stream `seed`, each applied with zero fill.
AugShiftPair augshift_pair(const Array<float>& x, int max_shift, std::uint64_t seed);

// The shift pair augshift_pair would draw from `seed`, without applying it.
std::pair<ShiftDraw, ShiftDraw> draw_shift_pair(int max_shift, std::uint64_t seed);

}  // namespace pospool
