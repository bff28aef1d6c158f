#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "pospool/tensor/array.hpp"

namespace pospool {

// How a convolution (or an image shift) fills samples that fall outside the
// input. Reflect mirrors about the border pixel without repeating it
// (abc|ba), Replicate repeats the edge pixel (abc|cc).
enum class PaddingMode { Zero, Reflect, Replicate };

const char* to_string(PaddingMode mode);
PaddingMode parse_padding_mode(std::string_view text);

// Maps a possibly out-of-range coordinate onto [0, extent) under `mode`.
// Returns -1 for Zero padding when `i` is outside.
int resolve_padded_index(int i, int extent, PaddingMode mode);

struct Conv2dOptions {
    int stride = 1;
    int pad = 0;
    PaddingMode mode = PaddingMode::Zero;
};

// Output extent of a convolution along one axis.
inline int conv_out_extent(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// Raw forward/backward kernels. Forward kernels are instantiated for float
// (training, inference) and double (finite-difference reference); backward
// kernels only for float. Backward kernels accumulate into their outputs.
namespace kernels {

void check_conv2d(const Shape& x, const Shape& w, const Shape& b, const Conv2dOptions& opt);
void check_permutation(std::span<const int> perm, int channels);
void check_linear(const Shape& x, const Shape& w, const Shape& b);

// Cross-correlation (no kernel flip). x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout].
template <class T>
Array<T> conv2d(const Array<T>& x, const Array<T>& w, const Array<T>& b, const Conv2dOptions& opt);

// Border gradients of Reflect/Replicate padding are scattered back to the
// source pixels they were copied from. Any of dx, dw, db may be null.
void conv2d_backward(const Array<float>& x, const Array<float>& w, const Conv2dOptions& opt,
                     const Array<float>& dy, Array<float>* dx, Array<float>* dw, Array<float>* db);

template <class T>
Array<T> relu(const Array<T>& x);
// Subgradient at exactly 0 is 0.
void relu_backward(const Array<float>& x, const Array<float>& dy, Array<float>& dx);

// [N,C,H,W] -> [N,C]; sums in double.
template <class T>
Array<T> global_avg_pool(const Array<T>& x);
void global_avg_pool_backward(const Array<float>& dy, Array<float>& dx);

// Destination-indexed scatter: out[n, perm[c], ...] = x[n, c, ...]. Accepts
// [N,C] or [N,C,H,W].
template <class T>
Array<T> channel_permute(const Array<T>& x, std::span<const int> perm);
void channel_permute_backward(const Array<float>& dy, std::span<const int> perm, Array<float>& dx);

// Zeroes the listed channels of [N,C] or [N,C,H,W] data. `channels` may hold
// duplicates.
template <class T>
Array<T> mask_channels(const Array<T>& x, std::span<const int> channels);
void mask_channels_backward(const Array<float>& dy, std::span<const int> channels,
                            Array<float>& dx);

// y = x w^T + b. x [N,Din], w [Dout,Din], b [Dout].
template <class T>
Array<T> linear(const Array<T>& x, const Array<T>& w, const Array<T>& b);
void linear_backward(const Array<float>& x, const Array<float>& w, const Array<float>& dy,
                     Array<float>* dx, Array<float>* dw, Array<float>* db);

// Mean over the batch of logsumexp(logits) - logits[label]. The reduction is
// carried out in double with max subtraction.
template <class T>
T softmax_cross_entropy(const Array<T>& logits, std::span<const int> labels);
void softmax_cross_entropy_backward(const Array<float>& logits, std::span<const int> labels,
                                    float dloss, Array<float>& dlogits);

// Mean over all entries of (a - b)^2.
template <class T>
T mse(const Array<T>& a, const Array<T>& b);
void mse_backward(const Array<float>& a, const Array<float>& b, float dloss, Array<float>* da,
                  Array<float>* db);

}  // namespace kernels
}  // namespace pospool
