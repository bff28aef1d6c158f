#include "pospool/tensor/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace pospool {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Source row/column for every (kernel offset, output position) pair; -1 when
// the tap lands in zero padding.
struct ConvIndex {
    int cin = 0, h = 0, w = 0, kh = 0, kw = 0, ho = 0, wo = 0;
    std::vector<int> rows;  // [kh][ho]
    std::vector<int> cols;  // [kw][wo]

    ConvIndex(const Shape& x, const Shape& wt, const Conv2dOptions& opt)
        : cin(x[1]), h(x[2]), w(x[3]), kh(wt[2]), kw(wt[3]) {
        ho = conv_out_extent(h, kh, opt.stride, opt.pad);
        wo = conv_out_extent(w, kw, opt.stride, opt.pad);
        rows.resize(static_cast<std::size_t>(kh * ho));
        cols.resize(static_cast<std::size_t>(kw * wo));
        for (int ky = 0; ky < kh; ++ky)
            for (int oy = 0; oy < ho; ++oy)
                rows[ky * ho + oy] = resolve_padded_index(oy * opt.stride - opt.pad + ky, h, opt.mode);
        for (int kx = 0; kx < kw; ++kx)
            for (int ox = 0; ox < wo; ++ox)
                cols[kx * wo + ox] = resolve_padded_index(ox * opt.stride - opt.pad + kx, w, opt.mode);
    }

    int patch() const { return cin * kh * kw; }
    int positions() const { return ho * wo; }

    // Samples per GEMM so that small feature maps still give wide products.
    int chunk(int batch) const {
        const int want = (kMinColumns + positions() - 1) / positions();
        return std::max(1, std::min(batch, want));
    }

    static constexpr int kMinColumns = 256;

    // Writes this image's [patch, positions] block into a column buffer whose
    // rows are `ld` wide.
    template <class T>
    void im2col(const T* img, T* out, std::size_t ld) const {
        for (int c = 0; c < cin; ++c) {
            const T* plane = img + static_cast<std::size_t>(c) * h * w;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    T* dst = out + static_cast<std::size_t>((c * kh + ky) * kw + kx) * ld;
                    const int* cmap = &cols[static_cast<std::size_t>(kx * wo)];
                    for (int oy = 0; oy < ho; ++oy) {
                        const int sy = rows[ky * ho + oy];
                        T* drow = dst + static_cast<std::size_t>(oy) * wo;
                        if (sy < 0) {
                            std::fill(drow, drow + wo, T(0));
                            continue;
                        }
                        const T* srow = plane + static_cast<std::size_t>(sy) * w;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int sx = cmap[ox];
                            drow[ox] = sx < 0 ? T(0) : srow[sx];
                        }
                    }
                }
            }
        }
    }

    void col2im(const float* in, float* img, std::size_t ld) const {
        for (int c = 0; c < cin; ++c) {
            float* plane = img + static_cast<std::size_t>(c) * h * w;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const float* src = in + static_cast<std::size_t>((c * kh + ky) * kw + kx) * ld;
                    const int* cmap = &cols[static_cast<std::size_t>(kx * wo)];
                    for (int oy = 0; oy < ho; ++oy) {
                        const int sy = rows[ky * ho + oy];
                        if (sy < 0) continue;
                        const float* srow = src + static_cast<std::size_t>(oy) * wo;
                        float* drow = plane + static_cast<std::size_t>(sy) * w;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int sx = cmap[ox];
                            if (sx >= 0) drow[sx] += srow[ox];
                        }
                    }
                }
            }
        }
    }
};

void ensure_shape(Array<float>& a, const Shape& shape) {
    if (a.shape != shape) a = Array<float>(shape);
}

void check_channel_data(const Shape& s, const char* op) {
    if (s.size() != 2 && s.size() != 4) throw ShapeError(op, "x", -1, 4, static_cast<int>(s.size()));
}

std::size_t inner_extent(const Shape& s) { return s.size() == 4 ? numel(s) / (s[0] * s[1]) : 1; }

}  // namespace

const char* to_string(PaddingMode mode) {
    switch (mode) {
        case PaddingMode::Zero: return "zero";
        case PaddingMode::Reflect: return "reflect";
        case PaddingMode::Replicate: return "replicate";
    }
    return "zero";
}

PaddingMode parse_padding_mode(std::string_view text) {
    if (text == "zero") return PaddingMode::Zero;
    if (text == "reflect") return PaddingMode::Reflect;
    if (text == "replicate") return PaddingMode::Replicate;
    throw Error(ErrorKind::InvalidArgument, "unknown padding mode '" + std::string(text) + "'");
}

int resolve_padded_index(int i, int extent, PaddingMode mode) {
    if (i >= 0 && i < extent) return i;
    switch (mode) {
        case PaddingMode::Zero: return -1;
        case PaddingMode::Replicate: return i < 0 ? 0 : extent - 1;
        case PaddingMode::Reflect: {
            if (extent == 1) return 0;
            const int period = 2 * (extent - 1);
            int r = i % period;
            if (r < 0) r += period;
            return r < extent ? r : period - r;
        }
    }
    return -1;
}

namespace kernels {

void check_conv2d(const Shape& x, const Shape& w, const Shape& b, const Conv2dOptions& opt) {
    if (x.size() != 4) throw ShapeError("conv2d", "x", -1, 4, static_cast<int>(x.size()));
    if (w.size() != 4) throw ShapeError("conv2d", "weight", -1, 4, static_cast<int>(w.size()));
    if (b.size() != 1) throw ShapeError("conv2d", "bias", -1, 1, static_cast<int>(b.size()));
    if (w[1] != x[1]) throw ShapeError("conv2d", "weight", 1, x[1], w[1]);
    if (b[0] != w[0]) throw ShapeError("conv2d", "bias", 0, w[0], b[0]);
    if (opt.stride < 1)
        throw Error(ErrorKind::InvalidArgument, "conv2d: stride must be positive, got " +
                                                    std::to_string(opt.stride));
    if (opt.pad < 0) throw Error(ErrorKind::InvalidArgument, "conv2d: negative pad");
    if (w[2] > x[2] + 2 * opt.pad) throw ShapeError("conv2d", "weight", 2, x[2] + 2 * opt.pad, w[2]);
    if (w[3] > x[3] + 2 * opt.pad) throw ShapeError("conv2d", "weight", 3, x[3] + 2 * opt.pad, w[3]);
    if (opt.mode == PaddingMode::Reflect && (opt.pad > x[2] - 1 || opt.pad > x[3] - 1))
        throw Error(ErrorKind::InvalidArgument,
                    "conv2d: reflect pad " + std::to_string(opt.pad) + " exceeds input extent " +
                        std::to_string(std::min(x[2], x[3])) + "-1");
}

void check_permutation(std::span<const int> perm, int channels) {
    if (static_cast<int>(perm.size()) != channels)
        throw ShapeError("channel_permute", "perm", 0, channels, static_cast<int>(perm.size()));
    std::vector<char> seen(perm.size(), 0);
    for (int p : perm) {
        if (p < 0 || p >= channels || seen[static_cast<std::size_t>(p)])
            throw Error(ErrorKind::InvalidArgument, "channel_permute: permutation is not a bijection on 0.." +
                                                        std::to_string(channels - 1));
        seen[static_cast<std::size_t>(p)] = 1;
    }
}

void check_linear(const Shape& x, const Shape& w, const Shape& b) {
    if (x.size() != 2) throw ShapeError("linear", "x", -1, 2, static_cast<int>(x.size()));
    if (w.size() != 2) throw ShapeError("linear", "weight", -1, 2, static_cast<int>(w.size()));
    if (b.size() != 1) throw ShapeError("linear", "bias", -1, 1, static_cast<int>(b.size()));
    if (w[1] != x[1]) throw ShapeError("linear", "weight", 1, x[1], w[1]);
    if (b[0] != w[0]) throw ShapeError("linear", "bias", 0, w[0], b[0]);
}

template <class T>
Array<T> conv2d(const Array<T>& x, const Array<T>& w, const Array<T>& b, const Conv2dOptions& opt) {
    check_conv2d(x.shape, w.shape, b.shape, opt);
    const ConvIndex ix(x.shape, w.shape, opt);
    const int n = x.dim(0), cout = w.dim(0);
    const std::size_t pos = static_cast<std::size_t>(ix.positions());
    const std::size_t in_plane = static_cast<std::size_t>(ix.cin) * ix.h * ix.w;
    const int chunk = ix.chunk(n);
    Array<T> y({n, cout, ix.ho, ix.wo});
    std::vector<T> cols(static_cast<std::size_t>(ix.patch()) * pos * chunk);
    std::vector<T> prod(static_cast<std::size_t>(cout) * pos * chunk);
    ConstMatMap<T> wm(w.ptr(), cout, ix.patch());
    for (int s0 = 0; s0 < n; s0 += chunk) {
        const int m = std::min(chunk, n - s0);
        const std::size_t ld = pos * m;
        for (int j = 0; j < m; ++j) ix.im2col(x.ptr() + (s0 + j) * in_plane, cols.data() + j * pos, ld);
        MatMap<T> pm(prod.data(), cout, static_cast<Eigen::Index>(ld));
        pm.noalias() = wm * ConstMatMap<T>(cols.data(), ix.patch(), static_cast<Eigen::Index>(ld));
        for (int j = 0; j < m; ++j)
            for (int c = 0; c < cout; ++c) {
                const T bias = b.data[static_cast<std::size_t>(c)];
                const T* src = prod.data() + c * ld + j * pos;
                T* dst = y.ptr() + (static_cast<std::size_t>(s0 + j) * cout + c) * pos;
                for (std::size_t p = 0; p < pos; ++p) dst[p] = src[p] + bias;
            }
    }
    return y;
}

void conv2d_backward(const Array<float>& x, const Array<float>& w, const Conv2dOptions& opt,
                     const Array<float>& dy, Array<float>* dx, Array<float>* dw, Array<float>* db) {
    const ConvIndex ix(x.shape, w.shape, opt);
    const int n = x.dim(0), cout = w.dim(0);
    const std::size_t pos = static_cast<std::size_t>(ix.positions());
    const std::size_t in_plane = static_cast<std::size_t>(ix.cin) * ix.h * ix.w;
    const int chunk = ix.chunk(n);
    if (dx) ensure_shape(*dx, x.shape);
    if (dw) ensure_shape(*dw, w.shape);
    if (db) ensure_shape(*db, {cout});
    if (db) {
        for (int c = 0; c < cout; ++c) {
            double acc = 0.0;
            for (int s = 0; s < n; ++s) {
                const float* row = dy.ptr() + (static_cast<std::size_t>(s) * cout + c) * pos;
                for (std::size_t p = 0; p < pos; ++p) acc += row[p];
            }
            db->data[static_cast<std::size_t>(c)] += static_cast<float>(acc);
        }
    }
    if (!dx && !dw) return;
    std::vector<float> cols(static_cast<std::size_t>(ix.patch()) * pos * chunk);
    std::vector<float> grad(static_cast<std::size_t>(cout) * pos * chunk);
    ConstMatMap<float> wm(w.ptr(), cout, ix.patch());
    for (int s0 = 0; s0 < n; s0 += chunk) {
        const int m = std::min(chunk, n - s0);
        const std::size_t ld = pos * m;
        for (int j = 0; j < m; ++j)
            for (int c = 0; c < cout; ++c)
                std::copy_n(dy.ptr() + (static_cast<std::size_t>(s0 + j) * cout + c) * pos, pos,
                            grad.data() + c * ld + j * pos);
        ConstMatMap<float> gm(grad.data(), cout, static_cast<Eigen::Index>(ld));
        if (dw) {
            for (int j = 0; j < m; ++j) ix.im2col(x.ptr() + (s0 + j) * in_plane, cols.data() + j * pos, ld);
            MatMap<float>(dw->ptr(), cout, ix.patch()).noalias() +=
                gm * ConstMatMap<float>(cols.data(), ix.patch(), static_cast<Eigen::Index>(ld)).transpose();
        }
        if (dx) {
            MatMap<float> dcols(cols.data(), ix.patch(), static_cast<Eigen::Index>(ld));
            dcols.noalias() = wm.transpose() * gm;
            for (int j = 0; j < m; ++j) ix.col2im(cols.data() + j * pos, dx->ptr() + (s0 + j) * in_plane, ld);
        }
    }
}

template <class T>
Array<T> relu(const Array<T>& x) {
    Array<T> y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

void relu_backward(const Array<float>& x, const Array<float>& dy, Array<float>& dx) {
    ensure_shape(dx, x.shape);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x.data[i] > 0.0f) dx.data[i] += dy.data[i];
}

template <class T>
Array<T> global_avg_pool(const Array<T>& x) {
    require_rank(x, 4, "global_avg_pool", "x");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (hw == 0) throw ShapeError("global_avg_pool", "x", 2, 1, 0);
    Array<T> y({n, c});
    for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p) {
        const T* src = x.ptr() + p * hw;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(src[i]);
        y.data[p] = static_cast<T>(acc / static_cast<double>(hw));
    }
    return y;
}

void global_avg_pool_backward(const Array<float>& dy, Array<float>& dx) {
    const std::size_t hw = static_cast<std::size_t>(dx.dim(2)) * dx.dim(3);
    const float scale = 1.0f / static_cast<float>(hw);
    for (std::size_t p = 0; p < dy.size(); ++p) {
        const float g = dy.data[p] * scale;
        float* dst = dx.ptr() + p * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] += g;
    }
}

template <class T>
Array<T> channel_permute(const Array<T>& x, std::span<const int> perm) {
    check_channel_data(x.shape, "channel_permute");
    const int n = x.dim(0), c = x.dim(1);
    check_permutation(perm, c);
    const std::size_t inner = inner_extent(x.shape);
    Array<T> y(x.shape);
    for (int s = 0; s < n; ++s) {
        const T* src = x.ptr() + static_cast<std::size_t>(s) * c * inner;
        T* dst = y.ptr() + static_cast<std::size_t>(s) * c * inner;
        for (int ch = 0; ch < c; ++ch)
            std::copy_n(src + static_cast<std::size_t>(ch) * inner, inner,
                        dst + static_cast<std::size_t>(perm[static_cast<std::size_t>(ch)]) * inner);
    }
    return y;
}

void channel_permute_backward(const Array<float>& dy, std::span<const int> perm, Array<float>& dx) {
    const int n = dy.dim(0), c = dy.dim(1);
    const std::size_t inner = inner_extent(dy.shape);
    ensure_shape(dx, dy.shape);
    for (int s = 0; s < n; ++s) {
        const float* src = dy.ptr() + static_cast<std::size_t>(s) * c * inner;
        float* dst = dx.ptr() + static_cast<std::size_t>(s) * c * inner;
        for (int ch = 0; ch < c; ++ch) {
            const float* g = src + static_cast<std::size_t>(perm[static_cast<std::size_t>(ch)]) * inner;
            float* d = dst + static_cast<std::size_t>(ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) d[i] += g[i];
        }
    }
}

template <class T>
Array<T> mask_channels(const Array<T>& x, std::span<const int> channels) {
    check_channel_data(x.shape, "mask_channels");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t inner = inner_extent(x.shape);
    for (int ch : channels)
        if (ch < 0 || ch >= c)
            throw Error(ErrorKind::InvalidArgument,
                        "mask_channels: channel " + std::to_string(ch) + " out of range 0.." +
                            std::to_string(c - 1));
    Array<T> y = x;
    for (int s = 0; s < n; ++s)
        for (int ch : channels)
            std::fill_n(y.ptr() + (static_cast<std::size_t>(s) * c + ch) * inner, inner, T(0));
    return y;
}

void mask_channels_backward(const Array<float>& dy, std::span<const int> channels, Array<float>& dx) {
    const int n = dy.dim(0), c = dy.dim(1);
    const std::size_t inner = inner_extent(dy.shape);
    std::vector<char> masked(static_cast<std::size_t>(c), 0);
    for (int ch : channels) masked[static_cast<std::size_t>(ch)] = 1;
    ensure_shape(dx, dy.shape);
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
            if (masked[static_cast<std::size_t>(ch)]) continue;
            const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) dx.data[off + i] += dy.data[off + i];
        }
}

template <class T>
Array<T> linear(const Array<T>& x, const Array<T>& w, const Array<T>& b) {
    check_linear(x.shape, w.shape, b.shape);
    const int n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    Array<T> y({n, dout});
    MatMap<T> ym(y.ptr(), n, dout);
    ym.noalias() = ConstMatMap<T>(x.ptr(), n, din) * ConstMatMap<T>(w.ptr(), dout, din).transpose();
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < dout; ++o) ym(s, o) += b.data[static_cast<std::size_t>(o)];
    return y;
}

void linear_backward(const Array<float>& x, const Array<float>& w, const Array<float>& dy,
                     Array<float>* dx, Array<float>* dw, Array<float>* db) {
    const int n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    ConstMatMap<float> dym(dy.ptr(), n, dout);
    if (dx) {
        ensure_shape(*dx, x.shape);
        MatMap<float>(dx->ptr(), n, din).noalias() += dym * ConstMatMap<float>(w.ptr(), dout, din);
    }
    if (dw) {
        ensure_shape(*dw, w.shape);
        MatMap<float>(dw->ptr(), dout, din).noalias() += dym.transpose() * ConstMatMap<float>(x.ptr(), n, din);
    }
    if (db) {
        ensure_shape(*db, {dout});
        for (int o = 0; o < dout; ++o) {
            double acc = 0.0;
            for (int s = 0; s < n; ++s) acc += dym(s, o);
            db->data[static_cast<std::size_t>(o)] += static_cast<float>(acc);
        }
    }
}

namespace {

void check_labels(const Shape& logits, std::span<const int> labels) {
    if (logits.size() != 2) throw ShapeError("softmax_cross_entropy", "logits", -1, 2, static_cast<int>(logits.size()));
    if (static_cast<int>(labels.size()) != logits[0])
        throw ShapeError("softmax_cross_entropy", "labels", 0, logits[0], static_cast<int>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= logits[1])
            throw Error(ErrorKind::InvalidArgument,
                        "softmax_cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " outside 0.." + std::to_string(logits[1] - 1));
}

template <class T>
double logsumexp_row(const T* row, int k, double& max_out) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += std::exp(static_cast<double>(row[j]) - m);
    max_out = m;
    return m + std::log(acc);
}

void check_same(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) throw ShapeError(op, "b", -1, static_cast<int>(a.size()), static_cast<int>(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) throw ShapeError(op, "b", static_cast<int>(i), a[i], b[i]);
}

}  // namespace

template <class T>
T softmax_cross_entropy(const Array<T>& logits, std::span<const int> labels) {
    check_labels(logits.shape, labels);
    const int n = logits.dim(0), k = logits.dim(1);
    if (n == 0) return T(0);
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        const T* row = logits.ptr() + static_cast<std::size_t>(s) * k;
        double m;
        const double lse = logsumexp_row(row, k, m);
        total += lse - static_cast<double>(row[labels[static_cast<std::size_t>(s)]]);
    }
    return static_cast<T>(total / n);
}

void softmax_cross_entropy_backward(const Array<float>& logits, std::span<const int> labels, float dloss,
                                    Array<float>& dlogits) {
    const int n = logits.dim(0), k = logits.dim(1);
    ensure_shape(dlogits, logits.shape);
    const double scale = static_cast<double>(dloss) / n;
    for (int s = 0; s < n; ++s) {
        const float* row = logits.ptr() + static_cast<std::size_t>(s) * k;
        float* g = dlogits.ptr() + static_cast<std::size_t>(s) * k;
        double m;
        const double lse = logsumexp_row(row, k, m);
        for (int j = 0; j < k; ++j) {
            double p = std::exp(static_cast<double>(row[j]) - lse);
            if (j == labels[static_cast<std::size_t>(s)]) p -= 1.0;
            g[j] += static_cast<float>(p * scale);
        }
    }
}

template <class T>
T mse(const Array<T>& a, const Array<T>& b) {
    check_same(a.shape, b.shape, "mse_loss");
    if (a.size() == 0) return T(0);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return static_cast<T>(acc / static_cast<double>(a.size()));
}

void mse_backward(const Array<float>& a, const Array<float>& b, float dloss, Array<float>* da,
                  Array<float>* db) {
    const double scale = 2.0 * dloss / static_cast<double>(a.size());
    if (da) ensure_shape(*da, a.shape);
    if (db) ensure_shape(*db, b.shape);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const float g = static_cast<float>(scale * (static_cast<double>(a.data[i]) - b.data[i]));
        if (da) da->data[i] += g;
        if (db) db->data[i] -= g;
    }
}

#define POSPOOL_INSTANTIATE(T)                                                                    \
    template Array<T> conv2d(const Array<T>&, const Array<T>&, const Array<T>&, const Conv2dOptions&); \
    template Array<T> relu(const Array<T>&);                                                      \
    template Array<T> global_avg_pool(const Array<T>&);                                           \
    template Array<T> channel_permute(const Array<T>&, std::span<const int>);                     \
    template Array<T> mask_channels(const Array<T>&, std::span<const int>);                       \
    template Array<T> linear(const Array<T>&, const Array<T>&, const Array<T>&);                  \
    template T softmax_cross_entropy(const Array<T>&, std::span<const int>);                      \
    template T mse(const Array<T>&, const Array<T>&);

POSPOOL_INSTANTIATE(float)
POSPOOL_INSTANTIATE(double)

#undef POSPOOL_INSTANTIATE

}  // namespace kernels
}  // namespace pospool
