#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "pospool/rng.hpp"
#include "pospool/tensor/array.hpp"
#include "pospool/tensor/kernels.hpp"

namespace pospool {

// Shared handle to a 32-bit float array plus an optional gradient buffer.
// Copies alias the same storage; use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Array<float> value, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->value.shape; }
    std::size_t numel() const { return impl_->value.size(); }
    const Array<float>& value() const { return impl_->value; }
    Array<float>& mutable_value() { return impl_->value; }
    std::span<const float> data() const { return impl_->value.data; }
    std::span<float> mutable_data() { return impl_->value.data; }
    float item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    bool has_grad() const { return !impl_->grad.data.empty() || impl_->value.data.empty(); }
    // Same shape as value(); zeros when backward never reached this tensor.
    const Array<float>& grad() const;
    Array<float>& mutable_grad();
    void zero_grad();

    // Index of the graph node that produced this tensor, -1 for leaves.
    int node_id() const { return impl_->node_id; }

    Tensor clone() const;
    // Same data, no graph history, no grad.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    friend class Graph;
    struct Impl {
        Array<float> value;
        Array<float> grad;
        bool requires_grad = false;
        int node_id = -1;
    };
    std::shared_ptr<Impl> impl_;
};

enum class OpKind {
    Conv2d,
    Relu,
    GlobalAvgPool,
    ChannelPermute,
    MaskChannels,
    Linear,
    SoftmaxCrossEntropy,
    Mse,
    Sum,
    Add,
    Scale,
};

const char* to_string(OpKind kind);

// Append-only tape of differentiable ops. An op is recorded only when one of
// its inputs requires a gradient; its output then requires one too. backward()
// walks the tape in strict reverse insertion order and may run once.
class Graph {
public:
    using Value = Tensor;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt);
    Tensor relu(const Tensor& x);
    Tensor global_avg_pool(const Tensor& x);
    // out[n, perm[c], ...] = x[n, c, ...]; gradient is the inverse scatter.
    Tensor channel_permute(const Tensor& x, std::span<const int> perm);
    Tensor mask_channels(const Tensor& x, std::span<const int> channels);
    Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
    Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
    Tensor mse_loss(const Tensor& a, const Tensor& b);
    Tensor sum(const Tensor& x);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& x, double factor);

    // Populates grad() of every requires_grad tensor reachable from `loss`.
    // Throws on a non-scalar loss, on a loss not produced by this graph, and on
    // a second call.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        OpKind kind;
        Tensor output;
        std::function<void(const Array<float>& dout)> backward;
    };

    Tensor record(OpKind kind, Array<float> value, std::initializer_list<const Tensor*> inputs,
                  std::function<void(const Array<float>&)> backward);
    void check_open() const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Forward-only counterpart of Graph over plain arrays. Instantiated with float
// for inference and with double for the finite-difference reference.
template <class T>
class Evaluator {
public:
    using Value = Array<T>;

    // When set, every relu folds the sign pattern of its input into this
    // hash, identifying the linear piece the forward pass went through.
    std::uint64_t* relu_region = nullptr;

    Value conv2d(const Value& x, const Value& w, const Value& b, const Conv2dOptions& opt) {
        return kernels::conv2d(x, w, b, opt);
    }
    Value relu(const Value& x) {
        if (relu_region) {
            std::uint64_t word = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                word = (word << 1) | (x.data[i] > T(0));
                if (i % 64 == 63 || i + 1 == x.size()) {
                    *relu_region = mix64(*relu_region ^ word);
                    word = 0;
                }
            }
        }
        return kernels::relu(x);
    }
    Value global_avg_pool(const Value& x) { return kernels::global_avg_pool(x); }
    Value channel_permute(const Value& x, std::span<const int> perm) {
        return kernels::channel_permute(x, perm);
    }
    Value mask_channels(const Value& x, std::span<const int> channels) {
        return kernels::mask_channels(x, channels);
    }
    Value linear(const Value& x, const Value& w, const Value& b) { return kernels::linear(x, w, b); }
    Value softmax_cross_entropy(const Value& logits, std::span<const int> labels) {
        return Value(Shape{}, std::vector<T>{kernels::softmax_cross_entropy(logits, labels)});
    }
    Value mse_loss(const Value& a, const Value& b) { return Value(Shape{}, std::vector<T>{kernels::mse(a, b)}); }
    Value sum(const Value& x) {
        double acc = 0.0;
        for (T v : x.data) acc += static_cast<double>(v);
        return Value(Shape{}, std::vector<T>{static_cast<T>(acc)});
    }
    Value add(const Value& a, const Value& b) {
        if (a.shape != b.shape) throw ShapeError("add", "b", -1, a.rank(), b.rank());
        Value out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
        return out;
    }
    Value scale(const Value& x, double factor) {
        Value out = x;
        for (T& v : out.data) v *= static_cast<T>(factor);
        return out;
    }
};

}  // namespace pospool
