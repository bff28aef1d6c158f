#include "pospool/tensor/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pospool {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Array<float> value, bool requires_grad) : impl_(std::make_shared<Impl>()) {
    impl_->value = std::move(value);
    impl_->requires_grad = requires_grad;
    if (requires_grad) impl_->grad = Array<float>(impl_->value.shape);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(Array<float>(std::move(shape)), requires_grad);
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return Tensor(Array<float>(Shape{}, std::vector<float>{v}), requires_grad);
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item", "tensor", -1, 0, static_cast<int>(shape().size()));
    return impl_->value.data[0];
}

const Array<float>& Tensor::grad() const {
    if (impl_->grad.shape != impl_->value.shape || impl_->grad.size() != impl_->value.size())
        impl_->grad = Array<float>(impl_->value.shape);
    return impl_->grad;
}

Array<float>& Tensor::mutable_grad() {
    grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_->grad.size() == impl_->value.size())
        std::fill(impl_->grad.data.begin(), impl_->grad.data.end(), 0.0f);
    else
        impl_->grad = Array<float>(impl_->value.shape);
}

Tensor Tensor::clone() const {
    Tensor t(impl_->value, impl_->requires_grad);
    if (impl_->requires_grad && impl_->grad.size() == impl_->value.size()) t.impl_->grad = impl_->grad;
    return t;
}

Tensor Tensor::detach() const { return Tensor(impl_->value, false); }

const char* to_string(OpKind kind) {
    switch (kind) {
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Relu: return "relu";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::ChannelPermute: return "channel_permute";
        case OpKind::MaskChannels: return "mask_channels";
        case OpKind::Linear: return "linear";
        case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
        case OpKind::Mse: return "mse_loss";
        case OpKind::Sum: return "sum";
        case OpKind::Add: return "add";
        case OpKind::Scale: return "scale";
    }
    return "unknown";
}

namespace {

// Gradient buffer of `t`, allocated on first use; null when t needs none.
Array<float>* sink(const Tensor& t) {
    if (!t.requires_grad()) return nullptr;
    return &const_cast<Tensor&>(t).mutable_grad();
}

}  // namespace

void Graph::check_open() const {
    if (consumed_)
        throw Error(ErrorKind::Graph, "graph already ran backward; build a new graph for a new forward pass");
}

Tensor Graph::record(OpKind kind, Array<float> value, std::initializer_list<const Tensor*> inputs,
                     std::function<void(const Array<float>&)> backward) {
    check_open();
    const bool needs_grad =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
    Tensor out(std::move(value), false);
    if (!needs_grad) return out;
    out.impl_->requires_grad = true;
    out.impl_->node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{kind, out, std::move(backward)});
    return out;
}

Tensor Graph::conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt) {
    return record(OpKind::Conv2d, kernels::conv2d(x.value(), w.value(), b.value(), opt), {&x, &w, &b},
                  [x, w, b, opt](const Array<float>& dy) {
                      kernels::conv2d_backward(x.value(), w.value(), opt, dy, sink(x), sink(w), sink(b));
                  });
}

Tensor Graph::relu(const Tensor& x) {
    return record(OpKind::Relu, kernels::relu(x.value()), {&x}, [x](const Array<float>& dy) {
        kernels::relu_backward(x.value(), dy, *sink(x));
    });
}

Tensor Graph::global_avg_pool(const Tensor& x) {
    return record(OpKind::GlobalAvgPool, kernels::global_avg_pool(x.value()), {&x},
                  [x](const Array<float>& dy) { kernels::global_avg_pool_backward(dy, *sink(x)); });
}

Tensor Graph::channel_permute(const Tensor& x, std::span<const int> perm) {
    std::vector<int> p(perm.begin(), perm.end());
    Array<float> y = kernels::channel_permute(x.value(), p);
    return record(OpKind::ChannelPermute, std::move(y), {&x}, [x, p](const Array<float>& dy) {
        kernels::channel_permute_backward(dy, p, *sink(x));
    });
}

Tensor Graph::mask_channels(const Tensor& x, std::span<const int> channels) {
    std::vector<int> c(channels.begin(), channels.end());
    Array<float> y = kernels::mask_channels(x.value(), c);
    return record(OpKind::MaskChannels, std::move(y), {&x}, [x, c](const Array<float>& dy) {
        kernels::mask_channels_backward(dy, c, *sink(x));
    });
}

Tensor Graph::linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return record(OpKind::Linear, kernels::linear(x.value(), w.value(), b.value()), {&x, &w, &b},
                  [x, w, b](const Array<float>& dy) {
                      kernels::linear_backward(x.value(), w.value(), dy, sink(x), sink(w), sink(b));
                  });
}

Tensor Graph::softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    std::vector<int> l(labels.begin(), labels.end());
    const float v = kernels::softmax_cross_entropy(logits.value(), l);
    return record(OpKind::SoftmaxCrossEntropy, Array<float>(Shape{}, std::vector<float>{v}), {&logits},
                  [logits, l](const Array<float>& dy) {
                      kernels::softmax_cross_entropy_backward(logits.value(), l, dy.data[0], *sink(logits));
                  });
}

Tensor Graph::mse_loss(const Tensor& a, const Tensor& b) {
    const float v = kernels::mse(a.value(), b.value());
    return record(OpKind::Mse, Array<float>(Shape{}, std::vector<float>{v}), {&a, &b},
                  [a, b](const Array<float>& dy) {
                      kernels::mse_backward(a.value(), b.value(), dy.data[0], sink(a), sink(b));
                  });
}

Tensor Graph::sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    return record(OpKind::Sum, Array<float>(Shape{}, std::vector<float>{static_cast<float>(acc)}), {&x},
                  [x](const Array<float>& dy) {
                      Array<float>& g = *sink(x);
                      for (float& v : g.data) v += dy.data[0];
                  });
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    Array<float> out = Evaluator<float>{}.add(a.value(), b.value());
    return record(OpKind::Add, std::move(out), {&a, &b}, [a, b](const Array<float>& dy) {
        for (const Tensor* t : {&a, &b})
            if (Array<float>* g = sink(*t))
                for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += dy.data[i];
    });
}

Tensor Graph::scale(const Tensor& x, double factor) {
    Array<float> out = Evaluator<float>{}.scale(x.value(), factor);
    return record(OpKind::Scale, std::move(out), {&x}, [x, factor](const Array<float>& dy) {
        Array<float>& g = *sink(x);
        const float f = static_cast<float>(factor);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += f * dy.data[i];
    });
}

void Graph::backward(const Tensor& loss) {
    check_open();
    if (loss.numel() != 1)
        throw ShapeError("backward", "loss", -1, 0, static_cast<int>(loss.shape().size()));
    const int id = loss.node_id();
    if (id < 0 || id >= static_cast<int>(nodes_.size()) || !nodes_[static_cast<std::size_t>(id)].output.same_storage(loss))
        throw Error(ErrorKind::Graph, "backward: loss was not produced by this graph");
    consumed_ = true;
    const_cast<Tensor&>(loss).mutable_grad().data[0] += 1.0f;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& node = nodes_[i];
        const Array<float>& g = node.output.impl_->grad;
        if (g.size() != node.output.numel()) continue;  // not reached from the loss
        node.backward(g);
    }
}

}  // namespace pospool
