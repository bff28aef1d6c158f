#include "pospool/train/optimizer.hpp"

#include <cmath>

namespace pospool {

namespace {

void check_pairs(std::span<Array<float>* const> params, std::span<const Array<float>* const> grads,
                 const char* op) {
    if (params.size() != grads.size())
        throw Error(ErrorKind::InvalidArgument, std::string(op) + ": " + std::to_string(params.size()) +
                                                    " parameters but " + std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape& p = params[i]->shape;
        const Shape& g = grads[i]->shape;
        if (p.size() != g.size()) throw ShapeError(op, "grad", -1, static_cast<int>(p.size()), static_cast<int>(g.size()));
        for (std::size_t d = 0; d < p.size(); ++d)
            if (p[d] != g[d]) throw ShapeError(op, "grad", static_cast<int>(d), p[d], g[d]);
    }
}

void init_slots(std::vector<Array<float>>& slots, std::span<Array<float>* const> params, const char* op) {
    if (slots.empty()) {
        for (const Array<float>* p : params) slots.emplace_back(p->shape);
        return;
    }
    if (slots.size() != params.size())
        throw Error(ErrorKind::InvalidArgument, std::string(op) + ": optimizer state holds " +
                                                    std::to_string(slots.size()) + " slots, got " +
                                                    std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (slots[i].shape != params[i]->shape)
            throw Error(ErrorKind::InvalidArgument, std::string(op) + ": state shape " + to_string(slots[i].shape) +
                                                        " does not match parameter " + to_string(params[i]->shape));
}

}  // namespace

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
    if (text == "adam") return OptimizerKind::Adam;
    if (text == "sgd") return OptimizerKind::Sgd;
    throw Error(ErrorKind::InvalidArgument, "unknown optimizer '" + std::string(text) + "'");
}

void adam_step(std::span<Array<float>* const> params, std::span<const Array<float>* const> grads, AdamState& state,
               double lr, const AdamHyper& hyper) {
    check_pairs(params, grads, "adam_step");
    init_slots(state.m, params, "adam_step");
    init_slots(state.v, params, "adam_step");
    ++state.step;
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* p = params[i]->ptr();
        const float* g = grads[i]->ptr();
        float* m = state.m[i].ptr();
        float* v = state.v[i].ptr();
        for (std::size_t k = 0; k < params[i]->size(); ++k) {
            const double gk = g[k];
            const double mk = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * gk;
            const double vk = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            p[k] = static_cast<float>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + hyper.eps));
        }
    }
}

void sgd_step(std::span<Array<float>* const> params, std::span<const Array<float>* const> grads, SgdState& state,
              double lr, double momentum) {
    check_pairs(params, grads, "sgd_step");
    init_slots(state.velocity, params, "sgd_step");
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* p = params[i]->ptr();
        const float* g = grads[i]->ptr();
        float* vel = state.velocity[i].ptr();
        for (std::size_t k = 0; k < params[i]->size(); ++k) {
            vel[k] = static_cast<float>(momentum * vel[k] + g[k]);
            p[k] = static_cast<float>(p[k] - lr * vel[k]);
        }
    }
}

Optimizer::Optimizer(OptimizerKind kind, double lr, std::vector<Tensor> params)
    : kind_(kind), lr_(lr), params_(std::move(params)) {
    if (!(lr > 0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
}

void Optimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::step() {
    std::vector<Array<float>*> values;
    std::vector<const Array<float>*> grads;
    for (Tensor& p : params_) {
        values.push_back(&p.mutable_value());
        grads.push_back(&p.grad());
    }
    if (kind_ == OptimizerKind::Adam)
        adam_step(values, grads, adam_, lr_);
    else
        sgd_step(values, grads, sgd_, lr_);
    ++steps_;
}

}  // namespace pospool
