#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pospool/tensor/tensor.hpp"

namespace pospool {

enum class OptimizerKind { Adam, Sgd };

const char* to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First and second moments per parameter plus the shared step count.
struct AdamState {
    std::vector<Array<float>> m;
    std::vector<Array<float>> v;
    std::int64_t step = 0;
};

// One bias-corrected Adam update. params[i] and grads[i] must have equal
// shapes; the state is sized on first use and must match afterwards.
void adam_step(std::span<Array<float>* const> params, std::span<const Array<float>* const> grads, AdamState& state,
               double lr, const AdamHyper& hyper = {});

struct SgdState {
    std::vector<Array<float>> velocity;
};

// Heavy-ball momentum: v = mu * v + g; p -= lr * v.
void sgd_step(std::span<Array<float>* const> params, std::span<const Array<float>* const> grads, SgdState& state,
              double lr, double momentum = 0.9);

// Owns optimizer state for a fixed list of parameter tensors and reads
// their grad buffers on step().
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, std::vector<Tensor> params);

    void zero_grad();
    void step();

    std::int64_t steps() const { return steps_; }

private:
    OptimizerKind kind_;
    double lr_;
    std::vector<Tensor> params_;
    AdamState adam_;
    SgdState sgd_;
    std::int64_t steps_ = 0;
};

}  // namespace pospool
