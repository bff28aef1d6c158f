#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pospool/tensor/tensor.hpp"

namespace pospool {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    // Entries left out because the two perturbed evaluations fell on
    // different linear pieces of the loss, where central differences do not
    // estimate the derivative.
    std::size_t skipped = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;   // at worst_index
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double max_rel_error() const;
    std::size_t checked() const;
    std::size_t skipped() const;
    bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

struct GradCheckOptions {
    double epsilon = 1e-3;
    // Entries checked per parameter; larger tensors are sampled on an even
    // stride so every run checks the same entries.
    std::size_t max_entries_per_param = SIZE_MAX;
};

// |a - b| / max(1e-8, |a| + |b|)
double relative_error(double a, double b);

// Builds the scalar loss on a fresh graph from the given parameters.
using LossBuilder = std::function<Tensor(Graph&)>;
// Re-evaluates the same loss in 64-bit from explicit parameter values (same
// order as the checked parameters).
using ReferenceLoss = std::function<double(std::span<const Array<double>>)>;

// Reference loss plus an identifier of the linear piece it was evaluated on
// (e.g. a hash of every ReLU sign), for piecewise-smooth losses.
struct ReferenceValue {
    double loss = 0.0;
    std::uint64_t region = 0;
};
using PiecewiseReference = std::function<ReferenceValue(std::span<const Array<double>>)>;

// Compares backward() gradients against central differences of the 64-bit
// reference loss. Parameter grads are zeroed first and left holding the
// analytic gradient. An empty parameter list yields an empty report.
GradCheckReport grad_check(std::span<const NamedTensor> params, const LossBuilder& build,
                           const ReferenceLoss& reference, const GradCheckOptions& options = {});
GradCheckReport grad_check(std::span<const NamedTensor> params, const LossBuilder& build,
                           const PiecewiseReference& reference, const GradCheckOptions& options = {});

// Central-difference check from precomputed analytic gradients; exposed so the
// checker itself can be tested against a deliberately corrupted gradient.
GradCheckReport compare_gradients(std::span<const NamedTensor> params,
                                  std::span<const Array<float>> analytic,
                                  const ReferenceLoss& reference, const GradCheckOptions& options = {});
GradCheckReport compare_gradients(std::span<const NamedTensor> params,
                                  std::span<const Array<float>> analytic,
                                  const PiecewiseReference& reference, const GradCheckOptions& options = {});

}  // namespace pospool
