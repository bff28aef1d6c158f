#include "pospool/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace pospool {

double GradCheckReport::max_rel_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
    return worst;
}

std::size_t GradCheckReport::checked() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.checked;
    return n;
}

std::size_t GradCheckReport::skipped() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.skipped;
    return n;
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

GradCheckReport compare_gradients(std::span<const NamedTensor> params,
                                  std::span<const Array<float>> analytic,
                                  const ReferenceLoss& reference, const GradCheckOptions& options) {
    return compare_gradients(
        params, analytic, [&](std::span<const Array<double>> v) { return ReferenceValue{reference(v), 0}; },
        options);
}

GradCheckReport compare_gradients(std::span<const NamedTensor> params,
                                  std::span<const Array<float>> analytic,
                                  const PiecewiseReference& reference, const GradCheckOptions& options) {
    GradCheckReport report;
    std::vector<Array<double>> values;
    values.reserve(params.size());
    for (const auto& p : params) values.push_back(cast<double>(p.tensor.value()));

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        GradCheckEntry entry;
        entry.name = params[pi].name;
        const std::size_t n = values[pi].size();
        const std::size_t stride =
            n > options.max_entries_per_param ? (n + options.max_entries_per_param - 1) / options.max_entries_per_param : 1;
        for (std::size_t i = 0; i < n; i += stride) {
            double& v = values[pi].data[i];
            const double saved = v;
            v = saved + options.epsilon;
            const ReferenceValue up = reference(values);
            v = saved - options.epsilon;
            const ReferenceValue down = reference(values);
            v = saved;
            if (up.region != down.region) {
                ++entry.skipped;
                continue;
            }
            const double numeric = (up.loss - down.loss) / (2.0 * options.epsilon);
            const double a = analytic[pi].data[i];
            const double err = relative_error(a, numeric);
            if (entry.checked == 0 || err > entry.max_rel_error) {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
            ++entry.checked;
        }
        report.entries.push_back(entry);
    }
    return report;
}

namespace {

std::vector<Array<float>> analytic_gradients(std::span<const NamedTensor> params, const LossBuilder& build) {
    for (const auto& p : params) {
        Tensor handle = p.tensor;
        handle.zero_grad();
    }
    Graph graph;
    Tensor loss = build(graph);
    graph.backward(loss);
    std::vector<Array<float>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.tensor.grad());
    return analytic;
}

}  // namespace

GradCheckReport grad_check(std::span<const NamedTensor> params, const LossBuilder& build,
                           const ReferenceLoss& reference, const GradCheckOptions& options) {
    if (params.empty()) return {};
    return compare_gradients(params, analytic_gradients(params, build), reference, options);
}

GradCheckReport grad_check(std::span<const NamedTensor> params, const LossBuilder& build,
                           const PiecewiseReference& reference, const GradCheckOptions& options) {
    if (params.empty()) return {};
    return compare_gradients(params, analytic_gradients(params, build), reference, options);
}

}  // namespace pospool
