#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pospool/tensor/grad_check.hpp"
#include "pospool/tensor/tensor.hpp"

namespace pospool {

enum class HeadKind { GapNet, PermuteNet, LinearBaseline };

const char* to_string(HeadKind head);
HeadKind parse_head_kind(std::string_view text);

enum class PermuteMode { Identity, Fixed, ResamplePerBatch };

const char* to_string(PermuteMode mode);
PermuteMode parse_permute_mode(std::string_view text);

// Source of the channel shuffle in PermuteNet. Draws are keyed: the same
// (seed, key) always yields the same permutation, uniform over all C!
// orderings for the resample mode.
struct PermutePolicy {
    PermuteMode mode = PermuteMode::ResamplePerBatch;
    std::uint64_t seed = 0;

    std::vector<int> draw(int channels, std::uint64_t key) const;
    bool operator==(const PermutePolicy&) const = default;
};

namespace layer {
struct Conv {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    PaddingMode padding = PaddingMode::Zero;
    int pad = 1;
    bool operator==(const Conv&) const = default;
};
struct ReLU {
    bool operator==(const ReLU&) const = default;
};
struct GAP {
    bool operator==(const GAP&) const = default;
};
struct Permute {
    PermutePolicy policy;
    bool operator==(const Permute&) const = default;
};
struct Linear {
    int out_features = 0;
    bool operator==(const Linear&) const = default;
};
// Inference-time zeroing of post-GAP channels.
struct AblationMask {
    std::vector<int> channels;
    bool operator==(const AblationMask&) const = default;
};
}  // namespace layer

using LayerSpec =
    std::variant<layer::Conv, layer::ReLU, layer::GAP, layer::Permute, layer::Linear, layer::AblationMask>;

struct ModelSpec {
    Shape input_shape{3, 32, 32};  // C, H, W
    std::vector<LayerSpec> layers;
    HeadKind head = HeadKind::GapNet;
    std::uint64_t seed = 0;

    bool operator==(const ModelSpec&) const = default;
};

// Convolutional trunk shared by all three heads: conv + ReLU per entry.
struct EncoderConfig {
    std::vector<int> widths{32, 64, 64, 128, 128, 128};
    std::vector<int> strides{1, 2, 1, 2, 1, 2};
    int kernel = 3;
    int pad = 1;
    PaddingMode padding = PaddingMode::Zero;

    static EncoderConfig smallnet(PaddingMode padding = PaddingMode::Zero);
};

// gapnet:          encoder -> Conv(K) -> GAP
// permutenet:      encoder -> GAP -> Permute -> Linear(K)
// linear_baseline: encoder -> GAP -> Linear(K)
ModelSpec make_model_spec(HeadKind head, const EncoderConfig& encoder, int num_outputs, Shape input_shape,
                          std::uint64_t seed, PermutePolicy policy = {});

// Throws Error(InvalidArgument) describing the first violated invariant.
void validate_spec(const ModelSpec& spec);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(std::string_view json);

template <class V>
struct ForwardOutputs {
    V features;  // encoder map feeding the head
    V latent;    // post-GAP vector, before any mask or permutation
    V logits;
};

class Model {
public:
    // Initializes parameters deterministically from spec.seed: conv and linear
    // weights uniform in +-sqrt(6/fan_in) (He), biases zero.
    explicit Model(ModelSpec spec);
    // Adopts existing parameter tensors (aliased, not copied).
    Model(ModelSpec spec, std::vector<NamedTensor> params);

    const ModelSpec& spec() const { return spec_; }
    std::span<const NamedTensor> parameters() const { return params_; }
    std::vector<Tensor> parameter_tensors() const;
    std::size_t parameter_count() const;

    int num_outputs() const { return num_outputs_; }
    int latent_channels() const { return latent_channels_; }
    int feature_channels() const { return feature_channels_; }
    std::size_t gap_index() const { return gap_index_; }
    // Layers [0, encoder_end) form the encoder; for gapnet the final K-channel
    // conv belongs to the head.
    std::size_t encoder_end() const { return encoder_end_; }

    // Permutation the Permute layer applies for `perm_key`, or empty when the
    // model has no Permute layer.
    std::vector<int> permutation(int channels, std::uint64_t perm_key) const;

    // Autograd forward.
    ForwardOutputs<Tensor> forward(Graph& graph, const Tensor& x, std::uint64_t perm_key) const;

    // Inference (no graph).
    Array<float> logits(const Array<float>& x, std::uint64_t perm_key) const;
    Array<float> latent(const Array<float>& x) const;
    Array<float> features(const Array<float>& x) const;
    ForwardOutputs<Array<float>> infer(const Array<float>& x, std::uint64_t perm_key) const;

    // 64-bit forward from explicit parameter values (same order as
    // parameters()). `relu_region`, when given, accumulates the ReLU sign
    // pattern hash (see Evaluator).
    ForwardOutputs<Array<double>> forward_f64(std::span<const Array<double>> params, const Array<double>& x,
                                              std::uint64_t perm_key, std::uint64_t* relu_region = nullptr) const;

    // Runs layers [first, last) from `x`. ParamFn maps a parameter index to a
    // value usable by the executor.
    template <class Ex, class ParamFn>
    typename Ex::Value run(Ex& ex, ParamFn&& param, typename Ex::Value x, std::size_t first, std::size_t last,
                           std::uint64_t perm_key, ForwardOutputs<typename Ex::Value>* capture) const;

    // Deep copy of spec and parameters.
    Model clone() const;

private:
    struct Slot {
        int weight = -1;
        int bias = -1;
    };

    void index_layers();

    ModelSpec spec_;
    std::vector<NamedTensor> params_;
    std::vector<Slot> slots_;
    int num_outputs_ = 0;
    int latent_channels_ = 0;
    int feature_channels_ = 0;
    std::size_t gap_index_ = 0;
    std::size_t encoder_end_ = 0;
};

inline Model build_model(const ModelSpec& spec) { return Model(spec); }

// Copy of `model` with every conv kernel reversed along its width axis.
Model flip_kernels(const Model& model);

// Copy of `model` (sharing parameter storage) with an AblationMask over
// `channels` inserted directly after the GAP layer.
Model with_ablation(const Model& model, std::vector<int> channels);

// Cross-entropy loss of the model on a batch, checked against central
// differences of the 64-bit forward. Entries whose perturbation flips a ReLU
// are reported as skipped.
GradCheckReport grad_check(const Model& model, const Array<float>& x, std::span<const int> labels,
                           const GradCheckOptions& options = {}, std::uint64_t perm_key = 0);

template <class Ex, class ParamFn>
typename Ex::Value Model::run(Ex& ex, ParamFn&& param, typename Ex::Value x, std::size_t first,
                              std::size_t last, std::uint64_t perm_key,
                              ForwardOutputs<typename Ex::Value>* capture) const {
    for (std::size_t i = first; i < last; ++i) {
        if (capture && i == encoder_end_) capture->features = x;
        const LayerSpec& spec = spec_.layers[i];
        const Slot& slot = slots_[i];
        if (const auto* c = std::get_if<layer::Conv>(&spec)) {
            x = ex.conv2d(x, param(slot.weight), param(slot.bias), Conv2dOptions{c->stride, c->pad, c->padding});
        } else if (std::holds_alternative<layer::ReLU>(spec)) {
            x = ex.relu(x);
        } else if (std::holds_alternative<layer::GAP>(spec)) {
            x = ex.global_avg_pool(x);
            if (capture) capture->latent = x;
        } else if (const auto* p = std::get_if<layer::Permute>(&spec)) {
            const int channels = latent_channels_;
            x = ex.channel_permute(x, p->policy.draw(channels, perm_key));
        } else if (std::holds_alternative<layer::Linear>(spec)) {
            x = ex.linear(x, param(slot.weight), param(slot.bias));
        } else if (const auto* m = std::get_if<layer::AblationMask>(&spec)) {
            x = ex.mask_channels(x, m->channels);
        }
    }
    if (capture && last == spec_.layers.size()) capture->logits = x;
    return x;
}

}  // namespace pospool
