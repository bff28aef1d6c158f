#include "pospool/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "pospool/rng.hpp"

namespace pospool {

using nlohmann::json;

const char* to_string(HeadKind head) {
    switch (head) {
        case HeadKind::GapNet: return "gapnet";
        case HeadKind::PermuteNet: return "permutenet";
        case HeadKind::LinearBaseline: return "linear_baseline";
    }
    return "gapnet";
}

HeadKind parse_head_kind(std::string_view text) {
    if (text == "gapnet") return HeadKind::GapNet;
    if (text == "permutenet") return HeadKind::PermuteNet;
    if (text == "linear_baseline" || text == "baseline") return HeadKind::LinearBaseline;
    throw Error(ErrorKind::InvalidArgument, "unknown architecture '" + std::string(text) + "'");
}

const char* to_string(PermuteMode mode) {
    switch (mode) {
        case PermuteMode::Identity: return "identity";
        case PermuteMode::Fixed: return "fixed";
        case PermuteMode::ResamplePerBatch: return "resample_per_batch";
    }
    return "identity";
}

PermuteMode parse_permute_mode(std::string_view text) {
    if (text == "identity") return PermuteMode::Identity;
    if (text == "fixed") return PermuteMode::Fixed;
    if (text == "resample_per_batch" || text == "resample") return PermuteMode::ResamplePerBatch;
    throw Error(ErrorKind::InvalidArgument, "unknown permute mode '" + std::string(text) + "'");
}

std::vector<int> PermutePolicy::draw(int channels, std::uint64_t key) const {
    switch (mode) {
        case PermuteMode::Identity: {
            std::vector<int> p(static_cast<std::size_t>(channels));
            std::iota(p.begin(), p.end(), 0);
            return p;
        }
        case PermuteMode::Fixed: return Rng(derive_seed(seed, {0})).permutation(channels);
        case PermuteMode::ResamplePerBatch: return Rng(derive_seed(seed, {1, key})).permutation(channels);
    }
    return {};
}

EncoderConfig EncoderConfig::smallnet(PaddingMode padding) {
    EncoderConfig cfg;
    cfg.padding = padding;
    return cfg;
}

ModelSpec make_model_spec(HeadKind head, const EncoderConfig& encoder, int num_outputs, Shape input_shape,
                          std::uint64_t seed, PermutePolicy policy) {
    if (encoder.widths.size() != encoder.strides.size())
        throw Error(ErrorKind::InvalidArgument, "encoder widths and strides differ in length");
    ModelSpec spec;
    spec.input_shape = std::move(input_shape);
    spec.head = head;
    spec.seed = seed;
    for (std::size_t i = 0; i < encoder.widths.size(); ++i) {
        spec.layers.emplace_back(
            layer::Conv{encoder.widths[i], encoder.kernel, encoder.strides[i], encoder.padding, encoder.pad});
        spec.layers.emplace_back(layer::ReLU{});
    }
    switch (head) {
        case HeadKind::GapNet:
            spec.layers.emplace_back(layer::Conv{num_outputs, encoder.kernel, 1, encoder.padding, encoder.pad});
            spec.layers.emplace_back(layer::GAP{});
            break;
        case HeadKind::PermuteNet:
            spec.layers.emplace_back(layer::GAP{});
            spec.layers.emplace_back(layer::Permute{policy});
            spec.layers.emplace_back(layer::Linear{num_outputs});
            break;
        case HeadKind::LinearBaseline:
            spec.layers.emplace_back(layer::GAP{});
            spec.layers.emplace_back(layer::Linear{num_outputs});
            break;
    }
    return spec;
}

namespace {

[[noreturn]] void invalid(const std::string& what) {
    throw Error(ErrorKind::InvalidArgument, "model spec: " + what);
}

// Layers after GAP with masks filtered out.
std::vector<const LayerSpec*> head_layers(const ModelSpec& spec, std::size_t gap) {
    std::vector<const LayerSpec*> out;
    for (std::size_t i = gap + 1; i < spec.layers.size(); ++i)
        if (!std::holds_alternative<layer::AblationMask>(spec.layers[i])) out.push_back(&spec.layers[i]);
    return out;
}

}  // namespace

void validate_spec(const ModelSpec& spec) {
    if (spec.input_shape.size() != 3) invalid("input shape must be [C,H,W]");
    for (int d : spec.input_shape)
        if (d < 1) invalid("input shape has a non-positive extent");

    std::size_t gaps = 0, gap = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (std::holds_alternative<layer::GAP>(spec.layers[i])) {
            ++gaps;
            gap = i;
        }
    if (gaps != 1) invalid("expected exactly one GAP layer, found " + std::to_string(gaps));

    int channels = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const std::string where = "layer " + std::to_string(i) + ": ";
        if (const auto* c = std::get_if<layer::Conv>(&l)) {
            if (i > gap) invalid(where + "conv after GAP");
            if (c->out_channels < 1 || c->kernel < 1 || c->stride < 1 || c->pad < 0)
                invalid(where + "conv parameters must be positive");
            kernels::check_conv2d({1, channels, h, w}, {c->out_channels, channels, c->kernel, c->kernel},
                                  {c->out_channels}, Conv2dOptions{c->stride, c->pad, c->padding});
            channels = c->out_channels;
            h = conv_out_extent(h, c->kernel, c->stride, c->pad);
            w = conv_out_extent(w, c->kernel, c->stride, c->pad);
        } else if (const auto* lin = std::get_if<layer::Linear>(&l)) {
            if (i < gap) invalid(where + "linear before GAP");
            if (lin->out_features < 1) invalid(where + "linear needs positive out_features");
            channels = lin->out_features;
        } else if (std::holds_alternative<layer::Permute>(l)) {
            if (i < gap) invalid(where + "permute before GAP");
        } else if (const auto* m = std::get_if<layer::AblationMask>(&l)) {
            if (i < gap) invalid(where + "ablation mask before GAP");
            for (int ch : m->channels)
                if (ch < 0 || ch >= channels) invalid(where + "mask channel " + std::to_string(ch) + " out of range");
        }
    }

    const auto head = head_layers(spec, gap);
    switch (spec.head) {
        case HeadKind::GapNet:
            if (gap == 0 || !std::holds_alternative<layer::Conv>(spec.layers[gap - 1]))
                invalid("gapnet requires Conv(out=K) directly before GAP");
            if (!head.empty()) invalid("gapnet allows no layers after GAP");
            break;
        case HeadKind::PermuteNet:
            if (head.size() != 2 || !std::holds_alternative<layer::Permute>(*head[0]) ||
                !std::holds_alternative<layer::Linear>(*head[1]))
                invalid("permutenet requires GAP -> Permute -> Linear(K)");
            break;
        case HeadKind::LinearBaseline:
            if (head.size() != 1 || !std::holds_alternative<layer::Linear>(*head[0]))
                invalid("linear_baseline requires GAP -> Linear(K)");
            break;
    }
}

// ---------------------------------------------------------------------------
// JSON

std::string spec_to_json(const ModelSpec& spec) {
    json layers = json::array();
    for (const LayerSpec& l : spec.layers) {
        json j;
        if (const auto* c = std::get_if<layer::Conv>(&l)) {
            j = {{"type", "conv"}, {"out_channels", c->out_channels}, {"kernel", c->kernel},
                 {"stride", c->stride}, {"padding", to_string(c->padding)}, {"pad", c->pad}};
        } else if (std::holds_alternative<layer::ReLU>(l)) {
            j = {{"type", "relu"}};
        } else if (std::holds_alternative<layer::GAP>(l)) {
            j = {{"type", "gap"}};
        } else if (const auto* p = std::get_if<layer::Permute>(&l)) {
            j = {{"type", "permute"}, {"mode", to_string(p->policy.mode)}, {"seed", p->policy.seed}};
        } else if (const auto* lin = std::get_if<layer::Linear>(&l)) {
            j = {{"type", "linear"}, {"out_features", lin->out_features}};
        } else if (const auto* m = std::get_if<layer::AblationMask>(&l)) {
            j = {{"type", "mask"}, {"channels", m->channels}};
        }
        layers.push_back(std::move(j));
    }
    json root = {{"input_shape", spec.input_shape},
                 {"head", to_string(spec.head)},
                 {"seed", spec.seed},
                 {"layers", std::move(layers)}};
    return root.dump();
}

ModelSpec spec_from_json(std::string_view text) {
    ModelSpec spec;
    try {
        const json root = json::parse(text);
        spec.input_shape = root.at("input_shape").get<Shape>();
        spec.head = parse_head_kind(root.at("head").get<std::string>());
        spec.seed = root.at("seed").get<std::uint64_t>();
        for (const json& j : root.at("layers")) {
            const std::string type = j.at("type").get<std::string>();
            if (type == "conv") {
                spec.layers.emplace_back(layer::Conv{j.at("out_channels").get<int>(), j.at("kernel").get<int>(),
                                                     j.at("stride").get<int>(),
                                                     parse_padding_mode(j.at("padding").get<std::string>()),
                                                     j.at("pad").get<int>()});
            } else if (type == "relu") {
                spec.layers.emplace_back(layer::ReLU{});
            } else if (type == "gap") {
                spec.layers.emplace_back(layer::GAP{});
            } else if (type == "permute") {
                spec.layers.emplace_back(layer::Permute{
                    PermutePolicy{parse_permute_mode(j.at("mode").get<std::string>()), j.at("seed").get<std::uint64_t>()}});
            } else if (type == "linear") {
                spec.layers.emplace_back(layer::Linear{j.at("out_features").get<int>()});
            } else if (type == "mask") {
                spec.layers.emplace_back(layer::AblationMask{j.at("channels").get<std::vector<int>>()});
            } else {
                throw Error(ErrorKind::Parse, "unknown layer type '" + type + "'");
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("model spec json: ") + e.what());
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Model

namespace {

struct ParamLayout {
    std::string name;
    Shape shape;
    int fan_in = 0;  // 0 for biases
};

std::vector<ParamLayout> parameter_layout(const ModelSpec& spec) {
    std::vector<ParamLayout> out;
    int channels = spec.input_shape[0];
    int conv_count = 0, linear_count = 0;
    for (const LayerSpec& l : spec.layers) {
        if (const auto* c = std::get_if<layer::Conv>(&l)) {
            const std::string name = "conv" + std::to_string(conv_count++);
            out.push_back({name + ".weight", {c->out_channels, channels, c->kernel, c->kernel},
                           channels * c->kernel * c->kernel});
            out.push_back({name + ".bias", {c->out_channels}, 0});
            channels = c->out_channels;
        } else if (const auto* lin = std::get_if<layer::Linear>(&l)) {
            const std::string name = "linear" + std::to_string(linear_count++);
            out.push_back({name + ".weight", {lin->out_features, channels}, channels});
            out.push_back({name + ".bias", {lin->out_features}, 0});
            channels = lin->out_features;
        }
    }
    return out;
}

}  // namespace

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
    validate_spec(spec_);
    std::uint64_t ordinal = 0;
    for (ParamLayout& p : parameter_layout(spec_)) {
        Array<float> a(std::move(p.shape));
        if (p.fan_in > 0) {
            const double bound = std::sqrt(6.0 / p.fan_in);
            Rng rng(derive_seed(spec_.seed, {ordinal++}));
            for (float& v : a.data) v = static_cast<float>(rng.uniform(-bound, bound));
        }
        params_.push_back({std::move(p.name), Tensor(std::move(a), true)});
    }
    index_layers();
}

Model::Model(ModelSpec spec, std::vector<NamedTensor> params) : spec_(std::move(spec)), params_(std::move(params)) {
    validate_spec(spec_);
    const std::vector<ParamLayout> layout = parameter_layout(spec_);
    if (layout.size() != params_.size())
        throw Error(ErrorKind::InvalidArgument, "model: expected " + std::to_string(layout.size()) +
                                                    " parameter tensors, got " + std::to_string(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Shape& got = params_[i].tensor.shape();
        if (params_[i].name != layout[i].name)
            throw Error(ErrorKind::InvalidArgument, "model: parameter " + std::to_string(i) + " named '" +
                                                        params_[i].name + "', expected '" + layout[i].name + "'");
        if (layout[i].shape != got)
            throw Error(ErrorKind::InvalidArgument, "model: parameter '" + params_[i].name + "' has shape " +
                                                        to_string(got) + ", expected " + to_string(layout[i].shape));
    }
    index_layers();
}

void Model::index_layers() {
    slots_.assign(spec_.layers.size(), Slot{});
    int next = 0;
    int channels = spec_.input_shape[0];
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerSpec& l = spec_.layers[i];
        if (const auto* c = std::get_if<layer::Conv>(&l)) {
            slots_[i] = Slot{next, next + 1};
            next += 2;
            channels = c->out_channels;
        } else if (const auto* lin = std::get_if<layer::Linear>(&l)) {
            slots_[i] = Slot{next, next + 1};
            next += 2;
            channels = lin->out_features;
        } else if (std::holds_alternative<layer::GAP>(l)) {
            gap_index_ = i;
            latent_channels_ = channels;
        }
    }
    num_outputs_ = channels;
    encoder_end_ = spec_.head == HeadKind::GapNet ? gap_index_ - 1 : gap_index_;
    feature_channels_ = spec_.input_shape[0];
    for (std::size_t i = 0; i < encoder_end_; ++i)
        if (const auto* c = std::get_if<layer::Conv>(&spec_.layers[i])) feature_channels_ = c->out_channels;
}

std::vector<Tensor> Model::parameter_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

std::vector<int> Model::permutation(int channels, std::uint64_t perm_key) const {
    for (const LayerSpec& l : spec_.layers)
        if (const auto* p = std::get_if<layer::Permute>(&l)) return p->policy.draw(channels, perm_key);
    return {};
}

ForwardOutputs<Tensor> Model::forward(Graph& graph, const Tensor& x, std::uint64_t perm_key) const {
    ForwardOutputs<Tensor> out;
    run(graph, [this](int i) -> const Tensor& { return params_[static_cast<std::size_t>(i)].tensor; }, x, 0,
        spec_.layers.size(), perm_key, &out);
    return out;
}

ForwardOutputs<Array<float>> Model::infer(const Array<float>& x, std::uint64_t perm_key) const {
    Evaluator<float> ex;
    ForwardOutputs<Array<float>> out;
    run(ex, [this](int i) -> const Array<float>& { return params_[static_cast<std::size_t>(i)].tensor.value(); },
        x, 0, spec_.layers.size(), perm_key, &out);
    return out;
}

Array<float> Model::logits(const Array<float>& x, std::uint64_t perm_key) const {
    Evaluator<float> ex;
    return run(ex, [this](int i) -> const Array<float>& { return params_[static_cast<std::size_t>(i)].tensor.value(); },
               x, 0, spec_.layers.size(), perm_key, nullptr);
}

Array<float> Model::latent(const Array<float>& x) const {
    Evaluator<float> ex;
    return run(ex, [this](int i) -> const Array<float>& { return params_[static_cast<std::size_t>(i)].tensor.value(); },
               x, 0, gap_index_ + 1, 0, nullptr);
}

Array<float> Model::features(const Array<float>& x) const {
    if (encoder_end_ == 0) throw Error(ErrorKind::InvalidArgument, "model has no encoder layers before its head");
    Evaluator<float> ex;
    return run(ex, [this](int i) -> const Array<float>& { return params_[static_cast<std::size_t>(i)].tensor.value(); },
               x, 0, encoder_end_, 0, nullptr);
}

ForwardOutputs<Array<double>> Model::forward_f64(std::span<const Array<double>> params, const Array<double>& x,
                                                 std::uint64_t perm_key, std::uint64_t* relu_region) const {
    Evaluator<double> ex;
    ex.relu_region = relu_region;
    ForwardOutputs<Array<double>> out;
    run(ex, [params](int i) -> const Array<double>& { return params[static_cast<std::size_t>(i)]; }, x, 0,
        spec_.layers.size(), perm_key, &out);
    return out;
}

Model Model::clone() const {
    std::vector<NamedTensor> copy;
    copy.reserve(params_.size());
    for (const auto& p : params_) copy.push_back({p.name, Tensor(p.tensor.value(), p.tensor.requires_grad())});
    return Model(spec_, std::move(copy));
}

Model flip_kernels(const Model& model) {
    Model out = model.clone();
    for (const auto& p : out.parameters()) {
        const Shape& s = p.tensor.shape();
        if (s.size() != 4) continue;
        const int kw = s[3];
        Tensor handle = p.tensor;
        std::span<float> d = handle.mutable_data();
        for (std::size_t row = 0; row < d.size(); row += static_cast<std::size_t>(kw))
            std::reverse(d.begin() + static_cast<std::ptrdiff_t>(row),
                         d.begin() + static_cast<std::ptrdiff_t>(row) + kw);
    }
    return out;
}

Model with_ablation(const Model& model, std::vector<int> channels) {
    ModelSpec spec = model.spec();
    spec.layers.insert(spec.layers.begin() + static_cast<std::ptrdiff_t>(model.gap_index()) + 1,
                       layer::AblationMask{std::move(channels)});
    std::vector<NamedTensor> params(model.parameters().begin(), model.parameters().end());
    return Model(std::move(spec), std::move(params));
}

GradCheckReport grad_check(const Model& model, const Array<float>& x, std::span<const int> labels,
                           const GradCheckOptions& options, std::uint64_t perm_key) {
    std::vector<int> l(labels.begin(), labels.end());
    const Array<double> x64 = cast<double>(x);
    return grad_check(
        model.parameters(),
        [&](Graph& g) { return g.softmax_cross_entropy(model.forward(g, Tensor(x), perm_key).logits, l); },
        [&](std::span<const Array<double>> params) {
            ReferenceValue r;
            const auto out = model.forward_f64(params, x64, perm_key, &r.region);
            r.loss = kernels::softmax_cross_entropy(out.logits, std::span<const int>(l));
            return r;
        },
        options);
}

}  // namespace pospool
