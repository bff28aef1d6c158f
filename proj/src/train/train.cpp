#include "pospool/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pospool/data/transforms.hpp"
#include "pospool/rng.hpp"

namespace pospool {

namespace {

using Clock = std::chrono::steady_clock;

// Stream tags for derive_seed so that the different random choices made
// during training never share a stream.
constexpr std::uint64_t kOrderStream = 0x0a;
constexpr std::uint64_t kShiftStream = 0x5f;
constexpr std::uint64_t kReadoutInitStream = 0x1d;
constexpr std::uint64_t kReadoutPermStream = 0x2e;

std::string format_number(double v, const char* fmt = "%.9g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

void check_fit(const Model& model, const GridDataset& data, Task task, const char* recipe) {
    const int want = data.num_classes(task);
    if (model.num_outputs() != want)
        throw Error(ErrorKind::InvalidArgument, std::string(recipe) + ": model has " +
                                                    std::to_string(model.num_outputs()) + " outputs but the " +
                                                    to_string(task) + " task has " + std::to_string(want) +
                                                    " classes");
    if (model.spec().input_shape != data.sample_shape())
        throw Error(ErrorKind::InvalidArgument, std::string(recipe) + ": model input " +
                                                    to_string(model.spec().input_shape) + " does not match samples " +
                                                    to_string(data.sample_shape()));
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng(derive_seed(seed, {kOrderStream, static_cast<std::uint64_t>(epoch)})).shuffle(order);
    return order;
}

std::size_t count_correct(const Array<float>& logits, std::span<const int> labels) {
    const std::vector<int> pred = argmax_rows(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    return correct;
}

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Tracks validation accuracy for early stopping.
struct Plateau {
    int patience;
    double best = -1;
    int stale = 0;

    bool should_stop(const TrainLogRow& row) {
        if (patience <= 0 || !row.val_acc) return false;
        if (*row.val_acc > best) {
            best = *row.val_acc;
            stale = 0;
            return false;
        }
        return ++stale >= patience;
    }
};

struct AugShiftTerms {
    Tensor total;
    Tensor mse;
    Tensor logits1;
    Tensor logits2;
};

AugShiftTerms augshift_terms(Graph& g, const Model& model, const Tensor& x1, const Tensor& x2,
                             std::span<const int> labels, double lambda, std::uint64_t perm_key) {
    const auto o1 = model.forward(g, x1, perm_key);
    const auto o2 = model.forward(g, x2, perm_key);
    const Tensor ce1 = g.softmax_cross_entropy(o1.logits, labels);
    const Tensor ce2 = g.softmax_cross_entropy(o2.logits, labels);
    const Tensor mse = g.mse_loss(o1.latent, o2.latent);
    return {g.add(g.add(ce1, ce2), g.scale(mse, lambda)), mse, o1.logits, o2.logits};
}

// Shifts every image of `batch` by its own draw from the per-sample stream.
std::pair<Array<float>, Array<float>> shifted_pair(const Array<float>& batch, std::span<const std::size_t> ids,
                                                   int max_shift, std::uint64_t seed, int epoch) {
    Array<float> x1(batch.shape), x2(batch.shape);
    const Shape one(batch.shape.begin() + 1, batch.shape.end());
    const std::size_t per = numel(one);
    Array<float> image(one);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        std::copy_n(batch.ptr() + k * per, per, image.ptr());
        const auto pair =
            augshift_pair(image, max_shift, derive_seed(seed, {kShiftStream, static_cast<std::uint64_t>(epoch), ids[k]}));
        std::copy(pair.x1.data.begin(), pair.x1.data.end(), x1.ptr() + k * per);
        std::copy(pair.x2.data.begin(), pair.x2.data.end(), x2.ptr() + k * per);
    }
    return {std::move(x1), std::move(x2)};
}

// Pulls rows `ids` out of an [N, ...] array.
Array<float> gather_rows(const Array<float>& all, std::span<const std::size_t> ids) {
    Shape shape = all.shape;
    shape[0] = static_cast<int>(ids.size());
    Array<float> out(shape);
    const std::size_t per = all.size() / static_cast<std::size_t>(all.dim(0));
    for (std::size_t k = 0; k < ids.size(); ++k) std::copy_n(all.ptr() + ids[k] * per, per, out.ptr() + k * per);
    return out;
}

Array<float> encode_all(const Model& encoder, const GridDataset& data, Task task, int batch_size,
                        std::vector<int>* labels) {
    Array<float> all;
    std::size_t per = 0;
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - first);
        Batch b = data.batch_range(first, count, task);
        const Array<float> f = encoder.features(b.x);
        if (all.shape.empty()) {
            all.shape = f.shape;
            all.shape[0] = static_cast<int>(data.size());
            per = f.size() / count;
            all.data.resize(per * data.size());
        }
        std::copy(f.data.begin(), f.data.end(), all.ptr() + first * per);
        labels->insert(labels->end(), b.labels.begin(), b.labels.end());
    }
    return all;
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (!(lr > 0)) fail("lr must be > 0, got " + format_number(lr));
    if (!(lambda >= 0)) fail("lambda must be >= 0, got " + format_number(lambda));
    if (epochs < 1) fail("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) fail("batch_size must be >= 1, got " + std::to_string(batch_size));
    if (max_shift < 0) fail("max_shift must be >= 0, got " + std::to_string(max_shift));
    if (patience < 0) fail("patience must be >= 0, got " + std::to_string(patience));
}

std::string TrainLog::to_csv() const {
    std::string out = "epoch,train_loss,train_acc,val_acc,mse_term,wall_ms\n";
    for (const TrainLogRow& r : rows) {
        out += std::to_string(r.epoch) + ',' + format_number(r.train_loss) + ',' + format_number(r.train_acc) + ',';
        if (r.val_acc) out += format_number(*r.val_acc);
        out += ',';
        if (r.mse_term) out += format_number(*r.mse_term);
        out += ',' + format_number(r.wall_ms, "%.1f") + '\n';
    }
    return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out << to_csv();
}

std::vector<int> argmax_rows(const Array<float>& logits) {
    require_rank(logits, 2, "argmax", "logits");
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = logits.ptr() + static_cast<std::size_t>(i) * k;
        out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

std::vector<int> predict(const Model& model, const GridDataset& data, int batch_size) {
    std::vector<int> out;
    out.reserve(data.size());
    std::uint64_t b = 0;
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch_size), ++b) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - first);
        const Batch batch = data.batch_range(first, count, Task::Location);
        const std::vector<int> p = argmax_rows(model.logits(batch.x, kEvalKeyBase + b));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw Error(ErrorKind::InvalidArgument, "accuracy: prediction and label counts differ");
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const Model& model, const GridDataset& data, Task task, int batch_size) {
    return accuracy(predict(model, data, batch_size), data.labels(task));
}

TrainLog train(Model& model, const GridDataset& train_set, const GridDataset* val_set, const TrainConfig& cfg,
               const EpochCallback& on_epoch) {
    cfg.validate();
    check_fit(model, train_set, cfg.task, "train");
    if (val_set) check_fit(model, *val_set, cfg.task, "train");
    Optimizer opt(cfg.optimizer, cfg.lr, model.parameter_tensors());
    TrainLog log;
    Plateau plateau{cfg.patience};
    std::uint64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto order = epoch_order(cfg.seed, epoch, train_set.size());
        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - first);
            const std::span<const std::size_t> ids(order.data() + first, count);
            Batch batch = train_set.batch(ids, cfg.task);
            Graph g;
            opt.zero_grad();
            const auto out = model.forward(g, Tensor(std::move(batch.x)), step++);
            const Tensor loss = g.softmax_cross_entropy(out.logits, batch.labels);
            g.backward(loss);
            opt.step();
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(count);
            correct += count_correct(out.logits.value(), batch.labels);
        }
        TrainLogRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(order.size());
        row.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        if (val_set) row.val_acc = evaluate_accuracy(model, *val_set, cfg.task, cfg.batch_size);
        row.wall_ms = elapsed_ms(start);
        log.rows.push_back(row);
        if (on_epoch) on_epoch(row);
        if (plateau.should_stop(row)) break;
    }
    return log;
}

Tensor augshift_loss(Graph& graph, const Model& model, const Tensor& x1, const Tensor& x2, std::span<const int> labels,
                     double lambda, std::uint64_t perm_key) {
    return augshift_terms(graph, model, x1, x2, labels, lambda, perm_key).total;
}

double augshift_loss_f64(const Model& model, std::span<const Array<double>> params, const Array<double>& x1,
                         const Array<double>& x2, std::span<const int> labels, double lambda, std::uint64_t perm_key,
                         std::uint64_t* relu_region) {
    const auto o1 = model.forward_f64(params, x1, perm_key, relu_region);
    const auto o2 = model.forward_f64(params, x2, perm_key, relu_region);
    return kernels::softmax_cross_entropy(o1.logits, labels) + kernels::softmax_cross_entropy(o2.logits, labels) +
           lambda * kernels::mse(o1.latent, o2.latent);
}

GradCheckReport grad_check_augshift(const Model& model, const Array<float>& x1, const Array<float>& x2,
                                    std::span<const int> labels, double lambda, const GradCheckOptions& options,
                                    std::uint64_t perm_key) {
    const Array<double> a = cast<double>(x1), b = cast<double>(x2);
    return grad_check(
        model.parameters(),
        [&](Graph& g) { return augshift_loss(g, model, Tensor(x1), Tensor(x2), labels, lambda, perm_key); },
        [&](std::span<const Array<double>> params) {
            ReferenceValue r;
            r.loss = augshift_loss_f64(model, params, a, b, labels, lambda, perm_key, &r.region);
            return r;
        },
        options);
}

TrainLog train_augshift(Model& model, const GridDataset& train_set, const GridDataset* val_set,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    check_fit(model, train_set, cfg.task, "train_augshift");
    if (val_set) check_fit(model, *val_set, cfg.task, "train_augshift");
    Optimizer opt(cfg.optimizer, cfg.lr, model.parameter_tensors());
    TrainLog log;
    Plateau plateau{cfg.patience};
    std::uint64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto order = epoch_order(cfg.seed, epoch, train_set.size());
        double loss_sum = 0, mse_sum = 0;
        std::size_t correct = 0;
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - first);
            const std::span<const std::size_t> ids(order.data() + first, count);
            const Batch batch = train_set.batch(ids, cfg.task);
            auto [x1, x2] = shifted_pair(batch.x, ids, cfg.max_shift, cfg.seed, epoch);
            Graph g;
            opt.zero_grad();
            const AugShiftTerms t = augshift_terms(g, model, Tensor(std::move(x1)), Tensor(std::move(x2)),
                                                   batch.labels, cfg.lambda, step++);
            g.backward(t.total);
            opt.step();
            loss_sum += static_cast<double>(t.total.item()) * static_cast<double>(count);
            mse_sum += static_cast<double>(t.mse.item()) * static_cast<double>(count);
            correct += count_correct(t.logits1.value(), batch.labels) + count_correct(t.logits2.value(), batch.labels);
        }
        const auto n = static_cast<double>(order.size());
        TrainLogRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / n;
        row.train_acc = static_cast<double>(correct) / (2 * n);
        row.mse_term = mse_sum / n;
        if (val_set) row.val_acc = evaluate_accuracy(model, *val_set, cfg.task, cfg.batch_size);
        row.wall_ms = elapsed_ms(start);
        log.rows.push_back(row);
        if (on_epoch) on_epoch(row);
        if (plateau.should_stop(row)) break;
    }
    return log;
}

Tensor ReadoutHead::forward(Graph& graph, const Tensor& features, std::uint64_t perm_key) const {
    Tensor f = features;
    if (shuffle) f = graph.channel_permute(f, policy.draw(features.shape()[1], perm_key));
    return graph.global_avg_pool(graph.conv2d(f, weight, bias, Conv2dOptions{1, 0, PaddingMode::Zero}));
}

Array<float> ReadoutHead::logits(const Array<float>& features, std::uint64_t perm_key) const {
    Evaluator<float> ex;
    Array<float> f = shuffle ? ex.channel_permute(features, policy.draw(features.dim(1), perm_key)) : features;
    return ex.global_avg_pool(ex.conv2d(f, weight.value(), bias.value(), Conv2dOptions{1, 0, PaddingMode::Zero}));
}

namespace {

// Batch b of the evaluation uses permutation key kEvalKeyBase + b.
double readout_accuracy(const ReadoutHead& head, const Array<float>& features, std::span<const int> labels,
                        int batch_size) {
    std::vector<int> predictions;
    const std::size_t n = labels.size();
    std::uint64_t b = 0;
    for (std::size_t first = 0; first < n; first += static_cast<std::size_t>(batch_size), ++b) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n - first);
        std::vector<std::size_t> ids(count);
        for (std::size_t k = 0; k < count; ++k) ids[k] = first + k;
        const std::vector<int> p = argmax_rows(head.logits(gather_rows(features, ids), kEvalKeyBase + b));
        predictions.insert(predictions.end(), p.begin(), p.end());
    }
    return accuracy(predictions, labels);
}

}  // namespace

FrozenReadoutResult train_frozen_readout(const Model& encoder, const GridDataset& train_set,
                                         const GridDataset* val_set, bool shuffle, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch) {
    cfg.validate();
    if (encoder.encoder_end() == 0)
        throw Error(ErrorKind::InvalidArgument, "frozen readout: encoder has no feature map before its head");
    if (encoder.spec().input_shape != train_set.sample_shape())
        throw Error(ErrorKind::InvalidArgument, "frozen readout: encoder input " +
                                                    to_string(encoder.spec().input_shape) + " does not match samples " +
                                                    to_string(train_set.sample_shape()));
    const int classes = train_set.num_classes(cfg.task);
    std::vector<int> train_labels;
    const Array<float> train_features = encode_all(encoder, train_set, cfg.task, cfg.batch_size, &train_labels);
    const int channels = train_features.dim(1);
    std::vector<int> val_labels;
    const Array<float> val_features =
        val_set ? encode_all(encoder, *val_set, cfg.task, cfg.batch_size, &val_labels) : Array<float>();

    FrozenReadoutResult result;
    ReadoutHead& head = result.head;
    head.shuffle = shuffle;
    head.policy = PermutePolicy{PermuteMode::ResamplePerBatch, derive_seed(cfg.seed, {kReadoutPermStream})};
    Array<float> w({classes, channels, 1, 1});
    Rng init(derive_seed(cfg.seed, {kReadoutInitStream}));
    const double bound = std::sqrt(1.0 / channels);
    for (float& v : w.data) v = static_cast<float>(init.uniform(-bound, bound));
    head.weight = Tensor(std::move(w), true);
    head.bias = Tensor(Array<float>({classes}), true);

    Optimizer opt(cfg.optimizer, cfg.lr, {head.weight, head.bias});
    Plateau plateau{cfg.patience};
    std::uint64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto order = epoch_order(cfg.seed, epoch, train_set.size());
        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - first);
            const std::span<const std::size_t> ids(order.data() + first, count);
            std::vector<int> labels(count);
            for (std::size_t k = 0; k < count; ++k) labels[k] = train_labels[ids[k]];
            Graph g;
            opt.zero_grad();
            const Tensor logits = head.forward(g, Tensor(gather_rows(train_features, ids)), step++);
            const Tensor loss = g.softmax_cross_entropy(logits, labels);
            g.backward(loss);
            opt.step();
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(count);
            correct += count_correct(logits.value(), labels);
        }
        TrainLogRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(order.size());
        row.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        if (val_set) row.val_acc = readout_accuracy(head, val_features, val_labels, cfg.batch_size);
        row.wall_ms = elapsed_ms(start);
        result.log.rows.push_back(row);
        if (on_epoch) on_epoch(row);
        if (plateau.should_stop(row)) break;
    }
    return result;
}

double evaluate_readout(const Model& encoder, const ReadoutHead& head, const GridDataset& data, Task task,
                        int batch_size) {
    std::vector<int> labels;
    const Array<float> features = encode_all(encoder, data, task, batch_size, &labels);
    return readout_accuracy(head, features, labels, batch_size);
}

Model readout_model(const Model& encoder, const ReadoutHead& head) {
    const int classes = head.weight.shape()[0];
    const int channels = head.weight.shape()[1];
    if (channels != encoder.feature_channels())
        throw Error(ErrorKind::InvalidArgument, "readout_model: readout expects " + std::to_string(channels) +
                                                    " channels, encoder has " + std::to_string(encoder.feature_channels()));
    ModelSpec spec;
    spec.input_shape = encoder.spec().input_shape;
    spec.seed = encoder.spec().seed;
    spec.head = head.shuffle ? HeadKind::PermuteNet : HeadKind::LinearBaseline;
    std::vector<NamedTensor> params;
    std::size_t next_param = 0;
    for (std::size_t i = 0; i < encoder.encoder_end(); ++i) {
        spec.layers.push_back(encoder.spec().layers[i]);
        if (std::holds_alternative<layer::Conv>(spec.layers.back()))
            for (int k = 0; k < 2; ++k, ++next_param) {
                const auto& p = encoder.parameters()[next_param];
                params.push_back({p.name, Tensor(p.tensor.value(), true)});
            }
    }
    spec.layers.push_back(layer::GAP{});
    if (head.shuffle) spec.layers.push_back(layer::Permute{head.policy});
    spec.layers.push_back(layer::Linear{classes});
    Array<float> w = head.weight.value();
    w.shape = {classes, channels};
    params.push_back({"linear0.weight", Tensor(std::move(w), true)});
    params.push_back({"linear0.bias", Tensor(head.bias.value(), true)});
    return Model(std::move(spec), std::move(params));
}

}  // namespace pospool
