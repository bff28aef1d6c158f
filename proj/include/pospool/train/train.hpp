#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pospool/data/grid.hpp"
#include "pospool/nn/model.hpp"
#include "pospool/train/optimizer.hpp"

namespace pospool {

struct TrainConfig {
    Task task = Task::Location;
    int epochs = 20;
    int batch_size = 64;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double lambda = 1.0;
    int max_shift = 8;
    std::uint64_t seed = 0;
    // Stop once validation accuracy has not improved for this many epochs;
    // 0 disables. Needs a validation set.
    int patience = 0;

    // Throws Error(Config) unless lr > 0, lambda >= 0, epochs >= 1,
    // batch_size >= 1, max_shift >= 0 and patience >= 0.
    void validate() const;
};

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0;
    double train_acc = 0;
    std::optional<double> val_acc;
    std::optional<double> mse_term;
    double wall_ms = 0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;

    // Header epoch,train_loss,train_acc,val_acc,mse_term,wall_ms; absent
    // values are empty fields.
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

// Called after every epoch, e.g. for progress output.
using EpochCallback = std::function<void(const TrainLogRow&)>;

// Cross-entropy training. Each epoch visits the samples in an order drawn
// from (seed, epoch); the last partial batch is kept. PermuteNet draws its
// shuffle keyed on the global step. Throws before any update when the
// model's output count or input shape does not fit the dataset and task.
TrainLog train(Model& model, const GridDataset& train_set, const GridDataset* val_set, const TrainConfig& cfg,
               const EpochCallback& on_epoch = {});

// Per batch: two shifted copies of every image, loss
// CE(y1) + CE(y2) + lambda * MSE(z1, z2) with z the post-GAP latents.
TrainLog train_augshift(Model& model, const GridDataset& train_set, const GridDataset* val_set,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Autograd form of the AugShift objective on fixed shifted batches.
Tensor augshift_loss(Graph& graph, const Model& model, const Tensor& x1, const Tensor& x2, std::span<const int> labels,
                     double lambda, std::uint64_t perm_key);
double augshift_loss_f64(const Model& model, std::span<const Array<double>> params, const Array<double>& x1,
                         const Array<double>& x2, std::span<const int> labels, double lambda, std::uint64_t perm_key,
                         std::uint64_t* relu_region = nullptr);

GradCheckReport grad_check_augshift(const Model& model, const Array<float>& x1, const Array<float>& x2,
                                    std::span<const int> labels, double lambda, const GradCheckOptions& options = {},
                                    std::uint64_t perm_key = 0);

// Base of the permutation keys used at evaluation time; batch b uses
// kEvalKeyBase + b, disjoint from training step keys.
inline constexpr std::uint64_t kEvalKeyBase = 1ULL << 62;

// Argmax predictions over the dataset in batches.
std::vector<int> predict(const Model& model, const GridDataset& data, int batch_size = 64);
double accuracy(std::span<const int> predictions, std::span<const int> labels);
double evaluate_accuracy(const Model& model, const GridDataset& data, Task task, int batch_size = 64);

// Row-wise argmax with ties going to the lowest index.
std::vector<int> argmax_rows(const Array<float>& logits);

// 1x1 conv + GAP trained on top of a frozen encoder's feature map. With
// shuffle set, the feature channels are permuted (resampled per batch)
// before the conv.
struct ReadoutHead {
    Tensor weight;  // [K, C, 1, 1]
    Tensor bias;    // [K]
    bool shuffle = false;
    PermutePolicy policy;

    Tensor forward(Graph& graph, const Tensor& features, std::uint64_t perm_key) const;
    Array<float> logits(const Array<float>& features, std::uint64_t perm_key) const;
};

struct FrozenReadoutResult {
    ReadoutHead head;
    TrainLog log;
};

// Trains only the readout. The encoder is never written to. Throws when the
// encoder has no convolutional feature map before its head.
FrozenReadoutResult train_frozen_readout(const Model& encoder, const GridDataset& train_set,
                                         const GridDataset* val_set, bool shuffle, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {});

double evaluate_readout(const Model& encoder, const ReadoutHead& head, const GridDataset& data, Task task,
                        int batch_size = 64);

// The encoder and a trained readout as one model: encoder -> GAP -> Linear,
// with the readout's Permute ahead of the Linear when it shuffles. GAP
// commutes with the 1x1 conv, so the logits agree with the readout's up to
// rounding. Parameters are copied.
Model readout_model(const Model& encoder, const ReadoutHead& head);

}  // namespace pospool
