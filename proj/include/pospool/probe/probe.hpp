#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pospool/data/grid.hpp"
#include "pospool/nn/model.hpp"

namespace pospool {

// What the probes need from a network. Tests substitute stubs.
class ProbeTarget {
public:
    virtual ~ProbeTarget() = default;
    // [N, K] class scores. `key` picks the shuffle of models that permute
    // channels; both inputs of a compared pair are run with the same key.
    virtual Array<float> logits(const Array<float>& x, std::uint64_t key) const = 0;
    // [N, C] post-GAP latent.
    virtual Array<float> latent(const Array<float>& x) const = 0;
};

class ModelTarget final : public ProbeTarget {
public:
    explicit ModelTarget(const Model& model) : model_(model) {}
    Array<float> logits(const Array<float>& x, std::uint64_t key) const override { return model_.logits(x, key); }
    Array<float> latent(const Array<float>& x) const override { return model_.latent(x); }

private:
    const Model& model_;
};

// ---------------------------------------------------------------------------
// Shift consistency

struct ConsistencyReport {
    int shift = 0;
    int trials = 0;
    double consistency = 0;  // fraction in [0, 1]
};

// For every image and trial, draws two shifts uniform on [-shift, shift]^2
// (zero fill) from a stream keyed on (seed, image, trial) and checks whether
// the argmax class agrees. Throws on an empty dataset, trials < 1, or a shift
// outside [0, canvas side).
ConsistencyReport consistency(const ProbeTarget& target, const GridDataset& data, int shift, int trials,
                              std::uint64_t seed, int batch_size = 64);
ConsistencyReport consistency(const Model& model, const GridDataset& data, int shift, int trials,
                              std::uint64_t seed, int batch_size = 64);

std::string consistency_csv(std::span<const ConsistencyReport> reports);
std::vector<ConsistencyReport> parse_consistency_csv(std::string_view text);

// ---------------------------------------------------------------------------
// Channel rankings

enum class RankMode { Abs, SignedLeft, SignedRight, KernelFlip1, KernelFlip2 };

const char* to_string(RankMode mode);
RankMode parse_rank_mode(std::string_view text);

struct NeuronRanking {
    RankMode mode = RankMode::Abs;
    std::vector<double> scores;  // per channel
    std::vector<int> order;      // channels by descending score, ties by index

    static NeuronRanking from_scores(RankMode mode, std::vector<double> scores);
    int channels() const { return static_cast<int>(scores.size()); }
    // First n entries of order.
    std::vector<int> top(int n) const;
};

// Rows rank,channel,score,mode for every ranking in turn.
std::string rankings_csv(std::span<const NeuronRanking> rankings);
std::vector<NeuronRanking> parse_rankings_csv(std::string_view text);

// Per-channel mean over the dataset of |a - b| (absolute) or a - b, where
// a = latent_a(x) and b = latent_b(x) for each batch x.
using LatentFn = std::function<Array<float>(const Array<float>&)>;
std::vector<double> mean_latent_difference(const GridDataset& data, const LatentFn& latent_a, const LatentFn& latent_b,
                                           bool absolute, int batch_size = 64);

// a = latent(x), b = latent(hflip(x)), mean |a - b|.
NeuronRanking rank_abs(const ProbeTarget& target, const GridDataset& data, int batch_size = 64);

enum class Side { Left, Right };

// Signed mean of latent(x) - latent(hflip(x)) over a region subset; `side`
// names the subset in the ranking's mode.
NeuronRanking rank_signed(const ProbeTarget& target, const GridDataset& region_subset, Side side,
                          int batch_size = 64);

// Variant 1: a = flipped(x), b = flipped(hflip(x)). Variant 2: a = model(x),
// b = flipped(x). Flipped is the model with width-reversed kernels. Both rank
// by mean |a - b|.
NeuronRanking rank_kernel_flip(const Model& model, const GridDataset& data, int variant, int batch_size = 64);

// ---------------------------------------------------------------------------
// Ablation

enum class Selection { Ranked, Random };

const char* to_string(Selection selection);
Selection parse_selection(std::string_view text);

struct AblationRow {
    Selection selection = Selection::Ranked;
    std::string mode;
    int top_n = 0;
    Region region = Region::All;
    double accuracy = 0;
    double baseline_accuracy = 0;
    double delta = 0;  // accuracy - baseline_accuracy
    std::optional<std::uint64_t> seed;  // random selections only

    bool operator==(const AblationRow&) const = default;
};

struct AblationReport {
    std::vector<AblationRow> rows;

    // Header selection,mode,top_n,region,accuracy,baseline_accuracy,delta,seed.
    std::string to_csv() const;
    static AblationReport from_csv(std::string_view text);

    // Mean accuracy over the matching rows (all seeds for random rows);
    // throws when nothing matches.
    double mean_accuracy(Selection selection, std::string_view mode, int top_n, Region region) const;
};

// Accuracy of `model` on `data` with the post-GAP channels `channels`
// zeroed, restricted to each region. Labels come from `task`.
std::vector<double> region_accuracies(const Model& model, const std::vector<int>& channels, const GridDataset& data,
                                      std::span<const Region> regions, Task task = Task::Location,
                                      int batch_size = 64);

// For each N in top_n: zero the top N channels of `ranking`, and, for every
// seed in random_seeds, N channels from a seeded random order (nested in N).
// Throws when some N is negative or exceeds the latent width, or a region
// has no samples.
AblationReport ablate_eval(const Model& model, const NeuronRanking& ranking, std::span<const int> top_n,
                           const GridDataset& data, std::span<const Region> regions,
                           std::span<const std::uint64_t> random_seeds, Task task = Task::Location,
                           int batch_size = 64);

// For each N: ablate the top N of the left ranking, then of the right
// ranking, and evaluate left- and right-region accuracy after each.
AblationReport region_attack_eval(const Model& model, const NeuronRanking& left, const NeuronRanking& right,
                                  std::span<const int> top_n, const GridDataset& data, int batch_size = 64);

// ---------------------------------------------------------------------------
// Output

struct ProbeReports {
    std::vector<NeuronRanking> rankings;
    std::vector<ConsistencyReport> consistency;
    AblationReport ablation;
    AblationReport region_attack;
};

// Writes rankings.csv, consistency.csv, ablation.csv and region_attack.csv
// (header only when empty) and returns their paths.
std::vector<std::filesystem::path> emit_reports(const ProbeReports& reports, const std::filesystem::path& out_dir);

// Writes `text` to `path`, creating parent directories; throws Error(Io) on
// failure.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace pospool
