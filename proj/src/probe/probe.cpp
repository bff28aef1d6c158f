#include "pospool/probe/probe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "pospool/data/transforms.hpp"
#include "pospool/error.hpp"
#include "pospool/rng.hpp"
#include "pospool/train/train.hpp"

namespace pospool {

namespace {

constexpr std::uint64_t kRandomSelectionStream = 0x7a;

[[noreturn]] void invalid(const std::string& message) { throw Error(ErrorKind::InvalidArgument, message); }

// Shortest text that parses back to the same double.
std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// Data lines of a CSV whose first line must equal `header`.
std::vector<std::vector<std::string_view>> csv_rows(std::string_view text, std::string_view header,
                                                    std::size_t fields) {
    std::vector<std::vector<std::string_view>> rows;
    std::size_t line_no = 0;
    for (std::string_view line : split(text, '\n')) {
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line_no++ == 0) {
            if (line != header) throw ParseError("csv: expected header '" + std::string(header) + "'");
            continue;
        }
        if (line.empty()) continue;
        auto cols = split(line, ',');
        if (cols.size() != fields)
            throw ParseError("csv: line " + std::to_string(line_no) + " has " + std::to_string(cols.size()) +
                                 " fields, expected " + std::to_string(fields),
                             line_no - 2);
        rows.push_back(std::move(cols));
    }
    if (line_no == 0) throw ParseError("csv: empty input");
    return rows;
}

template <class T>
T parse_number(std::string_view s) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError("csv: bad number '" + std::string(s) + "'");
    return v;
}

Region parse_region(std::string_view s) {
    for (Region r : {Region::All, Region::Left, Region::Right, Region::Center})
        if (s == to_string(r)) return r;
    throw ParseError("csv: unknown region '" + std::string(s) + "'");
}

void check_not_empty(const GridDataset& data, const char* op) {
    if (data.size() == 0) invalid(std::string(op) + ": empty dataset");
}

void put_image(Array<float>& batch, std::size_t k, const Array<float>& image) {
    std::copy(image.data.begin(), image.data.end(), batch.ptr() + k * image.size());
}

// Predictions of the (possibly ablated) model over the whole dataset.
std::vector<int> predictions(const Model& model, const std::vector<int>& channels, const GridDataset& data,
                             int batch_size) {
    if (channels.empty()) return predict(model, data, batch_size);
    return predict(with_ablation(model, channels), data, batch_size);
}

double region_accuracy(std::span<const int> pred, std::span<const int> labels, const GridDataset& data,
                       Region region) {
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!column_in_region(data.col(i), data.grid_n(), region)) continue;
        ++total;
        correct += pred[i] == labels[i];
    }
    if (total == 0) invalid(std::string("ablation: region '") + to_string(region) + "' has no samples");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void check_top_n(std::span<const int> top_n, int channels) {
    for (int n : top_n)
        if (n < 0 || n > channels)
            invalid("ablation: top_n " + std::to_string(n) + " outside [0, " + std::to_string(channels) + "]");
}

}  // namespace

// ---------------------------------------------------------------------------

ConsistencyReport consistency(const ProbeTarget& target, const GridDataset& data, int shift, int trials,
                              std::uint64_t seed, int batch_size) {
    check_not_empty(data, "consistency");
    if (trials < 1) invalid("consistency: trials must be >= 1, got " + std::to_string(trials));
    if (shift < 0 || shift >= data.canvas_side())
        invalid("consistency: shift " + std::to_string(shift) + " outside [0, " + std::to_string(data.canvas_side()) +
                ")");
    if (batch_size < 1) invalid("consistency: batch_size must be >= 1");

    const std::size_t total = data.size() * static_cast<std::size_t>(trials);
    Shape shape = data.sample_shape();
    shape.insert(shape.begin(), 0);
    std::size_t agree = 0;
    std::uint64_t chunk = 0;
    for (std::size_t first = 0; first < total; first += static_cast<std::size_t>(batch_size), ++chunk) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), total - first);
        shape[0] = static_cast<int>(count);
        Array<float> x1(shape), x2(shape);
        Array<float> image(data.sample_shape());
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t pair = first + k;
            const std::size_t i = pair / static_cast<std::size_t>(trials);
            const std::size_t t = pair % static_cast<std::size_t>(trials);
            data.render(i, image.ptr());
            const auto [s1, s2] = draw_shift_pair(shift, derive_seed(seed, {i, t}));
            put_image(x1, k, shift_image(image, s1.dx, s1.dy));
            put_image(x2, k, shift_image(image, s2.dx, s2.dy));
        }
        const std::uint64_t key = kEvalKeyBase + chunk;
        const auto p1 = argmax_rows(target.logits(x1, key));
        const auto p2 = argmax_rows(target.logits(x2, key));
        for (std::size_t k = 0; k < count; ++k) agree += p1[k] == p2[k];
    }
    return {shift, trials, static_cast<double>(agree) / static_cast<double>(total)};
}

ConsistencyReport consistency(const Model& model, const GridDataset& data, int shift, int trials,
                              std::uint64_t seed, int batch_size) {
    return consistency(ModelTarget(model), data, shift, trials, seed, batch_size);
}

std::string consistency_csv(std::span<const ConsistencyReport> reports) {
    std::string out = "shift,trials,consistency\n";
    for (const auto& r : reports)
        out += std::to_string(r.shift) + ',' + std::to_string(r.trials) + ',' + format_double(r.consistency) + '\n';
    return out;
}

std::vector<ConsistencyReport> parse_consistency_csv(std::string_view text) {
    std::vector<ConsistencyReport> out;
    for (const auto& f : csv_rows(text, "shift,trials,consistency", 3))
        out.push_back({parse_number<int>(f[0]), parse_number<int>(f[1]), parse_number<double>(f[2])});
    return out;
}

// ---------------------------------------------------------------------------

const char* to_string(RankMode mode) {
    switch (mode) {
        case RankMode::Abs: return "abs";
        case RankMode::SignedLeft: return "signed_left";
        case RankMode::SignedRight: return "signed_right";
        case RankMode::KernelFlip1: return "kernel_flip_1";
        case RankMode::KernelFlip2: return "kernel_flip_2";
    }
    return "abs";
}

RankMode parse_rank_mode(std::string_view text) {
    for (RankMode m : {RankMode::Abs, RankMode::SignedLeft, RankMode::SignedRight, RankMode::KernelFlip1,
                       RankMode::KernelFlip2})
        if (text == to_string(m)) return m;
    invalid("unknown ranking mode '" + std::string(text) +
            "' (expected abs, signed_left, signed_right, kernel_flip_1 or kernel_flip_2)");
}

NeuronRanking NeuronRanking::from_scores(RankMode mode, std::vector<double> scores) {
    NeuronRanking r;
    r.mode = mode;
    r.scores = std::move(scores);
    r.order.resize(r.scores.size());
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](int a, int b) { return r.scores[static_cast<std::size_t>(a)] > r.scores[static_cast<std::size_t>(b)]; });
    return r;
}

std::vector<int> NeuronRanking::top(int n) const {
    if (n < 0 || n > channels())
        invalid("ranking: top " + std::to_string(n) + " of " + std::to_string(channels()) + " channels");
    return {order.begin(), order.begin() + n};
}

std::string rankings_csv(std::span<const NeuronRanking> rankings) {
    std::string out = "rank,channel,score,mode\n";
    for (const auto& r : rankings)
        for (std::size_t k = 0; k < r.order.size(); ++k) {
            const int c = r.order[k];
            out += std::to_string(k) + ',' + std::to_string(c) + ',' +
                   format_double(r.scores[static_cast<std::size_t>(c)]) + ',' + to_string(r.mode) + '\n';
        }
    return out;
}

std::vector<NeuronRanking> parse_rankings_csv(std::string_view text) {
    std::vector<NeuronRanking> out;
    for (const auto& f : csv_rows(text, "rank,channel,score,mode", 4)) {
        const int rank = parse_number<int>(f[0]);
        const int channel = parse_number<int>(f[1]);
        const RankMode mode = parse_rank_mode(f[3]);
        if (rank == 0) out.push_back(NeuronRanking{mode, {}, {}});
        if (out.empty() || rank != static_cast<int>(out.back().order.size()) || out.back().mode != mode)
            throw ParseError("rankings csv: ranks must count up from 0 within each mode");
        out.back().order.push_back(channel);
        if (channel < 0) throw ParseError("rankings csv: negative channel");
        if (static_cast<std::size_t>(channel) >= out.back().scores.size())
            out.back().scores.resize(static_cast<std::size_t>(channel) + 1,
                                     std::numeric_limits<double>::quiet_NaN());
        out.back().scores[static_cast<std::size_t>(channel)] = parse_number<double>(f[2]);
    }
    for (const auto& r : out) {
        std::vector<int> sorted = r.order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t k = 0; k < sorted.size(); ++k)
            if (sorted[k] != static_cast<int>(k)) throw ParseError("rankings csv: order is not a permutation");
    }
    return out;
}

std::vector<double> mean_latent_difference(const GridDataset& data, const LatentFn& latent_a, const LatentFn& latent_b,
                                           bool absolute, int batch_size) {
    check_not_empty(data, "ranking");
    std::vector<double> sums;
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - first);
        const Batch b = data.batch_range(first, count, Task::Location);
        const Array<float> za = latent_a(b.x);
        const Array<float> zb = latent_b(b.x);
        if (za.shape != zb.shape || za.rank() != 2 || za.dim(0) != static_cast<int>(count))
            invalid("ranking: latent shapes " + to_string(za.shape) + " and " + to_string(zb.shape) +
                    " do not form a [batch, C] pair");
        const auto c = static_cast<std::size_t>(za.dim(1));
        if (sums.empty()) sums.assign(c, 0.0);
        if (sums.size() != c) invalid("ranking: latent width changed between batches");
        for (std::size_t k = 0; k < count; ++k)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = static_cast<double>(za.data[k * c + j]) - static_cast<double>(zb.data[k * c + j]);
                sums[j] += absolute ? std::abs(d) : d;
            }
    }
    for (double& s : sums) s /= static_cast<double>(data.size());
    return sums;
}

NeuronRanking rank_abs(const ProbeTarget& target, const GridDataset& data, int batch_size) {
    return NeuronRanking::from_scores(
        RankMode::Abs,
        mean_latent_difference(
            data, [&](const Array<float>& x) { return target.latent(x); },
            [&](const Array<float>& x) { return target.latent(hflip(x)); }, true, batch_size));
}

NeuronRanking rank_signed(const ProbeTarget& target, const GridDataset& region_subset, Side side, int batch_size) {
    return NeuronRanking::from_scores(
        side == Side::Left ? RankMode::SignedLeft : RankMode::SignedRight,
        mean_latent_difference(
            region_subset, [&](const Array<float>& x) { return target.latent(x); },
            [&](const Array<float>& x) { return target.latent(hflip(x)); }, false, batch_size));
}

NeuronRanking rank_kernel_flip(const Model& model, const GridDataset& data, int variant, int batch_size) {
    if (variant != 1 && variant != 2) invalid("kernel flip ranking: variant must be 1 or 2");
    const Model flipped = flip_kernels(model);
    if (variant == 1)
        return NeuronRanking::from_scores(
            RankMode::KernelFlip1,
            mean_latent_difference(
                data, [&](const Array<float>& x) { return flipped.latent(x); },
                [&](const Array<float>& x) { return flipped.latent(hflip(x)); }, true, batch_size));
    return NeuronRanking::from_scores(
        RankMode::KernelFlip2,
        mean_latent_difference(
            data, [&](const Array<float>& x) { return model.latent(x); },
            [&](const Array<float>& x) { return flipped.latent(x); }, true, batch_size));
}

// ---------------------------------------------------------------------------

const char* to_string(Selection selection) { return selection == Selection::Ranked ? "ranked" : "random"; }

Selection parse_selection(std::string_view text) {
    if (text == "ranked") return Selection::Ranked;
    if (text == "random") return Selection::Random;
    invalid("unknown selection '" + std::string(text) + "'");
}

std::string AblationReport::to_csv() const {
    std::string out = "selection,mode,top_n,region,accuracy,baseline_accuracy,delta,seed\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.selection)) + ',' + r.mode + ',' + std::to_string(r.top_n) + ',' +
               to_string(r.region) + ',' + format_double(r.accuracy) + ',' + format_double(r.baseline_accuracy) +
               ',' + format_double(r.delta) + ',';
        if (r.seed) out += std::to_string(*r.seed);
        out += '\n';
    }
    return out;
}

AblationReport AblationReport::from_csv(std::string_view text) {
    AblationReport report;
    for (const auto& f : csv_rows(text, "selection,mode,top_n,region,accuracy,baseline_accuracy,delta,seed", 8)) {
        AblationRow r;
        if (f[0] == "ranked") r.selection = Selection::Ranked;
        else if (f[0] == "random") r.selection = Selection::Random;
        else throw ParseError("ablation csv: unknown selection '" + std::string(f[0]) + "'");
        r.mode = std::string(f[1]);
        r.top_n = parse_number<int>(f[2]);
        r.region = parse_region(f[3]);
        r.accuracy = parse_number<double>(f[4]);
        r.baseline_accuracy = parse_number<double>(f[5]);
        r.delta = parse_number<double>(f[6]);
        if (!f[7].empty()) r.seed = parse_number<std::uint64_t>(f[7]);
        report.rows.push_back(std::move(r));
    }
    return report;
}

double AblationReport::mean_accuracy(Selection selection, std::string_view mode, int top_n, Region region) const {
    double sum = 0;
    int count = 0;
    for (const auto& r : rows)
        if (r.selection == selection && r.mode == mode && r.top_n == top_n && r.region == region) {
            sum += r.accuracy;
            ++count;
        }
    if (count == 0)
        invalid(std::string("ablation report: no ") + to_string(selection) + " row for mode " + std::string(mode) +
                ", top_n " + std::to_string(top_n) + ", region " + to_string(region));
    return sum / count;
}

std::vector<double> region_accuracies(const Model& model, const std::vector<int>& channels, const GridDataset& data,
                                      std::span<const Region> regions, Task task, int batch_size) {
    check_not_empty(data, "ablation");
    const auto pred = predictions(model, channels, data, batch_size);
    const auto labels = data.labels(task);
    std::vector<double> out;
    for (Region r : regions) out.push_back(region_accuracy(pred, labels, data, r));
    return out;
}

AblationReport ablate_eval(const Model& model, const NeuronRanking& ranking, std::span<const int> top_n,
                           const GridDataset& data, std::span<const Region> regions,
                           std::span<const std::uint64_t> random_seeds, Task task, int batch_size) {
    const int channels = model.latent_channels();
    if (ranking.channels() != channels)
        invalid("ablation: ranking covers " + std::to_string(ranking.channels()) + " channels, model latent has " +
                std::to_string(channels));
    check_top_n(top_n, channels);
    const std::string mode = to_string(ranking.mode);
    const auto baseline = region_accuracies(model, {}, data, regions, task, batch_size);

    AblationReport report;
    auto add_rows = [&](Selection sel, int n, const std::vector<int>& selected, std::optional<std::uint64_t> seed) {
        const auto acc = region_accuracies(model, selected, data, regions, task, batch_size);
        for (std::size_t k = 0; k < regions.size(); ++k)
            report.rows.push_back({sel, mode, n, regions[k], acc[k], baseline[k], acc[k] - baseline[k], seed});
    };
    for (int n : top_n) add_rows(Selection::Ranked, n, ranking.top(n), std::nullopt);
    for (std::uint64_t seed : random_seeds) {
        const std::vector<int> order = Rng(derive_seed(seed, {kRandomSelectionStream})).permutation(channels);
        for (int n : top_n) add_rows(Selection::Random, n, {order.begin(), order.begin() + n}, seed);
    }
    return report;
}

AblationReport region_attack_eval(const Model& model, const NeuronRanking& left, const NeuronRanking& right,
                                  std::span<const int> top_n, const GridDataset& data, int batch_size) {
    const int channels = model.latent_channels();
    if (left.channels() != channels || right.channels() != channels)
        invalid("region attack: rankings do not match the model's " + std::to_string(channels) + " latent channels");
    check_top_n(top_n, channels);
    const Region sides[] = {Region::Left, Region::Right};
    const auto baseline = region_accuracies(model, {}, data, sides, Task::Location, batch_size);
    AblationReport report;
    for (int n : top_n)
        for (const NeuronRanking* ranking : {&left, &right}) {
            const auto acc = region_accuracies(model, ranking->top(n), data, sides, Task::Location, batch_size);
            for (std::size_t k = 0; k < 2; ++k)
                report.rows.push_back({Selection::Ranked, to_string(ranking->mode), n, sides[k], acc[k], baseline[k],
                                       acc[k] - baseline[k], std::nullopt});
        }
    return report;
}

// ---------------------------------------------------------------------------

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw Error(ErrorKind::Io, "cannot create '" + path.parent_path().string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

std::vector<std::filesystem::path> emit_reports(const ProbeReports& reports, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create '" + out_dir.string() + "': " + ec.message());
    const std::vector<std::pair<std::string, std::string>> files{
        {"rankings.csv", rankings_csv(reports.rankings)},
        {"consistency.csv", consistency_csv(reports.consistency)},
        {"ablation.csv", reports.ablation.to_csv()},
        {"region_attack.csv", reports.region_attack.to_csv()},
    };
    std::vector<std::filesystem::path> paths;
    for (const auto& [name, text] : files) {
        paths.push_back(out_dir / name);
        write_text_file(paths.back(), text);
    }
    return paths;
}

}  // namespace pospool
