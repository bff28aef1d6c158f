#include "pospool/experiments/repro.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "pospool/error.hpp"
#include "pospool/nn/checkpoint.hpp"
#include "pospool/probe/probe.hpp"
#include "pospool/rng.hpp"
#include "pospool/train/train.hpp"

namespace pospool {

namespace fs = std::filesystem;

namespace {

// Stream keys, one per experiment, so no two recipes share data or init.
constexpr std::uint64_t kTable1Location = 0x7431;
constexpr std::uint64_t kTable1Classify = 0x7432;
constexpr std::uint64_t kTable2 = 0x7433;
constexpr std::uint64_t kProbe = 0x7434;
constexpr std::uint64_t kDecode = 0x7435;

using Clock = std::chrono::steady_clock;

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Runs fn(0..count-1) on up to `jobs` threads; the first failure (by index)
// is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> workers;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    for (std::size_t t = 0; t < n; ++t)
        workers.emplace_back([&] {
            for (std::size_t i; (i = next++) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct Context {
    const ReproConfig& cfg;
    fs::path out;
    std::mutex mu;
    std::optional<PatchSplits> cifar;
    std::map<std::uint64_t, std::shared_ptr<const Model>> probe_models;

    void say(const std::string& line) {
        if (!cfg.progress) return;
        std::lock_guard lock(mu);
        cfg.progress(line);
    }

    std::vector<std::uint64_t> seeds() const {
        std::vector<std::uint64_t> s(static_cast<std::size_t>(cfg.num_seeds));
        std::iota(s.begin(), s.end(), cfg.seed);
        return s;
    }

    // Synthetic patches drawn from `seed`, or the leading CIFAR-10 images.
    PatchSplits patches(std::size_t train, std::size_t val, std::uint64_t seed) {
        if (!cfg.data_dir) return synth_splits(train, val, seed);
        std::lock_guard lock(mu);
        if (!cifar) cifar = load_cifar10(*cfg.data_dir);
        return {cifar->train.head(train), cifar->val.head(val)};
    }

    TrainConfig train_config(Task task, int epochs, std::uint64_t seed) const {
        TrainConfig t;
        t.task = task;
        t.epochs = epochs;
        t.lr = cfg.lr;
        t.batch_size = cfg.batch_size;
        t.lambda = cfg.lambda;
        t.max_shift = cfg.max_shift;
        t.seed = seed;
        return t;
    }
};

struct Split {
    GridDataset train;
    GridDataset val;
};

Split grid_split(Context& ctx, std::size_t train, std::size_t val, int grid_n, int cell, std::uint64_t seed) {
    auto p = ctx.patches(train, val, seed);
    return {make_grid_dataset(p.train, grid_n, derive_seed(seed, {1, static_cast<std::uint64_t>(grid_n)}), cell),
            make_grid_dataset(p.val, grid_n, derive_seed(seed, {2, static_cast<std::uint64_t>(grid_n)}), cell)};
}

Model fresh_model(HeadKind head, const GridDataset& data, Task task, std::uint64_t seed) {
    return Model(make_model_spec(head, EncoderConfig::smallnet(), data.num_classes(task), data.sample_shape(), seed,
                                 PermutePolicy{PermuteMode::ResamplePerBatch, derive_seed(seed, {0x9e})}));
}

EpochCallback progress_callback(Context& ctx, const std::string& name) {
    if (!ctx.cfg.progress) return {};
    return [&ctx, name](const TrainLogRow& r) {
        std::string line = name + " epoch " + std::to_string(r.epoch) + " loss " + fixed(r.train_loss) + " acc " +
                           fixed(r.train_acc, 3);
        if (r.val_acc) line += " val " + fixed(*r.val_acc, 3);
        ctx.say(line);
    };
}

void write_log(const fs::path& dir, const std::string& name, const TrainLog& log) {
    fs::create_directories(dir);
    log.write_csv(dir / (name + ".csv"));
}

std::string run_name(std::string_view task, HeadKind head, int grid_n, std::uint64_t seed) {
    return std::string(task) + "_" + to_string(head) + "_n" + std::to_string(grid_n) + "_s" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// table1

struct AccuracyRow {
    std::string task;
    HeadKind head;
    int grid_n;
    std::uint64_t seed;
    double accuracy;
};

double mean_of(const std::vector<AccuracyRow>& rows, std::string_view task, HeadKind head, int grid_n) {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.task == task && r.head == head && r.grid_n == grid_n) v.push_back(r.accuracy);
    return mean(v);
}

std::vector<CriterionResult> run_table1(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path dir = ctx.out / "table1";
    struct Job {
        Task task;
        HeadKind head;
        int grid_n;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto seed : ctx.seeds())
        for (int n : {3, 5, 7})
            for (HeadKind h : {HeadKind::GapNet, HeadKind::PermuteNet}) jobs.push_back({Task::Location, h, n, seed});
    const std::size_t location_jobs = jobs.size();
    for (auto seed : ctx.seeds())
        for (HeadKind h : {HeadKind::GapNet, HeadKind::PermuteNet})
            jobs.push_back({Task::Classify, h, cfg.classify_grid, seed});

    std::vector<AccuracyRow> rows(jobs.size());
    std::vector<double> seconds(jobs.size());
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
        const Job& j = jobs[i];
        const auto start = Clock::now();
        const bool location = j.task == Task::Location;
        const std::string name = run_name(to_string(j.task), j.head, j.grid_n, j.seed);
        const std::uint64_t stream = derive_seed(j.seed, {location ? kTable1Location : kTable1Classify});
        const Split data =
            location ? grid_split(ctx, cfg.location_train, cfg.location_val, j.grid_n, cfg.cell, stream)
                     : grid_split(ctx, cfg.classify_train, cfg.classify_val, j.grid_n, cfg.cell, stream);
        Model model = fresh_model(j.head, data.train, j.task, derive_seed(stream, {static_cast<std::uint64_t>(j.grid_n)}));
        TrainConfig tc = ctx.train_config(j.task, location ? cfg.location_epochs : cfg.classify_epochs,
                                          derive_seed(stream, {3}));
        if (!location) tc.patience = cfg.classify_patience;
        // Location runs skip per-epoch validation; classification needs it for
        // the plateau exit.
        const TrainLog log = train(model, data.train, location ? nullptr : &data.val, tc, progress_callback(ctx, name));
        write_log(dir / "logs", name, log);
        rows[i] = {to_string(j.task), j.head, j.grid_n, j.seed, evaluate_accuracy(model, data.val, j.task)};
        seconds[i] = std::chrono::duration<double>(Clock::now() - start).count();
        ctx.say(name + " accuracy " + fixed(rows[i].accuracy));
    });

    std::string csv = "task,arch,grid_n,seed,accuracy\n";
    for (const auto& r : rows)
        csv += r.task + ',' + to_string(r.head) + ',' + std::to_string(r.grid_n) + ',' + std::to_string(r.seed) + ',' +
               shortest(r.accuracy) + '\n';
    write_text_file(dir / "accuracy.csv", csv);

    std::string means = "task,arch,grid_n,mean_accuracy\n";
    std::set<std::tuple<std::string, int, int>> seen;
    for (const auto& r : rows)
        if (seen.insert({r.task, static_cast<int>(r.head), r.grid_n}).second)
            means += r.task + ',' + to_string(r.head) + ',' + std::to_string(r.grid_n) + ',' +
                     shortest(mean_of(rows, r.task, r.head, r.grid_n)) + '\n';
    write_text_file(dir / "means.csv", means);

    const double location_seconds = std::accumulate(seconds.begin(), seconds.begin() + static_cast<long>(location_jobs), 0.0);
    const auto acc = [&](HeadKind h, int n) { return mean_of(rows, "location", h, n); };
    const double g3 = acc(HeadKind::GapNet, 3), g5 = acc(HeadKind::GapNet, 5), g7 = acc(HeadKind::GapNet, 7);
    const double p5 = acc(HeadKind::PermuteNet, 5), p7 = acc(HeadKind::PermuteNet, 7);
    const bool location_ok = g3 >= 0.95 && g5 >= 0.90 && g5 - p5 >= 0.20 && g7 - p7 >= 0.30;

    CriterionResult c1{"C1", location_ok,
                       "gapnet n3 " + fixed(g3) + " (>= 0.95) n5 " + fixed(g5) + " (>= 0.90); gap n5 " + fixed(g5 - p5) +
                           " (>= 0.20) n7 " + fixed(g7 - p7) + " (>= 0.30); location training " +
                           fixed(location_seconds, 0) + " s (target 1800 s)"};

    const int cn = cfg.classify_grid;
    const double gc = mean_of(rows, "classify", HeadKind::GapNet, cn);
    const double pc = mean_of(rows, "classify", HeadKind::PermuteNet, cn);
    CriterionResult c2{"C2", gc - pc <= 0.12 && location_ok,
                       "classify n" + std::to_string(cn) + " gapnet " + fixed(gc) + " permutenet " + fixed(pc) +
                           " gap " + fixed(gc - pc) + " (<= 0.12); location gap " +
                           (location_ok ? "holds" : "fails")};
    return {c1, c2};
}

// ---------------------------------------------------------------------------
// table2

std::vector<CriterionResult> run_table2(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path dir = ctx.out / "table2";
    const auto seeds = ctx.seeds();
    struct Outcome {
        double top1 = 0;
        std::vector<double> consistency;
    };
    // index = 2 * seed_index + (augshift ? 1 : 0)
    std::vector<Outcome> out(seeds.size() * 2);
    parallel_for(out.size(), cfg.jobs, [&](std::size_t i) {
        const std::uint64_t seed = seeds[i / 2];
        const bool aug = i % 2 == 1;
        const std::uint64_t stream = derive_seed(seed, {kTable2});
        // Whole 32x32 images, the setting of the shift-consistency metric.
        const Split data = grid_split(ctx, cfg.augshift_train, cfg.augshift_val, 1, PatchSet::kSide, stream);
        Model model = fresh_model(HeadKind::LinearBaseline, data.train, Task::Classify, derive_seed(stream, {4}));
        const std::string name = std::string(aug ? "augshift" : "baseline") + "_s" + std::to_string(seed);
        const TrainConfig tc = ctx.train_config(Task::Classify, cfg.augshift_epochs, derive_seed(stream, {3}));
        const TrainLog log = aug ? train_augshift(model, data.train, nullptr, tc, progress_callback(ctx, name))
                                 : train(model, data.train, nullptr, tc, progress_callback(ctx, name));
        write_log(dir / "logs", name, log);
        out[i].top1 = evaluate_accuracy(model, data.val, Task::Classify);
        for (int k : cfg.shifts)
            out[i].consistency.push_back(
                consistency(model, data.val, k, cfg.consistency_trials, derive_seed(stream, {5})).consistency);
        ctx.say(name + " top1 " + fixed(out[i].top1));
    });

    std::string csv = "model,seed,top1,shift,trials,consistency\n";
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t k = 0; k < cfg.shifts.size(); ++k)
            csv += std::string(i % 2 ? "augshift" : "baseline") + ',' + std::to_string(seeds[i / 2]) + ',' +
                   shortest(out[i].top1) + ',' + std::to_string(cfg.shifts[k]) + ',' +
                   std::to_string(cfg.consistency_trials) + ',' + shortest(out[i].consistency[k]) + '\n';
    write_text_file(dir / "results.csv", csv);

    auto avg = [&](bool aug, std::optional<std::size_t> shift) {
        std::vector<double> v;
        for (std::size_t i = aug ? 1 : 0; i < out.size(); i += 2) v.push_back(shift ? out[i].consistency[*shift] : out[i].top1);
        return mean(v);
    };
    std::string means = "model,shift,mean_top1,mean_consistency\n";
    for (bool aug : {false, true})
        for (std::size_t k = 0; k < cfg.shifts.size(); ++k)
            means += std::string(aug ? "augshift" : "baseline") + ',' + std::to_string(cfg.shifts[k]) + ',' +
                     shortest(avg(aug, std::nullopt)) + ',' + shortest(avg(aug, k)) + '\n';
    write_text_file(dir / "means.csv", means);

    const auto at = std::find(cfg.shifts.begin(), cfg.shifts.end(), cfg.max_shift);
    if (at == cfg.shifts.end())
        return {{"C3", false, "shift list does not contain max_shift " + std::to_string(cfg.max_shift)}};
    const auto k8 = static_cast<std::size_t>(at - cfg.shifts.begin());
    const double gain = avg(true, k8) - avg(false, k8);
    const double drop = avg(false, std::nullopt) - avg(true, std::nullopt);
    bool monotone = true;
    std::string shape;
    for (bool aug : {false, true}) {
        for (std::size_t k = 1; k < cfg.shifts.size(); ++k)
            if (avg(aug, k) > avg(aug, k - 1) + 0.005) monotone = false;
        shape += std::string(aug ? " augshift" : " baseline");
        for (std::size_t k = 0; k < cfg.shifts.size(); ++k) shape += " " + fixed(avg(aug, k));
    }
    return {{"C3", gain >= 0.02 && drop <= 0.015 && monotone,
             "cons" + std::to_string(cfg.max_shift) + " gain " + fixed(gain) + " (>= 0.02); top1 drop " + fixed(drop) +
                 " (<= 0.015); consistency by shift" + shape + (monotone ? " non-increasing" : " increases")}};
}

// ---------------------------------------------------------------------------
// fig4 / fig5: a location model with a plain linear head, so the post-GAP
// latent is the encoder's own channels rather than the class scores.

struct ProbeData {
    GridDataset val;
};

ProbeData probe_data(Context& ctx, std::uint64_t seed) {
    const std::uint64_t stream = derive_seed(seed, {kProbe});
    return {grid_split(ctx, 1, ctx.cfg.probe_val, ctx.cfg.probe_grid, ctx.cfg.cell, derive_seed(stream, {6})).val};
}

void ensure_probe_models(Context& ctx, const std::vector<std::uint64_t>& seeds, const fs::path& dir) {
    const auto& cfg = ctx.cfg;
    std::vector<std::uint64_t> missing;
    for (auto s : seeds)
        if (!ctx.probe_models.count(s)) missing.push_back(s);
    std::vector<std::shared_ptr<const Model>> trained(missing.size());
    parallel_for(missing.size(), cfg.jobs, [&](std::size_t i) {
        const std::uint64_t seed = missing[i];
        const std::uint64_t stream = derive_seed(seed, {kProbe});
        const Split data = grid_split(ctx, cfg.probe_train, 1, cfg.probe_grid, cfg.cell, stream);
        auto model = std::make_shared<Model>(
            fresh_model(HeadKind::LinearBaseline, data.train, Task::Location, derive_seed(stream, {4})));
        const std::string name = run_name("location", HeadKind::LinearBaseline, cfg.probe_grid, seed);
        const TrainLog log = train(*model, data.train, nullptr,
                                   ctx.train_config(Task::Location, cfg.location_epochs, derive_seed(stream, {3})),
                                   progress_callback(ctx, name));
        write_log(dir / "logs", name, log);
        fs::create_directories(dir / "models");
        save_checkpoint(*model, dir / "models" / (name + ".ppl"));
        trained[i] = std::move(model);
    });
    for (std::size_t i = 0; i < missing.size(); ++i) ctx.probe_models[missing[i]] = trained[i];
}

std::vector<int> ablation_ladder(int channels) {
    std::vector<int> ladder;
    for (int d : {32, 16, 8, 4}) {
        const int n = std::max(1, channels / d);
        if (ladder.empty() || ladder.back() != n) ladder.push_back(n);
    }
    return ladder;
}

std::vector<CriterionResult> run_fig4(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path dir = ctx.out / "fig4";
    const std::uint64_t seed = cfg.seed;
    ensure_probe_models(ctx, {seed}, dir);
    const Model& model = *ctx.probe_models.at(seed);
    const GridDataset val = probe_data(ctx, seed).val;
    const ModelTarget target(model);

    ProbeReports reports;
    reports.rankings = {rank_abs(target, val), rank_kernel_flip(model, val, 1), rank_kernel_flip(model, val, 2)};
    const auto ladder = ablation_ladder(model.latent_channels());
    std::vector<std::uint64_t> random_seeds(static_cast<std::size_t>(cfg.random_seeds));
    std::iota(random_seeds.begin(), random_seeds.end(), derive_seed(seed, {kProbe, 7}));
    const Region regions[] = {Region::All, Region::Left, Region::Center, Region::Right};
    for (std::size_t r = 0; r < reports.rankings.size(); ++r) {
        // Random rows depend only on the seeds, so one set suffices.
        const auto part = ablate_eval(model, reports.rankings[r], ladder, val, regions,
                                      r == 0 ? std::span<const std::uint64_t>(random_seeds) : std::span<const std::uint64_t>());
        reports.ablation.rows.insert(reports.ablation.rows.end(), part.rows.begin(), part.rows.end());
    }
    write_text_file(dir / "rankings.csv", rankings_csv(reports.rankings));
    write_text_file(dir / "ablation.csv", reports.ablation.to_csv());

    bool ok = true;
    std::string detail;
    for (int n : ladder) {
        const double ranked = reports.ablation.mean_accuracy(Selection::Ranked, "abs", n, Region::All);
        const double random = reports.ablation.mean_accuracy(Selection::Random, "abs", n, Region::All);
        const bool last = n == ladder.back();
        const bool step_ok = last ? random - ranked >= 0.03 : ranked <= random;
        ok = ok && step_ok;
        detail += (detail.empty() ? "" : "; ") + std::string("N=") + std::to_string(n) + " ranked " + fixed(ranked) +
                  " random " + fixed(random) + (step_ok ? "" : " (violated)");
    }
    const double base = reports.ablation.rows.front().baseline_accuracy;
    return {{"C4", ok, "baseline " + fixed(base) + "; " + detail + "; largest N needs random - ranked >= 0.03"}};
}

std::vector<CriterionResult> run_fig5(Context& ctx) {
    const fs::path dir = ctx.out / "fig5";
    const auto seeds = ctx.seeds();
    ensure_probe_models(ctx, seeds, dir);

    std::string matrix = "seed,top_n,target,evaluated,accuracy,baseline_accuracy,drop\n";
    bool ok = true;
    std::string detail;
    for (auto seed : seeds) {
        const Model& model = *ctx.probe_models.at(seed);
        const GridDataset val = probe_data(ctx, seed).val;
        const ModelTarget target(model);
        const RegionSubsets rs = region_subsets(val);
        const NeuronRanking left = rank_signed(target, val.subset(rs.left), Side::Left);
        const NeuronRanking right = rank_signed(target, val.subset(rs.right), Side::Right);
        const auto ladder = ablation_ladder(model.latent_channels());
        const AblationReport report = region_attack_eval(model, left, right, ladder, val);

        const fs::path sub = dir / ("seed" + std::to_string(seed));
        write_text_file(sub / "rankings.csv", rankings_csv(std::vector<NeuronRanking>{left, right}));
        write_text_file(sub / "region_attack.csv", report.to_csv());
        for (const auto& r : report.rows)
            matrix += std::to_string(seed) + ',' + std::to_string(r.top_n) + ',' +
                      (r.mode == "signed_left" ? "left" : "right") + ',' + to_string(r.region) + ',' +
                      shortest(r.accuracy) + ',' + shortest(r.baseline_accuracy) + ',' + shortest(-r.delta) + '\n';

        const int n = ladder.back();
        auto drop = [&](RankMode m, Region evaluated) {
            for (const auto& r : report.rows)
                if (r.mode == to_string(m) && r.top_n == n && r.region == evaluated) return -r.delta;
            throw Error(ErrorKind::InvalidArgument, "region attack: missing row");
        };
        const double ll = drop(RankMode::SignedLeft, Region::Left), lr = drop(RankMode::SignedLeft, Region::Right);
        const double rl = drop(RankMode::SignedRight, Region::Left), rr = drop(RankMode::SignedRight, Region::Right);
        const bool seed_ok = ll > lr && rr > rl;
        ok = ok && seed_ok;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " N=" +
                  std::to_string(n) + " drops L->L " + fixed(ll) + " L->R " + fixed(lr) + " R->R " + fixed(rr) +
                  " R->L " + fixed(rl) + (seed_ok ? "" : " (not dominant)");
    }
    write_text_file(dir / "matrix.csv", matrix);
    return {{"C5", ok, detail}};
}

// ---------------------------------------------------------------------------
// supp_s1

std::vector<CriterionResult> run_supp_s1(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path dir = ctx.out / "supp_s1";
    const auto seeds = ctx.seeds();
    const int n = cfg.decode_grid;
    std::vector<std::array<double, 3>> results(seeds.size());  // encoder classify acc, plain, shuffled
    parallel_for(seeds.size(), cfg.jobs, [&](std::size_t i) {
        const std::uint64_t seed = seeds[i];
        const std::uint64_t stream = derive_seed(seed, {kDecode});
        const Split cls = grid_split(ctx, cfg.classify_train, cfg.classify_val, n, cfg.cell, derive_seed(stream, {8}));
        Model encoder = fresh_model(HeadKind::GapNet, cls.train, Task::Classify, derive_seed(stream, {4}));
        TrainConfig tc = ctx.train_config(Task::Classify, cfg.classify_epochs, derive_seed(stream, {3}));
        tc.patience = cfg.classify_patience;
        const std::string name = run_name("classify", HeadKind::GapNet, n, seed);
        write_log(dir / "logs", name, train(encoder, cls.train, &cls.val, tc, progress_callback(ctx, name)));
        fs::create_directories(dir / "models");
        save_checkpoint(encoder, dir / "models" / (name + ".ppl"));
        results[i][0] = evaluate_accuracy(encoder, cls.val, Task::Classify);

        const Split loc = grid_split(ctx, cfg.decode_train, cfg.decode_val, n, cfg.cell, derive_seed(stream, {9}));
        for (bool shuffle : {false, true}) {
            const std::string rname = std::string(shuffle ? "readout_shuffle" : "readout") + "_n" + std::to_string(n) +
                                      "_s" + std::to_string(seed);
            TrainConfig rc = ctx.train_config(Task::Location, cfg.decode_epochs, derive_seed(stream, {10}));
            rc.lr = cfg.decode_lr;
            const auto readout = train_frozen_readout(encoder, loc.train, nullptr, shuffle, rc);
            write_log(dir / "logs", rname, readout.log);
            results[i][shuffle ? 2 : 1] = evaluate_readout(encoder, readout.head, loc.val, Task::Location);
        }
        ctx.say("decode seed " + std::to_string(seed) + " plain " + fixed(results[i][1]) + " shuffled " +
                fixed(results[i][2]));
    });

    std::string csv = "seed,grid_n,encoder_classify_accuracy,shuffle,accuracy\n";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (int s : {0, 1})
            csv += std::to_string(seeds[i]) + ',' + std::to_string(n) + ',' + shortest(results[i][0]) + ',' +
                   (s ? "true" : "false") + ',' + shortest(results[i][1 + s]) + '\n';
    write_text_file(dir / "decode.csv", csv);

    std::vector<double> plain, shuffled;
    for (const auto& r : results) {
        plain.push_back(r[1]);
        shuffled.push_back(r[2]);
    }
    const double gap = mean(plain) - mean(shuffled);
    return {{"C6", gap >= 0.30,
             "n" + std::to_string(n) + " decode " + fixed(mean(plain)) + " shuffled " + fixed(mean(shuffled)) + " gap " +
                 fixed(gap) + " (>= 0.30)"}};
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

const char* to_string(ReproTarget target) {
    switch (target) {
        case ReproTarget::All: return "all";
        case ReproTarget::Table1: return "table1";
        case ReproTarget::Table2: return "table2";
        case ReproTarget::Fig4: return "fig4";
        case ReproTarget::Fig5: return "fig5";
        case ReproTarget::SuppS1: return "supp_s1";
    }
    return "?";
}

ReproTarget parse_repro_target(std::string_view text) {
    for (auto t : {ReproTarget::All, ReproTarget::Table1, ReproTarget::Table2, ReproTarget::Fig4, ReproTarget::Fig5,
                   ReproTarget::SuppS1})
        if (text == to_string(t)) return t;
    throw Error(ErrorKind::InvalidArgument, "unknown repro target '" + std::string(text) +
                                                "' (expected all, table1, table2, fig4, fig5 or supp_s1)");
}

void ReproConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorKind::Config, std::string("repro: ") + what);
    };
    need(num_seeds >= 1, "num_seeds must be >= 1");
    need(jobs >= 1, "jobs must be >= 1");
    need(cell >= 1 && PatchSet::kSide % cell == 0, "cell must divide 32");
    need(lr > 0, "lr must be > 0");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(location_train >= 1 && location_val >= 1 && location_epochs >= 1, "location sizes must be >= 1");
    need(classify_grid >= 1 && classify_train >= 1 && classify_val >= 1 && classify_epochs >= 1 &&
             classify_patience >= 0,
         "classify sizes must be >= 1");
    need(augshift_train >= 1 && augshift_val >= 1 && augshift_epochs >= 1, "augshift sizes must be >= 1");
    need(lambda >= 0, "lambda must be >= 0");
    need(max_shift >= 0 && max_shift < PatchSet::kSide, "max_shift must be in [0, 32)");
    need(!shifts.empty(), "shift list is empty");
    for (int k : shifts) need(k >= 0 && k < PatchSet::kSide, "shifts must be in [0, 32)");
    need(consistency_trials >= 1, "consistency_trials must be >= 1");
    need(probe_grid >= 2 && probe_train >= 1 && probe_val >= 1 && random_seeds >= 1, "probe grid must be >= 2 and sizes >= 1");
    need(decode_grid >= 1 && decode_train >= 1 && decode_val >= 1 && decode_epochs >= 1, "decode sizes must be >= 1");
    need(decode_lr > 0, "decode_lr must be > 0");
}

ReproResult run_repro(ReproTarget target, const ReproConfig& config, const fs::path& out_dir) {
    config.validate();
    const auto start = Clock::now();
    fs::create_directories(out_dir);
    Context ctx{config, out_dir, {}, {}, {}};
    ReproResult result;
    auto add = [&](std::vector<CriterionResult> part) {
        result.criteria.insert(result.criteria.end(), part.begin(), part.end());
    };
    const bool all = target == ReproTarget::All;
    if (all || target == ReproTarget::Table1) add(run_table1(ctx));
    if (all || target == ReproTarget::Table2) add(run_table2(ctx));
    if (all || target == ReproTarget::Fig4) add(run_fig4(ctx));
    if (all || target == ReproTarget::Fig5) add(run_fig5(ctx));
    if (all || target == ReproTarget::SuppS1) add(run_supp_s1(ctx));
    write_text_file(out_dir / "summary.txt", summary_text(result.criteria));
    result.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

std::string summary_text(const std::vector<CriterionResult>& criteria) {
    std::string out, failed;
    for (const auto& c : criteria) {
        out += c.id + (c.pass ? " PASS " : " FAIL ") + c.detail + '\n';
        if (!c.pass) failed += " " + c.id;
    }
    out += failed.empty() ? "result: PASS\n" : "result: FAIL" + failed + '\n';
    return out;
}

std::string drop_csv_columns(std::string_view csv, const std::vector<std::string>& columns) {
    std::istringstream in{std::string(csv)};
    std::string line, out;
    std::vector<bool> keep;
    bool header = true;
    while (std::getline(in, line)) {
        const auto fields = split_csv_line(line);
        if (header) {
            for (const auto& f : fields)
                keep.push_back(std::find(columns.begin(), columns.end(), f) == columns.end());
            header = false;
        }
        std::string kept;
        bool first = true;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i < keep.size() && !keep[i]) continue;
            kept += (first ? "" : ",") + fields[i];
            first = false;
        }
        out += kept + '\n';
    }
    return out;
}

std::vector<std::string> diff_csv_trees(const fs::path& a, const fs::path& b,
                                        const std::vector<std::string>& ignored_columns) {
    auto list = [](const fs::path& root) {
        std::set<fs::path> files;
        if (!fs::is_directory(root)) return files;
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().extension() == ".csv") files.insert(fs::relative(e.path(), root));
        return files;
    };
    auto read = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const auto fa = list(a), fb = list(b);
    std::vector<std::string> diffs;
    for (const auto& f : fa)
        if (!fb.count(f)) diffs.push_back("only in " + a.string() + ": " + f.string());
    for (const auto& f : fb)
        if (!fa.count(f)) diffs.push_back("only in " + b.string() + ": " + f.string());
    for (const auto& f : fa) {
        if (!fb.count(f)) continue;
        if (drop_csv_columns(read(a / f), ignored_columns) != drop_csv_columns(read(b / f), ignored_columns))
            diffs.push_back("differs: " + f.string());
    }
    if (fa.empty() && fb.empty()) diffs.push_back("no csv files under " + a.string() + " or " + b.string());
    return diffs;
}

}  // namespace pospool
