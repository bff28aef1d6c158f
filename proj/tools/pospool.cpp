// pospool: train models, probe them, and run the desk-scale experiment recipes.
//
// Every subcommand resolves its settings from defaults, then an optional
// --config JSON file (keys are the flag names), then the flags themselves,
// and writes the result to <out>/config.json before doing any work.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pospool/error.hpp"
#include "pospool/experiments/repro.hpp"
#include "pospool/nn/checkpoint.hpp"
#include "pospool/probe/probe.hpp"
#include "pospool/rng.hpp"
#include "pospool/train/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pospool;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Kind { Str, Int, Real, Flag, IntList };

struct OptionSpec {
    Kind kind;
    const char* help;
    std::vector<std::string> choices;  // empty: free-form
};

const std::map<std::string, OptionSpec>& option_table() {
    static const std::map<std::string, OptionSpec> table{
        {"data-dir", {Kind::Str, "CIFAR-10 binary batch directory", {}}},
        {"synth", {Kind::Flag, "use synthetic patches (the default)", {}}},
        {"grid", {Kind::Int, "grid size n (n x n cells)", {}}},
        {"cell", {Kind::Int, "cell side in pixels (divides 32)", {}}},
        {"train-size", {Kind::Int, "training patches", {}}},
        {"val-size", {Kind::Int, "validation patches", {}}},
        {"arch", {Kind::Str, "architecture", {"gapnet", "permutenet", "baseline"}}},
        {"padding", {Kind::Str, "conv padding mode", {"zero", "reflect", "replicate"}}},
        {"task", {Kind::Str, "label set", {"location", "classify"}}},
        {"epochs", {Kind::Int, "training epochs", {}}},
        {"lr", {Kind::Real, "learning rate", {}}},
        {"batch-size", {Kind::Int, "batch size", {}}},
        {"optimizer", {Kind::Str, "optimizer", {"adam", "sgd"}}},
        {"patience", {Kind::Int, "stop after this many epochs without validation gain (0: off)", {}}},
        {"lambda", {Kind::Real, "weight of the latent MSE term", {}}},
        {"max-shift", {Kind::Int, "largest training shift in pixels", {}}},
        {"shift", {Kind::IntList, "evaluation shift sizes (comma list)", {}}},
        {"trials", {Kind::Int, "shift pairs per image", {}}},
        {"top-n", {Kind::IntList, "channel counts to ablate (comma list)", {}}},
        {"seeds", {Kind::IntList, "random-selection seeds (comma list)", {}}},
        {"mode", {Kind::Str, "ranking mode", {"abs", "signed_left", "signed_right", "kernel_flip_1", "kernel_flip_2"}}},
        {"model", {Kind::Str, "checkpoint to read", {}}},
        {"shuffle", {Kind::Flag, "resample a channel shuffle before the readout", {}}},
        {"seed", {Kind::Int, "run seed (default: $POSPOOL_SEED or 0)", {}}},
        {"jobs", {Kind::Int, "parallel runs across independent seeds/configs", {}}},
        {"out", {Kind::Str, "output directory", {}}},
    };
    return table;
}

std::uint64_t default_seed() {
    const char* env = std::getenv("POSPOOL_SEED");
    if (!env || !*env) return 0;
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UsageError(std::string("POSPOOL_SEED is not an unsigned integer: '") + env + "'");
    }
}

// Defaults per subcommand; the key set is also the set of accepted options.
json defaults_for(const std::string& cmd) {
    const json data = {{"data-dir", ""}, {"synth", true}, {"cell", 8},       {"train-size", 1000},
                       {"val-size", 300}, {"seed", default_seed()}, {"out", "out"}, {"batch-size", 64}};
    json d = data;
    if (cmd == "train" || cmd == "augshift") {
        d.update({{"grid", 3},   {"arch", "gapnet"}, {"padding", "zero"}, {"task", "location"}, {"epochs", 20},
                  {"lr", 1e-3},  {"optimizer", "adam"}, {"patience", 0}});
        if (cmd == "augshift") d.update({{"lambda", 1.0}, {"max-shift", 8}});
    } else if (cmd == "decode-frozen") {
        d.update({{"model", ""}, {"grid", 0}, {"epochs", 1000}, {"lr", 1e-2}, {"optimizer", "adam"}, {"patience", 0},
                  {"shuffle", false}});
    } else if (cmd == "eval") {
        d.update({{"model", ""}, {"grid", 0}, {"task", ""}});
    } else if (cmd == "consistency") {
        d.update({{"model", ""}, {"grid", 0}, {"shift", {8}}, {"trials", 4}});
    } else if (cmd == "rank") {
        d.update({{"model", ""}, {"grid", 0}, {"mode", "abs"}});
    } else if (cmd == "ablate") {
        d.update({{"model", ""}, {"grid", 0}, {"mode", "abs"}, {"top-n", {0}}, {"seeds", {1, 2, 3, 4, 5}},
                  {"task", ""}});
    } else if (cmd == "region-attack") {
        d.update({{"model", ""}, {"grid", 0}, {"top-n", {0}}});
    } else if (cmd == "repro") {
        d = {{"data-dir", ""}, {"synth", true}, {"seed", default_seed()}, {"jobs", 1}, {"out", "out"}};
    }
    return d;
}

json convert(const std::string& name, const std::string& text) {
    const OptionSpec& spec = option_table().at(name);
    auto fail = [&](const std::string& why) { throw UsageError("--" + name + ": " + why + " '" + text + "'"); };
    auto to_int = [&](const std::string& s) -> long long {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(s, &used);
            if (used != s.size()) fail("not an integer");
            return v;
        } catch (const std::logic_error&) {
            fail("not an integer");
        }
        return 0;
    };
    switch (spec.kind) {
        case Kind::Str: return text;
        case Kind::Flag: return true;
        case Kind::Int: return to_int(text);
        case Kind::Real:
            try {
                std::size_t used = 0;
                const double v = std::stod(text, &used);
                if (used != text.size()) fail("not a number");
                return v;
            } catch (const std::logic_error&) {
                fail("not a number");
            }
            break;
        case Kind::IntList: {
            json list = json::array();
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) list.push_back(to_int(item));
            if (list.empty()) fail("empty list");
            return list;
        }
    }
    return nullptr;
}

// Checks a config-file value against the option's kind and choices.
void check_value(const std::string& name, const json& v) {
    const auto it = option_table().find(name);
    if (it == option_table().end()) throw UsageError("config: unknown key '" + name + "'");
    const OptionSpec& spec = it->second;
    auto bad = [&](const char* want) { throw UsageError("config: '" + name + "' must be " + want); };
    switch (spec.kind) {
        case Kind::Str:
            if (!v.is_string()) bad("a string");
            if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), v.get<std::string>()) ==
                                             spec.choices.end())
                throw UsageError("config: '" + name + "' value '" + v.get<std::string>() + "' is not allowed");
            break;
        case Kind::Flag:
            if (!v.is_boolean()) bad("a boolean");
            break;
        case Kind::Int:
            if (!v.is_number_integer()) bad("an integer");
            break;
        case Kind::Real:
            if (!v.is_number()) bad("a number");
            break;
        case Kind::IntList:
            if (!v.is_array() || v.empty()) bad("a non-empty integer list");
            for (const auto& e : v)
                if (!e.is_number_integer()) bad("a non-empty integer list");
            break;
    }
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Command {
    std::string name;
    CLI::App* app = nullptr;
    std::map<std::string, std::string> raw;  // flag values as typed
    std::map<std::string, bool> flags;
    std::string config;
    std::string target;  // repro only
};

json resolve(Command& c) {
    json cfg = defaults_for(c.name);
    if (!c.config.empty()) {
        json file;
        try {
            file = json::parse(read_text(c.config));
        } catch (const json::parse_error& e) {
            throw UsageError("config '" + c.config + "': " + e.what());
        }
        if (!file.is_object()) throw UsageError("config '" + c.config + "' must hold a JSON object");
        for (const auto& [k, v] : file.items()) {
            if (!cfg.contains(k)) throw UsageError("config: key '" + k + "' does not apply to " + c.name);
            check_value(k, v);
            cfg[k] = v;
        }
    }
    for (const auto& [k, text] : c.raw) cfg[k] = convert(k, text);
    for (const auto& [k, set] : c.flags)
        if (set) cfg[k] = true;
    if (cfg.contains("data-dir") && !cfg["data-dir"].get<std::string>().empty()) {
        if (c.flags.count("synth") && c.flags["synth"]) throw UsageError("--synth and --data-dir are exclusive");
        cfg["synth"] = false;
    }
    cfg["subcommand"] = c.name;
    if (c.name == "repro") cfg["target"] = c.target;
    return cfg;
}

// ---------------------------------------------------------------------------
// Typed access

int geti(const json& cfg, const char* key) { return cfg.at(key).get<int>(); }
std::string gets(const json& cfg, const char* key) { return cfg.at(key).get<std::string>(); }

std::vector<int> get_list(const json& cfg, const char* key) { return cfg.at(key).get<std::vector<int>>(); }

void need(bool ok, const std::string& message) {
    if (!ok) throw UsageError(message);
}

fs::path out_dir(const json& cfg) { return gets(cfg, "out"); }

void echo_config(const json& cfg) {
    write_text_file(out_dir(cfg) / "config.json", cfg.dump(2) + "\n");
}

EpochCallback progress(const std::string& name) {
    return [name](const TrainLogRow& r) {
        std::fprintf(stderr, "%s epoch %d loss %.4f acc %.3f", name.c_str(), r.epoch, r.train_loss, r.train_acc);
        if (r.val_acc) std::fprintf(stderr, " val %.3f", *r.val_acc);
        if (r.mse_term) std::fprintf(stderr, " mse %.5f", *r.mse_term);
        std::fprintf(stderr, "\n");
    };
}

struct Data {
    GridDataset train;
    GridDataset val;
};

// Same construction as the experiment recipes: patches from the seed, cell
// draws keyed on (seed, split, grid).
Data load_data(const json& cfg, int grid_n, int cell) {
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    need(geti(cfg, "train-size") >= 1 && geti(cfg, "val-size") >= 1, "--train-size and --val-size must be >= 1");
    PatchSplits p;
    const std::string dir = gets(cfg, "data-dir");
    if (dir.empty()) {
        p = synth_splits(static_cast<std::size_t>(geti(cfg, "train-size")), static_cast<std::size_t>(geti(cfg, "val-size")),
                         seed);
    } else {
        PatchSplits all = load_cifar10(dir);
        p = {all.train.head(static_cast<std::size_t>(geti(cfg, "train-size"))),
             all.val.head(static_cast<std::size_t>(geti(cfg, "val-size")))};
    }
    return {make_grid_dataset(p.train, grid_n, derive_seed(seed, {1, static_cast<std::uint64_t>(grid_n)}), cell),
            make_grid_dataset(p.val, grid_n, derive_seed(seed, {2, static_cast<std::uint64_t>(grid_n)}), cell)};
}

TrainConfig train_config(const json& cfg, Task task) {
    TrainConfig t;
    t.task = task;
    t.epochs = geti(cfg, "epochs");
    t.lr = cfg.at("lr").get<double>();
    t.batch_size = geti(cfg, "batch-size");
    t.optimizer = gets(cfg, "optimizer") == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    t.patience = geti(cfg, "patience");
    if (cfg.contains("lambda")) t.lambda = cfg.at("lambda").get<double>();
    if (cfg.contains("max-shift")) t.max_shift = geti(cfg, "max-shift");
    t.seed = derive_seed(cfg.at("seed").get<std::uint64_t>(), {3});
    try {
        t.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return t;
}

// A checkpoint plus the grid geometry implied by its input size.
struct Loaded {
    Model model;
    int grid_n;
    int cell;
};

Loaded load_model(const json& cfg) {
    const std::string path = gets(cfg, "model");
    need(!path.empty(), "--model is required");
    Model m = load_checkpoint(path);
    const int side = m.spec().input_shape[1];
    int grid = geti(cfg, "grid"), cell = geti(cfg, "cell");
    if (grid > 0) {
        need(side % grid == 0, "--grid " + std::to_string(grid) + " does not divide the model input side " +
                                   std::to_string(side));
        cell = side / grid;
    } else {
        need(cell >= 1 && side % cell == 0,
             "--cell " + std::to_string(cell) + " does not divide the model input side " + std::to_string(side));
        grid = side / cell;
    }
    return {std::move(m), grid, cell};
}

Task probe_task(const json& cfg, const Loaded& l) {
    const std::string t = cfg.contains("task") ? gets(cfg, "task") : "";
    if (!t.empty()) return parse_task(t);
    if (l.model.num_outputs() == l.grid_n * l.grid_n) return Task::Location;
    if (l.model.num_outputs() == PatchSet::kClasses) return Task::Classify;
    throw UsageError("cannot tell the task from " + std::to_string(l.model.num_outputs()) + " outputs; pass --task");
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_train(const json& cfg, bool augshift) {
    const int grid = geti(cfg, "grid"), cell = geti(cfg, "cell");
    need(grid >= 1, "--grid must be >= 1");
    need(cell >= 1 && PatchSet::kSide % cell == 0, "--cell must divide 32");
    const Task task = parse_task(gets(cfg, "task"));
    const TrainConfig tc = train_config(cfg, task);
    echo_config(cfg);
    const Data data = load_data(cfg, grid, cell);
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    EncoderConfig enc = EncoderConfig::smallnet(parse_padding_mode(gets(cfg, "padding")));
    Model model(make_model_spec(parse_head_kind(gets(cfg, "arch")), enc, data.train.num_classes(task),
                                data.train.sample_shape(), derive_seed(seed, {4}),
                                PermutePolicy{PermuteMode::ResamplePerBatch, derive_seed(seed, {5})}));
    const std::string name = augshift ? "augshift" : "train";
    const TrainLog log = augshift ? train_augshift(model, data.train, &data.val, tc, progress(name))
                                  : train(model, data.train, &data.val, tc, progress(name));
    log.write_csv(out_dir(cfg) / "train_log.csv");
    save_checkpoint(model, out_dir(cfg) / "model.ppl");
    std::printf("val_accuracy %.6f\n", evaluate_accuracy(model, data.val, task));
    return 0;
}

int cmd_decode_frozen(const json& cfg) {
    const Loaded l = load_model(cfg);
    TrainConfig tc = train_config(cfg, Task::Location);
    echo_config(cfg);
    const Data data = load_data(cfg, l.grid_n, l.cell);
    const bool shuffle = cfg.at("shuffle").get<bool>();
    const auto r = train_frozen_readout(l.model, data.train, &data.val, shuffle, tc, progress("readout"));
    r.log.write_csv(out_dir(cfg) / "train_log.csv");
    save_checkpoint(readout_model(l.model, r.head), out_dir(cfg) / "readout.ppl");
    std::printf("val_accuracy %.6f\n", evaluate_readout(l.model, r.head, data.val, Task::Location));
    return 0;
}

int cmd_eval(const json& cfg) {
    const Loaded l = load_model(cfg);
    const Task task = probe_task(cfg, l);
    echo_config(cfg);
    const GridDataset val = load_data(cfg, l.grid_n, l.cell).val;
    std::string csv = "task,region,samples,accuracy\n";
    const std::vector<Region> regions = task == Task::Location && l.grid_n > 1
                                            ? std::vector<Region>{Region::All, Region::Left, Region::Center, Region::Right}
                                            : std::vector<Region>{Region::All};
    for (Region r : regions) {
        const auto ids = region_indices(val, r);
        if (ids.empty()) continue;
        const double acc = evaluate_accuracy(l.model, val.subset(ids), task);
        char buf[64];
        const auto end = std::to_chars(buf, buf + sizeof buf, acc).ptr;
        csv += std::string(to_string(task)) + ',' + to_string(r) + ',' + std::to_string(ids.size()) + ',' +
               std::string(buf, end) + '\n';
    }
    write_text_file(out_dir(cfg) / "eval.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

int cmd_consistency(const json& cfg) {
    const Loaded l = load_model(cfg);
    echo_config(cfg);
    const GridDataset val = load_data(cfg, l.grid_n, l.cell).val;
    std::vector<ConsistencyReport> reports;
    for (int k : get_list(cfg, "shift"))
        reports.push_back(consistency(l.model, val, k, geti(cfg, "trials"),
                                      derive_seed(cfg.at("seed").get<std::uint64_t>(), {5}), geti(cfg, "batch-size")));
    const std::string csv = consistency_csv(reports);
    write_text_file(out_dir(cfg) / "consistency.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

NeuronRanking rank_with(const Model& model, const GridDataset& val, RankMode mode) {
    const ModelTarget target(model);
    switch (mode) {
        case RankMode::Abs: return rank_abs(target, val);
        case RankMode::SignedLeft: return rank_signed(target, val.subset(region_subsets(val).left), Side::Left);
        case RankMode::SignedRight: return rank_signed(target, val.subset(region_subsets(val).right), Side::Right);
        case RankMode::KernelFlip1: return rank_kernel_flip(model, val, 1);
        case RankMode::KernelFlip2: return rank_kernel_flip(model, val, 2);
    }
    throw Error(ErrorKind::InvalidArgument, "unknown rank mode");
}

int cmd_rank(const json& cfg) {
    const Loaded l = load_model(cfg);
    const RankMode mode = parse_rank_mode(gets(cfg, "mode"));
    echo_config(cfg);
    const GridDataset val = load_data(cfg, l.grid_n, l.cell).val;
    write_text_file(out_dir(cfg) / "rankings.csv", rankings_csv(std::vector<NeuronRanking>{rank_with(l.model, val, mode)}));
    return 0;
}

int cmd_ablate(const json& cfg) {
    const Loaded l = load_model(cfg);
    const RankMode mode = parse_rank_mode(gets(cfg, "mode"));
    const Task task = probe_task(cfg, l);
    echo_config(cfg);
    const GridDataset val = load_data(cfg, l.grid_n, l.cell).val;
    const NeuronRanking ranking = rank_with(l.model, val, mode);
    std::vector<Region> regions{Region::All};
    if (task == Task::Location && l.grid_n > 1) regions = {Region::All, Region::Left, Region::Center, Region::Right};
    std::vector<std::uint64_t> seeds;
    for (int s : get_list(cfg, "seeds")) seeds.push_back(static_cast<std::uint64_t>(s));
    const AblationReport report = ablate_eval(l.model, ranking, get_list(cfg, "top-n"), val, regions, seeds, task,
                                              geti(cfg, "batch-size"));
    write_text_file(out_dir(cfg) / "rankings.csv", rankings_csv(std::vector<NeuronRanking>{ranking}));
    write_text_file(out_dir(cfg) / "ablation.csv", report.to_csv());
    return 0;
}

int cmd_region_attack(const json& cfg) {
    const Loaded l = load_model(cfg);
    need(l.grid_n >= 2, "region attack needs a grid of at least 2 columns");
    echo_config(cfg);
    const GridDataset val = load_data(cfg, l.grid_n, l.cell).val;
    const NeuronRanking left = rank_with(l.model, val, RankMode::SignedLeft);
    const NeuronRanking right = rank_with(l.model, val, RankMode::SignedRight);
    const AblationReport report = region_attack_eval(l.model, left, right, get_list(cfg, "top-n"), val,
                                                     geti(cfg, "batch-size"));
    write_text_file(out_dir(cfg) / "rankings.csv", rankings_csv(std::vector<NeuronRanking>{left, right}));
    write_text_file(out_dir(cfg) / "region_attack.csv", report.to_csv());
    return 0;
}

int cmd_repro(const json& cfg) {
    const ReproTarget target = parse_repro_target(gets(cfg, "target"));
    ReproConfig rc;
    rc.seed = cfg.at("seed").get<std::uint64_t>();
    rc.jobs = geti(cfg, "jobs");
    need(rc.jobs >= 1, "--jobs must be >= 1");
    if (const std::string dir = gets(cfg, "data-dir"); !dir.empty()) rc.data_dir = dir;
    rc.progress = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    echo_config(cfg);
    const ReproResult r = run_repro(target, rc, out_dir(cfg));
    std::fputs(summary_text(r.criteria).c_str(), stdout);
    return 0;
}

void add_options(Command& c, const json& defaults) {
    for (const auto& [name, value] : defaults.items()) {
        const OptionSpec& spec = option_table().at(name);
        const std::string flag = "--" + name;
        if (spec.kind == Kind::Flag) {
            c.flags[name] = false;
            c.app->add_flag(flag, c.flags[name], spec.help);
            continue;
        }
        CLI::Option* opt = c.app->add_option_function<std::string>(
            flag, [&c, name](const std::string& v) { c.raw[name] = v; }, spec.help);
        if (!spec.choices.empty()) opt->check(CLI::IsMember(spec.choices));
    }
    c.app->add_option("--config", c.config, "JSON file of option values (flags win)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Positional-information experiments on grid-placed image patches."};
    app.require_subcommand(1);
    const std::vector<std::pair<std::string, std::string>> commands{
        {"train", "train a model with cross-entropy"},
        {"augshift", "train with the two-view shift-consistency loss"},
        {"decode-frozen", "train a location readout on a frozen encoder"},
        {"eval", "accuracy overall and per region"},
        {"consistency", "agreement of predictions under random shifts"},
        {"rank", "rank latent channels"},
        {"ablate", "zero top-ranked or random channels and re-evaluate"},
        {"region-attack", "left/right ranked ablation matrix"},
        {"repro", "run a desk-scale experiment recipe"},
    };
    std::vector<Command> cmds(commands.size());
    try {
        for (std::size_t i = 0; i < commands.size(); ++i) {
            cmds[i].name = commands[i].first;
            cmds[i].app = app.add_subcommand(commands[i].first, commands[i].second);
            add_options(cmds[i], defaults_for(commands[i].first));
            if (commands[i].first == "repro")
                cmds[i]
                    .app->add_option("target", cmds[i].target, "all, table1, table2, fig4, fig5 or supp_s1")
                    ->required()
                    ->check(CLI::IsMember({"all", "table1", "table2", "fig4", "fig5", "supp_s1"}));
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (char& ch : msg)
            if (ch == '\n') ch = ' ';
        std::fprintf(stderr, "error: usage: %s\n", msg.c_str());
        return 2;
    }

    Command* cmd = nullptr;
    for (auto& c : cmds)
        if (c.app->parsed()) cmd = &c;

    try {
        const json cfg = resolve(*cmd);
        if (cmd->name == "train") return cmd_train(cfg, false);
        if (cmd->name == "augshift") return cmd_train(cfg, true);
        if (cmd->name == "decode-frozen") return cmd_decode_frozen(cfg);
        if (cmd->name == "eval") return cmd_eval(cfg);
        if (cmd->name == "consistency") return cmd_consistency(cfg);
        if (cmd->name == "rank") return cmd_rank(cfg);
        if (cmd->name == "ablate") return cmd_ablate(cfg);
        if (cmd->name == "region-attack") return cmd_region_attack(cfg);
        return cmd_repro(cfg);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
}
