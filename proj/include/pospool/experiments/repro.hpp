#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pospool {

// Desk-scale experiment recipes. Each target writes CSVs under
// out_dir/<target>/ and contributes PASS/FAIL lines to out_dir/summary.txt.
//
//   table1   location and classification accuracy, GAPNet vs PermuteNet  (C1, C2)
//   table2   AugShift vs baseline: top-1 and shift consistency            (C3)
//   fig4     ranked vs random channel ablation                            (C4)
//   fig5     left/right region attack                                     (C5)
//   supp_s1  frozen-encoder location decoding with and without shuffle   (C6)
enum class ReproTarget { All, Table1, Table2, Fig4, Fig5, SuppS1 };

const char* to_string(ReproTarget target);
ReproTarget parse_repro_target(std::string_view text);

struct ReproConfig {
    std::uint64_t seed = 0;
    int num_seeds = 3;
    // CIFAR-10 binary batches; synthetic patches when unset.
    std::optional<std::filesystem::path> data_dir;
    // Worker threads across independent runs. Results do not depend on it.
    int jobs = 1;
    int cell = 8;
    double lr = 1e-3;
    int batch_size = 64;

    int location_train = 300;
    int location_val = 200;
    int location_epochs = 20;

    int classify_grid = 3;
    int classify_train = 1000;
    int classify_val = 300;
    int classify_epochs = 50;
    int classify_patience = 5;

    // Plain image classification for table2.
    int augshift_train = 300;
    int augshift_val = 500;
    int augshift_epochs = 30;
    double lambda = 1.0;
    int max_shift = 8;
    std::vector<int> shifts{0, 2, 4, 8};
    int consistency_trials = 4;

    // Location model probed by fig4 / fig5.
    int probe_grid = 5;
    int probe_train = 1000;
    int probe_val = 500;
    int random_seeds = 5;

    // Classification-trained encoder, then a location readout on its
    // frozen feature map.
    int decode_grid = 5;
    int decode_train = 1000;
    int decode_val = 500;
    int decode_epochs = 1000;
    double decode_lr = 1e-2;  // the readout alone; features are cached

    // Progress lines; nothing is printed when empty.
    std::function<void(const std::string&)> progress;

    // Throws Error(Config) on non-positive sizes or counts.
    void validate() const;
};

struct CriterionResult {
    std::string id;  // "C1".."C8"
    bool pass = false;
    std::string detail;
};

struct ReproResult {
    std::vector<CriterionResult> criteria;
    double wall_seconds = 0;
};

// Runs `target` (every target for All), writes its CSVs, models and
// out_dir/summary.txt. Nothing is written outside out_dir.
ReproResult run_repro(ReproTarget target, const ReproConfig& config, const std::filesystem::path& out_dir);

// One line per criterion ("C1 PASS ..."), then "result: PASS" or
// "result: FAIL C2 C5".
std::string summary_text(const std::vector<CriterionResult>& criteria);

// Compares every *.csv below two directories, ignoring the columns named in
// `ignored_columns`. Returns one line per difference; empty when identical.
std::vector<std::string> diff_csv_trees(const std::filesystem::path& a, const std::filesystem::path& b,
                                        const std::vector<std::string>& ignored_columns = {"wall_ms"});

// Removes the named columns from CSV text (header decides which).
std::string drop_csv_columns(std::string_view csv, const std::vector<std::string>& columns);

}  // namespace pospool
