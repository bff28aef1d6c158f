#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pospool/error.hpp"
#include "pospool/experiments/repro.hpp"

using namespace pospool;
namespace fs = std::filesystem;

namespace {

// Every recipe at a size that runs in seconds. The numbers are meaningless;
// only the plumbing is under test.
ReproConfig tiny() {
    ReproConfig c;
    c.num_seeds = 1;
    c.location_train = 20;
    c.location_val = 10;
    c.location_epochs = 1;
    c.classify_train = 20;
    c.classify_val = 10;
    c.classify_epochs = 1;
    c.augshift_train = 10;
    c.augshift_val = 8;
    c.augshift_epochs = 1;
    c.consistency_trials = 1;
    c.probe_val = 20;
    c.random_seeds = 2;
    c.decode_train = 20;
    c.decode_val = 10;
    c.decode_epochs = 1;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pospool_repro_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Repro, TargetNamesRoundTrip) {
    for (auto t : {ReproTarget::All, ReproTarget::Table1, ReproTarget::Table2, ReproTarget::Fig4, ReproTarget::Fig5,
                   ReproTarget::SuppS1})
        EXPECT_EQ(parse_repro_target(to_string(t)), t);
    EXPECT_THROW(parse_repro_target("table3"), Error);
}

TEST(Repro, ConfigValidation) {
    EXPECT_NO_THROW(ReproConfig{}.validate());
    ReproConfig c;
    c.cell = 5;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.shifts = {0, 40};
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.num_seeds = 0;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Repro, SummaryListsFailuresById) {
    const std::string s = summary_text({{"C1", true, "ok"}, {"C2", false, "gap"}, {"C5", false, "x"}});
    EXPECT_EQ(s, "C1 PASS ok\nC2 FAIL gap\nC5 FAIL x\nresult: FAIL C2 C5\n");
    EXPECT_EQ(summary_text({{"C3", true, "fine"}}), "C3 PASS fine\nresult: PASS\n");
}

TEST(Repro, DropColumns) {
    EXPECT_EQ(drop_csv_columns("a,wall_ms,b\n1,2,3\n4,,6\n", {"wall_ms"}), "a,b\n1,3\n4,6\n");
    EXPECT_EQ(drop_csv_columns("a,b,wall_ms\n1,2,\n", {"wall_ms"}), "a,b\n1,2\n");
    EXPECT_EQ(drop_csv_columns("a,b\n1,2\n", {"wall_ms"}), "a,b\n1,2\n");
}

TEST(Repro, TreeDiffSeesContentButNotWallTime) {
    const fs::path a = scratch("diff_a"), b = scratch("diff_b");
    fs::create_directories(a / "sub");
    fs::create_directories(b / "sub");
    std::ofstream(a / "sub" / "log.csv") << "epoch,wall_ms\n1,12.5\n";
    std::ofstream(b / "sub" / "log.csv") << "epoch,wall_ms\n1,99.0\n";
    EXPECT_TRUE(diff_csv_trees(a, b).empty());
    std::ofstream(b / "sub" / "log.csv") << "epoch,wall_ms\n2,99.0\n";
    EXPECT_EQ(diff_csv_trees(a, b).size(), 1u);
    std::ofstream(b / "extra.csv") << "x\n";
    EXPECT_EQ(diff_csv_trees(a, b).size(), 2u);
    EXPECT_FALSE(diff_csv_trees(scratch("none_a"), scratch("none_b")).empty());
}

TEST(Repro, EveryTargetWritesItsReportsAndSummary) {
    const fs::path out = scratch("all");
    ReproConfig cfg = tiny();
    std::vector<std::string> progress;
    cfg.progress = [&](const std::string& line) { progress.push_back(line); };
    const ReproResult r = run_repro(ReproTarget::All, cfg, out);
    ASSERT_EQ(r.criteria.size(), 6u);
    const char* ids[] = {"C1", "C2", "C3", "C4", "C5", "C6"};
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.criteria[i].id, ids[i]);
    EXPECT_FALSE(progress.empty());
    EXPECT_EQ(slurp(out / "summary.txt"), summary_text(r.criteria));
    for (const char* f : {"table1/accuracy.csv", "table1/means.csv", "table2/results.csv", "table2/means.csv",
                          "fig4/rankings.csv", "fig4/ablation.csv", "fig5/matrix.csv", "supp_s1/decode.csv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    // 3 grids x 2 archs location + 2 classify, one seed
    const std::string acc = slurp(out / "table1" / "accuracy.csv");
    EXPECT_EQ(std::count(acc.begin(), acc.end(), '\n'), 9);
    // fig4 and fig5 share the seed's probe model
    EXPECT_TRUE(fs::exists(out / "fig4" / "models" / "location_linear_baseline_n5_s0.ppl"));
    EXPECT_FALSE(fs::exists(out / "fig5" / "models"));
}

TEST(Repro, SameSeedGivesIdenticalCsvs) {
    const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    ReproConfig cfg = tiny();
    run_repro(ReproTarget::Table1, cfg, a);
    cfg.jobs = 3;  // scheduling must not matter
    run_repro(ReproTarget::Table1, cfg, b);
    EXPECT_EQ(diff_csv_trees(a, b), std::vector<std::string>{});
    cfg.seed = 9;
    run_repro(ReproTarget::Table1, cfg, c);
    EXPECT_FALSE(diff_csv_trees(a, c).empty());
}
