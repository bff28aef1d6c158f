#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "helpers.hpp"
#include "pospool/data/grid.hpp"
#include "pospool/data/patches.hpp"
#include "pospool/data/transforms.hpp"
#include "pospool/error.hpp"

using namespace pospool;
using testing_util::random_array;

namespace {

std::vector<std::uint8_t> random_records(int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::uint8_t> bytes;
    for (int r = 0; r < count; ++r) {
        bytes.push_back(static_cast<std::uint8_t>(rng.below(10)));
        for (std::size_t k = 0; k < PatchSet::kImageBytes; ++k) bytes.push_back(static_cast<std::uint8_t>(rng.below(256)));
    }
    return bytes;
}

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
    return h;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Upper bound on |count - expected| for a binomial count at `sigmas`.
double binomial_bound(double trials, double p, double sigmas) { return sigmas * std::sqrt(trials * p * (1 - p)); }

// Per-cell sigma level at which `cells` simultaneous two-sided checks have
// the same false-alarm rate as a single 3-sigma check.
double family_sigmas(int cells) {
    const double alpha = std::erfc(3.0 / std::sqrt(2.0));
    const double per_cell = 1.0 - std::pow(1.0 - alpha, 1.0 / cells);
    double lo = 0, hi = 10;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (std::erfc(mid / std::sqrt(2.0)) > per_cell ? lo : hi) = mid;
    }
    return hi;
}

std::shared_ptr<const PatchSet> synth(std::size_t n, std::uint64_t seed) {
    return std::make_shared<const PatchSet>(synth_patches(n, seed));
}

}  // namespace

TEST(Cifar, TwoRecordsGiveTwoPatches) {
    const auto bytes = random_records(2, 1);
    const PatchSet set = parse_cifar_records(bytes, Split::Val);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(set.split(), Split::Val);
    EXPECT_EQ(set.label(0), bytes[0]);
    EXPECT_EQ(set.label(1), bytes[3073]);
}

TEST(Cifar, LabelAboveNineNamesTheRecord) {
    auto bytes = random_records(3, 2);
    bytes[2 * 3073] = 10;
    try {
        parse_cifar_records(bytes, Split::Train);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.record(), 2u);
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
    }
}

TEST(Cifar, LengthNotMultipleOfRecordIsRejected) {
    auto bytes = random_records(1, 3);
    bytes.push_back(0);
    EXPECT_THROW(parse_cifar_records(bytes, Split::Train), ParseError);
    EXPECT_EQ(parse_cifar_records({}, Split::Train).size(), 0u);
}

TEST(Cifar, ImageBytesMatchByteOffsetOracle) {
    const auto bytes = random_records(3, 4);
    const PatchSet set = parse_cifar_records(bytes, Split::Train);
    for (std::size_t r = 0; r < 3; ++r) {
        const std::uint8_t* slice = bytes.data() + r * 3073 + 1;
        EXPECT_EQ(fnv1a(set.image(r).data(), set.image(r).size()), fnv1a(slice, 3072)) << r;
    }
    // channel-planar: green pixel (y=5, x=7) of record 1
    EXPECT_EQ(set.image(1)[1024 + 5 * 32 + 7], bytes[3073 + 1 + 1024 + 5 * 32 + 7]);
}

TEST(Cifar, LoadsBatchesFromDirectory) {
    const auto dir = std::filesystem::temp_directory_path() / "pospool_data_test_cifar";
    std::filesystem::create_directories(dir);
    for (int b = 1; b <= 5; ++b) write_bytes(dir / ("data_batch_" + std::to_string(b) + ".bin"), random_records(b, 10 + b));
    write_bytes(dir / "test_batch.bin", random_records(4, 20));
    const PatchSplits s = load_cifar10(dir);
    EXPECT_EQ(s.train.size(), 15u);
    EXPECT_EQ(s.val.size(), 4u);
    EXPECT_EQ(s.train.split(), Split::Train);
    EXPECT_EQ(s.val.split(), Split::Val);
    std::filesystem::remove(dir / "test_batch.bin");
    try {
        load_cifar10(dir);
        FAIL() << "expected Error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
    }
    std::filesystem::remove_all(dir);
}

TEST(PatchSetTest, AddValidatesInput) {
    PatchSet set;
    std::vector<std::uint8_t> img(PatchSet::kImageBytes, 7);
    set.add(img, 9);
    EXPECT_THROW(set.add(img, 10), Error);
    EXPECT_THROW(set.add(img, -1), Error);
    img.pop_back();
    EXPECT_THROW(set.add(img, 0), Error);
    EXPECT_EQ(set.size(), 1u);
}

TEST(Synth, SameSeedSameBytes) {
    const PatchSet a = synth_patches(40, 5), b = synth_patches(40, 5), c = synth_patches(40, 6);
    bool any_diff = false;
    for (std::size_t i = 0; i < 40; ++i) {
        ASSERT_TRUE(std::equal(a.image(i).begin(), a.image(i).end(), b.image(i).begin()));
        EXPECT_EQ(a.label(i), b.label(i));
        any_diff |= !std::equal(a.image(i).begin(), a.image(i).end(), c.image(i).begin());
    }
    EXPECT_TRUE(any_diff);
}

TEST(Synth, ClassHistogramIsUniformWithinOne) {
    for (std::size_t count : {10u, 99u, 1000u, 1003u}) {
        const PatchSet set = synth_patches(count, 11);
        std::map<int, int> hist;
        for (int l : set.labels()) ++hist[l];
        ASSERT_EQ(hist.size(), 10u) << count;
        for (const auto& [label, n] : hist) EXPECT_LE(std::abs(n - static_cast<int>(count) / 10), 1) << count;
    }
}

TEST(Synth, SplitsComeFromDifferentStreams) {
    const PatchSplits s = synth_splits(20, 20, 3);
    EXPECT_EQ(s.train.split(), Split::Train);
    EXPECT_EQ(s.val.split(), Split::Val);
    EXPECT_FALSE(std::equal(s.train.image(0).begin(), s.train.image(0).end(), s.val.image(0).begin()));
}

TEST(Grid, SingleCellCanvasIsThePatch) {
    const auto patches = synth(5, 1);
    const GridDataset data = make_grid_dataset(patches, 1, 9);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const GridSample s = data.sample(i);
        EXPECT_EQ(s.location_label, 0);
        EXPECT_EQ(s.canvas.shape, (Shape{3, 32, 32}));
        for (std::size_t k = 0; k < s.canvas.size(); ++k)
            ASSERT_FLOAT_EQ(s.canvas.data[k], static_cast<float>(patches->image(i)[k]) / 255.0f);
    }
}

TEST(Grid, RowMajorLocationLabel) {
    const GridDataset data = make_grid_dataset(synth(200, 2), 3, 4);
    bool seen = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const GridSample s = data.sample(i);
        EXPECT_EQ(s.location_label, s.row() * 3 + s.col());
        if (data.row(i) == 1 && data.col(i) == 2) {
            EXPECT_EQ(data.location(i), 5);
            seen = true;
        }
    }
    EXPECT_TRUE(seen);
}

TEST(Grid, LocationFrequenciesWithinBinomialBounds) {
    const auto patches = synth(10000, 3);
    for (int n : {3, 5, 7}) {
        const GridDataset data = make_grid_dataset(patches, n, 17);
        std::vector<int> counts(static_cast<std::size_t>(n * n));
        for (int loc : data.labels(Task::Location)) ++counts[static_cast<std::size_t>(loc)];
        const double p = 1.0 / (n * n);
        const double bound = binomial_bound(10000, p, family_sigmas(n * n));
        for (int c : counts) EXPECT_LE(std::abs(c - 10000 * p), bound) << "n=" << n;
    }
}

TEST(Grid, NonzeroPixelsStayInsideTheLabelledCell) {
    const auto patches = synth(30, 4);
    for (int cell : {32, 8}) {
        for (int n : {1, 3, 5, 7}) {
            const GridDataset data = make_grid_dataset(patches, n, 5, cell);
            for (std::size_t i = 0; i < data.size(); ++i) {
                const GridSample s = data.sample(i);
                const int side = cell * n;
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < side; ++y)
                        for (int x = 0; x < side; ++x) {
                            const float v = s.canvas.data[(static_cast<std::size_t>(c) * side + y) * side + x];
                            const bool inside = y / cell == s.row() && x / cell == s.col();
                            if (!inside) ASSERT_EQ(v, 0.0f) << "n=" << n << " cell=" << cell;
                        }
            }
        }
    }
}

TEST(Grid, DownscaledCellIsTheBlockMean) {
    const auto patches = synth(3, 6);
    const GridDataset data = make_grid_dataset(patches, 3, 1, 8);
    const GridSample s = data.sample(2);
    const auto img = patches->image(2);
    for (int c = 0; c < 3; ++c)
        for (int py = 0; py < 8; ++py)
            for (int px = 0; px < 8; ++px) {
                double sum = 0;
                for (int k = 0; k < 16; ++k) sum += img[c * 1024 + (py * 4 + k / 4) * 32 + px * 4 + k % 4];
                const int y = s.row() * 8 + py, x = s.col() * 8 + px;
                EXPECT_NEAR(s.canvas.data[(c * 24 + y) * 24 + x], sum / 16 / 255, 1e-6);
            }
}

TEST(Grid, GenerationIsReproducible) {
    const auto patches = synth(50, 7);
    const GridDataset a = make_grid_dataset(patches, 5, 3), b = make_grid_dataset(*patches, 5, 3);
    const GridDataset c = make_grid_dataset(patches, 5, 4);
    EXPECT_EQ(a.labels(Task::Location), b.labels(Task::Location));
    EXPECT_NE(a.labels(Task::Location), c.labels(Task::Location));
    EXPECT_EQ(a.batch_range(0, 50, Task::Classify).x, b.batch_range(0, 50, Task::Classify).x);
}

TEST(Grid, BatchAndSubset) {
    const GridDataset data = make_grid_dataset(synth(20, 8), 3, 2);
    const std::vector<std::size_t> idx{4, 1, 7};
    const Batch b = data.batch(idx, Task::Classify);
    EXPECT_EQ(b.x.shape, (Shape{3, 3, 96, 96}));
    const GridDataset sub = data.subset(idx);
    ASSERT_EQ(sub.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(b.labels[k], data.class_label(idx[k]));
        EXPECT_EQ(sub.location(k), data.location(idx[k]));
    }
    EXPECT_EQ(sub.batch_range(0, 3, Task::Classify).x, b.x);
    EXPECT_THROW(data.subset(std::vector<std::size_t>{20}), Error);
}

TEST(Grid, InvalidArguments) {
    EXPECT_THROW(make_grid_dataset(PatchSet{}, 3, 0), Error);
    const auto patches = synth(2, 1);
    EXPECT_THROW(make_grid_dataset(patches, 0, 0), Error);
    EXPECT_THROW(make_grid_dataset(patches, 3, 0, 5), Error);
    EXPECT_EQ(make_grid_dataset(patches, 4, 0).num_classes(Task::Location), 16);  // warns only
    EXPECT_EQ(make_grid_dataset(patches, 3, 0).num_classes(Task::Classify), 10);
}

TEST(Flip, InvolutionAndSymmetricFixedPoint) {
    const auto x = random_array({2, 3, 5, 6}, 1);
    EXPECT_EQ(hflip(hflip(x)), x);
    Array<float> sym({1, 2, 4});
    sym.data = {1, 2, 2, 1, 5, 0, 0, 5};
    EXPECT_EQ(hflip(sym), sym);
    EXPECT_EQ(hflip(x).data[5], x.data[0]);
}

TEST(Flip, MapsLocationToMirroredColumn) {
    const auto patches = synth(40, 9);
    for (int n : {1, 3, 5, 7}) {
        const GridDataset data = make_grid_dataset(patches, n, 6, 8);
        const GridDataset mirror = data.mirrored();
        EXPECT_TRUE(mirror.is_mirrored());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const GridSample s = data.sample(i);
            const GridSample m = mirror.sample(i);
            EXPECT_EQ(m.row(), s.row());
            EXPECT_EQ(m.col(), n - 1 - s.col());
            ASSERT_EQ(hflip(s.canvas), m.canvas) << "n=" << n;
        }
        EXPECT_EQ(mirror.mirrored().labels(Task::Location), data.labels(Task::Location));
    }
}

TEST(Shift, ZeroShiftIsIdentity) {
    const auto x = random_array({3, 7, 9}, 2);
    for (PaddingMode m : {PaddingMode::Zero, PaddingMode::Reflect, PaddingMode::Replicate})
        EXPECT_EQ(shift_image(x, 0, 0, m), x);
}

TEST(Shift, FullWidthShiftClearsTheImage) {
    const auto x = random_array({3, 7, 9}, 3, 0.1, 1);
    for (int dx : {9, -9, 20}) {
        const auto y = shift_image(x, dx, 0);
        for (float v : y.data) ASSERT_EQ(v, 0.0f);
    }
    for (float v : shift_image(x, 0, -7).data) ASSERT_EQ(v, 0.0f);
}

TEST(Shift, MovesContentRightAndDown) {
    Array<float> x({1, 3, 3});
    x.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    EXPECT_EQ(shift_image(x, 1, 0).data, (std::vector<float>{0, 1, 2, 0, 4, 5, 0, 7, 8}));
    EXPECT_EQ(shift_image(x, 0, -1).data, (std::vector<float>{4, 5, 6, 7, 8, 9, 0, 0, 0}));
    EXPECT_EQ(shift_image(x, 1, 0, PaddingMode::Replicate).data, (std::vector<float>{1, 1, 2, 4, 4, 5, 7, 7, 8}));
    EXPECT_EQ(shift_image(x, 1, 0, PaddingMode::Reflect).data, (std::vector<float>{2, 1, 2, 5, 4, 5, 8, 7, 8}));
}

TEST(Shift, RoundTripRestoresTheSurvivingWindow) {
    const auto x = random_array({2, 3, 8, 10}, 4, 0.5, 1);
    const int h = 8, w = 10;
    for (int dx = -4; dx <= 4; dx += 2)
        for (int dy = -3; dy <= 3; ++dy) {
            const auto back = shift_image(shift_image(x, dx, dy), -dx, -dy);
            for (std::size_t p = 0; p < 6; ++p)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const bool survived = y + dy >= 0 && y + dy < h && xx + dx >= 0 && xx + dx < w;
                        const std::size_t k = (p * h + y) * w + xx;
                        ASSERT_EQ(back.data[k], survived ? x.data[k] : 0.0f) << dx << "," << dy;
                    }
        }
}

TEST(AugShift, ZeroMaxShiftReturnsCopies) {
    const auto x = random_array({3, 8, 8}, 5);
    const auto p = augshift_pair(x, 0, 1);
    EXPECT_EQ(p.x1, x);
    EXPECT_EQ(p.x2, x);
    EXPECT_THROW(augshift_pair(x, -1, 1), Error);
}

TEST(AugShift, DrawsWithinBoundsAndApplied) {
    const auto x = random_array({3, 12, 12}, 6);
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto [a, b] = draw_shift_pair(3, s);
        for (int v : {a.dx, a.dy, b.dx, b.dy}) ASSERT_LE(std::abs(v), 3);
        if (s < 50) {
            const auto p = augshift_pair(x, 3, s);
            EXPECT_EQ(p.s1.dx, a.dx);
            EXPECT_EQ(p.s2.dy, b.dy);
            EXPECT_EQ(p.x1, shift_image(x, a.dx, a.dy));
            EXPECT_EQ(p.x2, shift_image(x, b.dx, b.dy));
        }
    }
}

TEST(AugShift, LatticeFrequenciesWithinBinomialBounds) {
    const int s = 2, side = 2 * s + 1;
    const int draws = 20000;
    std::vector<int> counts(static_cast<std::size_t>(side * side));
    for (int k = 0; k < draws / 2; ++k) {
        const auto [a, b] = draw_shift_pair(s, derive_seed(99, {static_cast<std::uint64_t>(k)}));
        ++counts[static_cast<std::size_t>((a.dy + s) * side + a.dx + s)];
        ++counts[static_cast<std::size_t>((b.dy + s) * side + b.dx + s)];
    }
    const double p = 1.0 / (side * side);
    for (int c : counts) EXPECT_LE(std::abs(c - draws * p), binomial_bound(draws, p, family_sigmas(side * side)));
}

TEST(Stats, FamilySigmas) {
    EXPECT_NEAR(family_sigmas(1), 3.0, 1e-9);
    EXPECT_GT(family_sigmas(25), 3.5);
    EXPECT_LT(family_sigmas(49), 4.2);
}

TEST(Regions, ColumnBands) {
    auto cols = [](int n, Region r) {
        std::set<int> out;
        for (int c = 0; c < n; ++c)
            if (column_in_region(c, n, r)) out.insert(c);
        return out;
    };
    EXPECT_EQ(cols(3, Region::Left), (std::set<int>{0}));
    EXPECT_EQ(cols(3, Region::Right), (std::set<int>{2}));
    EXPECT_EQ(cols(3, Region::Center), (std::set<int>{1}));
    EXPECT_EQ(cols(5, Region::Left), (std::set<int>{0, 1}));
    EXPECT_EQ(cols(5, Region::Right), (std::set<int>{3, 4}));
    EXPECT_EQ(cols(5, Region::Center), (std::set<int>{1, 2, 3}));
    EXPECT_EQ(cols(7, Region::Center), (std::set<int>{2, 3, 4}));
    EXPECT_EQ(cols(4, Region::Left), (std::set<int>{0, 1}));
    EXPECT_EQ(cols(4, Region::Right), (std::set<int>{2, 3}));
    EXPECT_EQ(cols(1, Region::Left), (std::set<int>{}));
    EXPECT_EQ(cols(5, Region::All).size(), 5u);
}

TEST(Regions, FiveByFiveLeftHalfHoldsTenLocations) {
    int left = 0;
    for (int loc = 0; loc < 25; ++loc) left += column_in_region(loc % 5, 5, Region::Left);
    EXPECT_EQ(left, 10);
}

TEST(Regions, SubsetsMatchBruteForce) {
    const GridDataset data = make_grid_dataset(synth(300, 10), 5, 8);
    const RegionSubsets rs = region_subsets(data);
    std::vector<std::size_t> left, right;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.col(i) < 2) left.push_back(i);
        if (data.col(i) > 2) right.push_back(i);
    }
    EXPECT_EQ(rs.left, left);
    EXPECT_EQ(rs.right, right);
    EXPECT_FALSE(left.empty());
    // mirroring swaps the halves
    const RegionSubsets ms = region_subsets(data.mirrored());
    EXPECT_EQ(ms.left, right);
    EXPECT_EQ(ms.right, left);
}
