#include "pospool/data/patches.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "pospool/error.hpp"
#include "pospool/rng.hpp"

namespace pospool {

namespace {

constexpr std::size_t kRecordBytes = 1 + PatchSet::kImageBytes;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double f = h * 6.0;
    const int sector = static_cast<int>(f) % 6;
    const double frac = f - std::floor(f);
    const double p = v * (1 - s), q = v * (1 - s * frac), t = v * (1 - s * (1 - frac));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

// Shape membership in coordinates normalized by the object radius.
bool inside_shape(int cls, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    switch (cls) {
        case 0: return u * u + v * v <= 1.0;
        case 1: return std::max(au, av) <= 0.8;
        case 2: return v <= 0.8 && v >= -0.9 && au <= (v + 0.9) * 0.55;
        case 3: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
        case 4: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.36;
        }
        case 5: return au <= 1.0 && av <= 0.35;
        case 6: return au + av <= 1.0;
        case 7: return (au - 0.5) * (au - 0.5) + v * v <= 0.2;
        case 8: return std::abs(au - av) <= 0.3 && std::max(au, av) <= 1.0;
        default: return av <= 0.9 && au <= 0.9 && !(v < 0.3 && au < 0.5);
    }
}

void render_synth(int cls, Rng& rng, std::uint8_t* out) {
    constexpr int side = PatchSet::kSide;
    const double cx = (side - 1) / 2.0 + rng.uniform(-5, 5);
    const double cy = (side - 1) / 2.0 + rng.uniform(-5, 5);
    const double radius = rng.uniform(7, 11);
    const auto fg = hsv_to_rgb(cls / 10.0 + rng.uniform(-0.03, 0.03), rng.uniform(0.6, 1), rng.uniform(0.65, 1));
    const auto bg = hsv_to_rgb(rng.uniform(), rng.uniform(0, 0.5), rng.uniform(0.08, 0.35));
    constexpr double noise = 0.06;
    const std::size_t plane = side * side;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const bool in = inside_shape(cls, (x - cx) / radius, (y - cy) / radius);
            const auto& c = in ? fg : bg;
            for (int ch = 0; ch < PatchSet::kChannels; ++ch) {
                const double value = std::clamp(c[ch] + rng.uniform(-noise, noise), 0.0, 1.0);
                out[ch * plane + y * side + x] = static_cast<std::uint8_t>(std::lround(value * 255));
            }
        }
    }
}

}  // namespace

const char* to_string(Split split) { return split == Split::Train ? "train" : "val"; }

void PatchSet::add(std::span<const std::uint8_t> image, int label) {
    if (image.size() != kImageBytes)
        throw Error(ErrorKind::InvalidArgument, "patch must have " + std::to_string(kImageBytes) + " bytes, got " +
                                                    std::to_string(image.size()));
    if (label < 0 || label >= kClasses)
        throw Error(ErrorKind::InvalidArgument, "patch label " + std::to_string(label) + " outside 0..9");
    pixels_.insert(pixels_.end(), image.begin(), image.end());
    labels_.push_back(label);
}

PatchSet PatchSet::head(std::size_t count) const {
    PatchSet out(split_);
    count = std::min(count, size());
    out.pixels_.assign(pixels_.begin(), pixels_.begin() + static_cast<std::ptrdiff_t>(count * kImageBytes));
    out.labels_.assign(labels_.begin(), labels_.begin() + static_cast<std::ptrdiff_t>(count));
    return out;
}

PatchSet parse_cifar_records(std::span<const std::uint8_t> bytes, Split split) {
    if (bytes.size() % kRecordBytes != 0)
        throw ParseError("length " + std::to_string(bytes.size()) + " is not a multiple of " +
                         std::to_string(kRecordBytes));
    PatchSet out(split);
    const std::size_t count = bytes.size() / kRecordBytes;
    for (std::size_t r = 0; r < count; ++r) {
        const auto record = bytes.subspan(r * kRecordBytes, kRecordBytes);
        if (record[0] > 9) throw ParseError("label byte " + std::to_string(record[0]) + " exceeds 9", r);
        out.add(record.subspan(1), record[0]);
    }
    return out;
}

PatchSplits load_cifar10(const std::filesystem::path& dir) {
    PatchSplits out;
    for (int b = 1; b <= 5; ++b) {
        const auto path = dir / ("data_batch_" + std::to_string(b) + ".bin");
        const PatchSet part = parse_cifar_records(read_file(path), Split::Train);
        for (std::size_t i = 0; i < part.size(); ++i) out.train.add(part.image(i), part.label(i));
    }
    out.val = parse_cifar_records(read_file(dir / "test_batch.bin"), Split::Val);
    return out;
}

PatchSet synth_patches(std::size_t count, std::uint64_t seed, Split split) {
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % PatchSet::kClasses);
    Rng(derive_seed(seed, {~0ULL})).shuffle(labels);

    PatchSet out(split);
    std::vector<std::uint8_t> image(PatchSet::kImageBytes);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, {i}));
        render_synth(labels[i], rng, image.data());
        out.add(image, labels[i]);
    }
    return out;
}

PatchSplits synth_splits(std::size_t train_count, std::size_t val_count, std::uint64_t seed) {
    return {synth_patches(train_count, derive_seed(seed, {0}), Split::Train),
            synth_patches(val_count, derive_seed(seed, {1}), Split::Val)};
}

}  // namespace pospool
