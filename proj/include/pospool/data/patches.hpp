#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pospool {

enum class Split { Train, Val };

const char* to_string(Split split);

// 32x32 RGB images stored channel-planar (all R, then G, then B), one byte
// per pixel, with a class label in 0..9 per image.
class PatchSet {
public:
    static constexpr int kSide = 32;
    static constexpr int kChannels = 3;
    static constexpr std::size_t kImageBytes = kSide * kSide * kChannels;
    static constexpr int kClasses = 10;

    explicit PatchSet(Split split = Split::Train) : split_(split) {}

    Split split() const { return split_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }

    std::span<const std::uint8_t> image(std::size_t i) const {
        return {pixels_.data() + i * kImageBytes, kImageBytes};
    }
    int label(std::size_t i) const { return labels_[i]; }
    std::span<const int> labels() const { return labels_; }

    // Throws InvalidArgument on a wrong byte count or a label outside 0..9.
    void add(std::span<const std::uint8_t> image, int label);

    // First `count` images (or all of them if fewer).
    PatchSet head(std::size_t count) const;

private:
    Split split_;
    std::vector<std::uint8_t> pixels_;
    std::vector<int> labels_;
};

struct PatchSplits {
    PatchSet train{Split::Train};
    PatchSet val{Split::Val};
};

// Parses CIFAR-10 binary records: 1 label byte followed by 3072 pixel bytes.
// Throws ParseError when the length is not a multiple of 3073 or a label byte
// exceeds 9 (the error carries the record index).
PatchSet parse_cifar_records(std::span<const std::uint8_t> bytes, Split split);

// Reads data_batch_1..5.bin as the training split and test_batch.bin as the
// validation split.
PatchSplits load_cifar10(const std::filesystem::path& dir);

// Procedural 10-class images: each class has its own shape and hue, with
// seeded jitter in position, size, colour and background. Labels are
// balanced (every class count within one of count/10).
PatchSet synth_patches(std::size_t count, std::uint64_t seed, Split split = Split::Train);

// Train and validation sets drawn from disjoint seed streams.
PatchSplits synth_splits(std::size_t train_count, std::size_t val_count, std::uint64_t seed);

}  // namespace pospool
