#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "pospool/data/patches.hpp"
#include "pospool/tensor/array.hpp"

namespace pospool {

enum class Task { Location, Classify };

const char* to_string(Task task);
Task parse_task(std::string_view text);

// One patch on an otherwise black n x n canvas.
struct GridSample {
    Array<float> canvas;  // [3, cell*n, cell*n], values in [0, 1]
    int location_label = 0;  // row * n + col
    int class_label = 0;
    int grid_n = 1;

    int row() const { return location_label / grid_n; }
    int col() const { return location_label % grid_n; }
};

struct Batch {
    Array<float> x;  // [N, 3, side, side]
    std::vector<int> labels;
};

// Grid task over a patch set. Sample i always uses patch i; its cell is drawn
// uniformly from a stream keyed on (seed, i). Canvases are rendered on demand.
//
// `cell` is the side of one grid cell in pixels. At 32 the patch is pasted
// unchanged; smaller divisors of 32 area-average the patch down first.
class GridDataset {
public:
    GridDataset(std::shared_ptr<const PatchSet> patches, int grid_n, std::uint64_t seed, int cell = 32);

    std::size_t size() const { return patch_index_.size(); }
    int grid_n() const { return grid_n_; }
    int cell() const { return cell_; }
    int canvas_side() const { return cell_ * grid_n_; }
    Shape sample_shape() const { return {PatchSet::kChannels, canvas_side(), canvas_side()}; }
    int num_classes(Task task) const;

    int location(std::size_t i) const { return location_[i]; }
    int row(std::size_t i) const { return location_[i] / grid_n_; }
    int col(std::size_t i) const { return location_[i] % grid_n_; }
    int class_label(std::size_t i) const { return patches_->label(patch_index_[i]); }
    int label(std::size_t i, Task task) const;
    std::vector<int> labels(Task task) const;

    GridSample sample(std::size_t i) const;
    // Writes sample i's canvas (3 * side * side floats) to dst.
    void render(std::size_t i, float* dst) const;
    Batch batch(std::span<const std::size_t> indices, Task task) const;
    Batch batch_range(std::size_t first, std::size_t count, Task task) const;

    // Samples `indices` in the given order, sharing the patch storage.
    GridDataset subset(std::span<const std::size_t> indices) const;
    // Every canvas flipped horizontally, with columns relabelled to match.
    GridDataset mirrored() const;
    bool is_mirrored() const { return mirrored_; }

private:
    GridDataset() = default;

    std::shared_ptr<const PatchSet> patches_;
    std::vector<std::size_t> patch_index_;
    std::vector<int> location_;
    int grid_n_ = 1;
    int cell_ = 32;
    bool mirrored_ = false;
};

// Throws InvalidArgument for an empty patch set, grid_n < 1 or a cell size
// that does not divide 32. Grid sizes outside {1, 3, 5, 7} only warn.
GridDataset make_grid_dataset(const PatchSet& patches, int grid_n, std::uint64_t seed, int cell = 32);
GridDataset make_grid_dataset(std::shared_ptr<const PatchSet> patches, int grid_n, std::uint64_t seed,
                              int cell = 32);

// Column bands of the grid: left = [0, floor(n/2)), right = [ceil(n/2), n),
// center = the columns within (ceil(n/2) - 1) / 2 of the middle, which
// overlaps both halves once n >= 5.
enum class Region { All, Left, Right, Center };

const char* to_string(Region region);
bool column_in_region(int col, int grid_n, Region region);
std::vector<std::size_t> region_indices(const GridDataset& data, Region region);

struct RegionSubsets {
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
};

RegionSubsets region_subsets(const GridDataset& data);

}  // namespace pospool
