#include "pospool/data/grid.hpp"

#include <algorithm>
#include <iostream>

#include "pospool/error.hpp"
#include "pospool/rng.hpp"

namespace pospool {

const char* to_string(Task task) { return task == Task::Location ? "location" : "classify"; }

Task parse_task(std::string_view text) {
    if (text == "location") return Task::Location;
    if (text == "classify") return Task::Classify;
    throw Error(ErrorKind::InvalidArgument, "unknown task '" + std::string(text) + "'");
}

GridDataset::GridDataset(std::shared_ptr<const PatchSet> patches, int grid_n, std::uint64_t seed, int cell)
    : patches_(std::move(patches)), grid_n_(grid_n), cell_(cell) {
    if (!patches_ || patches_->empty()) throw Error(ErrorKind::InvalidArgument, "grid dataset: empty patch set");
    if (grid_n < 1) throw Error(ErrorKind::InvalidArgument, "grid dataset: grid size must be >= 1");
    if (cell < 1 || cell > PatchSet::kSide || PatchSet::kSide % cell != 0)
        throw Error(ErrorKind::InvalidArgument, "grid dataset: cell size " + std::to_string(cell) +
                                                    " does not divide " + std::to_string(PatchSet::kSide));
    const std::size_t n = patches_->size();
    const auto cells = static_cast<std::uint64_t>(grid_n) * static_cast<std::uint64_t>(grid_n);
    patch_index_.resize(n);
    location_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        patch_index_[i] = i;
        location_[i] = static_cast<int>(Rng(derive_seed(seed, {i})).below(cells));
    }
}

int GridDataset::num_classes(Task task) const {
    return task == Task::Location ? grid_n_ * grid_n_ : PatchSet::kClasses;
}

int GridDataset::label(std::size_t i, Task task) const {
    return task == Task::Location ? location_[i] : class_label(i);
}

std::vector<int> GridDataset::labels(Task task) const {
    std::vector<int> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = label(i, task);
    return out;
}

void GridDataset::render(std::size_t i, float* dst) const {
    const int side = canvas_side();
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    std::fill(dst, dst + plane * PatchSet::kChannels, 0.0f);
    const auto image = patches_->image(patch_index_[i]);
    const int factor = PatchSet::kSide / cell_;
    const float scale = 1.0f / (255.0f * static_cast<float>(factor * factor));
    const int y0 = row(i) * cell_, x0 = col(i) * cell_;
    for (int c = 0; c < PatchSet::kChannels; ++c) {
        const std::uint8_t* src = image.data() + static_cast<std::size_t>(c) * PatchSet::kSide * PatchSet::kSide;
        float* out = dst + c * plane;
        for (int py = 0; py < cell_; ++py) {
            for (int px = 0; px < cell_; ++px) {
                int acc = 0;
                for (int sy = 0; sy < factor; ++sy)
                    for (int sx = 0; sx < factor; ++sx)
                        acc += src[(py * factor + sy) * PatchSet::kSide + px * factor + sx];
                const int x = x0 + (mirrored_ ? cell_ - 1 - px : px);
                out[static_cast<std::size_t>(y0 + py) * side + x] = static_cast<float>(acc) * scale;
            }
        }
    }
}

GridSample GridDataset::sample(std::size_t i) const {
    GridSample s;
    s.canvas = Array<float>(sample_shape());
    render(i, s.canvas.ptr());
    s.location_label = location_[i];
    s.class_label = class_label(i);
    s.grid_n = grid_n_;
    return s;
}

Batch GridDataset::batch(std::span<const std::size_t> indices, Task task) const {
    Shape shape = sample_shape();
    const std::size_t per = numel(shape);
    shape.insert(shape.begin(), static_cast<int>(indices.size()));
    Batch b{Array<float>(shape), {}};
    b.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        render(indices[k], b.x.ptr() + k * per);
        b.labels.push_back(label(indices[k], task));
    }
    return b;
}

Batch GridDataset::batch_range(std::size_t first, std::size_t count, Task task) const {
    std::vector<std::size_t> idx(count);
    for (std::size_t k = 0; k < count; ++k) idx[k] = first + k;
    return batch(idx, task);
}

GridDataset GridDataset::subset(std::span<const std::size_t> indices) const {
    GridDataset out;
    out.patches_ = patches_;
    out.grid_n_ = grid_n_;
    out.cell_ = cell_;
    out.mirrored_ = mirrored_;
    for (std::size_t i : indices) {
        if (i >= size())
            throw Error(ErrorKind::InvalidArgument, "grid dataset: subset index " + std::to_string(i) + " out of range");
        out.patch_index_.push_back(patch_index_[i]);
        out.location_.push_back(location_[i]);
    }
    return out;
}

GridDataset GridDataset::mirrored() const {
    GridDataset out = *this;
    out.mirrored_ = !mirrored_;
    for (int& loc : out.location_) {
        const int r = loc / grid_n_, c = loc % grid_n_;
        loc = r * grid_n_ + (grid_n_ - 1 - c);
    }
    return out;
}

GridDataset make_grid_dataset(std::shared_ptr<const PatchSet> patches, int grid_n, std::uint64_t seed, int cell) {
    if (grid_n != 1 && grid_n != 3 && grid_n != 5 && grid_n != 7)
        std::cerr << "warning: grid size " << grid_n << " is outside {1,3,5,7}\n";
    return GridDataset(std::move(patches), grid_n, seed, cell);
}

GridDataset make_grid_dataset(const PatchSet& patches, int grid_n, std::uint64_t seed, int cell) {
    return make_grid_dataset(std::make_shared<const PatchSet>(patches), grid_n, seed, cell);
}

const char* to_string(Region region) {
    switch (region) {
        case Region::All: return "all";
        case Region::Left: return "left";
        case Region::Right: return "right";
        case Region::Center: return "center";
    }
    return "all";
}

bool column_in_region(int col, int grid_n, Region region) {
    switch (region) {
        case Region::All: return true;
        case Region::Left: return col < grid_n / 2;
        case Region::Right: return col >= (grid_n + 1) / 2;
        case Region::Center: {
            // Twice the distance from the middle column, compared against the
            // band's half-width (ceil(n/2) - 1) / 2, all scaled by 2.
            const int twice_offset = std::abs(2 * col - (grid_n - 1));
            const int band = (grid_n + 1) / 2 - 1;
            return twice_offset <= band;
        }
    }
    return false;
}

std::vector<std::size_t> region_indices(const GridDataset& data, Region region) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (column_in_region(data.col(i), data.grid_n(), region)) out.push_back(i);
    return out;
}

RegionSubsets region_subsets(const GridDataset& data) {
    return {region_indices(data, Region::Left), region_indices(data, Region::Right)};
}

}  // namespace pospool
