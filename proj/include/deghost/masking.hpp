#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace deghost {

/// Boolean grid over non-overlapping square patches; `true` marks a masked patch.
struct PatchMask {
    int64_t rows = 0;  // patches along H
    int64_t cols = 0;  // patches along W
    int64_t patch_size = 8;
    double ratio = 0.75;
    uint64_t seed = 0;
    std::vector<uint8_t> grid;  // row-major, rows * cols

    bool masked(int64_t r, int64_t c) const { return grid[static_cast<size_t>(r * cols + c)] != 0; }
    int64_t masked_count() const;
    int64_t cells() const { return rows * cols; }

    /// (1, H, W) float tensor, 1 inside masked patches.
    torch::Tensor pixel_mask(const torch::TensorOptions& options = {}) const;
};

struct MaskOptions {
    double ratio = 0.75;
    int64_t patch_size = 8;
    bool shared_mask = false;
    double fill = 0.0;
};

/// Number of patches that sample_mask() marks for a grid of `cells` patches.
int64_t masked_patch_target(int64_t cells, double ratio);

/// Uniformly random subset of exactly round(ratio * cells) patches, fully
/// determined by the arguments.
PatchMask sample_mask(int64_t h, int64_t w, int64_t patch_size, double ratio, uint64_t seed);

/// Replaces pixels of masked patches in a (..., C, H, W) plane by `fill`.
torch::Tensor apply_mask(const torch::Tensor& input, const PatchMask& mask, double fill = 0.0);

}  // namespace deghost
