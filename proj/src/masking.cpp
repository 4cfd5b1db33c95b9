#include "deghost/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "deghost/errors.hpp"

namespace deghost {

int64_t PatchMask::masked_count() const {
    return std::count(grid.begin(), grid.end(), uint8_t{1});
}

torch::Tensor PatchMask::pixel_mask(const torch::TensorOptions& options) const {
    auto coarse = torch::from_blob(const_cast<uint8_t*>(grid.data()), {rows, cols}, torch::kUInt8)
                      .to(options.dtype_opt().has_value() ? options : options.dtype(torch::kFloat));
    return coarse.repeat_interleave(patch_size, 0).repeat_interleave(patch_size, 1).unsqueeze(0);
}

int64_t masked_patch_target(int64_t cells, double ratio) {
    return static_cast<int64_t>(std::llround(ratio * static_cast<double>(cells)));
}

PatchMask sample_mask(int64_t h, int64_t w, int64_t patch_size, double ratio, uint64_t seed) {
    if (patch_size <= 0) throw InvalidArgument("sample_mask: patch size must be positive");
    if (h <= 0 || w <= 0 || h % patch_size != 0 || w % patch_size != 0)
        throw InvalidArgument("sample_mask: " + std::to_string(h) + "x" + std::to_string(w) +
                              " is not divisible by patch size " + std::to_string(patch_size));
    if (!(ratio >= 0.0 && ratio < 1.0))
        throw InvalidArgument("sample_mask: ratio must lie in [0, 1)");

    PatchMask mask;
    mask.rows = h / patch_size;
    mask.cols = w / patch_size;
    mask.patch_size = patch_size;
    mask.ratio = ratio;
    mask.seed = seed;
    mask.grid.assign(static_cast<size_t>(mask.cells()), 0);

    // Partial Fisher-Yates: the first `target` slots form a uniform random subset.
    std::vector<int64_t> order(static_cast<size_t>(mask.cells()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    const int64_t target = masked_patch_target(mask.cells(), ratio);
    for (int64_t i = 0; i < target; ++i) {
        std::uniform_int_distribution<int64_t> pick(i, mask.cells() - 1);
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(pick(rng))]);
        mask.grid[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    }
    return mask;
}

torch::Tensor apply_mask(const torch::Tensor& input, const PatchMask& mask, double fill) {
    if (input.dim() < 2 || input.size(-2) != mask.rows * mask.patch_size ||
        input.size(-1) != mask.cols * mask.patch_size)
        throw InvalidArgument("apply_mask: mask grid does not match the input plane");
    auto masked = mask.pixel_mask(input.options().dtype(torch::kBool));
    return torch::where(masked, torch::full({}, fill, input.options()), input);
}

}  // namespace deghost
