#pragma once

#include <torch/torch.h>

namespace deghost {

/// Display-referred LDR frame. `pixels` is a float (3, H, W) tensor in [0, 1].
struct LdrImage {
    torch::Tensor pixels;
    double exposure_time = 1.0;

    int64_t height() const { return pixels.size(-2); }
    int64_t width() const { return pixels.size(-1); }
};

/// Scene-linear radiance, (3, H, W), non-negative. `alignment_ref` names the
/// exposure (1, 2 or 3) whose geometry the content follows.
struct RadianceImage {
    torch::Tensor pixels;
    int alignment_ref = 2;

    int64_t height() const { return pixels.size(-2); }
    int64_t width() const { return pixels.size(-1); }
};

struct GammaParams {
    double gamma = 2.2;
    double mu = 5000.0;
};

/// Throws InvalidArgument unless the image satisfies the LdrImage invariants.
void validate(const LdrImage& image);
void validate(const RadianceImage& image);
void validate(const GammaParams& params);

}  // namespace deghost
