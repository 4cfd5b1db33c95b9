#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deghost/datasets.hpp"

namespace deghost {

struct SynthSceneParams {
    int64_t height = 64;
    int64_t width = 64;
    int64_t motion_px = 4;         // foreground displacement between consecutive frames
    double saturation_frac = 0.15;  // target fraction of clipped pixels in the long frame
    double noise_sigma = 0.002;     // additive LDR noise on unclipped pixels
    uint64_t seed = 0;
    std::array<double, 3> evs{-2.0, 0.0, 2.0};
    double gamma = 2.2;
    Role role = Role::DynamicLabeled;
    std::string id = "synth";

    void validate() const;
};

/// A procedural scene: smooth background plus textured foreground shapes whose
/// position can be rendered at any offset. Radiance is scaled so the long
/// frame clips close to the requested fraction of pixels.
class SynthScene {
public:
    explicit SynthScene(SynthSceneParams params);

    /// (3, H, W) float64 radiance in [0, 1] with the foreground moved by (dy, dx).
    torch::Tensor radiance(double dy, double dx) const;
    /// Foreground offset used for frame i (0-based); frame 1 is the reference.
    std::array<double, 2> frame_offset(int i) const;

    /// Renders the three frames; gt (medium-aligned radiance) is attached for
    /// labeled roles only.
    ExposureStack stack() const;
    /// Ground-truth radiance aligned to the medium frame, whatever the role.
    torch::Tensor reference_radiance() const { return radiance(0.0, 0.0).to(torch::kFloat); }

    const SynthSceneParams& params() const { return params_; }
    double scale() const { return scale_; }

private:
    struct Shape {
        bool disc;
        double cy, cx, ry, rx;
        std::array<double, 3> color;
        double freq_y, freq_x, phase, contrast;
    };
    torch::Tensor raw_radiance(double dy, double dx) const;

    SynthSceneParams params_;
    std::array<double, 3> bg_base_{}, bg_gy_{}, bg_gx_{};
    std::vector<Shape> shapes_;
    double dir_y_ = 0.0, dir_x_ = 1.0;
    double scale_ = 1.0;
};

ExposureStack synth_scene(const SynthSceneParams& params);

/// Fraction of pixels with at least one channel at 1.0 in a (3, H, W) frame.
double saturated_fraction(const torch::Tensor& ldr);

}  // namespace deghost
