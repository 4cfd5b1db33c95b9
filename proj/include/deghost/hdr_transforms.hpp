#pragma once

#include <array>

#include <torch/torch.h>

#include "deghost/image.hpp"

namespace deghost::hdr {

// Tensor-level transforms. Every function is elementwise and autograd-friendly;
// exposure arguments broadcast against the image (a (B,1,1,1) tensor gives one
// exposure time per batch item). Non-positive exposure times throw
// InvalidArgument.

/// clip(((x^gamma) * t_dst / t_src)^(1/gamma)) to [0, 1].
torch::Tensor exposure_adjust(const torch::Tensor& x, const torch::Tensor& t_src,
                              const torch::Tensor& t_dst, double gamma);

/// x^gamma / t
torch::Tensor ldr_to_hdr(const torch::Tensor& x, const torch::Tensor& t, double gamma);

/// (y * t)^(1/gamma), clamped to [0, 1] when `clip` is set.
torch::Tensor hdr_to_ldr(const torch::Tensor& y, const torch::Tensor& t, double gamma,
                         bool clip = true);

/// log(1 + mu x) / log(1 + mu)
torch::Tensor mu_law(const torch::Tensor& y, double mu);

/// Concatenates x with ldr_to_hdr(x) along the channel axis: (.., 3, H, W) -> (.., 6, H, W).
torch::Tensor six_channel_input(const torch::Tensor& x, const torch::Tensor& t, double gamma);

torch::Tensor exposure_tensor(double t);

// Image-level wrappers with the domain types.

LdrImage exposure_adjust(const LdrImage& x, double t_dst, double gamma);
RadianceImage ldr_to_hdr(const LdrImage& x, double gamma, int alignment_ref = 2);
LdrImage hdr_to_ldr(const RadianceImage& y, double t, double gamma, bool clip = true);

/// Self-supervised targets from the short frame: the short frame re-exposed to
/// each of `times`. Element 0 is the short frame itself (bit-identical).
std::array<LdrImage, 3> make_stage1_targets(const LdrImage& x_short,
                                            const std::array<double, 3>& times, double gamma);

torch::Tensor mu_law_tonemap(const RadianceImage& y, double mu);
torch::Tensor make_six_channel_input(const LdrImage& x, double gamma);

}  // namespace deghost::hdr
