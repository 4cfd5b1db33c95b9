#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace deghost::io {

// All images are (3, H, W) float32 tensors. Gray and palette PNGs expand to
// RGB, alpha is dropped. Integer PNG codes map to value / (2^bits - 1).

torch::Tensor read_png(const std::filesystem::path& path, int* bit_depth = nullptr);
void write_png(const std::filesystem::path& path, const torch::Tensor& image, int bit_depth = 16);

torch::Tensor read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const torch::Tensor& image);

/// Radiance RGBE; reads flat and new-style run-length encoded scanlines, writes flat.
torch::Tensor read_hdr(const std::filesystem::path& path);
void write_hdr(const std::filesystem::path& path, const torch::Tensor& image);

/// Dispatches on the extension (.png, .pfm, .hdr).
torch::Tensor read_image(const std::filesystem::path& path);

}  // namespace deghost::io
