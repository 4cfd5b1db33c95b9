#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "deghost/image.hpp"

namespace deghost {

enum class Role { Unlabeled, StaticLabeled, DynamicLabeled };

/// "U", "S" or "D".
std::string role_code(Role role);
Role role_from_string(const std::string& code);

/// One sample: three LDR frames in ascending exposure, their EVs, optional
/// ground truth aligned to the medium frame, and a role.
struct ExposureStack {
    std::string id;
    Role role = Role::Unlabeled;
    std::array<LdrImage, 3> ldr;
    std::array<double, 3> evs{-2.0, 0.0, 2.0};
    std::optional<RadianceImage> gt;

    std::array<double, 3> times() const;
    int64_t height() const { return ldr[0].height(); }
    int64_t width() const { return ldr[0].width(); }
    bool labeled() const { return role != Role::Unlabeled; }

    /// Enforces ascending EVs, matching frame sizes and gt presence iff labeled.
    void validate() const;
};

/// Reads ldr_1..ldr_3 (.png or .pfm), exposures.txt and, for labeled roles,
/// gt.hdr or gt.pfm. Unlabeled samples never carry gt even if a file exists.
ExposureStack load_bracket(const std::filesystem::path& dir, Role role = Role::Unlabeled,
                           std::string id = {});

/// Writes the layout read by load_bracket(): 8/16-bit PNG frames, or PFM when
/// bit_depth is 32. Ground truth goes to gt.pfm (exact) or gt.hdr.
void save_bracket(const std::filesystem::path& dir, const ExposureStack& stack, int bit_depth = 16,
                  bool gt_as_hdr = false);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the manifest's directory
    Role role = Role::Unlabeled;
};

struct Manifest {
    std::vector<ManifestEntry> samples;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);
};

/// `source` is a manifest.json or a directory holding one.
std::vector<ExposureStack> load_dataset(const std::filesystem::path& source);

std::vector<ExposureStack> filter_role(const std::vector<ExposureStack>& stacks, Role role);

/// Number of grid crops along one axis: floor((extent - size) / stride) + 1.
int64_t crop_count(int64_t extent, int64_t size, int64_t stride);

/// Aligned crop of every frame and the gt at (y, x).
ExposureStack crop_stack(const ExposureStack& stack, int64_t y, int64_t x, int64_t size);

/// Grid crops with stride `stride`; with `jitter` > 0 every origin moves by a
/// uniform offset in [-jitter, jitter] drawn from `rng`, clamped to the image.
/// An image smaller than `size` yields one centered, edge-padded crop.
std::vector<ExposureStack> crop_patches(const ExposureStack& stack, int64_t size, int64_t stride,
                                        std::mt19937_64* rng = nullptr, int64_t jitter = 0);

}  // namespace deghost
