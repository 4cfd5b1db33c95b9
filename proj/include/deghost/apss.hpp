#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace deghost {

/// Pixels of the medium frame whose three channels all lie in [eps_low, eps_high].
struct WellExposedMask {
    torch::Tensor valid;  // (H, W) bool
    double eps_low = 0.05;
    double eps_high = 0.95;
    double coverage = 0.0;  // fraction of valid pixels
};

enum class PoolMode { Mean, Max, P90 };

PoolMode pool_mode_from_string(const std::string& name);
std::string to_string(PoolMode mode);

struct SelectionRecord {
    std::string sample_id;
    std::vector<double> per_patch_losses;
    double sample_loss = 0.0;
    double weight = 0.0;
    int64_t timestep = 0;
    bool unselectable = false;  // no well-exposed pixel at all; weight pinned to 0
};

struct SelectionThreshold {
    double tau = 0.0;
    double beta = 85.0;
    double max_loss = 0.0;  // largest selectable unlabeled loss, set by assign_weights()
    int64_t timestep = 0;
};

WellExposedMask well_exposed_mask(const torch::Tensor& x_medium, double eps_low = 0.05,
                                  double eps_high = 0.95);

/// Scores a prediction against the medium LDR frame inside the well-exposed
/// region: per patch, the mean over valid pixels (and channels) of
/// |hdr_to_ldr(pred, t_medium) - x_medium|. Patches without valid pixels are
/// skipped; border patches may be partial.
SelectionRecord selection_loss(const torch::Tensor& pred, const torch::Tensor& x_medium,
                               double t_medium, double gamma, const WellExposedMask& mask,
                               int64_t patch_size, PoolMode pool = PoolMode::Mean,
                               std::string sample_id = {});

/// Linear-interpolation percentile (numpy's default), beta in [0, 100].
double percentile(std::vector<double> values, double beta);

/// Threshold from the pooled per-patch losses of all labeled records.
SelectionThreshold compute_threshold(std::span<const SelectionRecord> labeled, double beta,
                                     int64_t timestep = 0);

/// Sets every record's weight: 1 at or below tau, linear decay to 0 at the
/// largest selectable loss. Records flagged unselectable get 0.
void assign_weights(std::span<SelectionRecord> unlabeled, SelectionThreshold& threshold);

nlohmann::json apss_report(const SelectionThreshold& threshold,
                           std::span<const SelectionRecord> unlabeled,
                           std::span<const SelectionRecord> labeled);

}  // namespace deghost
