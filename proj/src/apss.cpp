#include "deghost/apss.hpp"

#include <algorithm>
#include <cmath>

#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"

namespace deghost {

PoolMode pool_mode_from_string(const std::string& name) {
    if (name == "mean") return PoolMode::Mean;
    if (name == "max") return PoolMode::Max;
    if (name == "p90") return PoolMode::P90;
    throw ConfigError("apss.pool must be mean, max or p90; got '" + name + "'");
}

std::string to_string(PoolMode mode) {
    switch (mode) {
        case PoolMode::Mean: return "mean";
        case PoolMode::Max: return "max";
        case PoolMode::P90: return "p90";
    }
    return "mean";
}

WellExposedMask well_exposed_mask(const torch::Tensor& x_medium, double eps_low, double eps_high) {
    if (!(eps_low >= 0.0 && eps_low < eps_high && eps_high <= 1.0))
        throw InvalidArgument("well_exposed_mask: need 0 <= eps_low < eps_high <= 1");
    if (x_medium.dim() != 3 || x_medium.size(0) != 3)
        throw InvalidArgument("well_exposed_mask: expected a (3, H, W) frame");
    WellExposedMask mask;
    mask.eps_low = eps_low;
    mask.eps_high = eps_high;
    mask.valid = ((x_medium >= eps_low) & (x_medium <= eps_high)).all(0);
    mask.coverage = mask.valid.numel() > 0 ? mask.valid.to(torch::kDouble).mean().item<double>() : 0.0;
    return mask;
}

double percentile(std::vector<double> values, double beta) {
    if (values.empty()) throw InvalidArgument("percentile of an empty set");
    if (!(beta >= 0.0 && beta <= 100.0)) throw InvalidArgument("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = beta / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

SelectionRecord selection_loss(const torch::Tensor& pred, const torch::Tensor& x_medium,
                               double t_medium, double gamma, const WellExposedMask& mask,
                               int64_t patch_size, PoolMode pool, std::string sample_id) {
    if (pred.sizes() != x_medium.sizes() || pred.dim() != 3)
        throw InvalidArgument("selection_loss: prediction and medium frame must both be (3, H, W)");
    if (mask.valid.size(0) != pred.size(1) || mask.valid.size(1) != pred.size(2))
        throw InvalidArgument("selection_loss: mask does not match the frame");
    if (patch_size <= 0) throw InvalidArgument("selection_loss: patch size must be positive");

    SelectionRecord rec;
    rec.sample_id = std::move(sample_id);

    torch::NoGradGuard no_grad;
    auto ldr = hdr::hdr_to_ldr(pred.detach().to(torch::kDouble), hdr::exposure_tensor(t_medium), gamma);
    auto err = torch::abs(ldr - x_medium.to(torch::kDouble)).mean(0).contiguous();  // (H, W)
    auto valid = mask.valid.to(torch::kCPU).contiguous();
    const auto e = err.accessor<double, 2>();
    const auto v = valid.accessor<bool, 2>();
    const int64_t h = err.size(0), w = err.size(1);

    for (int64_t py = 0; py < h; py += patch_size)
        for (int64_t px = 0; px < w; px += patch_size) {
            double sum = 0.0;
            int64_t count = 0;
            for (int64_t y = py; y < std::min(h, py + patch_size); ++y)
                for (int64_t x = px; x < std::min(w, px + patch_size); ++x)
                    if (v[y][x]) {
                        sum += e[y][x];
                        ++count;
                    }
            if (count > 0) rec.per_patch_losses.push_back(sum / static_cast<double>(count));
        }

    if (rec.per_patch_losses.empty()) {
        rec.unselectable = true;
        rec.weight = 0.0;
        return rec;
    }
    const auto& p = rec.per_patch_losses;
    switch (pool) {
        case PoolMode::Mean: {
            double s = 0.0;
            for (double x : p) s += x;
            rec.sample_loss = s / static_cast<double>(p.size());
            break;
        }
        case PoolMode::Max: rec.sample_loss = *std::max_element(p.begin(), p.end()); break;
        case PoolMode::P90: rec.sample_loss = percentile(p, 90.0); break;
    }
    return rec;
}

SelectionThreshold compute_threshold(std::span<const SelectionRecord> labeled, double beta,
                                     int64_t timestep) {
    std::vector<double> pool;
    for (const auto& r : labeled) pool.insert(pool.end(), r.per_patch_losses.begin(), r.per_patch_losses.end());
    if (pool.empty())
        throw InvalidArgument("compute_threshold: no labeled patch losses to form a threshold");
    SelectionThreshold th;
    th.beta = beta;
    th.timestep = timestep;
    th.tau = percentile(std::move(pool), beta);
    return th;
}

void assign_weights(std::span<SelectionRecord> unlabeled, SelectionThreshold& threshold) {
    bool any = false;
    double m = 0.0;
    for (const auto& r : unlabeled)
        if (!r.unselectable) {
            m = any ? std::max(m, r.sample_loss) : r.sample_loss;
            any = true;
        }
    threshold.max_loss = m;
    const double tau = threshold.tau;
    for (auto& r : unlabeled) {
        r.timestep = threshold.timestep;
        if (r.unselectable)
            r.weight = 0.0;
        else if (r.sample_loss <= tau || m <= tau)
            r.weight = 1.0;
        else
            r.weight = std::clamp((m - r.sample_loss) / (m - tau), 0.0, 1.0);
    }
}

nlohmann::json apss_report(const SelectionThreshold& threshold,
                           std::span<const SelectionRecord> unlabeled,
                           std::span<const SelectionRecord> labeled) {
    nlohmann::json samples = nlohmann::json::object();
    for (const auto& r : unlabeled)
        samples[r.sample_id] = {{"sample_loss", r.sample_loss},
                                {"W", r.weight},
                                {"unselectable", r.unselectable},
                                {"patches", r.per_patch_losses.size()}};
    size_t labeled_patches = 0;
    for (const auto& r : labeled) labeled_patches += r.per_patch_losses.size();
    return {{"timestep", threshold.timestep},
            {"tau", threshold.tau},
            {"beta", threshold.beta},
            {"m", threshold.max_loss},
            {"labeled_patches", labeled_patches},
            {"samples", samples}};
}

}  // namespace deghost
