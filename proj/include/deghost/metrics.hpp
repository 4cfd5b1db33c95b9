#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "deghost/datasets.hpp"

namespace deghost {

struct PsnrResult {
    double db = 0.0;
    bool exact = false;  // images identical; db holds the cap
};

constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE) over all pixels and channels, computed in double.
PsnrResult psnr(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0,
                double cap = kPsnrCap);

struct SsimOptions {
    int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean SSIM over valid-mode Gaussian windows, per channel then averaged.
/// Images smaller than the window fall back to one global-statistics SSIM per
/// channel (with a warning); `global_fallback` reports which path ran.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts = {},
            bool* global_fallback = nullptr);

struct SampleMetrics {
    std::string id;
    double psnr_l = 0.0, psnr_mu = 0.0, ssim_l = 0.0, ssim_mu = 0.0;
    bool exact_l = false, exact_mu = false;
};

/// PSNR/SSIM in the linear and mu-law domains (both arguments tonemapped).
SampleMetrics sample_metrics(const torch::Tensor& pred, const torch::Tensor& gt, double mu,
                             std::string id = {});

struct EvalReport {
    std::vector<SampleMetrics> samples;
    std::vector<std::string> skipped;  // ids without ground truth
    nlohmann::json config = nlohmann::json::object();

    double mean_psnr_l() const;
    double mean_psnr_mu() const;
    double mean_ssim_l() const;
    double mean_ssim_mu() const;

    nlohmann::json to_json() const;
    std::string table() const;
};

using Predictor = std::function<torch::Tensor(const ExposureStack&)>;

/// Runs `predict` on every sample with ground truth and scores it.
EvalReport evaluate(const std::vector<ExposureStack>& testset, const Predictor& predict, double mu,
                    nlohmann::json config = nlohmann::json::object());

/// Writes metrics.json and metrics.txt into `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

/// Per-sample bar chart (PSNR-L, PSNR-mu, SSIM-L, SSIM-mu) as an 8-bit PNG.
void write_plot(const std::filesystem::path& path, const EvalReport& report);

}  // namespace deghost
