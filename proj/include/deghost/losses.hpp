#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace deghost {

/// Layout of a VGG-style stack: stage s has convs_per_stage[s] 3x3 convs to
/// channels[s] (ReLU after each), then a 2x2 max-pool.
struct BackboneArch {
    std::vector<int64_t> channels{16, 32, 64, 64};
    std::vector<int64_t> convs_per_stage{2, 2, 2, 2};
    // Per-channel input normalization applied before the first conv.
    std::vector<double> input_mean{0.0, 0.0, 0.0};
    std::vector<double> input_std{1.0, 1.0, 1.0};

    void validate() const;
    nlohmann::json to_json() const;
    static BackboneArch from_json(const nlohmann::json& j);
};

/// Frozen feature extractor for the perceptual loss. Parameters never require
/// grad; gradients still flow to the input.
class PerceptualBackboneImpl : public torch::nn::Module {
public:
    enum class Source { SeededRandom, Imported };

    /// Seeded-random weights (He-normal from a private generator; the global
    /// torch RNG is untouched). `taps` are 1-based pooling-stage indices.
    PerceptualBackboneImpl(BackboneArch arch, std::vector<int64_t> taps, uint64_t seed);

    /// Loads weights saved by save(); names are stage<s>.conv<j>.{weight,bias}.
    static std::shared_ptr<PerceptualBackboneImpl> import(const std::filesystem::path& path,
                                                          std::vector<int64_t> taps);
    void save(const std::filesystem::path& path) const;

    /// Feature maps at every tap, in tap order.
    std::vector<torch::Tensor> forward(const torch::Tensor& image);

    Source source() const { return source_; }
    const BackboneArch& arch() const { return arch_; }
    const std::vector<int64_t>& taps() const { return taps_; }

private:
    PerceptualBackboneImpl(BackboneArch arch, std::vector<int64_t> taps);
    void freeze();

    BackboneArch arch_;
    std::vector<int64_t> taps_;
    Source source_ = Source::SeededRandom;
    std::vector<std::vector<torch::nn::Conv2d>> stages_;
};
TORCH_MODULE(PerceptualBackbone);

/// Builds the backbone named by a `loss.backbone` value: "seeded-random" or "import:<path>".
PerceptualBackbone make_backbone(const std::string& spec, const std::vector<int64_t>& taps,
                                 uint64_t seed, const BackboneArch& arch = {});

/// One (B,3,1,1)-broadcastable exposure column from a (B,3) exposure-time table.
torch::Tensor exposure_column(const torch::Tensor& times, int64_t i);

/// Self-supervised LDR-domain loss. `pred` (B,3,H,W) radiance aligned to the
/// short frame, `x_short` (B,3,H,W), `times` (B,3) exposure times. Sum over the
/// three exposures of the mean absolute difference between the re-exposed
/// prediction and the re-exposed short frame. A defined `pixel_weight`
/// (B,1,H,W) restricts each mean to weighted pixels.
torch::Tensor ssl_loss(const torch::Tensor& pred, const torch::Tensor& x_short,
                       const torch::Tensor& times, double gamma,
                       const torch::Tensor& pixel_weight = {});

/// Mean |T(pred) - T(target)| with the mu-law tonemap T.
torch::Tensor recon_loss(const torch::Tensor& pred, const torch::Tensor& target, double mu);

/// Sum over taps of mean |phi(T(pred)) - phi(T(target))|.
torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& target,
                              PerceptualBackbone& backbone, double mu);

struct LossTerms {
    torch::Tensor recon;
    torch::Tensor percep;
};

/// Recon and perceptual terms over a whole group (means over the group).
/// An empty or undefined group yields zero terms.
LossTerms group_terms(const torch::Tensor& pred, const torch::Tensor& target,
                      PerceptualBackbone& backbone, double mu);
/// One LossTerms per batch item.
std::vector<LossTerms> sample_terms(const torch::Tensor& pred, const torch::Tensor& target,
                                    PerceptualBackbone& backbone, double mu);

struct LossBreakdown {
    torch::Tensor total;
    torch::Tensor labeled_recon;
    torch::Tensor labeled_percep;
    torch::Tensor unlabeled_recon;   // already weighted
    torch::Tensor unlabeled_percep;  // already weighted
};

/// recon(D) + recon(S) + lambda * (percep(D) + percep(S)).
LossBreakdown finetune_loss(const LossTerms& dynamic, const LossTerms& statics, double lambda);

struct WeightedTerms {
    double weight;
    LossTerms terms;
};

/// Labeled terms plus each unlabeled sample's terms scaled by its weight in
/// [0, 1], with lambda applied to all perceptual parts.
LossBreakdown iteration_loss(const LossTerms& dynamic, const LossTerms& statics,
                             const std::vector<WeightedTerms>& unlabeled, double lambda);

}  // namespace deghost
