#include "deghost/hdr_transforms.hpp"

#include <cmath>
#include <string>

#include "deghost/errors.hpp"

namespace deghost {

void validate(const LdrImage& image) {
    if (!image.pixels.defined() || image.pixels.dim() != 3 || image.pixels.size(0) != 3)
        throw InvalidArgument("LdrImage: expected a (3, H, W) tensor");
    if (!(image.exposure_time > 0.0) || !std::isfinite(image.exposure_time))
        throw InvalidArgument("LdrImage: exposure time must be positive, got " +
                              std::to_string(image.exposure_time));
    if (image.pixels.numel() > 0 &&
        (image.pixels.min().item<double>() < 0.0 || image.pixels.max().item<double>() > 1.0))
        throw InvalidArgument("LdrImage: pixel values outside [0, 1]");
}

void validate(const RadianceImage& image) {
    if (!image.pixels.defined() || image.pixels.dim() != 3 || image.pixels.size(0) != 3)
        throw InvalidArgument("RadianceImage: expected a (3, H, W) tensor");
    if (image.alignment_ref < 1 || image.alignment_ref > 3)
        throw InvalidArgument("RadianceImage: alignment_ref must be 1, 2 or 3");
    if (image.pixels.numel() > 0 && image.pixels.min().item<double>() < 0.0)
        throw InvalidArgument("RadianceImage: negative radiance");
}

void validate(const GammaParams& params) {
    if (!(params.gamma > 0.0)) throw InvalidArgument("gamma must be positive");
    if (!(params.mu > 0.0)) throw InvalidArgument("mu must be positive");
}

namespace hdr {
namespace {

void check_positive(const torch::Tensor& t, const char* what) {
    if (!t.defined() || t.numel() == 0)
        throw InvalidArgument(std::string(what) + ": exposure time missing");
    if (!(t > 0).all().item<bool>())
        throw InvalidArgument(std::string(what) + ": exposure time must be positive");
}

void check_gamma(double gamma) {
    if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
}

// Exposure tensors are kept in the image dtype so double-precision gradient
// checks stay in double end to end.
torch::Tensor like(const torch::Tensor& t, const torch::Tensor& ref) {
    return t.to(ref.options().dtype());
}

}  // namespace

torch::Tensor exposure_tensor(double t) {
    return torch::scalar_tensor(t, torch::kDouble);
}

torch::Tensor exposure_adjust(const torch::Tensor& x, const torch::Tensor& t_src,
                              const torch::Tensor& t_dst, double gamma) {
    check_positive(t_src, "exposure_adjust");
    check_positive(t_dst, "exposure_adjust");
    check_gamma(gamma);
    auto ratio = like(t_dst, x) / like(t_src, x);
    auto adjusted = torch::pow(torch::pow(x, gamma) * ratio, 1.0 / gamma).clamp(0.0, 1.0);
    // Unit ratio is an exact identity; the pow round trip is not bit-exact.
    return torch::where(ratio == 1.0, x, adjusted);
}

torch::Tensor ldr_to_hdr(const torch::Tensor& x, const torch::Tensor& t, double gamma) {
    check_positive(t, "ldr_to_hdr");
    check_gamma(gamma);
    return torch::pow(x, gamma) / like(t, x);
}

torch::Tensor hdr_to_ldr(const torch::Tensor& y, const torch::Tensor& t, double gamma, bool clip) {
    check_positive(t, "hdr_to_ldr");
    check_gamma(gamma);
    auto ldr = torch::pow(y * like(t, y), 1.0 / gamma);
    return clip ? ldr.clamp(0.0, 1.0) : ldr;
}

torch::Tensor mu_law(const torch::Tensor& y, double mu) {
    if (!(mu > 0.0)) throw InvalidArgument("mu_law: mu must be positive");
    // Same op and dtype in numerator and denominator, so T(1) == 1 exactly.
    return torch::log1p(y * mu) / torch::log1p(torch::full({}, mu, y.options()));
}

torch::Tensor six_channel_input(const torch::Tensor& x, const torch::Tensor& t, double gamma) {
    return torch::cat({x, ldr_to_hdr(x, t, gamma)}, -3);
}

LdrImage exposure_adjust(const LdrImage& x, double t_dst, double gamma) {
    validate(x);
    return {exposure_adjust(x.pixels, exposure_tensor(x.exposure_time), exposure_tensor(t_dst),
                            gamma),
            t_dst};
}

RadianceImage ldr_to_hdr(const LdrImage& x, double gamma, int alignment_ref) {
    validate(x);
    return {ldr_to_hdr(x.pixels, exposure_tensor(x.exposure_time), gamma), alignment_ref};
}

LdrImage hdr_to_ldr(const RadianceImage& y, double t, double gamma, bool clip) {
    validate(y);
    return {hdr_to_ldr(y.pixels, exposure_tensor(t), gamma, clip), t};
}

std::array<LdrImage, 3> make_stage1_targets(const LdrImage& x_short,
                                            const std::array<double, 3>& times, double gamma) {
    validate(x_short);
    std::array<LdrImage, 3> targets;
    for (size_t i = 0; i < 3; ++i) {
        auto t_src = exposure_tensor(times[0]);
        targets[i] = {exposure_adjust(x_short.pixels, t_src, exposure_tensor(times[i]), gamma),
                      times[i]};
    }
    return targets;
}

torch::Tensor mu_law_tonemap(const RadianceImage& y, double mu) {
    validate(y);
    return mu_law(y.pixels, mu);
}

torch::Tensor make_six_channel_input(const LdrImage& x, double gamma) {
    validate(x);
    return six_channel_input(x.pixels, exposure_tensor(x.exposure_time), gamma);
}

}  // namespace hdr
}  // namespace deghost
