#include "deghost/synth.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "deghost/errors.hpp"

namespace deghost {

void SynthSceneParams::validate() const {
    if (height <= 0 || width <= 0) throw InvalidArgument("synthetic scene size must be positive");
    if (motion_px < 0) throw InvalidArgument("motion_px must be non-negative");
    if (!(saturation_frac >= 0.0 && saturation_frac < 1.0))
        throw InvalidArgument("saturation_frac must lie in [0, 1)");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be non-negative");
    if (!(evs[0] < evs[1] && evs[1] < evs[2])) throw InvalidArgument("EVs must be strictly increasing");
    if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
    if (role == Role::StaticLabeled && motion_px != 0)
        throw InvalidArgument("static samples need motion_px = 0");
}

SynthScene::SynthScene(SynthSceneParams params) : params_(std::move(params)) {
    params_.validate();
    std::mt19937_64 rng(params_.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    for (int c = 0; c < 3; ++c) {
        bg_base_[c] = uni(0.05, 0.25);
        bg_gy_[c] = uni(-0.15, 0.15);
        bg_gx_[c] = uni(-0.15, 0.15);
    }
    const double h = static_cast<double>(params_.height), w = static_cast<double>(params_.width);
    const double extent = std::min(h, w);
    const int count = 3 + static_cast<int>(rng() % 3);
    for (int k = 0; k < count; ++k) {
        Shape s;
        s.disc = (rng() & 1) != 0;
        s.cy = uni(0.15, 0.85) * h;
        s.cx = uni(0.15, 0.85) * w;
        s.ry = uni(0.08, 0.22) * extent;
        s.rx = uni(0.08, 0.22) * extent;
        // the first shape is a bright one so the scene has real highlights
        const double gain = k == 0 ? 3.0 : 1.0;
        for (auto& c : s.color) c = gain * uni(0.1, 1.2);
        s.freq_y = uni(0.15, 0.8);
        s.freq_x = uni(0.15, 0.8);
        s.phase = uni(0.0, 2.0 * std::numbers::pi);
        s.contrast = uni(0.2, 0.5);
        shapes_.push_back(s);
    }
    const double angle = uni(0.0, 2.0 * std::numbers::pi);
    dir_y_ = std::sin(angle);
    dir_x_ = std::cos(angle);

    // Scale so the long frame clips on about saturation_frac of the pixels.
    const auto off = frame_offset(2);
    auto peak = raw_radiance(off[0], off[1]).amax(0).flatten().contiguous();
    std::vector<double> v(peak.data_ptr<double>(), peak.data_ptr<double>() + peak.numel());
    std::sort(v.begin(), v.end(), std::greater<>());
    const double clip_level = std::exp2(-params_.evs[2]);  // Y * t_long >= 1
    const auto n = static_cast<size_t>(std::llround(params_.saturation_frac * static_cast<double>(v.size())));
    if (n == 0)
        scale_ = 0.98 * clip_level / v.front();
    else if (n >= v.size())
        scale_ = 1.0001 * clip_level / v.back();
    else
        scale_ = clip_level / (0.5 * (v[n - 1] + v[n]));
}

std::array<double, 2> SynthScene::frame_offset(int i) const {
    const double d = static_cast<double>((i - 1) * params_.motion_px);
    return {std::round(d * dir_y_), std::round(d * dir_x_)};
}

torch::Tensor SynthScene::raw_radiance(double dy, double dx) const {
    auto opts = torch::TensorOptions().dtype(torch::kDouble);
    const double h = static_cast<double>(params_.height), w = static_cast<double>(params_.width);
    auto ys = torch::arange(params_.height, opts).view({-1, 1});
    auto xs = torch::arange(params_.width, opts).view({1, -1});
    std::vector<torch::Tensor> channels;
    for (int c = 0; c < 3; ++c) {
        auto bg = bg_base_[c] + bg_gy_[c] * (ys / h - 0.5) + bg_gx_[c] * (xs / w - 0.5) +
                  0.02 * torch::sin(0.35 * ys + 0.21 * xs + c);
        channels.push_back(bg.clamp_min(0.005));
    }
    auto img = torch::stack(channels);  // (3, H, W)
    for (const auto& s : shapes_) {
        auto ly = ys - (s.cy + dy), lx = xs - (s.cx + dx);
        torch::Tensor inside;
        if (s.disc)
            inside = (ly / s.ry).square() + (lx / s.rx).square() <= 1.0;
        else
            inside = (ly.abs() <= s.ry) & (lx.abs() <= s.rx);
        auto texture = 1.0 + s.contrast * torch::sin(s.freq_y * ly + s.freq_x * lx + s.phase);
        auto color = torch::tensor(std::vector<double>(s.color.begin(), s.color.end()), opts).view({3, 1, 1});
        img = torch::where(inside.unsqueeze(0), color * texture.unsqueeze(0), img);
    }
    return img;
}

torch::Tensor SynthScene::radiance(double dy, double dx) const {
    return (scale_ * raw_radiance(dy, dx)).clamp(0.0, 1.0);
}

ExposureStack SynthScene::stack() const {
    ExposureStack s;
    s.id = params_.id;
    s.role = params_.role;
    s.evs = params_.evs;
    const auto times = s.times();
    for (int i = 0; i < 3; ++i) {
        const auto off = frame_offset(i);
        auto y = radiance(off[0], off[1]);
        auto x = (y * times[static_cast<size_t>(i)]).pow(1.0 / params_.gamma).clamp_max(1.0);
        if (params_.noise_sigma > 0.0) {
            auto gen = at::make_generator<at::CPUGeneratorImpl>(params_.seed * 7919 + 101 + static_cast<uint64_t>(i));
            auto noise = torch::randn(x.sizes(), gen, x.options()) * params_.noise_sigma;
            // sensor clipping is a hard ceiling: clipped pixels stay at 1
            x = torch::where(x < 1.0, (x + noise).clamp(0.0, 1.0), x);
        }
        s.ldr[static_cast<size_t>(i)] = {x.to(torch::kFloat).contiguous(), times[static_cast<size_t>(i)]};
    }
    if (s.labeled()) s.gt = RadianceImage{reference_radiance().contiguous(), 2};
    return s;
}

ExposureStack synth_scene(const SynthSceneParams& params) { return SynthScene(params).stack(); }

double saturated_fraction(const torch::Tensor& ldr) {
    if (ldr.dim() != 3 || ldr.size(0) != 3) throw InvalidArgument("saturated_fraction expects (3, H, W)");
    return (ldr >= 1.0).any(0).to(torch::kDouble).mean().item<double>();
}

}  // namespace deghost
