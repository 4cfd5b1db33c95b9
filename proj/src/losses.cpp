#include "deghost/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"
#include "deghost/tensor_file.hpp"

namespace deghost {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void BackboneArch::validate() const {
    if (channels.empty() || channels.size() != convs_per_stage.size())
        throw InvalidArgument("backbone: channels and convs_per_stage must be non-empty and equal length");
    for (size_t s = 0; s < channels.size(); ++s)
        if (channels[s] <= 0 || convs_per_stage[s] <= 0)
            throw InvalidArgument("backbone: stage widths and conv counts must be positive");
    if (input_mean.size() != 3 || input_std.size() != 3)
        throw InvalidArgument("backbone: input normalization needs three channels");
}

nlohmann::json BackboneArch::to_json() const {
    return {{"channels", channels},
            {"convs_per_stage", convs_per_stage},
            {"input_mean", input_mean},
            {"input_std", input_std}};
}

BackboneArch BackboneArch::from_json(const nlohmann::json& j) {
    BackboneArch a;
    a.channels = j.at("channels").get<std::vector<int64_t>>();
    a.convs_per_stage = j.at("convs_per_stage").get<std::vector<int64_t>>();
    a.input_mean = j.value("input_mean", a.input_mean);
    a.input_std = j.value("input_std", a.input_std);
    return a;
}

PerceptualBackboneImpl::PerceptualBackboneImpl(BackboneArch arch, std::vector<int64_t> taps)
    : arch_(std::move(arch)), taps_(std::move(taps)) {
    arch_.validate();
    if (taps_.empty()) throw InvalidArgument("backbone: at least one tap is required");
    for (auto t : taps_)
        if (t < 1 || t > static_cast<int64_t>(arch_.channels.size()))
            throw InvalidArgument("backbone: tap " + std::to_string(t) + " outside 1.." +
                                  std::to_string(arch_.channels.size()));
    int64_t in = 3;
    for (size_t s = 0; s < arch_.channels.size(); ++s) {
        std::vector<nn::Conv2d> convs;
        for (int64_t j = 0; j < arch_.convs_per_stage[s]; ++j) {
            auto conv = nn::Conv2d(nn::Conv2dOptions(in, arch_.channels[s], 3).padding(1));
            register_module("stage" + std::to_string(s + 1) + "_conv" + std::to_string(j + 1), conv);
            convs.push_back(conv);
            in = arch_.channels[s];
        }
        stages_.push_back(std::move(convs));
    }
}

PerceptualBackboneImpl::PerceptualBackboneImpl(BackboneArch arch, std::vector<int64_t> taps,
                                               uint64_t seed)
    : PerceptualBackboneImpl(std::move(arch), std::move(taps)) {
    torch::NoGradGuard no_grad;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    for (auto& stage : stages_)
        for (auto& conv : stage) {
            const double fan_in = static_cast<double>(conv->weight.size(1) * 9);
            conv->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
            conv->bias.zero_();
        }
    source_ = Source::SeededRandom;
    freeze();
}

std::shared_ptr<PerceptualBackboneImpl> PerceptualBackboneImpl::import(
    const std::filesystem::path& path, std::vector<int64_t> taps) {
    auto file = TensorFile::load(path);
    if (file.meta.value("kind", "") != "deghost-backbone")
        throw DataError("not a backbone weight file: " + path.string());
    BackboneArch arch;
    try {
        arch = BackboneArch::from_json(file.meta.at("arch"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt backbone metadata in " + path.string() + ": " + e.what());
    }
    std::shared_ptr<PerceptualBackboneImpl> net(new PerceptualBackboneImpl(arch, std::move(taps)));
    torch::NoGradGuard no_grad;
    for (size_t s = 0; s < net->stages_.size(); ++s)
        for (size_t j = 0; j < net->stages_[s].size(); ++j) {
            auto& conv = net->stages_[s][j];
            const auto prefix = "stage" + std::to_string(s + 1) + ".conv" + std::to_string(j + 1);
            const std::pair<std::string, torch::Tensor> slots[] = {{".weight", conv->weight},
                                                                   {".bias", conv->bias}};
            for (const auto& [suffix, target] : slots) {
                const auto* t = file.find(prefix + suffix);
                if (t == nullptr || t->sizes() != target.sizes())
                    throw DataError("backbone file " + path.string() + ": missing or misshapen " +
                                    prefix + suffix);
                target.copy_(*t);
            }
        }
    net->source_ = Source::Imported;
    net->freeze();
    return net;
}

void PerceptualBackboneImpl::save(const std::filesystem::path& path) const {
    TensorFile file;
    file.meta = {{"kind", "deghost-backbone"}, {"arch", arch_.to_json()}};
    for (size_t s = 0; s < stages_.size(); ++s)
        for (size_t j = 0; j < stages_[s].size(); ++j) {
            const auto prefix = "stage" + std::to_string(s + 1) + ".conv" + std::to_string(j + 1);
            file.tensors.emplace_back(prefix + ".weight", stages_[s][j]->weight);
            file.tensors.emplace_back(prefix + ".bias", stages_[s][j]->bias);
        }
    file.save(path);
}

void PerceptualBackboneImpl::freeze() {
    for (auto& p : parameters()) p.set_requires_grad(false);
    eval();
}

std::vector<torch::Tensor> PerceptualBackboneImpl::forward(const torch::Tensor& image) {
    auto opts = image.options();
    auto mean = torch::tensor(arch_.input_mean, opts.dtype(torch::kDouble)).to(opts).view({1, 3, 1, 1});
    auto stdv = torch::tensor(arch_.input_std, opts.dtype(torch::kDouble)).to(opts).view({1, 3, 1, 1});
    auto x = (image - mean) / stdv;
    const auto last_tap = *std::max_element(taps_.begin(), taps_.end());
    std::vector<torch::Tensor> features(taps_.size());
    for (int64_t s = 0; s < last_tap; ++s) {
        for (auto& conv : stages_[static_cast<size_t>(s)]) x = torch::relu(conv(x));
        x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true));
        for (size_t k = 0; k < taps_.size(); ++k)
            if (taps_[k] == s + 1) features[k] = x;
    }
    return features;
}

PerceptualBackbone make_backbone(const std::string& spec, const std::vector<int64_t>& taps,
                                 uint64_t seed, const BackboneArch& arch) {
    if (spec == "seeded-random") return PerceptualBackbone(arch, taps, seed);
    if (spec.rfind("import:", 0) == 0)
        return PerceptualBackbone(PerceptualBackboneImpl::import(spec.substr(7), taps));
    throw ConfigError("loss.backbone must be 'seeded-random' or 'import:<path>', got '" + spec + "'");
}

torch::Tensor exposure_column(const torch::Tensor& times, int64_t i) {
    if (times.dim() != 2 || times.size(1) != 3)
        throw InvalidArgument("exposure times must be a (B, 3) table");
    return times.select(1, i).view({-1, 1, 1, 1});
}

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes())
        throw InvalidArgument(std::string(what) + ": prediction and target shapes differ");
}

torch::Tensor or_zero(const torch::Tensor& t) {
    return t.defined() ? t : torch::zeros({}, torch::kFloat);
}

}  // namespace

torch::Tensor ssl_loss(const torch::Tensor& pred, const torch::Tensor& x_short,
                       const torch::Tensor& times, double gamma, const torch::Tensor& pixel_weight) {
    check_same(pred, x_short, "ssl_loss");
    if (pred.dim() != 4 || times.size(0) != pred.size(0))
        throw InvalidArgument("ssl_loss: expected (B,3,H,W) images and a (B,3) exposure table");
    const auto t_short = exposure_column(times, 0);
    torch::Tensor total = torch::zeros({}, pred.options());
    for (int64_t i = 0; i < 3; ++i) {
        const auto t_i = exposure_column(times, i);
        auto target = hdr::exposure_adjust(x_short, t_short, t_i, gamma);
        auto diff = torch::abs(hdr::hdr_to_ldr(pred, t_i, gamma) - target);
        if (pixel_weight.defined()) {
            auto w = pixel_weight.expand_as(diff);
            auto denom = w.sum();
            total = total + (denom.item<double>() > 0.0 ? (diff * w).sum() / denom : diff.sum() * 0.0);
        } else {
            total = total + diff.mean();
        }
    }
    return total;
}

torch::Tensor recon_loss(const torch::Tensor& pred, const torch::Tensor& target, double mu) {
    check_same(pred, target, "recon_loss");
    return torch::abs(hdr::mu_law(pred, mu) - hdr::mu_law(target, mu)).mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& target,
                              PerceptualBackbone& backbone, double mu) {
    check_same(pred, target, "perceptual_loss");
    auto fp = backbone->forward(hdr::mu_law(pred, mu));
    std::vector<torch::Tensor> ft;
    {
        torch::NoGradGuard no_grad;  // the target side never needs a graph
        ft = backbone->forward(hdr::mu_law(target, mu));
    }
    torch::Tensor total = torch::zeros({}, pred.options());
    for (size_t k = 0; k < fp.size(); ++k) total = total + torch::abs(fp[k] - ft[k]).mean();
    return total;
}

LossTerms group_terms(const torch::Tensor& pred, const torch::Tensor& target,
                      PerceptualBackbone& backbone, double mu) {
    if (!pred.defined() || pred.numel() == 0)
        return {torch::zeros({}, torch::kFloat), torch::zeros({}, torch::kFloat)};
    return {recon_loss(pred, target, mu), perceptual_loss(pred, target, backbone, mu)};
}

std::vector<LossTerms> sample_terms(const torch::Tensor& pred, const torch::Tensor& target,
                                    PerceptualBackbone& backbone, double mu) {
    check_same(pred, target, "sample_terms");
    std::vector<LossTerms> out;
    for (int64_t b = 0; b < pred.size(0); ++b) {
        auto p = pred.narrow(0, b, 1), t = target.narrow(0, b, 1);
        out.push_back({recon_loss(p, t, mu), perceptual_loss(p, t, backbone, mu)});
    }
    return out;
}

LossBreakdown finetune_loss(const LossTerms& dynamic, const LossTerms& statics, double lambda) {
    return iteration_loss(dynamic, statics, {}, lambda);
}

LossBreakdown iteration_loss(const LossTerms& dynamic, const LossTerms& statics,
                             const std::vector<WeightedTerms>& unlabeled, double lambda) {
    if (!(lambda >= 0.0)) throw InvalidArgument("loss lambda must be non-negative");
    LossBreakdown out;
    out.labeled_recon = or_zero(dynamic.recon) + or_zero(statics.recon);
    out.labeled_percep = or_zero(dynamic.percep) + or_zero(statics.percep);
    out.unlabeled_recon = torch::zeros({}, out.labeled_recon.options());
    out.unlabeled_percep = torch::zeros({}, out.labeled_percep.options());
    for (const auto& u : unlabeled) {
        if (!(u.weight >= 0.0 && u.weight <= 1.0))
            throw InvalidArgument("unlabeled sample weight " + std::to_string(u.weight) +
                                  " outside [0, 1]");
        out.unlabeled_recon = out.unlabeled_recon + u.weight * or_zero(u.terms.recon);
        out.unlabeled_percep = out.unlabeled_percep + u.weight * or_zero(u.terms.percep);
    }
    out.total = out.labeled_recon + out.unlabeled_recon +
                lambda * (out.labeled_percep + out.unlabeled_percep);
    return out;
}

}  // namespace deghost
