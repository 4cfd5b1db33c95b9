#include "deghost/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "deghost/errors.hpp"

namespace deghost {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void NetworkConfig::validate() const {
    if (embed_dim <= 0 || num_heads <= 0)
        throw InvalidArgument("network: embed_dim and num_heads must be positive");
    if (embed_dim % num_heads != 0)
        throw InvalidArgument("network: embed_dim " + std::to_string(embed_dim) +
                              " is not divisible by num_heads " + std::to_string(num_heads));
    if (num_blocks < 0 || stl_depth < 1)
        throw InvalidArgument("network: need num_blocks >= 0 and stl_depth >= 1");
    if (window_sizes.empty())
        throw InvalidArgument("network: at least one window size is required");
    for (auto w : window_sizes)
        if (w <= 0) throw InvalidArgument("network: window sizes must be positive");
    if (attn_patch_size <= 0) throw InvalidArgument("network: attn_patch_size must be positive");
    if (!(mlp_ratio > 0.0)) throw InvalidArgument("network: mlp_ratio must be positive");
}

int64_t NetworkConfig::spatial_multiple() const {
    int64_t m = attn_patch_size;
    for (auto w : window_sizes) m = std::lcm(m, w);
    return m;
}

int64_t NetworkConfig::receptive_radius() const {
    const int64_t widest = *std::max_element(window_sizes.begin(), window_sizes.end());
    // extractor 3x3 convs, hallucination patch, stem conv, per-layer window + 3x3 conv, head convs
    return 3 + (attn_patch_size - 1) + 1 + num_blocks * stl_depth * widest + 2;
}

nlohmann::json NetworkConfig::to_json() const {
    return {{"embed_dim", embed_dim},
            {"num_blocks", num_blocks},
            {"stl_depth", stl_depth},
            {"num_heads", num_heads},
            {"window_sizes", window_sizes},
            {"attn_patch_size", attn_patch_size},
            {"mlp_ratio", mlp_ratio},
            {"global_skip", global_skip},
            {"shared_extractor", shared_extractor},
            {"halluc_single_head", halluc_single_head},
            {"out_activation", "sigmoid"}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.embed_dim = j.at("embed_dim").get<int64_t>();
    c.num_blocks = j.at("num_blocks").get<int64_t>();
    c.stl_depth = j.at("stl_depth").get<int64_t>();
    c.num_heads = j.at("num_heads").get<int64_t>();
    c.window_sizes = j.at("window_sizes").get<std::vector<int64_t>>();
    c.attn_patch_size = j.at("attn_patch_size").get<int64_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.global_skip = j.at("global_skip").get<bool>();
    c.shared_extractor = j.at("shared_extractor").get<bool>();
    c.halluc_single_head = j.at("halluc_single_head").get<bool>();
    return c;
}

void trunc_normal_(torch::Tensor t, double std) {
    torch::NoGradGuard no_grad;
    auto cdf = [](double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); };
    const double lo = cdf(-2.0), hi = cdf(2.0);
    t.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0);
    t.erfinv_();
    t.mul_(std * std::sqrt(2.0));
    t.clamp_(-2.0 * std, 2.0 * std);
}

torch::Tensor relative_position_index(int64_t window) {
    auto r = torch::arange(window, torch::kLong);
    auto grid = torch::meshgrid({r, r}, "ij");
    auto coords = torch::stack({grid[0].flatten(), grid[1].flatten()});  // (2, N)
    auto rel = coords.unsqueeze(2) - coords.unsqueeze(1) + (window - 1);  // (2, N, N)
    return rel[0] * (2 * window - 1) + rel[1];
}

torch::Tensor window_partition(const torch::Tensor& x, int64_t window) {
    const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
    if (h % window != 0 || w % window != 0)
        throw InvalidArgument("window_partition: " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by window " + std::to_string(window));
    return x.view({b, h / window, window, w / window, window, c})
        .permute({0, 1, 3, 2, 4, 5})
        .reshape({-1, window * window, c});
}

torch::Tensor window_reverse(const torch::Tensor& windows, int64_t window, int64_t batch,
                             int64_t height, int64_t width) {
    const auto c = windows.size(-1);
    return windows.view({batch, height / window, width / window, window, window, c})
        .permute({0, 1, 3, 2, 4, 5})
        .reshape({batch, height, width, c});
}

namespace {

torch::Tensor gather_bias(const torch::Tensor& table, const torch::Tensor& index, int64_t tokens) {
    auto heads = table.size(1);
    return table.index_select(0, index.view(-1)).view({tokens, tokens, heads}).permute({2, 0, 1});
}

// Region labels for the cyclically shifted image; tokens from different
// regions must not attend to each other.
torch::Tensor shifted_window_mask(int64_t h, int64_t w, int64_t window, int64_t shift) {
    auto label = [&](int64_t pos, int64_t extent) -> int64_t {
        if (pos < extent - window) return 0;
        if (pos < extent - shift) return 1;
        return 2;
    };
    std::vector<int64_t> ids(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            ids[static_cast<size_t>(y * w + x)] = label(y, h) * 3 + label(x, w);
    auto img = torch::from_blob(ids.data(), {1, h, w, 1}, torch::kLong).clone();
    auto win = window_partition(img, window).squeeze(-1);  // (nW, N)
    return win.unsqueeze(2) != win.unsqueeze(1);
}

}  // namespace

FeatureExtractorImpl::FeatureExtractorImpl(int64_t embed_dim)
    : conv1(nn::Conv2dOptions(6, embed_dim, 3).padding(1)),
      conv2(nn::Conv2dOptions(embed_dim, embed_dim, 3).padding(1)),
      conv3(nn::Conv2dOptions(embed_dim, embed_dim, 3).padding(1)) {
    register_module("conv1", conv1);
    register_module("conv2", conv2);
    register_module("conv3", conv3);
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& input) {
    auto x = F::leaky_relu(conv1(input), F::LeakyReLUFuncOptions().negative_slope(0.1));
    x = F::leaky_relu(conv2(x), F::LeakyReLUFuncOptions().negative_slope(0.1));
    return conv3(x);
}

HallucinationAttentionImpl::HallucinationAttentionImpl(int64_t dim, int64_t heads,
                                                       int64_t patch_size)
    : to_q(nn::LinearOptions(dim, dim)),
      to_k(nn::LinearOptions(dim, dim)),
      to_v(nn::LinearOptions(dim, dim)),
      dim_(dim),
      heads_(heads),
      patch_(patch_size),
      index_(relative_position_index(patch_size)) {
    register_module("to_q", to_q);
    register_module("to_k", to_k);
    register_module("to_v", to_v);
    position_bias = register_parameter(
        "position_bias", torch::zeros({(2 * patch_ - 1) * (2 * patch_ - 1), heads_}));
    trunc_normal_(position_bias, 0.02);
}

std::tuple<torch::Tensor, torch::Tensor> HallucinationAttentionImpl::logits_and_values(
    const torch::Tensor& reference, const torch::Tensor& other) {
    if (reference.sizes() != other.sizes() || reference.dim() != 4 || reference.size(1) != dim_)
        throw InvalidArgument("hallucinate: reference and frame features must share one (B, C, H, W) shape");
    const auto h = reference.size(2), w = reference.size(3);
    if (h % patch_ != 0 || w % patch_ != 0)
        throw InvalidArgument("hallucinate: spatial size " + std::to_string(h) + "x" +
                              std::to_string(w) + " not divisible by attention patch " +
                              std::to_string(patch_));
    const int64_t tokens = patch_ * patch_, head_dim = dim_ / heads_;
    auto split = [&](const torch::Tensor& t) {
        return t.view({t.size(0), tokens, heads_, head_dim}).transpose(1, 2);
    };
    auto ref = window_partition(reference.permute({0, 2, 3, 1}), patch_);
    auto oth = window_partition(other.permute({0, 2, 3, 1}), patch_);
    auto q = split(to_q(ref));
    auto k = split(to_k(oth));
    auto v = split(to_v(oth));
    auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    logits = logits + gather_bias(position_bias, index_.to(position_bias.device()), tokens);
    return {logits, v};
}

torch::Tensor HallucinationAttentionImpl::attention_weights(const torch::Tensor& reference,
                                                            const torch::Tensor& other) {
    return torch::softmax(std::get<0>(logits_and_values(reference, other)), -1);
}

torch::Tensor HallucinationAttentionImpl::forward(const torch::Tensor& reference,
                                                  const torch::Tensor& other) {
    auto [logits, v] = logits_and_values(reference, other);
    auto out = torch::matmul(torch::softmax(logits, -1), v);  // (Bp, heads, N, d)
    out = out.transpose(1, 2).reshape({out.size(0), patch_ * patch_, dim_});
    return window_reverse(out, patch_, reference.size(0), reference.size(2), reference.size(3))
        .permute({0, 3, 1, 2});
}

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window)
    : qkv(nn::LinearOptions(dim, 3 * dim)),
      proj(nn::LinearOptions(dim, dim)),
      dim_(dim),
      heads_(heads),
      window_(window),
      index_(relative_position_index(window)) {
    register_module("qkv", qkv);
    register_module("proj", proj);
    position_bias = register_parameter(
        "position_bias", torch::zeros({(2 * window - 1) * (2 * window - 1), heads}));
    trunc_normal_(position_bias, 0.02);
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& windows,
                                           const torch::Tensor& block_mask) {
    const auto bn = windows.size(0), n = windows.size(1);
    const int64_t head_dim = dim_ / heads_;
    auto qkv_t = qkv(windows).view({bn, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
    auto q = qkv_t[0], k = qkv_t[1], v = qkv_t[2];
    auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    logits = logits + gather_bias(position_bias, index_.to(position_bias.device()), n);
    if (block_mask.defined()) {
        const auto nw = block_mask.size(0);
        logits = logits.view({bn / nw, nw, heads_, n, n})
                     .masked_fill(block_mask.unsqueeze(1).unsqueeze(0),
                                  -std::numeric_limits<double>::infinity())
                     .view({bn, heads_, n, n});
    }
    auto out = torch::matmul(torch::softmax(logits, -1), v);
    return proj(out.transpose(1, 2).reshape({bn, n, dim_}));
}

SwinLayerImpl::SwinLayerImpl(int64_t dim, int64_t heads, int64_t window, bool shifted,
                             double mlp_ratio)
    : norm1(nn::LayerNormOptions({dim})),
      norm2(nn::LayerNormOptions({dim})),
      attn(dim, heads, window),
      fc1(nn::LinearOptions(dim, static_cast<int64_t>(std::llround(dim * mlp_ratio)))),
      fc2(nn::LinearOptions(static_cast<int64_t>(std::llround(dim * mlp_ratio)), dim)),
      window_(window),
      shifted_(shifted) {
    register_module("norm1", norm1);
    register_module("attn", attn);
    register_module("norm2", norm2);
    register_module("fc1", fc1);
    register_module("fc2", fc2);
}

torch::Tensor SwinLayerImpl::forward(const torch::Tensor& input) {
    const auto b = input.size(0), h = input.size(2), w = input.size(3);
    if (h % window_ != 0 || w % window_ != 0)
        throw InvalidArgument("swin layer: " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by window " + std::to_string(window_));
    auto x = input.permute({0, 2, 3, 1});
    const int64_t shift = (shifted_ && h > window_ && w > window_) ? window_ / 2 : 0;

    auto y = norm1(x);
    if (shift > 0) y = torch::roll(y, {-shift, -shift}, {1, 2});
    torch::Tensor mask;
    if (shift > 0) mask = shifted_window_mask(h, w, window_, shift).to(input.device());
    y = window_reverse(attn(window_partition(y, window_), mask), window_, b, h, w);
    if (shift > 0) y = torch::roll(y, {shift, shift}, {1, 2});
    x = x + y;
    x = x + fc2(F::gelu(fc1(norm2(x))));
    return x.permute({0, 3, 1, 2});
}

MultiScaleLayerImpl::MultiScaleLayerImpl(int64_t dim, int64_t heads,
                                         const std::vector<int64_t>& windows, bool shifted,
                                         double mlp_ratio)
    : branches(nn::ModuleList()),
      fuse(nn::Conv2dOptions(dim * static_cast<int64_t>(windows.size()), dim, 1)),
      conv(nn::Conv2dOptions(dim, dim, 3).padding(1)) {
    for (auto w : windows) branches->push_back(SwinLayer(dim, heads, w, shifted, mlp_ratio));
    register_module("branches", branches);
    register_module("fuse", fuse);
    register_module("conv", conv);
}

torch::Tensor MultiScaleLayerImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    outs.reserve(branches->size());
    for (const auto& branch : *branches) outs.push_back(branch->as<SwinLayer>()->forward(x));
    return conv(fuse(torch::cat(outs, 1))) + x;
}

MsrstmBlockImpl::MsrstmBlockImpl(int64_t dim, int64_t heads, const std::vector<int64_t>& windows,
                                 int64_t depth, double mlp_ratio)
    : layers(nn::ModuleList()), windows_(windows) {
    for (int64_t i = 0; i < depth; ++i)
        layers->push_back(MultiScaleLayer(dim, heads, windows, i % 2 == 1, mlp_ratio));
    register_module("layers", layers);
}

torch::Tensor MsrstmBlockImpl::forward(const torch::Tensor& input) {
    for (auto w : windows_)
        if (input.size(2) % w != 0 || input.size(3) % w != 0)
            throw InvalidArgument("msrstm block: spatial size not divisible by window " +
                                  std::to_string(w));
    auto x = input;
    for (const auto& layer : *layers) x = layer->as<MultiScaleLayer>()->forward(x);
    return x;
}

DeghostNetImpl::DeghostNetImpl(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto c = config_.embed_dim;
    extractors = register_module("extractors", nn::ModuleList());
    for (int i = 0; i < (config_.shared_extractor ? 1 : 3); ++i)
        extractors->push_back(FeatureExtractor(c));
    hallucination = register_module(
        "hallucination", HallucinationAttention(c, config_.halluc_single_head ? 1 : config_.num_heads,
                                                config_.attn_patch_size));
    stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(3 * c, c, 3).padding(1)));
    blocks = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < config_.num_blocks; ++i)
        blocks->push_back(MsrstmBlock(c, config_.num_heads, config_.window_sizes, config_.stl_depth,
                                      config_.mlp_ratio));
    head1 = register_module("head1", nn::Conv2d(nn::Conv2dOptions(c, c, 3).padding(1)));
    head2 = register_module("head2", nn::Conv2d(nn::Conv2dOptions(c, 3, 3).padding(1)));
    initialize();
}

void DeghostNetImpl::initialize() {
    torch::NoGradGuard no_grad;
    for (auto& module : modules(/*include_self=*/false)) {
        if (auto* linear = module->as<nn::Linear>()) {
            trunc_normal_(linear->weight, 0.02);
            if (linear->bias.defined()) linear->bias.zero_();
        } else if (auto* conv = module->as<nn::Conv2d>()) {
            // fan-in uniform scaled for the leaky ReLU that follows
            nn::init::kaiming_uniform_(conv->weight, 0.1, torch::kFanIn, torch::kLeakyReLU);
            if (conv->bias.defined()) conv->bias.zero_();
        }
    }
}

torch::Tensor DeghostNetImpl::extract_features(const torch::Tensor& input, int exposure_index) {
    const auto idx = config_.shared_extractor ? 0 : static_cast<size_t>(exposure_index);
    return extractors[idx]->as<FeatureExtractor>()->forward(input);
}

torch::Tensor DeghostNetImpl::forward(const torch::Tensor& i1, const torch::Tensor& i2,
                                      const torch::Tensor& i3) {
    if (i1.dim() != 4 || i1.size(1) != 6)
        throw InvalidArgument("network: inputs must be (B, 6, H, W) planes");
    if (i1.sizes() != i2.sizes() || i1.sizes() != i3.sizes())
        throw InvalidArgument("network: the three exposure planes differ in shape");
    const auto m = config_.spatial_multiple();
    if (i1.size(2) % m != 0 || i1.size(3) % m != 0)
        throw InvalidArgument("network: spatial size " + std::to_string(i1.size(2)) + "x" +
                              std::to_string(i1.size(3)) + " must be a multiple of " +
                              std::to_string(m));

    auto f1 = extract_features(i1, 0);
    auto f2 = extract_features(i2, 1);
    auto f3 = extract_features(i3, 2);
    auto s1 = hallucination(f2, f1);
    auto s3 = hallucination(f2, f3);

    auto x = stem(torch::cat({s1, f2, s3}, 1));
    for (const auto& block : *blocks) x = block->as<MsrstmBlock>()->forward(x);
    if (config_.global_skip) x = x + f2;
    x = F::leaky_relu(head1(x), F::LeakyReLUFuncOptions().negative_slope(0.1));
    return torch::sigmoid(head2(x));
}

int64_t DeghostNetImpl::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

}  // namespace deghost
