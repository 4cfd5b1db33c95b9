#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace deghost {

struct NetworkConfig {
    int64_t embed_dim = 60;
    int64_t num_blocks = 3;
    int64_t stl_depth = 2;  // multi-scale layers per MSRSTM block
    int64_t num_heads = 6;
    std::vector<int64_t> window_sizes{2, 4, 8};
    int64_t attn_patch_size = 8;  // hallucination patch side
    double mlp_ratio = 2.0;
    bool global_skip = true;
    bool shared_extractor = true;
    bool halluc_single_head = false;

    void validate() const;
    /// H and W must be multiples of this (lcm of window sizes and attention patch).
    int64_t spatial_multiple() const;
    /// Largest pixel distance over which an input value can influence an output value.
    int64_t receptive_radius() const;

    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);
};

/// Fills `t` with N(0, std^2) truncated to [-2 std, 2 std]; draws from the global torch RNG.
void trunc_normal_(torch::Tensor t, double std);

/// (w*w, w*w) index into a (2w-1)^2 relative-position bias table.
torch::Tensor relative_position_index(int64_t window);

/// (B, H, W, C) -> (B * nW, w*w, C) and back.
torch::Tensor window_partition(const torch::Tensor& x, int64_t window);
torch::Tensor window_reverse(const torch::Tensor& windows, int64_t window, int64_t batch,
                             int64_t height, int64_t width);

/// Three 3x3 convolutions (6 -> C -> C -> C) with LeakyReLU between them.
class FeatureExtractorImpl : public torch::nn::Module {
public:
    explicit FeatureExtractorImpl(int64_t embed_dim);
    torch::Tensor forward(const torch::Tensor& input);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(FeatureExtractor);

/// Patch-wise cross attention: queries from the reference features, keys and
/// values from a non-reference frame, plus a learnable relative-position bias.
class HallucinationAttentionImpl : public torch::nn::Module {
public:
    HallucinationAttentionImpl(int64_t dim, int64_t heads, int64_t patch_size);

    torch::Tensor forward(const torch::Tensor& reference, const torch::Tensor& other);
    /// Softmax weights, (B * patches, heads, P*P, P*P).
    torch::Tensor attention_weights(const torch::Tensor& reference, const torch::Tensor& other);

    int64_t heads() const { return heads_; }
    int64_t patch_size() const { return patch_; }

    torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr};
    torch::Tensor position_bias;  // ((2P-1)^2, heads)

private:
    std::tuple<torch::Tensor, torch::Tensor> logits_and_values(const torch::Tensor& reference,
                                                               const torch::Tensor& other);

    int64_t dim_, heads_, patch_;
    torch::Tensor index_;
};
TORCH_MODULE(HallucinationAttention);

/// Multi-head self attention inside square windows with relative-position bias.
class WindowAttentionImpl : public torch::nn::Module {
public:
    WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window);
    /// `windows` is (B * nW, w*w, C); `block_mask` (nW, w*w, w*w) bool marks
    /// pairs that must not attend to each other, or is undefined.
    torch::Tensor forward(const torch::Tensor& windows, const torch::Tensor& block_mask);

    torch::nn::Linear qkv{nullptr}, proj{nullptr};
    torch::Tensor position_bias;

private:
    int64_t dim_, heads_, window_;
    torch::Tensor index_;
};
TORCH_MODULE(WindowAttention);

/// Pre-norm Swin layer: (shifted) window attention and an MLP, each with a skip.
class SwinLayerImpl : public torch::nn::Module {
public:
    SwinLayerImpl(int64_t dim, int64_t heads, int64_t window, bool shifted, double mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x);  // (B, C, H, W)

    int64_t window() const { return window_; }

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    WindowAttention attn{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};

private:
    int64_t window_;
    bool shifted_;
};
TORCH_MODULE(SwinLayer);

/// One multi-scale layer: parallel Swin layers at every window size, a 1x1
/// fusion conv over their concatenation, a 3x3 conv, and a residual skip.
class MultiScaleLayerImpl : public torch::nn::Module {
public:
    MultiScaleLayerImpl(int64_t dim, int64_t heads, const std::vector<int64_t>& windows,
                        bool shifted, double mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::ModuleList branches{nullptr};
    torch::nn::Conv2d fuse{nullptr}, conv{nullptr};
};
TORCH_MODULE(MultiScaleLayer);

class MsrstmBlockImpl : public torch::nn::Module {
public:
    MsrstmBlockImpl(int64_t dim, int64_t heads, const std::vector<int64_t>& windows, int64_t depth,
                    double mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::ModuleList layers{nullptr};

private:
    std::vector<int64_t> windows_;
};
TORCH_MODULE(MsrstmBlock);

/// The full fusion network. Inputs are three (B, 6, H, W) planes (short,
/// medium, long); the output is (B, 3, H, W) radiance in (0, 1) aligned to
/// the medium frame's geometry.
class DeghostNetImpl : public torch::nn::Module {
public:
    explicit DeghostNetImpl(NetworkConfig config);

    torch::Tensor forward(const torch::Tensor& i1, const torch::Tensor& i2, const torch::Tensor& i3);
    torch::Tensor extract_features(const torch::Tensor& input, int exposure_index);

    const NetworkConfig& config() const { return config_; }
    int64_t parameter_count() const;

    torch::nn::ModuleList extractors{nullptr};
    HallucinationAttention hallucination{nullptr};
    torch::nn::Conv2d stem{nullptr};
    torch::nn::ModuleList blocks{nullptr};
    torch::nn::Conv2d head1{nullptr}, head2{nullptr};

private:
    void initialize();

    NetworkConfig config_;
};
TORCH_MODULE(DeghostNet);

}  // namespace deghost
