#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "deghost/apss.hpp"
#include "deghost/checkpoint.hpp"
#include "deghost/config.hpp"
#include "deghost/datasets.hpp"
#include "deghost/losses.hpp"

namespace deghost {

struct TrainOptions {
    double lr = 5e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t batch_size = 4;
    int64_t crop = 128, stride = 64, jitter = 0;
    double clip_grad_norm = 1.0;
    int64_t pretrain_epochs = 30, finetune_epochs = 30, timesteps = 10;
    int64_t max_steps = 0;     // per phase, 0 = unlimited
    double target_loss = 0.0;  // pretraining early stop, 0 = off
    int64_t max_dynamic = 5, num_static = 5;

    static TrainOptions from_config(const RunConfig& cfg);
};

struct ApssOptions {
    double beta = 85.0, eps_low = 0.05, eps_high = 0.95;
    PoolMode pool = PoolMode::Mean;
    int64_t patch_size = 8;

    static ApssOptions from_config(const RunConfig& cfg);
};

/// run_dir/{ckpt, logs/metrics.jsonl, apss/timestep_<t>.json}
struct RunLayout {
    std::filesystem::path root;

    explicit RunLayout(std::filesystem::path r) : root(std::move(r)) {}
    std::filesystem::path ckpt_dir() const { return root / "ckpt"; }
    std::filesystem::path logs_dir() const { return root / "logs"; }
    std::filesystem::path apss_dir() const { return root / "apss"; }
    std::filesystem::path metrics_path() const { return logs_dir() / "metrics.jsonl"; }
    std::filesystem::path checkpoint_path(Stage stage) const;
    void create() const;
};

/// Append-only JSON-lines log; every record is flushed immediately.
class MetricsLog {
public:
    MetricsLog(const std::filesystem::path& path, bool truncate);
    void write(const nlohmann::json& record);

private:
    std::ofstream os_;
};

/// Seeds torch, pins the thread count and enables deterministic kernels.
void configure_runtime(const RunConfig& cfg);

/// Network input planes for a batch: frames are (B,3,H,W) each, `times` (B,3).
/// Returns the three (B,6,H,W) planes [x_i, x_i^gamma / t_i].
std::array<torch::Tensor, 3> network_inputs(const std::array<torch::Tensor, 3>& frames,
                                            const torch::Tensor& times, double gamma);

/// Tile origins along one axis of a padded extent: multiples of `stride`,
/// the last one flush with the end.
std::vector<int64_t> tile_origins(int64_t extent, int64_t tile, int64_t stride);

/// Blend weights of one tile along one axis: zero inside `guard` pixels of
/// an interior tile edge, a linear ramp over the next `ramp` pixels, 1 elsewhere.
torch::Tensor tile_weights(int64_t origin, int64_t tile, int64_t extent, int64_t guard, int64_t ramp);

struct PredictOptions {
    int64_t tile = 0;  // 0: whole image in one pass
    int64_t ramp = 0;  // 0: the network's spatial multiple
};

/// HDR prediction (3, H, W) aligned to the medium frame. Inputs are padded to
/// the network's spatial multiple; with tiling, tiles overlap by at least
/// twice the receptive radius plus the ramp so blended values only come from
/// tile positions unaffected by tile borders.
torch::Tensor predict(DeghostNet& net, const ExposureStack& stack, double gamma,
                      const PredictOptions& opts = {});
torch::Tensor predict(const Checkpoint& ckpt, const ExposureStack& stack,
                      const PredictOptions& opts = {});

class Trainer {
public:
    Trainer(RunConfig cfg, std::filesystem::path run_dir);

    /// Stage 1 on unlabeled samples. A `resume` checkpoint (stage pretrained)
    /// continues its parameters and step counter.
    Checkpoint pretrain(const std::vector<ExposureStack>& unlabeled, const Checkpoint* resume = nullptr);
    Checkpoint finetune(const Checkpoint& ckpt, const std::vector<ExposureStack>& labeled);
    Checkpoint iterate(const Checkpoint& ckpt, const std::vector<ExposureStack>& labeled,
                       const std::vector<ExposureStack>& unlabeled, int64_t timesteps);

    const RunLayout& layout() const { return layout_; }
    const RunConfig& config() const { return cfg_; }

    /// Called with every record written to metrics.jsonl.
    std::function<void(const nlohmann::json&)> on_record;

private:
    struct Item {
        ExposureStack crop;
        double weight = 1.0;
        size_t sample_index = 0;
    };

    std::vector<Item> make_items(const std::vector<ExposureStack>& stacks, std::mt19937_64& rng) const;
    torch::optim::Adam make_optimizer(DeghostNet& net) const;
    double optimizer_step(DeghostNet& net, torch::optim::Adam& opt, const torch::Tensor& loss,
                          const std::string& phase, int64_t step, const std::vector<const Item*>& batch,
                          const std::array<torch::Tensor, 3>& inputs);
    void record(const nlohmann::json& j);
    Checkpoint finish(DeghostNet& net, Stage stage, int64_t step, const Checkpoint* parent);
    void train_labeled_epoch(DeghostNet& net, torch::optim::Adam& opt, std::vector<Item>& items,
                             std::mt19937_64& rng, int64_t& step, const std::string& phase,
                             int64_t epoch_or_t, bool& stop);

    RunConfig cfg_;
    RunLayout layout_;
    TrainOptions train_;
    ApssOptions apss_;
    GammaParams gamma_;
    MaskOptions mask_;
    std::unique_ptr<MetricsLog> log_;
    PerceptualBackbone backbone_{nullptr};
    int64_t phase_start_ = 0;
};

}  // namespace deghost
