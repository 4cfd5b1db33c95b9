#include "deghost/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"
#include "deghost/log.hpp"
#include "deghost/masking.hpp"
#include "deghost/tensor_file.hpp"

namespace fs = std::filesystem;

namespace deghost {

namespace F = torch::nn::functional;

TrainOptions TrainOptions::from_config(const RunConfig& cfg) {
    TrainOptions o;
    o.lr = cfg.get_double("train.lr");
    o.beta1 = cfg.get_double("train.beta1");
    o.beta2 = cfg.get_double("train.beta2");
    o.eps = cfg.get_double("train.eps");
    o.batch_size = cfg.get_int("train.batch_size");
    o.crop = cfg.get_int("train.crop");
    o.stride = cfg.get_int("train.stride");
    o.jitter = cfg.get_int("train.jitter");
    o.clip_grad_norm = cfg.get_double("train.clip_grad_norm");
    o.pretrain_epochs = cfg.get_int("train.pretrain_epochs");
    o.finetune_epochs = cfg.get_int("train.finetune_epochs");
    o.timesteps = cfg.get_int("train.timesteps");
    o.max_steps = cfg.get_int("train.max_steps");
    o.target_loss = cfg.get_double("train.target_loss");
    o.max_dynamic = cfg.get_int("data.max_dynamic");
    o.num_static = cfg.get_int("data.num_static");
    if (!(o.lr > 0.0) || !(o.eps > 0.0) || o.beta1 < 0.0 || o.beta1 >= 1.0 || o.beta2 < 0.0 || o.beta2 >= 1.0)
        throw ConfigError("train: lr and eps must be positive, betas in [0, 1)");
    if (o.batch_size <= 0 || o.crop <= 0 || o.stride <= 0 || o.jitter < 0)
        throw ConfigError("train: batch_size, crop and stride must be positive, jitter non-negative");
    if (o.pretrain_epochs < 0 || o.finetune_epochs < 0 || o.timesteps < 0 || o.max_steps < 0)
        throw ConfigError("train: epoch, timestep and step counts must be non-negative");
    return o;
}

ApssOptions ApssOptions::from_config(const RunConfig& cfg) {
    ApssOptions o;
    o.beta = cfg.get_double("apss.beta");
    o.eps_low = cfg.get_double("apss.eps_low");
    o.eps_high = cfg.get_double("apss.eps_high");
    o.pool = pool_mode_from_string(cfg.get_string("apss.pool"));
    o.patch_size = cfg.get_int("apss.patch_size");
    if (o.patch_size == 0) o.patch_size = cfg.get_int("mask.patch_size");
    if (!(o.beta >= 0.0 && o.beta <= 100.0)) throw ConfigError("apss.beta must lie in [0, 100]");
    if (!(o.eps_low >= 0.0 && o.eps_low < o.eps_high && o.eps_high <= 1.0))
        throw ConfigError("apss: need 0 <= eps_low < eps_high <= 1");
    if (o.patch_size <= 0) throw ConfigError("apss.patch_size must be positive");
    return o;
}

fs::path RunLayout::checkpoint_path(Stage stage) const { return ckpt_dir() / (to_string(stage) + ".ckpt"); }

void RunLayout::create() const {
    std::error_code ec;
    for (const auto& d : {ckpt_dir(), logs_dir(), apss_dir()}) {
        fs::create_directories(d, ec);
        if (ec) throw DataError("cannot create " + d.string() + ": " + ec.message());
    }
}

MetricsLog::MetricsLog(const fs::path& path, bool truncate)
    : os_(path, truncate ? std::ios::trunc : std::ios::app) {
    if (!os_) throw DataError("cannot open " + path.string());
}

void MetricsLog::write(const nlohmann::json& record) {
    os_ << record.dump() << "\n";
    os_.flush();
}

void configure_runtime(const RunConfig& cfg) {
    torch::manual_seed(cfg.seed());
    const auto threads = cfg.get_int("threads");
    if (threads > 0) torch::set_num_threads(static_cast<int>(threads));
    at::globalContext().setDeterministicAlgorithms(cfg.get_bool("deterministic"), false);
}

std::array<torch::Tensor, 3> network_inputs(const std::array<torch::Tensor, 3>& frames,
                                            const torch::Tensor& times, double gamma) {
    std::array<torch::Tensor, 3> out;
    for (int64_t i = 0; i < 3; ++i)
        out[static_cast<size_t>(i)] =
            hdr::six_channel_input(frames[static_cast<size_t>(i)], exposure_column(times, i), gamma);
    return out;
}

std::vector<int64_t> tile_origins(int64_t extent, int64_t tile, int64_t stride) {
    if (tile <= 0 || stride <= 0) throw InvalidArgument("tile and stride must be positive");
    if (extent <= tile) return {0};
    std::vector<int64_t> out;
    for (int64_t o = 0; o + tile < extent; o += stride) out.push_back(o);
    if (out.back() != extent - tile) out.push_back(extent - tile);
    return out;
}

torch::Tensor tile_weights(int64_t origin, int64_t tile, int64_t extent, int64_t guard, int64_t ramp) {
    auto ramp_at = [&](int64_t d) {
        if (d < guard) return 0.0;
        if (d < guard + ramp) return static_cast<double>(d - guard + 1) / static_cast<double>(ramp + 1);
        return 1.0;
    };
    std::vector<float> w(static_cast<size_t>(tile), 1.0f);
    for (int64_t u = 0; u < tile; ++u) {
        double v = 1.0;
        if (origin > 0) v = std::min(v, ramp_at(u));
        if (origin + tile < extent) v = std::min(v, ramp_at(tile - 1 - u));
        w[static_cast<size_t>(u)] = static_cast<float>(v);
    }
    return torch::tensor(w);
}

torch::Tensor predict(DeghostNet& net, const ExposureStack& stack, double gamma, const PredictOptions& o) {
    torch::NoGradGuard no_grad;
    const int64_t m = net->config().spatial_multiple();
    const int64_t h = stack.height(), w = stack.width();
    const int64_t hp = (h + m - 1) / m * m, wp = (w + m - 1) / m * m;
    const auto t = stack.times();
    auto times = torch::tensor({t[0], t[1], t[2]}, torch::kFloat).view({1, 3});
    std::array<torch::Tensor, 3> frames;
    for (size_t i = 0; i < 3; ++i) {
        auto f = stack.ldr[i].pixels.to(torch::kFloat).unsqueeze(0);
        if (hp != h || wp != w)
            f = F::pad(f, F::PadFuncOptions({0, wp - w, 0, hp - h}).mode(torch::kReplicate));
        frames[i] = f;
    }
    auto in = network_inputs(frames, times, gamma);

    torch::Tensor out;
    if (o.tile <= 0 || (hp <= o.tile && wp <= o.tile)) {
        out = net->forward(in[0], in[1], in[2]);
    } else {
        const int64_t guard = net->config().receptive_radius();
        const int64_t ramp = o.ramp > 0 ? o.ramp : m;
        const int64_t overlap = (2 * guard + ramp + m - 1) / m * m;
        if (o.tile % m != 0 || o.tile <= overlap)
            throw InvalidArgument("predict.tile must be a multiple of " + std::to_string(m) +
                                  " and larger than the tile overlap " + std::to_string(overlap));
        const int64_t stride = o.tile - overlap;
        const int64_t th = std::min(o.tile, hp), tw = std::min(o.tile, wp);
        auto acc = torch::zeros({1, 3, hp, wp});
        auto wsum = torch::zeros({1, 1, hp, wp});
        for (auto y0 : tile_origins(hp, th, stride))
            for (auto x0 : tile_origins(wp, tw, stride)) {
                auto cut = [&](const torch::Tensor& x) { return x.narrow(2, y0, th).narrow(3, x0, tw); };
                auto p = net->forward(cut(in[0]), cut(in[1]), cut(in[2]));
                auto wt = torch::outer(tile_weights(y0, th, hp, guard, ramp), tile_weights(x0, tw, wp, guard, ramp))
                              .view({1, 1, th, tw});
                cut(acc).add_(p * wt);
                cut(wsum).add_(wt);
            }
        out = acc / wsum;
    }
    return out[0].narrow(1, 0, h).narrow(2, 0, w).contiguous();
}

torch::Tensor predict(const Checkpoint& ckpt, const ExposureStack& stack, const PredictOptions& opts) {
    auto net = ckpt.instantiate();
    return predict(net, stack, ckpt.gamma.gamma, opts);
}

namespace {

uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

torch::Tensor stats(const torch::Tensor& t) {
    return torch::stack({t.min(), t.max(), t.mean()}).to(torch::kDouble);
}

}  // namespace

Trainer::Trainer(RunConfig cfg, fs::path run_dir)
    : cfg_(std::move(cfg)),
      layout_(std::move(run_dir)),
      train_(TrainOptions::from_config(cfg_)),
      apss_(ApssOptions::from_config(cfg_)),
      gamma_(cfg_.gamma()),
      mask_(cfg_.mask()) {
    const auto net = cfg_.network();
    const auto m = net.spatial_multiple();
    if (train_.crop % m != 0)
        throw ConfigError("train.crop " + std::to_string(train_.crop) + " must be a multiple of " +
                          std::to_string(m) + " (window sizes and attention patch)");
    if (train_.crop % mask_.patch_size != 0)
        throw ConfigError("train.crop must be a multiple of mask.patch_size");
    const auto loss_on = cfg_.get_string("ssl.loss_on");
    if (loss_on != "all" && loss_on != "masked_only") throw ConfigError("ssl.loss_on must be all or masked_only");
    backbone_ = make_backbone(cfg_.get_string("loss.backbone"), cfg_.get_int_list("loss.taps"),
                              static_cast<uint64_t>(cfg_.get_int("loss.backbone_seed")));
}

void Trainer::record(const nlohmann::json& j) {
    if (log_) log_->write(j);
    if (on_record) on_record(j);
}

std::vector<Trainer::Item> Trainer::make_items(const std::vector<ExposureStack>& stacks,
                                                std::mt19937_64& rng) const {
    std::vector<Item> items;
    for (size_t k = 0; k < stacks.size(); ++k)
        for (auto& c : crop_patches(stacks[k], train_.crop, train_.stride, &rng, train_.jitter))
            items.push_back({std::move(c), 1.0, k});
    return items;
}

torch::optim::Adam Trainer::make_optimizer(DeghostNet& net) const {
    return torch::optim::Adam(net->parameters(), torch::optim::AdamOptions(train_.lr)
                                                     .betas(std::make_tuple(train_.beta1, train_.beta2))
                                                     .eps(train_.eps));
}

double Trainer::optimizer_step(DeghostNet& net, torch::optim::Adam& opt, const torch::Tensor& loss,
                               const std::string& phase, int64_t step, const std::vector<const Item*>& batch,
                               const std::array<torch::Tensor, 3>& inputs) {
    const double value = loss.item<double>();
    double grad_norm = 0.0;
    if (std::isfinite(value)) {
        opt.zero_grad();
        loss.backward();
        if (train_.clip_grad_norm > 0.0)
            grad_norm = torch::nn::utils::clip_grad_norm_(net->parameters(), train_.clip_grad_norm);
    }
    if (!std::isfinite(value) || !std::isfinite(grad_norm)) {
        const auto stem = layout_.logs_dir() / ("abort_step" + std::to_string(step));
        nlohmann::json dump = {{"phase", phase}, {"step", step}, {"lr", train_.lr}, {"loss", value},
                               {"grad_norm", grad_norm}};
        TensorFile tensors;
        for (size_t i = 0; i < 3; ++i) {
            auto s = stats(inputs[i]);
            dump["input_stats"].push_back({s[0].item<double>(), s[1].item<double>(), s[2].item<double>()});
            tensors.tensors.emplace_back("input" + std::to_string(i + 1), inputs[i].detach());
        }
        for (const auto* item : batch) dump["samples"].push_back(item->crop.id);
        tensors.meta = dump;
        try {
            std::ofstream(stem.string() + ".json") << dump.dump(2) << "\n";
            tensors.save(stem.string() + ".tensors");
        } catch (const std::exception& e) {
            log_warning(std::string("could not write the abort dump: ") + e.what());
        }
        throw NumericalAbort(phase + ": non-finite loss or gradient at step " + std::to_string(step) +
                             " (diagnostics in " + stem.string() + ".json)");
    }
    opt.step();
    return value;
}

Checkpoint Trainer::finish(DeghostNet& net, Stage stage, int64_t step, const Checkpoint* parent) {
    auto ckpt = Checkpoint::capture(net, gamma_, stage, step, cfg_.seed(), cfg_.to_json());
    if (parent) {
        ckpt.provenance = parent->provenance;
        ckpt.provenance.push_back(parent->id());
    }
    ckpt.save(layout_.checkpoint_path(stage));
    record({{"event", "checkpoint"}, {"stage", to_string(stage)}, {"step", step}, {"id", ckpt.id()}});
    return ckpt;
}

namespace {

void write_snapshot(const RunLayout& layout, const RunConfig& cfg, const std::string& phase) {
    std::ofstream os(layout.root / ("config_" + phase + ".cfg"), std::ios::trunc);
    if (!os) throw DataError("cannot write the config snapshot into " + layout.root.string());
    os << cfg.to_text();
}

torch::Tensor times_of(const std::vector<const ExposureStack*>& stacks) {
    std::vector<float> v;
    for (const auto* s : stacks)
        for (double t : s->times()) v.push_back(static_cast<float>(t));
    return torch::tensor(v).view({static_cast<int64_t>(stacks.size()), 3});
}

torch::Tensor frame_batch(const std::vector<const ExposureStack*>& stacks, size_t i) {
    std::vector<torch::Tensor> v;
    for (const auto* s : stacks) v.push_back(s->ldr[i].pixels.to(torch::kFloat));
    return torch::stack(v);
}

}  // namespace

Checkpoint Trainer::pretrain(const std::vector<ExposureStack>& unlabeled, const Checkpoint* resume) {
    if (unlabeled.empty()) throw DataError("pretrain: the unlabeled set is empty");
    if (resume && resume->stage != Stage::Pretrained)
        throw StageError("pretrain can only resume a pretrained checkpoint, got '" + to_string(resume->stage) + "'");
    layout_.create();
    log_ = std::make_unique<MetricsLog>(layout_.metrics_path(), resume == nullptr);
    write_snapshot(layout_, cfg_, "pretrain");

    torch::manual_seed(cfg_.seed());
    DeghostNet net(cfg_.network());
    int64_t step = 0;
    if (resume) {
        if (resume->network.to_json() != net->config().to_json())
            throw DataError("pretrain: resume checkpoint was built with a different network config");
        resume->load_into(net);
        step = resume->step;
    }
    const int64_t first_step = step;
    auto opt = make_optimizer(net);
    std::mt19937_64 rng(cfg_.seed() ^ 0x5eed0001ull);
    auto items = make_items(unlabeled, rng);
    const bool resample = cfg_.get_bool("mask.resample");
    const bool masked_only = cfg_.get_string("ssl.loss_on") == "masked_only";
    const double gamma = gamma_.gamma;

    bool stop = false;
    for (int64_t epoch = 0; epoch < train_.pretrain_epochs && !stop; ++epoch) {
        if (epoch > 0 && train_.jitter > 0) items = make_items(unlabeled, rng);
        std::vector<size_t> order(items.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        int64_t count = 0;
        for (size_t b0 = 0; b0 < order.size() && !stop; b0 += static_cast<size_t>(train_.batch_size)) {
            std::vector<const Item*> batch;
            std::vector<const ExposureStack*> stacks;
            for (size_t k = b0; k < std::min(order.size(), b0 + static_cast<size_t>(train_.batch_size)); ++k) {
                batch.push_back(&items[order[k]]);
                stacks.push_back(&items[order[k]].crop);
            }
            auto x_short = frame_batch(stacks, 0);
            auto times = times_of(stacks);
            const auto t1 = exposure_column(times, 0);
            std::array<torch::Tensor, 3> pseudo;
            for (int64_t i = 0; i < 3; ++i)
                pseudo[static_cast<size_t>(i)] = hdr::exposure_adjust(x_short, t1, exposure_column(times, i), gamma);
            auto inputs = network_inputs(pseudo, times, gamma);

            const int64_t h = x_short.size(2), w = x_short.size(3);
            torch::Tensor coverage = torch::zeros({static_cast<int64_t>(batch.size()), 1, h, w});
            std::array<torch::Tensor, 3> masks;
            for (size_t i = 0; i < 3; ++i) {
                std::vector<torch::Tensor> per;
                for (size_t b = 0; b < batch.size(); ++b) {
                    uint64_t seed;
                    if (mask_.shared_mask && i > 0) {
                        per.push_back(masks[0][static_cast<int64_t>(b)]);
                        continue;
                    }
                    if (resample)
                        seed = rng();
                    else
                        seed = fnv1a(batch[b]->crop.id + "#" + std::to_string(i), cfg_.seed() + 1);
                    per.push_back(sample_mask(h, w, mask_.patch_size, mask_.ratio, seed).pixel_mask());
                }
                masks[i] = torch::stack(per);
                inputs[i] = torch::where(masks[i] > 0.5, torch::full({}, mask_.fill), inputs[i]);
                coverage = torch::maximum(coverage, masks[i]);
            }
            auto pred = net->forward(inputs[0], inputs[1], inputs[2]);
            auto loss = ssl_loss(pred, x_short, times, gamma, masked_only ? coverage : torch::Tensor());
            const double value = optimizer_step(net, opt, loss, "pretrain", step, batch, inputs);
            record({{"phase", "pretrain"}, {"epoch", epoch}, {"step", step}, {"loss", value}});
            sum += value;
            ++count;
            ++step;
            if (train_.max_steps > 0 && step - first_step >= train_.max_steps) stop = true;
            if (train_.target_loss > 0.0 && value < train_.target_loss) stop = true;
        }
        record({{"phase", "pretrain"}, {"event", "epoch"}, {"epoch", epoch}, {"step", step},
                {"mean_loss", count > 0 ? sum / static_cast<double>(count) : 0.0}});
    }
    return finish(net, Stage::Pretrained, step, resume);
}

void Trainer::train_labeled_epoch(DeghostNet& net, torch::optim::Adam& opt, std::vector<Item>& items,
                                  std::mt19937_64& rng, int64_t& step, const std::string& phase,
                                  int64_t epoch_or_t, bool& stop) {
    const double gamma = gamma_.gamma, mu = gamma_.mu, lambda = cfg_.get_double("loss.lambda");
    std::vector<size_t> order(items.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const char* counter = phase == "iterate" ? "timestep" : "epoch";
    double sum = 0.0;
    int64_t count = 0;
    for (size_t b0 = 0; b0 < order.size() && !stop; b0 += static_cast<size_t>(train_.batch_size)) {
        std::vector<const Item*> batch;
        std::vector<const ExposureStack*> stacks;
        for (size_t k = b0; k < std::min(order.size(), b0 + static_cast<size_t>(train_.batch_size)); ++k) {
            batch.push_back(&items[order[k]]);
            stacks.push_back(&items[order[k]].crop);
        }
        std::array<torch::Tensor, 3> frames{frame_batch(stacks, 0), frame_batch(stacks, 1), frame_batch(stacks, 2)};
        auto times = times_of(stacks);
        std::vector<torch::Tensor> targets;
        std::vector<int64_t> dyn, stat, unl;
        for (size_t b = 0; b < batch.size(); ++b) {
            const auto& c = batch[b]->crop;
            if (!c.gt) throw DataError("training sample '" + c.id + "' has no target");
            targets.push_back(c.gt->pixels.to(torch::kFloat));
            auto& group = c.role == Role::DynamicLabeled ? dyn : c.role == Role::StaticLabeled ? stat : unl;
            group.push_back(static_cast<int64_t>(b));
        }
        auto target = torch::stack(targets);
        auto inputs = network_inputs(frames, times, gamma);
        auto pred = net->forward(inputs[0], inputs[1], inputs[2]);

        auto group = [&](const std::vector<int64_t>& idx) -> LossTerms {
            if (idx.empty()) return group_terms({}, {}, backbone_, mu);
            auto sel = torch::tensor(idx, torch::kLong);
            return group_terms(pred.index_select(0, sel), target.index_select(0, sel), backbone_, mu);
        };
        std::vector<WeightedTerms> weighted;
        for (auto b : unl) {
            auto p = pred.narrow(0, b, 1), t = target.narrow(0, b, 1);
            weighted.push_back({batch[static_cast<size_t>(b)]->weight,
                                {recon_loss(p, t, mu), perceptual_loss(p, t, backbone_, mu)}});
        }
        auto br = iteration_loss(group(dyn), group(stat), weighted, lambda);
        const double value = optimizer_step(net, opt, br.total, phase, step, batch, inputs);
        record({{"phase", phase},
                {counter, epoch_or_t},
                {"step", step},
                {"loss", value},
                {"labeled_recon", br.labeled_recon.item<double>()},
                {"labeled_percep_scaled", lambda * br.labeled_percep.item<double>()},
                {"unlabeled_recon", br.unlabeled_recon.item<double>()},
                {"unlabeled_percep_scaled", lambda * br.unlabeled_percep.item<double>()},
                {"lambda", lambda},
                {"batch", {{"dynamic", dyn.size()}, {"static", stat.size()}, {"unlabeled", unl.size()}}}});
        sum += value;
        ++count;
        ++step;
        if (train_.max_steps > 0 && step - phase_start_ >= train_.max_steps) stop = true;
    }
    record({{"phase", phase}, {"event", "epoch"}, {counter, epoch_or_t}, {"step", step},
            {"mean_loss", count > 0 ? sum / static_cast<double>(count) : 0.0}});
}

Checkpoint Trainer::finetune(const Checkpoint& ckpt, const std::vector<ExposureStack>& labeled) {
    if (ckpt.stage != Stage::Pretrained)
        throw StageError("finetune needs a pretrained checkpoint, got '" + to_string(ckpt.stage) + "'");
    int64_t n_dyn = 0, n_stat = 0;
    for (const auto& s : labeled) {
        if (!s.labeled() || !s.gt) throw DataError("finetune: sample '" + s.id + "' is not labeled");
        (s.role == Role::DynamicLabeled ? n_dyn : n_stat)++;
    }
    if (labeled.empty()) throw DataError("finetune: the labeled set is empty");
    if (train_.max_dynamic > 0 && (n_dyn < 1 || n_dyn > train_.max_dynamic))
        throw DataError("finetune: expected 1.." + std::to_string(train_.max_dynamic) +
                        " dynamic labeled samples, got " + std::to_string(n_dyn) + " (data.max_dynamic)");
    if (train_.num_static > 0 && n_stat != train_.num_static)
        throw DataError("finetune: expected " + std::to_string(train_.num_static) +
                        " static labeled samples, got " + std::to_string(n_stat) + " (data.num_static)");
    layout_.create();
    log_ = std::make_unique<MetricsLog>(layout_.metrics_path(), false);
    write_snapshot(layout_, cfg_, "finetune");

    auto net = ckpt.instantiate();
    int64_t step = ckpt.step;
    phase_start_ = step;
    auto opt = make_optimizer(net);
    std::mt19937_64 rng(cfg_.seed() ^ 0x5eed0002ull);
    auto items = make_items(labeled, rng);
    bool stop = false;
    for (int64_t epoch = 0; epoch < train_.finetune_epochs && !stop; ++epoch) {
        if (epoch > 0 && train_.jitter > 0) items = make_items(labeled, rng);
        train_labeled_epoch(net, opt, items, rng, step, "finetune", epoch, stop);
    }
    return finish(net, Stage::Finetuned, step, &ckpt);
}

Checkpoint Trainer::iterate(const Checkpoint& ckpt, const std::vector<ExposureStack>& labeled,
                            const std::vector<ExposureStack>& unlabeled, int64_t timesteps) {
    if (ckpt.stage != Stage::Finetuned && ckpt.stage != Stage::Iterated)
        throw StageError("iterate needs a finetuned or iterated checkpoint, got '" + to_string(ckpt.stage) + "'");
    if (timesteps < 0) throw InvalidArgument("iterate: timesteps must be non-negative");
    for (const auto& s : labeled)
        if (!s.labeled() || !s.gt) throw DataError("iterate: sample '" + s.id + "' is not labeled");
    for (const auto& s : unlabeled)
        if (s.labeled()) throw DataError("iterate: sample '" + s.id + "' is not unlabeled");
    if (labeled.empty()) throw DataError("iterate: labeled samples are needed for the selection threshold");
    layout_.create();
    log_ = std::make_unique<MetricsLog>(layout_.metrics_path(), false);
    write_snapshot(layout_, cfg_, "iterate");

    auto net = ckpt.instantiate();
    int64_t step = ckpt.step;
    phase_start_ = step;
    if (timesteps == 0) return finish(net, Stage::Iterated, step, &ckpt);

    auto opt = make_optimizer(net);
    std::mt19937_64 rng(cfg_.seed() ^ 0x5eed0003ull);
    const PredictOptions popts{cfg_.get_int("predict.tile"), cfg_.get_int("predict.ramp")};
    const double gamma = gamma_.gamma;

    auto score = [&](const ExposureStack& s, const torch::Tensor& pred) {
        const auto& medium = s.ldr[1];
        auto mask = well_exposed_mask(medium.pixels, apss_.eps_low, apss_.eps_high);
        return selection_loss(pred, medium.pixels, medium.exposure_time, gamma, mask, apss_.patch_size,
                              apss_.pool, s.id);
    };

    bool stop = false;
    for (int64_t t = 0; t < timesteps && !stop; ++t) {
        std::vector<SelectionRecord> lrec, urec;
        std::vector<torch::Tensor> pseudo;
        for (const auto& s : labeled) lrec.push_back(score(s, predict(net, s, gamma, popts)));
        for (const auto& s : unlabeled) {
            pseudo.push_back(predict(net, s, gamma, popts));
            urec.push_back(score(s, pseudo.back()));
        }
        SelectionThreshold th;
        try {
            th = compute_threshold(lrec, apss_.beta, t);
        } catch (const InvalidArgument&) {
            throw DataError("iterate: no well-exposed pixels in any labeled medium frame; cannot form a threshold");
        }
        assign_weights(urec, th);
        int64_t selected = 0, unselectable = 0;
        double wsum = 0.0;
        for (const auto& r : urec) {
            selected += r.weight > 0.0;
            unselectable += r.unselectable;
            wsum += r.weight;
        }
        if (!unlabeled.empty() && unselectable == static_cast<int64_t>(urec.size()))
            log_warning("iterate: every unlabeled sample is unselectable at timestep " + std::to_string(t) +
                        "; training on labeled data only");
        {
            std::ofstream os(layout_.apss_dir() / ("timestep_" + std::to_string(t) + ".json"), std::ios::trunc);
            if (!os) throw DataError("cannot write the APSS report into " + layout_.apss_dir().string());
            os << apss_report(th, urec, lrec).dump(2) << "\n";
        }
        record({{"phase", "iterate"},
                {"event", "apss"},
                {"timestep", t},
                {"tau", th.tau},
                {"m", th.max_loss},
                {"selected", selected},
                {"unselectable", unselectable},
                {"mean_weight", urec.empty() ? 0.0 : wsum / static_cast<double>(urec.size())}});

        auto items = make_items(labeled, rng);
        std::vector<ExposureStack> chosen;
        std::vector<double> weights;
        for (size_t i = 0; i < unlabeled.size(); ++i) {
            // W = 0 contributes nothing to the loss or its gradient; skip the work
            if (urec[i].weight <= 0.0) continue;
            auto s = unlabeled[i];
            s.gt = RadianceImage{pseudo[i], 2};
            chosen.push_back(std::move(s));
            weights.push_back(urec[i].weight);
        }
        auto extra = make_items(chosen, rng);
        for (auto& it : extra) {
            it.weight = weights[it.sample_index];
            items.push_back(std::move(it));
        }
        train_labeled_epoch(net, opt, items, rng, step, "iterate", t, stop);
    }
    return finish(net, Stage::Iterated, step, &ckpt);
}

}  // namespace deghost
