#include "deghost/checkpoint.hpp"

#include <cstdio>
#include <set>

#include "deghost/errors.hpp"

namespace deghost {

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::Pretrained: return "pretrained";
        case Stage::Finetuned: return "finetuned";
        case Stage::Iterated: return "iterated";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& name) {
    if (name == "pretrained") return Stage::Pretrained;
    if (name == "finetuned") return Stage::Finetuned;
    if (name == "iterated") return Stage::Iterated;
    throw DataError("unknown checkpoint stage '" + name + "'");
}

std::string Checkpoint::id() const {
    uint64_t hash = 1469598103934665603ull;
    auto mix = [&](const void* data, size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            hash ^= bytes[i];
            hash *= 1099511628211ull;
        }
    };
    for (const auto& [name, tensor] : parameters) {
        mix(name.data(), name.size());
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        mix(t.data_ptr(), static_cast<size_t>(t.numel() * t.element_size()));
    }
    const auto stage_name = to_string(stage);
    mix(stage_name.data(), stage_name.size());
    mix(&step, sizeof(step));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

Checkpoint Checkpoint::capture(DeghostNet& net, const GammaParams& gamma, Stage stage,
                               int64_t step, uint64_t seed, nlohmann::json config) {
    Checkpoint ckpt;
    ckpt.network = net->config();
    ckpt.gamma = gamma;
    ckpt.config = std::move(config);
    ckpt.stage = stage;
    ckpt.step = step;
    ckpt.seed = seed;
    for (const auto& item : net->named_parameters())
        ckpt.parameters.emplace_back(item.key(), item.value().detach().to(torch::kCPU).clone());
    return ckpt;
}

void Checkpoint::load_into(DeghostNet& net) const {
    torch::NoGradGuard no_grad;
    auto named = net->named_parameters();
    std::set<std::string> seen;
    for (const auto& [name, tensor] : parameters) {
        auto* target = named.find(name);
        if (target == nullptr) throw DataError("checkpoint parameter '" + name + "' not in network");
        if (target->sizes() != tensor.sizes())
            throw DataError("checkpoint parameter '" + name + "' has mismatched shape");
        target->copy_(tensor);
        seen.insert(name);
    }
    if (seen.size() != named.size())
        throw DataError("checkpoint is missing " + std::to_string(named.size() - seen.size()) +
                        " network parameters");
}

DeghostNet Checkpoint::instantiate() const {
    DeghostNet net(network);
    load_into(net);
    return net;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    TensorFile file;
    file.meta = {{"kind", "deghost-checkpoint"},
                 {"format_version", kFormatVersion},
                 {"id", id()},
                 {"network", network.to_json()},
                 {"gamma", {{"gamma", gamma.gamma}, {"mu", gamma.mu}}},
                 {"config", config},
                 {"stage", to_string(stage)},
                 {"step", step},
                 {"seed", seed},
                 {"provenance", provenance}};
    file.tensors = parameters;
    file.save(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    auto file = TensorFile::load(path);
    const auto& m = file.meta;
    if (m.value("kind", "") != "deghost-checkpoint")
        throw DataError("not a checkpoint file: " + path.string());
    const int version = m.value("format_version", -1);
    if (version != kFormatVersion)
        throw DataError("unsupported checkpoint format_version " + std::to_string(version) + " in " +
                        path.string());
    Checkpoint ckpt;
    try {
        ckpt.network = NetworkConfig::from_json(m.at("network"));
        ckpt.gamma.gamma = m.at("gamma").at("gamma").get<double>();
        ckpt.gamma.mu = m.at("gamma").at("mu").get<double>();
        ckpt.config = m.at("config");
        ckpt.stage = stage_from_string(m.at("stage").get<std::string>());
        ckpt.step = m.at("step").get<int64_t>();
        ckpt.seed = m.at("seed").get<uint64_t>();
        ckpt.provenance = m.at("provenance").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
    }
    ckpt.parameters = std::move(file.tensors);
    if (ckpt.id() != m.value("id", ""))
        throw DataError("checkpoint content hash mismatch: " + path.string());
    return ckpt;
}

}  // namespace deghost
