#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "deghost/image.hpp"
#include "deghost/network.hpp"
#include "deghost/tensor_file.hpp"

namespace deghost {

enum class Stage { Pretrained, Finetuned, Iterated };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

/// Network parameters plus everything needed to rebuild and trace them.
struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    NetworkConfig network;
    GammaParams gamma;
    nlohmann::json config = nlohmann::json::object();  // run-config snapshot
    Stage stage = Stage::Pretrained;
    int64_t step = 0;
    uint64_t seed = 0;
    std::vector<std::string> provenance;  // ids of ancestor checkpoints, oldest first
    NamedTensors parameters;

    /// Content hash over parameters, stage and step (16 hex digits).
    std::string id() const;

    static Checkpoint capture(DeghostNet& net, const GammaParams& gamma, Stage stage, int64_t step,
                              uint64_t seed, nlohmann::json config);
    /// Copies parameters into `net`; throws DataError on any name/shape mismatch.
    void load_into(DeghostNet& net) const;
    DeghostNet instantiate() const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace deghost
