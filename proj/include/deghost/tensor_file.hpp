#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace deghost {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Binary container of named float tensors plus a JSON header.
///
/// Layout (little-endian):
///   8 bytes   magic "DGHTENS1"
///   u32       container format version
///   u64       header length L
///   L bytes   UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset", "bytes"}]}
///   payload   raw tensor bytes, offsets relative to payload start
///
/// Float32 and float64 tensors are stored verbatim, so save -> load is bit-exact.
struct TensorFile {
    static constexpr uint32_t kContainerVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    NamedTensors tensors;

    void save(const std::filesystem::path& path) const;
    static TensorFile load(const std::filesystem::path& path);

    const torch::Tensor* find(const std::string& name) const;
};

}  // namespace deghost
