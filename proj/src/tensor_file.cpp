#include "deghost/tensor_file.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "deghost/errors.hpp"

namespace deghost {
namespace {

constexpr std::array<char, 8> kMagic{'D', 'G', 'H', 'T', 'E', 'N', 'S', '1'};

template <typename T>
void write_pod(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T)))
        throw DataError("truncated tensor file: " + path.string());
    return value;
}

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat: return "f32";
        case torch::kDouble: return "f64";
        default: throw InvalidArgument("tensor file: only float32/float64 tensors are supported");
    }
}

torch::ScalarType dtype_from(const std::string& name, const std::filesystem::path& path) {
    if (name == "f32") return torch::kFloat;
    if (name == "f64") return torch::kDouble;
    throw DataError("tensor file " + path.string() + ": unknown dtype '" + name + "'");
}

}  // namespace

void TensorFile::save(const std::filesystem::path& path) const {
    nlohmann::json index = nlohmann::json::array();
    std::vector<torch::Tensor> payload;
    uint64_t offset = 0;
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        const uint64_t bytes = t.numel() * t.element_size();
        index.push_back({{"name", name},
                         {"dtype", dtype_name(t.scalar_type())},
                         {"shape", t.sizes().vec()},
                         {"offset", offset},
                         {"bytes", bytes}});
        offset += bytes;
        payload.push_back(std::move(t));
    }
    const std::string header = nlohmann::json{{"meta", meta}, {"tensors", index}}.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(kMagic.data(), kMagic.size());
    write_pod<uint32_t>(os, kContainerVersion);
    write_pod<uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : payload)
        os.write(static_cast<const char*>(t.data_ptr()),
                 static_cast<std::streamsize>(t.numel() * t.element_size()));
    if (!os) throw DataError("failed writing " + path.string());
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic)
        throw DataError("not a tensor file (bad magic): " + path.string());
    const auto version = read_pod<uint32_t>(is, path);
    if (version != kContainerVersion)
        throw DataError("unsupported tensor file version " + std::to_string(version) + ": " +
                        path.string());
    const auto header_len = read_pod<uint64_t>(is, path);
    std::string header(header_len, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(header_len)))
        throw DataError("truncated tensor file header: " + path.string());

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt tensor file header in " + path.string() + ": " + e.what());
    }
    const auto payload_start = is.tellg();

    TensorFile file;
    file.meta = j.value("meta", nlohmann::json::object());
    for (const auto& entry : j.at("tensors")) {
        const auto dtype = dtype_from(entry.at("dtype").get<std::string>(), path);
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        const auto offset = entry.at("offset").get<uint64_t>();
        const auto bytes = entry.at("bytes").get<uint64_t>();
        auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        if (static_cast<uint64_t>(t.numel() * t.element_size()) != bytes)
            throw DataError("tensor file " + path.string() + ": size mismatch for " +
                            entry.at("name").get<std::string>());
        is.seekg(payload_start + static_cast<std::streamoff>(offset));
        if (!is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes)))
            throw DataError("truncated payload in " + path.string());
        file.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return file;
}

const torch::Tensor* TensorFile::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

}  // namespace deghost
