#include "deghost/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "deghost/errors.hpp"
#include "deghost/image_io.hpp"
#include "deghost/log.hpp"

namespace fs = std::filesystem;

namespace deghost {

std::string role_code(Role role) {
    switch (role) {
        case Role::Unlabeled: return "U";
        case Role::StaticLabeled: return "S";
        case Role::DynamicLabeled: return "D";
    }
    return "U";
}

Role role_from_string(const std::string& code) {
    if (code == "U" || code == "unlabeled") return Role::Unlabeled;
    if (code == "S" || code == "static") return Role::StaticLabeled;
    if (code == "D" || code == "dynamic") return Role::DynamicLabeled;
    throw DataError("unknown sample role '" + code + "' (expected U, S or D)");
}

std::array<double, 3> ExposureStack::times() const {
    return {std::exp2(evs[0]), std::exp2(evs[1]), std::exp2(evs[2])};
}

void ExposureStack::validate() const {
    if (!(evs[0] < evs[1] && evs[1] < evs[2]))
        throw DataError("sample '" + id + "': EVs must be strictly increasing");
    for (const auto& f : ldr) {
        if (!f.pixels.defined() || f.pixels.dim() != 3 || f.pixels.size(0) != 3)
            throw DataError("sample '" + id + "': frames must be (3, H, W)");
        if (f.pixels.sizes() != ldr[0].pixels.sizes())
            throw DataError("sample '" + id + "': frame sizes differ");
    }
    if (labeled() && !gt)
        throw DataError("sample '" + id + "' has role " + role_code(role) + " but no ground truth");
    if (!labeled() && gt)
        throw DataError("unlabeled sample '" + id + "' must not carry ground truth");
    if (gt && gt->pixels.sizes() != ldr[0].pixels.sizes())
        throw DataError("sample '" + id + "': ground truth size differs from the frames");
}

namespace {

fs::path find_frame(const fs::path& dir, const std::string& stem) {
    for (const char* ext : {".png", ".pfm", ".PNG", ".PFM"}) {
        auto p = dir / (stem + ext);
        if (fs::exists(p)) return p;
    }
    throw DataError("missing frame " + (dir / (stem + ".png")).string() + " (or .pfm)");
}

std::array<double, 3> read_evs(const fs::path& file) {
    std::ifstream is(file);
    if (!is) throw DataError("missing exposure file " + file.string());
    std::vector<double> evs;
    std::string line;
    while (std::getline(is, line)) {
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        double v;
        if (!(ls >> v)) throw DataError("unparsable EV line '" + line + "' in " + file.string());
        evs.push_back(v);
    }
    if (evs.size() != 3)
        throw DataError(file.string() + ": expected 3 EV lines, found " + std::to_string(evs.size()));
    if (!(evs[0] < evs[1] && evs[1] < evs[2]))
        throw DataError(file.string() + ": EVs must be strictly increasing");
    return {evs[0], evs[1], evs[2]};
}

}  // namespace

ExposureStack load_bracket(const fs::path& dir, Role role, std::string id) {
    if (!fs::is_directory(dir)) throw DataError("sample directory not found: " + dir.string());
    ExposureStack s;
    s.id = id.empty() ? dir.filename().string() : std::move(id);
    s.role = role;
    s.evs = read_evs(dir / "exposures.txt");
    const auto times = s.times();
    for (int i = 0; i < 3; ++i) {
        const auto path = find_frame(dir, "ldr_" + std::to_string(i + 1));
        auto px = io::read_image(path);
        if (i > 0 && px.sizes() != s.ldr[0].pixels.sizes())
            throw DataError("frame size mismatch in " + path.string());
        if (px.min().item<double>() < 0.0 || px.max().item<double>() > 1.0)
            throw DataError("LDR values outside [0, 1] in " + path.string());
        s.ldr[static_cast<size_t>(i)] = {px, times[static_cast<size_t>(i)]};
    }
    if (s.labeled()) {
        fs::path gt_path;
        for (const char* name : {"gt.hdr", "gt.pfm"})
            if (fs::exists(dir / name)) gt_path = dir / name;
        if (gt_path.empty())
            throw DataError("labeled sample needs " + (dir / "gt.hdr").string() + " or gt.pfm");
        auto gt = io::read_image(gt_path);
        if (gt.sizes() != s.ldr[0].pixels.sizes())
            throw DataError("ground truth size differs from the frames: " + gt_path.string());
        if (gt.min().item<double>() < 0.0) throw DataError("negative radiance in " + gt_path.string());
        s.gt = RadianceImage{gt, 2};
    }
    return s;
}

void save_bracket(const fs::path& dir, const ExposureStack& stack, int bit_depth, bool gt_as_hdr) {
    stack.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    for (int i = 0; i < 3; ++i) {
        const auto stem = "ldr_" + std::to_string(i + 1);
        const auto& px = stack.ldr[static_cast<size_t>(i)].pixels;
        if (bit_depth == 32)
            io::write_pfm(dir / (stem + ".pfm"), px);
        else
            io::write_png(dir / (stem + ".png"), px, bit_depth);
    }
    std::ofstream os(dir / "exposures.txt", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "exposures.txt").string());
    os.precision(17);
    for (double ev : stack.evs) os << ev << "\n";
    if (stack.gt) {
        if (gt_as_hdr)
            io::write_hdr(dir / "gt.hdr", stack.gt->pixels);
        else
            io::write_pfm(dir / "gt.pfm", stack.gt->pixels);
    }
}

nlohmann::json Manifest::to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : samples) list.push_back({{"id", e.id}, {"path", e.path}, {"role", role_code(e.role)}});
    return {{"samples", list}, {"seed", seed}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    try {
        m.seed = j.value("seed", uint64_t{0});
        for (const auto& e : j.at("samples")) {
            ManifestEntry entry;
            entry.id = e.at("id").get<std::string>();
            entry.path = e.value("path", entry.id);
            entry.role = role_from_string(e.at("role").get<std::string>());
            m.samples.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed manifest: ") + ex.what());
    }
    return m;
}

void Manifest::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << to_json().dump(2) << "\n";
}

Manifest Manifest::load(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("cannot parse manifest " + path.string() + ": " + ex.what());
    }
    return from_json(j);
}

std::vector<ExposureStack> load_dataset(const fs::path& source) {
    const auto manifest_path = fs::is_directory(source) ? source / "manifest.json" : source;
    auto manifest = Manifest::load(manifest_path);
    const auto base = manifest_path.parent_path();
    std::vector<ExposureStack> out;
    out.reserve(manifest.samples.size());
    for (const auto& e : manifest.samples) {
        auto s = load_bracket(base / e.path, e.role, e.id);
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ExposureStack> filter_role(const std::vector<ExposureStack>& stacks, Role role) {
    std::vector<ExposureStack> out;
    for (const auto& s : stacks)
        if (s.role == role) out.push_back(s);
    return out;
}

int64_t crop_count(int64_t extent, int64_t size, int64_t stride) {
    if (size <= 0 || stride <= 0) throw InvalidArgument("crop size and stride must be positive");
    if (extent < size) return 1;
    return (extent - size) / stride + 1;
}

ExposureStack crop_stack(const ExposureStack& stack, int64_t y, int64_t x, int64_t size) {
    if (y < 0 || x < 0 || y + size > stack.height() || x + size > stack.width())
        throw InvalidArgument("crop window outside the image");
    auto cut = [&](const torch::Tensor& t) { return t.narrow(1, y, size).narrow(2, x, size).contiguous(); };
    ExposureStack c = stack;
    c.id = stack.id + "@" + std::to_string(y) + "," + std::to_string(x);
    for (auto& f : c.ldr) f.pixels = cut(f.pixels);
    if (c.gt) c.gt->pixels = cut(c.gt->pixels);
    return c;
}

namespace {

torch::Tensor center_pad(const torch::Tensor& t, int64_t size) {
    namespace F = torch::nn::functional;
    const int64_t h = t.size(1), w = t.size(2);
    int64_t top = 0, bottom = 0, left = 0, right = 0;
    auto img = t;
    if (h > size) img = img.narrow(1, (h - size) / 2, size);
    if (w > size) img = img.narrow(2, (w - size) / 2, size);
    if (h < size) {
        top = (size - h) / 2;
        bottom = size - h - top;
    }
    if (w < size) {
        left = (size - w) / 2;
        right = size - w - left;
    }
    return F::pad(img.unsqueeze(0), F::PadFuncOptions({left, right, top, bottom}).mode(torch::kReplicate))
        .squeeze(0)
        .contiguous();
}

}  // namespace

std::vector<ExposureStack> crop_patches(const ExposureStack& stack, int64_t size, int64_t stride,
                                        std::mt19937_64* rng, int64_t jitter) {
    if (size <= 0 || stride <= 0) throw InvalidArgument("crop size and stride must be positive");
    const int64_t h = stack.height(), w = stack.width();
    if (size > h || size > w) {
        log_warning("sample '" + stack.id + "' (" + std::to_string(h) + "x" + std::to_string(w) +
                    ") is smaller than the crop size " + std::to_string(size) +
                    "; using one centered padded crop");
        ExposureStack c = stack;
        for (auto& f : c.ldr) f.pixels = center_pad(f.pixels, size);
        if (c.gt) c.gt->pixels = center_pad(c.gt->pixels, size);
        return {c};
    }
    const int64_t ny = crop_count(h, size, stride), nx = crop_count(w, size, stride);
    std::vector<ExposureStack> out;
    out.reserve(static_cast<size_t>(ny * nx));
    for (int64_t iy = 0; iy < ny; ++iy)
        for (int64_t ix = 0; ix < nx; ++ix) {
            int64_t y = iy * stride, x = ix * stride;
            if (jitter > 0 && rng != nullptr) {
                std::uniform_int_distribution<int64_t> d(-jitter, jitter);
                y = std::clamp<int64_t>(y + d(*rng), 0, h - size);
                x = std::clamp<int64_t>(x + d(*rng), 0, w - size);
            }
            out.push_back(crop_stack(stack, y, x, size));
        }
    return out;
}

}  // namespace deghost
