#include "deghost/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "deghost/errors.hpp"

namespace deghost {

const std::vector<ConfigKey>& config_keys() {
    using K = KeyType;
    static const std::vector<ConfigKey> keys = {
        {"seed", K::Int, "0", "global seed (torch RNG, masks, shuffles, synthetic data)"},
        {"deterministic", K::Bool, "true", "force deterministic kernels"},
        {"threads", K::Int, "1", "intra-op CPU threads"},
        {"run_dir", K::String, "runs/default", "run directory; relative paths resolve under $DEGHOST_RUN_ROOT"},
        {"gamma", K::Real, "2.2", "LDR gamma"},
        {"mu", K::Real, "5000", "mu-law compression"},

        {"net.embed_dim", K::Int, "60", "feature channels"},
        {"net.num_blocks", K::Int, "3", "MSRSTM blocks"},
        {"net.stl_depth", K::Int, "2", "multi-scale Swin layers per block"},
        {"net.num_heads", K::Int, "6", "attention heads"},
        {"net.window_sizes", K::IntList, "2,4,8", "Swin window sizes"},
        {"net.attn_patch_size", K::Int, "8", "hallucination attention patch"},
        {"net.mlp_ratio", K::Real, "2.0", "Swin MLP hidden ratio"},
        {"net.global_skip", K::Bool, "true", "add the reference features before the head"},
        {"net.shared_extractor", K::Bool, "true", "one feature extractor for all exposures"},
        {"net.halluc_single_head", K::Bool, "false", "single-head hallucination attention"},

        {"mask.ratio", K::Real, "0.75", "fraction of masked patches"},
        {"mask.patch_size", K::Int, "8", "mask patch side"},
        {"mask.shared_mask", K::Bool, "false", "one mask for all three inputs"},
        {"mask.fill", K::Real, "0.0", "value written into masked patches"},
        {"mask.resample", K::Bool, "true", "draw fresh masks every step (false: fixed per sample)"},
        {"ssl.loss_on", K::String, "all", "all | masked_only"},

        {"loss.lambda", K::Real, "0.01", "perceptual weight"},
        {"loss.backbone", K::String, "seeded-random", "seeded-random | import:<path>"},
        {"loss.backbone_seed", K::Int, "1234", "seed of the seeded-random backbone"},
        {"loss.taps", K::IntList, "2,4", "backbone pooling stages used by the perceptual loss"},

        {"apss.beta", K::Real, "85", "percentile of labeled patch losses used as threshold"},
        {"apss.eps_low", K::Real, "0.05", "under-exposure bound of the medium frame"},
        {"apss.eps_high", K::Real, "0.95", "over-exposure bound of the medium frame"},
        {"apss.pool", K::String, "mean", "mean | max | p90 pooling of patch losses per sample"},
        {"apss.patch_size", K::Int, "0", "selection patch side (0: mask.patch_size)"},

        {"train.lr", K::Real, "5e-4", "Adam learning rate"},
        {"train.beta1", K::Real, "0.9", "Adam beta1"},
        {"train.beta2", K::Real, "0.999", "Adam beta2"},
        {"train.eps", K::Real, "1e-8", "Adam epsilon"},
        {"train.batch_size", K::Int, "4", "crops per step"},
        {"train.crop", K::Int, "128", "training crop side"},
        {"train.stride", K::Int, "64", "training crop stride"},
        {"train.jitter", K::Int, "0", "random crop-origin jitter per epoch"},
        {"train.clip_grad_norm", K::Real, "1.0", "global gradient-norm clip (0 disables)"},
        {"train.pretrain_epochs", K::Int, "30", "stage-1 epochs"},
        {"train.finetune_epochs", K::Int, "30", "finetune epochs"},
        {"train.timesteps", K::Int, "10", "iteration timesteps T"},
        {"train.max_steps", K::Int, "0", "stop a phase after this many steps (0: no limit)"},
        {"train.target_loss", K::Real, "0", "stop pretraining once the step loss is below this (0: off)"},

        {"data.root", K::String, "", "training dataset (manifest.json or its directory)"},
        {"data.test", K::String, "", "held-out dataset for eval"},
        {"data.max_dynamic", K::Int, "5", "largest allowed dynamic labeled set (0: no check)"},
        {"data.num_static", K::Int, "5", "required static labeled set size (0: no check)"},

        {"synth.out", K::String, "data/synth", "output directory of the synth command"},
        {"synth.num_unlabeled", K::Int, "20", "N"},
        {"synth.num_static", K::Int, "5", "M"},
        {"synth.num_dynamic", K::Int, "5", "K"},
        {"synth.num_test", K::Int, "0", "held-out dynamic samples with gt (written under test/)"},
        {"synth.height", K::Int, "64", "image height"},
        {"synth.width", K::Int, "64", "image width"},
        {"synth.motion_px", K::Int, "4", "foreground motion between frames"},
        {"synth.saturation_frac", K::Real, "0.15", "target clipped fraction of the long frame"},
        {"synth.noise_sigma", K::Real, "0.002", "LDR noise"},
        {"synth.evs", K::RealList, "-2,0,2", "exposure values"},
        {"synth.bit_depth", K::Int, "16", "frame PNG depth (8, 16, or 32 for PFM)"},

        {"predict.tile", K::Int, "0", "tile side for inference (0: whole image)"},
        {"predict.ramp", K::Int, "0", "blend ramp width (0: spatial multiple)"},
        {"eval.plot", K::Bool, "false", "write a per-sample bar chart"},
    };
    return keys;
}

namespace {

const ConfigKey& find_key(const std::string& name) {
    const auto& keys = config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == name; });
    if (it == keys.end()) throw ConfigError("unknown config key '" + name + "'");
    return *it;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parse_int(const std::string& s, int64_t& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

bool parse_real(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

bool parse_bool(const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
    return false;
}

void check_value(const ConfigKey& key, const std::string& value) {
    bool ok = true;
    int64_t i;
    double d;
    bool b;
    switch (key.type) {
        case KeyType::Int: ok = parse_int(value, i); break;
        case KeyType::Real: ok = parse_real(value, d); break;
        case KeyType::Bool: ok = parse_bool(value, b); break;
        case KeyType::String: break;
        case KeyType::IntList:
            for (const auto& item : split_list(value)) ok = ok && parse_int(item, i);
            break;
        case KeyType::RealList:
            for (const auto& item : split_list(value)) ok = ok && parse_real(item, d);
            break;
    }
    if (!ok) throw ConfigError("bad value '" + value + "' for config key '" + key.name + "'");
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    RunConfig cfg;
    cfg.merge_file(path);
    return cfg;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& k = find_key(key);
    const auto v = trim(value);
    check_value(k, v);
    values_[key] = v;
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
        set(trim(a.substr(0, eq)), a.substr(eq + 1));
    }
}

const std::string& RunConfig::raw(const std::string& key) const {
    find_key(key);
    return values_.at(key);
}

std::string RunConfig::get_string(const std::string& key) const { return raw(key); }

int64_t RunConfig::get_int(const std::string& key) const {
    int64_t v = 0;
    if (!parse_int(raw(key), v)) throw ConfigError("config key '" + key + "' is not an integer");
    return v;
}

double RunConfig::get_double(const std::string& key) const {
    double v = 0;
    if (!parse_real(raw(key), v)) throw ConfigError("config key '" + key + "' is not a number");
    return v;
}

bool RunConfig::get_bool(const std::string& key) const {
    bool v = false;
    if (!parse_bool(raw(key), v)) throw ConfigError("config key '" + key + "' is not a boolean");
    return v;
}

std::vector<int64_t> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int64_t> out;
    for (const auto& item : split_list(raw(key))) {
        int64_t v;
        if (!parse_int(item, v)) throw ConfigError("config key '" + key + "' is not an integer list");
        out.push_back(v);
    }
    return out;
}

std::vector<double> RunConfig::get_real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(raw(key))) {
        double v;
        if (!parse_real(item, v)) throw ConfigError("config key '" + key + "' is not a number list");
        out.push_back(v);
    }
    return out;
}

NetworkConfig RunConfig::network() const {
    NetworkConfig n;
    n.embed_dim = get_int("net.embed_dim");
    n.num_blocks = get_int("net.num_blocks");
    n.stl_depth = get_int("net.stl_depth");
    n.num_heads = get_int("net.num_heads");
    n.window_sizes = get_int_list("net.window_sizes");
    n.attn_patch_size = get_int("net.attn_patch_size");
    n.mlp_ratio = get_double("net.mlp_ratio");
    n.global_skip = get_bool("net.global_skip");
    n.shared_extractor = get_bool("net.shared_extractor");
    n.halluc_single_head = get_bool("net.halluc_single_head");
    try {
        n.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
    return n;
}

MaskOptions RunConfig::mask() const {
    MaskOptions m;
    m.ratio = get_double("mask.ratio");
    m.patch_size = get_int("mask.patch_size");
    m.shared_mask = get_bool("mask.shared_mask");
    m.fill = get_double("mask.fill");
    if (!(m.ratio >= 0.0 && m.ratio < 1.0)) throw ConfigError("mask.ratio must lie in [0, 1)");
    if (m.patch_size <= 0) throw ConfigError("mask.patch_size must be positive");
    return m;
}

GammaParams RunConfig::gamma() const {
    GammaParams g{get_double("gamma"), get_double("mu")};
    if (!(g.gamma > 0.0) || !(g.mu > 0.0)) throw ConfigError("gamma and mu must be positive");
    return g;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys()) {
        switch (k.type) {
            case KeyType::Int: j[k.name] = get_int(k.name); break;
            case KeyType::Real: j[k.name] = get_double(k.name); break;
            case KeyType::Bool: j[k.name] = get_bool(k.name); break;
            case KeyType::String: j[k.name] = get_string(k.name); break;
            case KeyType::IntList: j[k.name] = get_int_list(k.name); break;
            case KeyType::RealList: j[k.name] = get_real_list(k.name); break;
        }
    }
    return j;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& k : config_keys()) os << k.name << " = " << values_.at(k.name) << "\n";
    return os.str();
}

}  // namespace deghost
