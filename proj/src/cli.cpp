#include "deghost/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "deghost/datasets.hpp"
#include "deghost/errors.hpp"
#include "deghost/image_io.hpp"
#include "deghost/log.hpp"
#include "deghost/metrics.hpp"
#include "deghost/synth.hpp"
#include "deghost/trainer.hpp"

namespace fs = std::filesystem;

namespace deghost {

fs::path resolve_run_dir(const std::string& run_dir) {
    fs::path p(run_dir);
    if (p.is_relative())
        if (const char* root = std::getenv(kRunRootEnv); root != nullptr && *root != '\0') return fs::path(root) / p;
    return p;
}

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::string numbered(const std::string& prefix, int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03lld", prefix.c_str(), static_cast<long long>(i));
    return buf;
}

}  // namespace

fs::path write_synth_dataset(const RunConfig& cfg) {
    const fs::path out = cfg.get_string("synth.out");
    const auto evs = cfg.get_real_list("synth.evs");
    if (evs.size() != 3) throw ConfigError("synth.evs needs three values");
    const int bits = static_cast<int>(cfg.get_int("synth.bit_depth"));
    if (bits != 8 && bits != 16 && bits != 32) throw ConfigError("synth.bit_depth must be 8, 16 or 32");
    const int64_t n = cfg.get_int("synth.num_unlabeled"), m = cfg.get_int("synth.num_static"),
                  k = cfg.get_int("synth.num_dynamic"), test = cfg.get_int("synth.num_test");
    if (n < 0 || m < 0 || k < 0 || test < 0) throw ConfigError("synth sample counts must be non-negative");

    SynthSceneParams base;
    base.height = cfg.get_int("synth.height");
    base.width = cfg.get_int("synth.width");
    base.motion_px = cfg.get_int("synth.motion_px");
    base.saturation_frac = cfg.get_double("synth.saturation_frac");
    base.noise_sigma = cfg.get_double("synth.noise_sigma");
    base.evs = {evs[0], evs[1], evs[2]};
    base.gamma = cfg.get_double("gamma");
    try {
        base.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("synth: ") + e.what());
    }

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());

    const uint64_t seed = cfg.seed();
    auto emit = [&](Manifest& manifest, const fs::path& dir, const std::string& prefix, Role role,
                    int64_t count, uint64_t stream) {
        for (int64_t i = 0; i < count; ++i) {
            auto p = base;
            p.role = role;
            p.id = numbered(prefix, i);
            if (role == Role::StaticLabeled) p.motion_px = 0;
            p.seed = splitmix64(seed ^ splitmix64(stream * 1000003ull + static_cast<uint64_t>(i)));
            save_bracket(dir / p.id, synth_scene(p), bits);
            manifest.samples.push_back({p.id, p.id, role});
        }
    };
    Manifest train;
    train.seed = seed;
    emit(train, out, "u", Role::Unlabeled, n, 1);
    emit(train, out, "s", Role::StaticLabeled, m, 2);
    emit(train, out, "d", Role::DynamicLabeled, k, 3);
    train.save(out / "manifest.json");
    if (test > 0) {
        Manifest held;
        held.seed = seed;
        emit(held, out / "test", "t", Role::DynamicLabeled, test, 4);
        held.save(out / "test" / "manifest.json");
    }
    std::ofstream(out / "synth.cfg", std::ios::trunc) << cfg.to_text();
    return out;
}

namespace {

struct Common {
    std::vector<std::string> configs;
    std::vector<std::string> sets;
    int64_t seed = -1;
    std::string run_dir;
};

RunConfig build_config(const Common& c) {
    RunConfig cfg;
    for (const auto& f : c.configs) cfg.merge_file(f);
    cfg.apply_overrides(c.sets);
    if (c.seed >= 0) cfg.set("seed", std::to_string(c.seed));
    if (!c.run_dir.empty()) cfg.set("run_dir", c.run_dir);
    return cfg;
}

std::vector<ExposureStack> load_required(const RunConfig& cfg, const std::string& key) {
    const auto src = cfg.get_string(key);
    if (src.empty()) throw ConfigError(key + " is not set (use --data or --set " + key + "=<dir>)");
    return load_dataset(src);
}

fs::path default_ckpt(const fs::path& run_dir, const std::string& given, Stage stage) {
    return given.empty() ? RunLayout(run_dir).checkpoint_path(stage) : fs::path(given);
}

void report_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::cout << to_string(ckpt.stage) << " checkpoint " << ckpt.id() << " at step " << ckpt.step
              << " -> " << path.string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Few-shot HDR deghosting: masked-autoencoder pretraining, finetuning and "
                 "semi-supervised iteration"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.configs, "key = value config file(s), applied in order");
    app.add_option("--set", common.sets, "override one key (key=value); repeatable");
    app.add_option("--seed", common.seed, "global seed");
    app.add_option("--run-dir", common.run_dir, "run directory (relative paths resolve under $DEGHOST_RUN_ROOT)");
    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress progress and warnings on stderr");

    std::string data, ckpt_path, out, input, output, resume;
    int64_t timesteps = -1, tile = -1;
    bool plot = false, oracle = false;

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    synth->add_option("--out", out, "output directory (synth.out)");

    auto* pretrain = app.add_subcommand("pretrain", "stage-1 masked self-supervised pretraining");
    pretrain->add_option("--data", data, "dataset (data.root); unlabeled samples are used");
    pretrain->add_option("--resume", resume, "continue a pretrained checkpoint");

    auto* finetune = app.add_subcommand("finetune", "finetune on the labeled samples");
    finetune->add_option("--data", data, "dataset (data.root); labeled samples are used");
    finetune->add_option("--ckpt", ckpt_path, "pretrained checkpoint (default: <run>/ckpt/pretrained.ckpt)");

    auto* iterate = app.add_subcommand("iterate", "semi-supervised iteration with pseudo-label selection");
    iterate->add_option("--data", data, "dataset (data.root)");
    iterate->add_option("--ckpt", ckpt_path, "finetuned or iterated checkpoint (default: <run>/ckpt/finetuned.ckpt)");
    iterate->add_option("--timesteps", timesteps, "T (train.timesteps)");

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM in the linear and mu-law domains");
    eval->add_option("--data", data, "test dataset (data.test, falling back to data.root)");
    eval->add_option("--ckpt", ckpt_path, "checkpoint (default: <run>/ckpt/iterated.ckpt)");
    eval->add_option("--out", out, "report directory (default: <run>/eval)");
    eval->add_flag("--plot", plot, "also write a per-sample bar chart");
    eval->add_flag("--oracle", oracle, "score the ground truth against itself (no checkpoint)");

    auto* pred = app.add_subcommand("predict", "fuse one bracket into an HDR image");
    pred->add_option("--ckpt", ckpt_path, "checkpoint (default: <run>/ckpt/iterated.ckpt)");
    pred->add_option("--input", input, "sample directory (ldr_1..3, exposures.txt)")->required();
    pred->add_option("--output", output, "output .hdr or .pfm file")->required();
    pred->add_option("--tile", tile, "tile side (predict.tile)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    log_quiet() = quiet;

    try {
        auto cfg = build_config(common);
        if (!data.empty()) cfg.set(eval->parsed() ? "data.test" : "data.root", data);
        if (!out.empty() && synth->parsed()) cfg.set("synth.out", out);
        if (timesteps >= 0) cfg.set("train.timesteps", std::to_string(timesteps));
        if (tile >= 0) cfg.set("predict.tile", std::to_string(tile));
        if (plot) cfg.set("eval.plot", "true");
        configure_runtime(cfg);
        const auto run_dir = resolve_run_dir(cfg.get_string("run_dir"));

        if (synth->parsed()) {
            const auto dir = write_synth_dataset(cfg);
            std::cout << "synthetic dataset -> " << dir.string() << "\n";
        } else if (pretrain->parsed()) {
            auto unlabeled = filter_role(load_required(cfg, "data.root"), Role::Unlabeled);
            Trainer trainer(cfg, run_dir);
            std::optional<Checkpoint> parent;
            if (!resume.empty()) parent = Checkpoint::load(resume);
            auto ckpt = trainer.pretrain(unlabeled, parent ? &*parent : nullptr);
            report_checkpoint(ckpt, trainer.layout().checkpoint_path(ckpt.stage));
        } else if (finetune->parsed()) {
            auto all = load_required(cfg, "data.root");
            std::vector<ExposureStack> labeled;
            for (auto& s : all)
                if (s.labeled()) labeled.push_back(std::move(s));
            auto parent = Checkpoint::load(default_ckpt(run_dir, ckpt_path, Stage::Pretrained));
            Trainer trainer(cfg, run_dir);
            auto ckpt = trainer.finetune(parent, labeled);
            report_checkpoint(ckpt, trainer.layout().checkpoint_path(ckpt.stage));
        } else if (iterate->parsed()) {
            auto all = load_required(cfg, "data.root");
            std::vector<ExposureStack> labeled, unlabeled;
            for (auto& s : all) (s.labeled() ? labeled : unlabeled).push_back(std::move(s));
            auto parent = Checkpoint::load(default_ckpt(run_dir, ckpt_path, Stage::Finetuned));
            Trainer trainer(cfg, run_dir);
            auto ckpt = trainer.iterate(parent, labeled, unlabeled, cfg.get_int("train.timesteps"));
            report_checkpoint(ckpt, trainer.layout().checkpoint_path(ckpt.stage));
        } else if (eval->parsed()) {
            const auto key = cfg.get_string("data.test").empty() ? "data.root" : "data.test";
            auto testset = load_required(cfg, key);
            const double mu = cfg.get_double("mu");
            const PredictOptions popts{cfg.get_int("predict.tile"), cfg.get_int("predict.ramp")};
            EvalReport report;
            if (oracle) {
                report = evaluate(testset, [](const ExposureStack& s) { return s.gt->pixels; }, mu, cfg.to_json());
            } else {
                const auto path = default_ckpt(run_dir, ckpt_path, Stage::Iterated);
                auto ckpt = Checkpoint::load(path);
                auto net = ckpt.instantiate();
                report = evaluate(
                    testset,
                    [&](const ExposureStack& s) { return predict(net, s, ckpt.gamma.gamma, popts); }, mu,
                    {{"config", cfg.to_json()}, {"checkpoint", path.string()}, {"checkpoint_id", ckpt.id()}});
            }
            const fs::path dir = out.empty() ? run_dir / "eval" : fs::path(out);
            write_report(dir, report);
            if (cfg.get_bool("eval.plot")) write_plot(dir / "metrics.png", report);
            std::cout << report.table();
        } else if (pred->parsed()) {
            auto stack = load_bracket(input, Role::Unlabeled);
            auto ckpt = Checkpoint::load(default_ckpt(run_dir, ckpt_path, Stage::Iterated));
            const PredictOptions popts{cfg.get_int("predict.tile"), cfg.get_int("predict.ramp")};
            auto hdr = predict(ckpt, stack, popts);
            const fs::path dst(output);
            if (dst.extension() == ".pfm")
                io::write_pfm(dst, hdr);
            else if (dst.extension() == ".hdr")
                io::write_hdr(dst, hdr);
            else
                throw ConfigError("--output must end in .hdr or .pfm");
            std::cout << "prediction -> " << dst.string() << "\n";
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const StageError& e) {
        std::cerr << "stage error: " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"deghost"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace deghost
