// Acceptance suite: one PASS/FAIL line per criterion.
//
//   deghost_acceptance [--work DIR] [--only 1,2,...] [--known-fail 4,...]
//
// The exit status counts failing criteria that are not listed in --known-fail;
// known failures still print FAIL.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "deghost/apss.hpp"
#include "deghost/cli.hpp"
#include "deghost/hdr_transforms.hpp"
#include "deghost/log.hpp"
#include "deghost/losses.hpp"
#include "deghost/masking.hpp"
#include "deghost/metrics.hpp"
#include "deghost/synth.hpp"
#include "deghost/trainer.hpp"
#include "fd_check.hpp"
#include "metric_oracles.hpp"

using namespace deghost;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kRoundTripTol = 1e-6;
constexpr int kMaskDraws = 1000;
constexpr double kMaskRatio = 0.75;
constexpr double kGradRelTol = 1e-3;
constexpr double kOverfitTarget = 0.01;
constexpr int64_t kOverfitSteps = 2000;
constexpr int kApssSamples = 50;
constexpr int kApssMaxShift = 8;
constexpr double kSpearmanMin = 0.8;
constexpr double kMu = 5000.0;
constexpr double kTauOracle = 85.15;
constexpr double kTauTol = 1e-9;
constexpr int kPipelineSeeds = 5;
constexpr int kPipelineMinWins = 4;
constexpr int kMetricPairs = 10;
constexpr double kPsnrTol = 1e-6;
constexpr double kSsimTol = 1e-6;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

RunConfig toy() { return RunConfig::from_file(fs::path(DEGHOST_SOURCE_DIR) / "configs" / "toy.cfg"); }

fs::path fresh(const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // ties share the mean rank
        for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

Outcome transforms() {
    double worst = 0.0;
    auto x = torch::linspace(0.0, 1.0, 100001);
    for (double t : {0.25, 1.0, 4.0, 16.0}) {
        const auto tt = hdr::exposure_tensor(t);
        auto back = hdr::hdr_to_ldr(hdr::ldr_to_hdr(x, tt, 2.2), tt, 2.2);
        worst = std::max(worst, (back - x).abs().max().item<double>());
    }
    torch::manual_seed(1);
    LdrImage shortf{torch::rand({3, 32, 32}), 0.25};
    const bool exact = torch::equal(hdr::make_stage1_targets(shortf, {0.25, 1.0, 4.0}, 2.2)[0].pixels, shortf.pixels);
    bool ends = true;
    for (auto dtype : {torch::kFloat, torch::kDouble}) {
        ends = ends && hdr::mu_law(torch::zeros({1}, dtype), 5000.0).item<double>() == 0.0;
        ends = ends && hdr::mu_law(torch::ones({1}, dtype), 5000.0).item<double>() == 1.0;
    }
    return {worst <= kRoundTripTol && exact && ends,
            "round-trip max err " + fmt(worst) + ", short target exact " + (exact ? "yes" : "no") +
                ", mu-law endpoints exact " + (ends ? "yes" : "no")};
}

Outcome masking() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int64_t> dim(1, 24);
    const std::array<int64_t, 4> patches{2, 4, 8, 16};
    std::uniform_int_distribution<size_t> which(0, patches.size() - 1);
    int bad = 0, nondet = 0;
    for (int i = 0; i < kMaskDraws; ++i) {
        const auto p = patches[which(rng)];
        const auto rows = dim(rng), cols = dim(rng);
        const auto seed = rng();
        auto a = sample_mask(rows * p, cols * p, p, kMaskRatio, seed);
        const auto expected = static_cast<int64_t>(std::floor(kMaskRatio * static_cast<double>(rows * cols) + 0.5));
        if (a.masked_count() != expected) ++bad;
        if (sample_mask(rows * p, cols * p, p, kMaskRatio, seed).grid != a.grid) ++nondet;
    }
    return {bad == 0 && nondet == 0, std::to_string(kMaskDraws) + " draws, " + std::to_string(bad) +
                                         " count mismatches, " + std::to_string(nondet) + " non-deterministic"};
}

Outcome gradients() {
    torch::manual_seed(3);
    const double mu = 5000.0, gamma = 2.2, lambda = 0.01;
    auto bb = make_backbone("seeded-random", {1, 2}, 1234);
    bb->to(torch::kDouble);
    auto times = torch::tensor({{0.25, 1.0, 4.0}}, torch::kDouble);
    auto pred = 0.05 + 0.15 * torch::rand({1, 3, 4, 4}, torch::kDouble);
    auto x = 0.1 + 0.3 * torch::rand({1, 3, 4, 4}, torch::kDouble);
    auto gt = 0.05 + 0.9 * torch::rand({1, 3, 4, 4}, torch::kDouble);
    auto gu = 0.05 + 0.9 * torch::rand({1, 3, 4, 4}, torch::kDouble);
    const double e_ssl = testing::worst_gradient_error(pred, [&](const torch::Tensor& p) { return ssl_loss(p, x, times, gamma); });
    const double e_rec = testing::worst_gradient_error(pred, [&](const torch::Tensor& p) { return recon_loss(p, gt, mu); });
    const double e_per = testing::worst_gradient_error(pred, [&](const torch::Tensor& p) { return perceptual_loss(p, gt, bb, mu); });
    const double e_all = testing::worst_gradient_error(pred, [&](const torch::Tensor& p) {
        auto terms = group_terms(p, gt, bb, mu);
        auto per = sample_terms(p, gu, bb, mu);
        return iteration_loss(terms, terms, {{0.6, per[0]}}, lambda).total;
    });
    const double worst = std::max({e_ssl, e_rec, e_per, e_all});
    return {worst < kGradRelTol, "max rel err ssl " + fmt(e_ssl, 3) + ", recon " + fmt(e_rec, 3) + ", percep " +
                                     fmt(e_per, 3) + ", composite " + fmt(e_all, 3)};
}

Outcome overfit(const fs::path& work) {
    auto cfg = toy();
    cfg.apply_overrides({"train.batch_size=1", "train.pretrain_epochs=" + std::to_string(kOverfitSteps),
                         "train.max_steps=" + std::to_string(kOverfitSteps),
                         "train.target_loss=" + fmt(kOverfitTarget, 17)});
    configure_runtime(cfg);
    SynthSceneParams p;
    p.role = Role::Unlabeled;
    p.id = "one";
    const auto data = std::vector<ExposureStack>{synth_scene(p)};
    Trainer trainer(cfg, fresh(work / "overfit"));
    double best = std::numeric_limits<double>::infinity();
    int64_t best_step = -1, steps = 0;
    trainer.on_record = [&](const nlohmann::json& r) {
        if (r.contains("event") || !r.contains("loss")) return;
        ++steps;
        const double l = r["loss"].get<double>();
        if (l < best) {
            best = l;
            best_step = r["step"].get<int64_t>();
        }
    };
    const auto t0 = std::chrono::steady_clock::now();
    trainer.pretrain(data);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {best < kOverfitTarget, "min L_SSL " + fmt(best) + " at step " + std::to_string(best_step) + " of " +
                                       std::to_string(steps) + " (target < " + fmt(kOverfitTarget) + "), " +
                                       fmt(secs, 3) + " s"};
}

Outcome apss() {
    const double gamma = 2.2;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    // Pseudo-label error is measured where pseudo-labels are consumed: the
    // mu-law domain of the reconstruction loss. Linear MSE is reported too.
    auto corrupted = [&](uint64_t seed, double shift, Role role, double* mse, double* mse_linear) {
        SynthSceneParams p;
        p.seed = seed;
        p.role = role;
        p.id = "a" + std::to_string(seed);
        SynthScene scene(p);
        const double th = angle(rng);
        auto pseudo = scene.radiance(shift * std::sin(th), shift * std::cos(th)).to(torch::kFloat);
        const auto p64 = pseudo.to(torch::kDouble), g64 = scene.reference_radiance().to(torch::kDouble);
        if (mse) *mse = (hdr::mu_law(p64, kMu) - hdr::mu_law(g64, kMu)).pow(2).mean().item<double>();
        if (mse_linear) *mse_linear = (p64 - g64).pow(2).mean().item<double>();
        auto stack = scene.stack();
        auto medium = stack.ldr[1].pixels;
        return selection_loss(pseudo, medium, stack.times()[1], gamma, well_exposed_mask(medium), 8,
                              PoolMode::Mean, p.id);
    };
    std::vector<SelectionRecord> unl;
    std::vector<double> loss, mse, mse_linear;
    for (int i = 0; i < kApssSamples; ++i) {
        double e = 0.0, el = 0.0;
        unl.push_back(corrupted(1000 + static_cast<uint64_t>(i), i % (kApssMaxShift + 1), Role::Unlabeled, &e, &el));
        loss.push_back(unl.back().sample_loss);
        mse.push_back(e);
        mse_linear.push_back(el);
    }
    const double rho = spearman(loss, mse);

    std::vector<SelectionRecord> labeled;
    for (int i = 0; i < 6; ++i) labeled.push_back(corrupted(5000 + static_cast<uint64_t>(i), 1.0, Role::DynamicLabeled, nullptr, nullptr));
    auto th = compute_threshold(labeled, 85.0);
    assign_weights(unl, th);
    int below = 0, at_max = 0, between = 0, wrong = 0;
    for (const auto& r : unl) {
        if (r.sample_loss <= th.tau) {
            ++below;
            if (r.weight != 1.0) ++wrong;
        } else if (r.sample_loss == th.max_loss) {
            ++at_max;
            if (r.weight != 0.0) ++wrong;
        } else {
            ++between;
            if (std::abs(r.weight - (th.max_loss - r.sample_loss) / (th.max_loss - th.tau)) > 1e-15) ++wrong;
        }
    }
    const bool regimes = below > 0 && at_max > 0 && between > 0;
    return {rho >= kSpearmanMin && wrong == 0 && regimes,
"Spearman vs mu-law MSE " + fmt(rho) + " (min " + fmt(kSpearmanMin) + "; vs linear MSE " +
                fmt(spearman(loss, mse_linear)) + "), weights: " + std::to_string(below) +
                " at 1, " + std::to_string(at_max) + " at 0, " + std::to_string(between) + " linear, " +
                std::to_string(wrong) + " wrong"};
}

double reference_percentile(std::vector<double> v, double beta) {
    // Rank-based definition: value at fractional index beta/100 * (n-1).
    std::sort(v.begin(), v.end());
    const double idx = beta / 100.0 * static_cast<double>(v.size() - 1);
    const double lo = std::floor(idx), hi = std::ceil(idx);
    return v[static_cast<size_t>(lo)] * (1.0 - (idx - lo)) + v[static_cast<size_t>(hi)] * (idx - lo);
}

Outcome threshold() {
    std::vector<SelectionRecord> pool(3);
    for (int i = 1; i <= 100; ++i) pool[static_cast<size_t>(i % 3)].per_patch_losses.push_back(i);
    const double tau = compute_threshold(pool, 85.0).tau;
    bool ok = std::abs(tau - kTauOracle) <= kTauTol;

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0, nonmonotone = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<SelectionRecord> recs(1);
        std::vector<double> all;
        for (int k = 0; k < 37 + trial; ++k) all.push_back(u(rng));
        recs[0].per_patch_losses = all;
        double prev = -1.0;
        for (double beta = 0.0; beta <= 100.0; beta += 0.5) {
            const double t = compute_threshold(recs, beta).tau;
            if (std::abs(t - reference_percentile(all, beta)) > 1e-12) ++mismatches;
            if (t < prev) ++nonmonotone;
            prev = t;
        }
    }
    ok = ok && mismatches == 0 && nonmonotone == 0;
    return {ok, "tau(1..100, 85) = " + fmt(tau, 10) + ", " + std::to_string(mismatches) +
                    " reference mismatches, " + std::to_string(nonmonotone) + " monotonicity violations"};
}

struct PipelineResult {
    double psnr_pretrain = 0.0, psnr_iterated = 0.0;
    fs::path run;
};

double mean_psnr_mu(const fs::path& dir) {
    std::ifstream is(dir / "metrics.json");
    return nlohmann::json::parse(is)["mean"]["psnr_mu"].get<double>();
}

PipelineResult pipeline(const fs::path& root, int seed) {
    fresh(root);
    const auto cfg = (fs::path(DEGHOST_SOURCE_DIR) / "configs" / "toy.cfg").string();
    const auto data = (root / "data").string(), test = (root / "data" / "test").string();
    const auto run = root / "run";
    const std::vector<std::string> base{"--quiet", "--config", cfg, "--seed", std::to_string(seed), "--run-dir", run.string()};
    auto call = [&](std::vector<std::string> tail) {
        auto args = base;
        args.insert(args.end(), tail.begin(), tail.end());
        const int code = run_cli(args);
        if (code != kExitOk) throw std::runtime_error("pipeline step '" + tail[0] + "' exited with " + std::to_string(code));
    };
    call({"synth", "--out", data});
    call({"pretrain", "--data", data});
    call({"eval", "--data", test, "--ckpt", (run / "ckpt" / "pretrained.ckpt").string(), "--out", (root / "eval_pretrain").string()});
    call({"finetune", "--data", data});
    call({"iterate", "--data", data});
    call({"eval", "--data", test, "--ckpt", (run / "ckpt" / "iterated.ckpt").string(), "--out", (root / "eval_iterated").string()});
    return {mean_psnr_mu(root / "eval_pretrain"), mean_psnr_mu(root / "eval_iterated"), run};
}

Outcome end_to_end(const fs::path& work, std::vector<PipelineResult>& results) {
    int wins = 0;
    std::string detail;
    for (int seed = 0; seed < kPipelineSeeds; ++seed) {
        const auto t0 = std::chrono::steady_clock::now();
        results.push_back(pipeline(work / ("pipeline_seed" + std::to_string(seed)), seed));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto& r = results.back();
        const bool win = r.psnr_iterated >= r.psnr_pretrain;
        wins += win ? 1 : 0;
        detail += (seed ? "; " : "") + std::string("seed ") + std::to_string(seed) + " " + fmt(r.psnr_pretrain) +
                  " -> " + fmt(r.psnr_iterated) + " dB (" + fmt(secs, 3) + " s)";
        std::cerr << "  pipeline " << detail.substr(detail.rfind("seed ")) << "\n";
    }
    return {wins >= kPipelineMinWins, std::to_string(wins) + "/" + std::to_string(kPipelineSeeds) +
                                          " seeds with PSNR-mu(iterated) >= PSNR-mu(pretrain): " + detail};
}

Outcome metrics() {
    torch::manual_seed(8);
    double worst_psnr = 0.0, worst_ssim = 0.0;
    for (int i = 0; i < kMetricPairs; ++i) {
        auto a = torch::rand({3, 24, 28}, torch::kDouble);
        auto b = i % 2 == 0 ? (a + 0.05 * torch::randn({3, 24, 28}, torch::kDouble)).clamp(0.0, 1.0)
                            : torch::rand({3, 24, 28}, torch::kDouble);
        worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b).db - oracle::psnr(a, b)));
        worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - oracle::ssim(a, b)));
    }
    return {worst_psnr <= kPsnrTol && worst_ssim <= kSsimTol,
            std::to_string(kMetricPairs) + " pairs, max |dPSNR| " + fmt(worst_psnr, 3) + " dB, max |dSSIM| " + fmt(worst_ssim, 3)};
}

Outcome determinism(const fs::path& work, const std::vector<PipelineResult>& earlier) {
    fs::path first;
    if (!earlier.empty()) {
        first = earlier.front().run;
    } else {
        first = pipeline(work / "determinism_a", 0).run;
    }
    const auto second = pipeline(work / "determinism_b", 0).run;
    const auto a = slurp(first / "logs" / "metrics.jsonl"), b = slurp(second / "logs" / "metrics.jsonl");
    const auto lines = std::count(a.begin(), a.end(), '\n');
    return {!a.empty() && a == b, std::string("seed 0 metrics.jsonl ") + (a == b ? "identical" : "differs") + " across two runs (" +
                                      std::to_string(lines) + " records)"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = (fs::temp_directory_path() / "deghost_acceptance").string();
    std::vector<int> only, known;
    app.add_option("--work", work, "scratch directory");
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    app.add_option("--known-fail", known, "criteria expected to fail; reported but not counted")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    log_quiet() = true;
    torch::set_num_threads(1);

    const fs::path root(work);
    fs::create_directories(root);
    std::vector<PipelineResult> pipelines;
    const std::set<int> known_set(known.begin(), known.end());
    auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"transform round-trips", transforms},
        {"masking exactness", masking},
        {"gradient checks", gradients},
        {"overfit sanity", [&] { return overfit(root); }},
        {"APSS oracle", apss},
        {"threshold correctness", threshold},
        {"end-to-end toy pipeline", [&] { return end_to_end(root, pipelines); }},
        {"metric cross-validation", metrics},
        {"determinism", [&] { return determinism(root, pipelines); }},
    };

    int unexpected = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!wanted(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool is_known = known_set.count(n) > 0;
        if (!o.pass && !is_known) ++unexpected;
        std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
                  << o.detail << (!o.pass && is_known ? " (known failure)" : "") << std::endl;
    }
    return unexpected == 0 ? 0 : 1;
}
