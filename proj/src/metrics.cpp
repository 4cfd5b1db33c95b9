#include "deghost/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"
#include "deghost/image_io.hpp"
#include "deghost/log.hpp"

namespace deghost {

namespace F = torch::nn::functional;

PsnrResult psnr(const torch::Tensor& a, const torch::Tensor& b, double peak, double cap) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes() || a.numel() == 0)
        throw InvalidArgument("psnr: images must be non-empty and of equal shape");
    if (!(peak > 0.0)) throw InvalidArgument("psnr: peak must be positive");
    const double mse = (a.to(torch::kDouble) - b.to(torch::kDouble)).square().mean().item<double>();
    if (mse == 0.0) return {cap, true};
    return {std::min(cap, 10.0 * std::log10(peak * peak / mse)), false};
}

namespace {

torch::Tensor gaussian_window(const SsimOptions& o) {
    auto opts = torch::TensorOptions().dtype(torch::kDouble);
    const double c = static_cast<double>(o.window - 1) / 2.0;
    auto g = (-(torch::arange(o.window, opts) - c).square() / (2.0 * o.sigma * o.sigma)).exp();
    g = g / g.sum();
    return torch::outer(g, g).view({1, 1, o.window, o.window});
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& o, bool* global_fallback) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes() || a.dim() < 2 || a.numel() == 0)
        throw InvalidArgument("ssim: images must be non-empty and of equal shape");
    if (o.window <= 0 || !(o.sigma > 0.0)) throw InvalidArgument("ssim: bad window parameters");
    const int64_t h = a.size(-2), w = a.size(-1);
    auto x = a.to(torch::kDouble).reshape({-1, 1, h, w});
    auto y = b.to(torch::kDouble).reshape({-1, 1, h, w});
    const double c1 = std::pow(o.k1 * o.data_range, 2), c2 = std::pow(o.k2 * o.data_range, 2);

    torch::Tensor mu_x, mu_y, xx, yy, xy;
    const bool small = h < o.window || w < o.window;
    if (global_fallback) *global_fallback = small;
    if (small) {
        log_warning("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                    " is smaller than the window; using global statistics");
        auto mean = [](const torch::Tensor& t) { return t.mean({2, 3}); };
        mu_x = mean(x);
        mu_y = mean(y);
        xx = mean(x * x);
        yy = mean(y * y);
        xy = mean(x * y);
    } else {
        auto win = gaussian_window(o);
        auto filt = [&](const torch::Tensor& t) { return F::conv2d(t, win); };
        mu_x = filt(x);
        mu_y = filt(y);
        xx = filt(x * x);
        yy = filt(y * y);
        xy = filt(x * y);
    }
    auto var_x = xx - mu_x * mu_x, var_y = yy - mu_y * mu_y, cov = xy - mu_x * mu_y;
    auto map = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) /
               ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
    return map.flatten(1).mean(1).mean().item<double>();
}

SampleMetrics sample_metrics(const torch::Tensor& pred, const torch::Tensor& gt, double mu, std::string id) {
    SampleMetrics m;
    m.id = std::move(id);
    auto p = pred.to(torch::kDouble), g = gt.to(torch::kDouble);
    auto tp = hdr::mu_law(p, mu), tg = hdr::mu_law(g, mu);
    const auto l = psnr(p, g), t = psnr(tp, tg);
    m.psnr_l = l.db;
    m.exact_l = l.exact;
    m.psnr_mu = t.db;
    m.exact_mu = t.exact;
    m.ssim_l = ssim(p, g);
    m.ssim_mu = ssim(tp, tg);
    return m;
}

namespace {

template <class Get>
double mean_of(const std::vector<SampleMetrics>& v, Get get) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (const auto& m : v) s += get(m);
    return s / static_cast<double>(v.size());
}

}  // namespace

double EvalReport::mean_psnr_l() const { return mean_of(samples, [](const auto& m) { return m.psnr_l; }); }
double EvalReport::mean_psnr_mu() const { return mean_of(samples, [](const auto& m) { return m.psnr_mu; }); }
double EvalReport::mean_ssim_l() const { return mean_of(samples, [](const auto& m) { return m.ssim_l; }); }
double EvalReport::mean_ssim_mu() const { return mean_of(samples, [](const auto& m) { return m.ssim_mu; }); }

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& m : samples)
        per.push_back({{"id", m.id},
                       {"psnr_l", m.psnr_l},
                       {"psnr_mu", m.psnr_mu},
                       {"ssim_l", m.ssim_l},
                       {"ssim_mu", m.ssim_mu},
                       {"exact_l", m.exact_l},
                       {"exact_mu", m.exact_mu}});
    return {{"samples", per},
            {"mean",
             {{"psnr_l", mean_psnr_l()},
              {"psnr_mu", mean_psnr_mu()},
              {"ssim_l", mean_ssim_l()},
              {"ssim_mu", mean_ssim_mu()}}},
            {"count", samples.size()},
            {"skipped", skipped},
            {"config", config}};
}

std::string EvalReport::table() const {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %9s %9s %8s %8s\n", "sample", "PSNR-L", "PSNR-mu", "SSIM-L", "SSIM-mu");
    os << line;
    auto row = [&](const std::string& id, double a, double b, double c, double d) {
        std::snprintf(line, sizeof line, "%-24s %9.3f %9.3f %8.5f %8.5f\n", id.c_str(), a, b, c, d);
        os << line;
    };
    for (const auto& m : samples) row(m.id, m.psnr_l, m.psnr_mu, m.ssim_l, m.ssim_mu);
    row("mean", mean_psnr_l(), mean_psnr_mu(), mean_ssim_l(), mean_ssim_mu());
    for (const auto& id : skipped) os << "skipped (no ground truth): " << id << "\n";
    return os.str();
}

EvalReport evaluate(const std::vector<ExposureStack>& testset, const Predictor& predict, double mu,
                    nlohmann::json config) {
    EvalReport report;
    report.config = std::move(config);
    for (const auto& s : testset) {
        if (!s.gt) {
            log_warning("sample '" + s.id + "' has no ground truth; skipped");
            report.skipped.push_back(s.id);
            continue;
        }
        torch::NoGradGuard no_grad;
        report.samples.push_back(sample_metrics(predict(s), s.gt->pixels, mu, s.id));
    }
    return report;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
    std::filesystem::create_directories(dir);
    std::ofstream js(dir / "metrics.json", std::ios::trunc);
    if (!js) throw DataError("cannot write " + (dir / "metrics.json").string());
    js << report.to_json().dump(2) << "\n";
    std::ofstream tx(dir / "metrics.txt", std::ios::trunc);
    if (!tx) throw DataError("cannot write " + (dir / "metrics.txt").string());
    tx << report.table();
}

void write_plot(const std::filesystem::path& path, const EvalReport& report) {
    // four bars per sample; PSNR scaled against 60 dB, SSIM against 1
    const int64_t bar = 6, group_gap = 8, margin = 10, plot_h = 160;
    const int64_t n = std::max<int64_t>(1, static_cast<int64_t>(report.samples.size()));
    const int64_t width = 2 * margin + n * (4 * bar + group_gap);
    const int64_t height = plot_h + 2 * margin;
    auto img = torch::ones({3, height, width});
    const float colors[4][3] = {{0.20f, 0.40f, 0.80f}, {0.10f, 0.65f, 0.30f}, {0.85f, 0.45f, 0.10f}, {0.60f, 0.20f, 0.60f}};
    int64_t x = margin;
    for (const auto& m : report.samples) {
        const double v[4] = {m.psnr_l / 60.0, m.psnr_mu / 60.0, m.ssim_l, m.ssim_mu};
        for (int k = 0; k < 4; ++k) {
            const auto len = static_cast<int64_t>(std::lround(std::clamp(v[k], 0.0, 1.0) * plot_h));
            for (int c = 0; c < 3; ++c)
                img[c].narrow(0, margin + plot_h - len, len).narrow(1, x + k * bar, bar - 1).fill_(colors[k][c]);
        }
        x += 4 * bar + group_gap;
    }
    img.narrow(1, margin + plot_h, 1).fill_(0.0f);  // baseline
    io::write_png(path, img, 8);
}

}  // namespace deghost
