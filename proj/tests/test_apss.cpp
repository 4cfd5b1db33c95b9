#include <doctest.h>

#include <cmath>
#include <numeric>

#include "deghost/apss.hpp"
#include "deghost/config.hpp"
#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"
#include "deghost/masking.hpp"
#include "test_util.hpp"

using namespace deghost;

namespace {

constexpr double kGamma = 2.2;

SelectionRecord record_with_loss(double loss) {
    SelectionRecord r;
    r.per_patch_losses = {loss};
    r.sample_loss = loss;
    return r;
}

}  // namespace

TEST_SUITE("apss") {

TEST_CASE("well-exposed mask") {
    auto half = well_exposed_mask(torch::full({3, 6, 5}, 0.5));
    CHECK(half.coverage == 1.0);
    auto sat = well_exposed_mask(torch::ones({3, 6, 5}));
    CHECK(sat.coverage == 0.0);

    // Vertical ramp saturating past the middle row; count the valid rows directly.
    const int64_t h = 40, w = 7;
    auto ramp = torch::linspace(0.1, 1.8, h).clamp_max(1.0).view({1, h, 1}).expand({3, h, w}).contiguous();
    int64_t rows = 0;
    for (int64_t y = 0; y < h; ++y) {
        const double v = ramp[0][y][0].item<double>();
        if (v >= 0.05 && v <= 0.95) ++rows;
    }
    auto m = well_exposed_mask(ramp);
    CHECK(m.coverage == doctest::Approx(static_cast<double>(rows) / h));
    CHECK(std::abs(m.coverage - 0.5) <= 1.0 / h + 1e-12);

    auto single = torch::full({3, 2, 2}, 0.5);
    single[1][0][0] = 0.99;  // one bad channel invalidates the pixel
    CHECK(well_exposed_mask(single).coverage == 0.75);
}

TEST_CASE("selection loss fixed points and constant offset") {
    torch::manual_seed(21);
    const double t2 = 4.0;
    auto x = 0.3 + 0.3 * torch::rand({3, 16, 16}, torch::kDouble);
    auto mask = well_exposed_mask(x);
    auto consistent = hdr::ldr_to_hdr(x, hdr::exposure_tensor(t2), kGamma);
    auto rec = selection_loss(consistent, x, t2, kGamma, mask, 8);
    CHECK(rec.per_patch_losses.size() == 4);
    for (double l : rec.per_patch_losses) CHECK(l < 1e-12);

    const double offset = 0.05;
    auto shifted = hdr::ldr_to_hdr(x + offset, hdr::exposure_tensor(t2), kGamma);
    for (auto pool : {PoolMode::Mean, PoolMode::Max, PoolMode::P90}) {
        auto r = selection_loss(shifted, x, t2, kGamma, mask, 8, pool, "s");
        CHECK(r.sample_loss == doctest::Approx(offset).epsilon(1e-9));
        CHECK(r.sample_id == "s");
    }

    auto saturated = torch::ones({3, 16, 16});
    auto rs = selection_loss(torch::rand({3, 16, 16}), saturated, t2, kGamma, well_exposed_mask(saturated), 8);
    CHECK(rs.unselectable);
    CHECK(rs.weight == 0.0);
}

TEST_CASE("selection loss skips patches without valid pixels and keeps partial border patches") {
    auto x = torch::full({3, 10, 12}, 0.5, torch::kDouble);
    x.slice(1, 0, 8).slice(2, 0, 8).fill_(1.0);  // first patch fully saturated
    auto pred = hdr::ldr_to_hdr(x.clamp_max(0.9) + 0.1, hdr::exposure_tensor(1.0), kGamma);
    auto rec = selection_loss(pred, x, 1.0, kGamma, well_exposed_mask(x), 8);
    CHECK(rec.per_patch_losses.size() == 3);
    for (double l : rec.per_patch_losses) CHECK(l == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("percentile threshold") {
    std::vector<double> pool(100);
    std::iota(pool.begin(), pool.end(), 1.0);
    CHECK(percentile(pool, 85.0) == doctest::Approx(85.15).epsilon(1e-12));
    CHECK(percentile(pool, 100.0) == 100.0);
    CHECK(percentile(pool, 0.0) == 1.0);
    CHECK(percentile({3.0, 3.0, 3.0}, 37.0) == 3.0);
    CHECK_THROWS_AS(percentile({}, 50.0), InvalidArgument);
    CHECK_THROWS_AS(percentile(pool, 101.0), InvalidArgument);

    std::vector<SelectionRecord> labeled(2);
    for (int i = 1; i <= 100; ++i) labeled[static_cast<size_t>(i % 2)].per_patch_losses.push_back(i);
    CHECK(compute_threshold(labeled, 85.0).tau == doctest::Approx(85.15));
    double prev = -1.0;
    for (double beta = 0.0; beta <= 100.0; beta += 2.5) {
        const double tau = compute_threshold(labeled, beta).tau;
        CHECK(tau >= prev);
        prev = tau;
    }
}

TEST_CASE("threshold is invariant to patch order and scales with the losses") {
    std::vector<SelectionRecord> a(1), b(1), c(1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 57; ++i) a[0].per_patch_losses.push_back(u(rng));
    b[0].per_patch_losses = a[0].per_patch_losses;
    std::shuffle(b[0].per_patch_losses.begin(), b[0].per_patch_losses.end(), rng);
    for (double v : a[0].per_patch_losses) c[0].per_patch_losses.push_back(3.0 * v);
    CHECK(compute_threshold(a, 85.0).tau == compute_threshold(b, 85.0).tau);
    CHECK(compute_threshold(c, 85.0).tau == doctest::Approx(3.0 * compute_threshold(a, 85.0).tau).epsilon(1e-12));
}

TEST_CASE("weights decay linearly above the threshold") {
    SelectionThreshold th;
    th.tau = 0.2;
    std::vector<SelectionRecord> recs{record_with_loss(0.1), record_with_loss(0.2), record_with_loss(0.4),
                                      record_with_loss(0.3), record_with_loss(0.25)};
    SelectionRecord bad;
    bad.unselectable = true;
    bad.sample_loss = 0.0;
    recs.push_back(bad);
    assign_weights(recs, th);
    CHECK(th.max_loss == 0.4);
    CHECK(recs[0].weight == 1.0);
    CHECK(recs[1].weight == 1.0);
    CHECK(recs[2].weight == 0.0);
    CHECK(recs[3].weight == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(recs[4].weight == doctest::Approx((0.4 - 0.25) / 0.2).epsilon(1e-12));
    CHECK(recs[5].weight == 0.0);

    // Every loss at or below the threshold keeps full weight.
    SelectionThreshold high;
    high.tau = 1.0;
    std::vector<SelectionRecord> low{record_with_loss(0.5), record_with_loss(0.9)};
    assign_weights(low, high);
    CHECK(low[0].weight == 1.0);
    CHECK(low[1].weight == 1.0);
}

TEST_CASE("report lists every unlabeled sample") {
    SelectionThreshold th;
    th.tau = 0.1;
    th.timestep = 3;
    std::vector<SelectionRecord> u{record_with_loss(0.05), record_with_loss(0.2)};
    u[0].sample_id = "a";
    u[1].sample_id = "b";
    assign_weights(u, th);
    auto j = apss_report(th, u, std::vector<SelectionRecord>{record_with_loss(0.1)});
    CHECK(j["timestep"] == 3);
    CHECK(j["samples"]["a"]["W"] == 1.0);
    CHECK(j["samples"]["b"]["W"] == 0.0);
    CHECK(j["labeled_patches"] == 1);
}

TEST_CASE("defaults follow the published settings") {
    RunConfig cfg;
    CHECK(cfg.get_double("apss.beta") == 85.0);
    CHECK(cfg.get_double("mask.ratio") == 0.75);
    CHECK(cfg.get_int("mask.patch_size") == 8);
    CHECK(cfg.get_double("train.lr") == 0.0005);
    CHECK(cfg.get_double("train.beta1") == 0.9);
    CHECK(cfg.get_double("train.beta2") == 0.999);
    CHECK(cfg.get_double("train.eps") == 1e-8);
    CHECK(cfg.get_int("train.crop") == 128);
    CHECK(cfg.get_int("train.stride") == 64);
    CHECK(cfg.get_double("gamma") == 2.2);
    CHECK(cfg.network().window_sizes == std::vector<int64_t>{2, 4, 8});
    CHECK(pool_mode_from_string("p90") == PoolMode::P90);
    CHECK_THROWS_AS(pool_mode_from_string("median"), ConfigError);
}

}
