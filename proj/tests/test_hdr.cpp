#include <doctest.h>

#include <cmath>

#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"
#include "test_util.hpp"

using namespace deghost;
namespace th = deghost::hdr;

namespace {

double scalar(const torch::Tensor& t) { return t.to(torch::kDouble).item<double>(); }

torch::Tensor px(double v) { return torch::full({1, 1, 1}, v, torch::kDouble); }

}  // namespace

TEST_SUITE("hdr") {

TEST_CASE("exposure_adjust scalar cases") {
    const double g = 2.2;
    auto t1 = th::exposure_tensor(1.0), t4 = th::exposure_tensor(4.0);
    CHECK(scalar(th::exposure_adjust(px(0.5), t1, t1, g)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(scalar(th::exposure_adjust(px(0.0), t1, t4, g)) == 0.0);
    const double expected = std::min(1.0, 0.5 * std::pow(4.0, 1.0 / g));
    CHECK(scalar(th::exposure_adjust(px(0.5), t1, t4, g)) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(scalar(th::exposure_adjust(px(0.9), t1, th::exposure_tensor(16.0), g)) == 1.0);
}

TEST_CASE("ldr_to_hdr and hdr_to_ldr scalar cases") {
    const double g = 2.2;
    CHECK(scalar(th::ldr_to_hdr(px(1.0), th::exposure_tensor(1.0), g)) == doctest::Approx(1.0));
    CHECK(scalar(th::ldr_to_hdr(px(0.0), th::exposure_tensor(4.0), g)) == 0.0);
    CHECK(scalar(th::ldr_to_hdr(px(0.5), th::exposure_tensor(4.0), g)) ==
          doctest::Approx(std::pow(0.5, g) / 4.0).epsilon(1e-12));
    CHECK(scalar(th::hdr_to_ldr(px(0.0), th::exposure_tensor(4.0), g)) == 0.0);
    CHECK(scalar(th::hdr_to_ldr(px(0.25), th::exposure_tensor(4.0), g)) == doctest::Approx(1.0));
    CHECK(scalar(th::hdr_to_ldr(px(0.5), th::exposure_tensor(4.0), g)) == 1.0);
    CHECK(scalar(th::hdr_to_ldr(px(0.5), th::exposure_tensor(4.0), g, false)) > 1.0);
}

TEST_CASE("round trip through radiance") {
    torch::manual_seed(3);
    auto x = torch::rand({3, 17, 9});
    for (double t : {0.25, 1.0, 4.0}) {
        auto tt = th::exposure_tensor(t);
        auto back = th::hdr_to_ldr(th::ldr_to_hdr(x, tt, 2.2), tt, 2.2);
        CHECK(testing::max_abs_diff(back, x) < 1e-6);
    }
}

TEST_CASE("mu-law tonemap") {
    const double mu = 5000.0;
    CHECK(scalar(th::mu_law(px(0.0), mu)) == 0.0);
    CHECK(scalar(th::mu_law(px(1.0), mu)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scalar(th::mu_law(px(0.1), mu)) == doctest::Approx(std::log(501.0) / std::log(5001.0)).epsilon(1e-12));
}

TEST_CASE("stage-1 targets re-expose the short frame") {
    const std::array<double, 3> times{1.0, 4.0, 16.0};
    LdrImage x{torch::full({3, 4, 4}, 0.3f), 1.0};
    auto targets = th::make_stage1_targets(x, times, 2.2);
    CHECK(torch::equal(targets[0].pixels, x.pixels));
    const double medium = std::min(1.0, std::pow(std::pow(0.3, 2.2) * 4.0, 1.0 / 2.2));
    CHECK(targets[1].pixels[0][0][0].item<double>() == doctest::Approx(medium).epsilon(1e-6));
    CHECK(targets[1].exposure_time == 4.0);

    LdrImage zero{torch::zeros({3, 4, 4}), 1.0};
    for (const auto& t : th::make_stage1_targets(zero, times, 2.2)) CHECK(t.pixels.abs().max().item<double>() == 0.0);
}

TEST_CASE("six-channel input") {
    torch::manual_seed(5);
    LdrImage x{torch::rand({3, 5, 6}), 4.0};
    auto six = th::make_six_channel_input(x, 2.2);
    REQUIRE(six.sizes() == torch::IntArrayRef({6, 5, 6}));
    CHECK(torch::equal(six.narrow(0, 0, 3), x.pixels));
    CHECK(testing::max_abs_diff(six.narrow(0, 3, 3), x.pixels.pow(2.2) / 4.0) < 1e-7);

    LdrImage zero{torch::zeros({3, 2, 2}), 1.0};
    CHECK(th::make_six_channel_input(zero, 2.2).abs().max().item<double>() == 0.0);
}

TEST_CASE("invalid exposure times are rejected") {
    auto x = torch::rand({3, 2, 2});
    CHECK_THROWS_AS(th::ldr_to_hdr(x, th::exposure_tensor(0.0), 2.2), InvalidArgument);
    CHECK_THROWS_AS(th::exposure_adjust(x, th::exposure_tensor(1.0), th::exposure_tensor(-1.0), 2.2),
                    InvalidArgument);
}

}
