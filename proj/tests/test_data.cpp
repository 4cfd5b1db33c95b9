#include <doctest.h>

#include <cmath>
#include <fstream>

#include "deghost/datasets.hpp"
#include "deghost/errors.hpp"
#include "deghost/hdr_transforms.hpp"
#include "deghost/image_io.hpp"
#include "deghost/synth.hpp"
#include "deghost/tensor_file.hpp"
#include "test_util.hpp"

using namespace deghost;
namespace fs = std::filesystem;

namespace {

ExposureStack small_stack(Role role, uint64_t seed = 0) {
    SynthSceneParams p;
    p.height = 24;
    p.width = 32;
    p.role = role;
    p.seed = seed;
    p.motion_px = role == Role::StaticLabeled ? 0 : 2;
    p.id = "x";
    return synth_scene(p);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("PNG round trips at 8 and 16 bits") {
    auto dir = testing::scratch_dir("png");
    torch::manual_seed(1);
    auto img = torch::rand({3, 5, 7});
    for (int bits : {8, 16}) {
        const double levels = std::pow(2.0, bits) - 1.0;
        auto quant = (img * levels).round() / levels;
        io::write_png(dir / "a.png", img, bits);
        int depth = 0;
        auto back = io::read_png(dir / "a.png", &depth);
        CHECK(depth == bits);
        CHECK(back.sizes() == img.sizes());
        CHECK(testing::max_abs_diff(back, quant) < 1e-6);
    }
    io::write_png(dir / "w.png", torch::ones({3, 2, 2}), 8);
    CHECK(io::read_png(dir / "w.png").min().item<double>() == 1.0);
    CHECK_THROWS_AS(io::read_png(dir / "missing.png"), DataError);
}

TEST_CASE("PFM and Radiance HDR round trips") {
    auto dir = testing::scratch_dir("hdrio");
    torch::manual_seed(2);
    auto img = torch::rand({3, 6, 9}) * 3.0;
    io::write_pfm(dir / "a.pfm", img);
    CHECK(torch::equal(io::read_pfm(dir / "a.pfm"), img));
    io::write_hdr(dir / "a.hdr", img);
    auto back = io::read_hdr(dir / "a.hdr");
    CHECK(back.sizes() == img.sizes());
    // RGBE keeps 8 mantissa bits relative to the largest channel.
    auto bound = img.amax(0, true) / 128.0;
    CHECK(torch::all((back - img).abs() <= bound).item<bool>());
    CHECK(torch::equal(io::read_image(dir / "a.pfm"), img));
    CHECK_THROWS_AS(io::read_image(dir / "a.bmp"), DataError);
}

TEST_CASE("bracket save and load") {
    auto dir = testing::scratch_dir("bracket");
    auto s = small_stack(Role::DynamicLabeled, 3);
    save_bracket(dir / "d", s, 16);
    auto back = load_bracket(dir / "d", Role::DynamicLabeled, "d");
    CHECK(back.id == "d");
    CHECK(back.evs == s.evs);
    const auto t = back.times();
    CHECK(t[1] / t[0] == doctest::Approx(4.0));
    CHECK(t[2] / t[0] == doctest::Approx(16.0));
    for (size_t i = 0; i < 3; ++i) CHECK(testing::max_abs_diff(back.ldr[i].pixels, s.ldr[i].pixels) <= 0.5 / 65535.0 + 1e-7);
    REQUIRE(back.gt.has_value());
    CHECK(torch::equal(back.gt->pixels, s.gt->pixels));

    save_bracket(dir / "p", s, 32);
    auto exact = load_bracket(dir / "p", Role::DynamicLabeled);
    for (size_t i = 0; i < 3; ++i) CHECK(torch::equal(exact.ldr[i].pixels, s.ldr[i].pixels));

    // Unlabeled loads ignore a present gt; labeled loads demand one.
    CHECK_FALSE(load_bracket(dir / "d", Role::Unlabeled).gt.has_value());
    fs::remove(dir / "d" / "gt.pfm");
    CHECK_THROWS_AS(load_bracket(dir / "d", Role::DynamicLabeled), DataError);
    fs::remove(dir / "d" / "ldr_2.png");
    try {
        load_bracket(dir / "d", Role::Unlabeled);
        FAIL("missing frame accepted");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("ldr_2") != std::string::npos);
    }
}

TEST_CASE("exposure file validation") {
    auto dir = testing::scratch_dir("evs");
    save_bracket(dir, small_stack(Role::Unlabeled), 8);
    {
        std::ofstream os(dir / "exposures.txt");
        os << "0\n-2\n2\n";
    }
    CHECK_THROWS_AS(load_bracket(dir), DataError);
    {
        std::ofstream os(dir / "exposures.txt");
        os << "-2\n0\n";
    }
    CHECK_THROWS_AS(load_bracket(dir), DataError);
}

TEST_CASE("8-bit code 255 reads as 1.0") {
    auto dir = testing::scratch_dir("png255");
    auto s = small_stack(Role::Unlabeled);
    save_bracket(dir, s, 8);
    auto back = load_bracket(dir);
    CHECK(back.ldr[2].pixels.max().item<double>() == 1.0);
}

TEST_CASE("manifest round trip and role filtering") {
    auto dir = testing::scratch_dir("manifest");
    Manifest m;
    m.seed = 7;
    const std::array<Role, 3> roles{Role::Unlabeled, Role::StaticLabeled, Role::DynamicLabeled};
    for (int i = 0; i < 3; ++i) {
        const auto id = "s" + std::to_string(i);
        save_bracket(dir / id, small_stack(roles[static_cast<size_t>(i)], static_cast<uint64_t>(i)), 16);
        m.samples.push_back({id, id, roles[static_cast<size_t>(i)]});
    }
    m.save(dir / "manifest.json");
    CHECK(Manifest::load(dir / "manifest.json").to_json() == m.to_json());
    auto ds = load_dataset(dir);
    REQUIRE(ds.size() == 3);
    CHECK(filter_role(ds, Role::StaticLabeled).size() == 1);
    CHECK(filter_role(ds, Role::StaticLabeled)[0].id == "s1");
    CHECK(role_from_string(role_code(Role::DynamicLabeled)) == Role::DynamicLabeled);
    CHECK_THROWS_AS(load_dataset(dir / "nowhere"), DataError);
}

TEST_CASE("crop geometry") {
    CHECK(crop_count(256, 128, 64) == 3);
    CHECK(crop_count(64, 64, 64) == 1);
    CHECK(crop_count(100, 64, 16) == 3);
    CHECK(crop_count(32, 64, 16) == 1);

    auto s = small_stack(Role::DynamicLabeled, 5);
    auto crops = crop_patches(s, 16, 8);
    CHECK(crops.size() == static_cast<size_t>(crop_count(24, 16, 8) * crop_count(32, 16, 8)));
    for (const auto& c : crops) {
        CHECK(c.height() == 16);
        REQUIRE(c.gt.has_value());
    }
    auto c = crop_stack(s, 4, 12, 8);
    CHECK(torch::equal(c.gt->pixels, s.gt->pixels.slice(1, 4, 12).slice(2, 12, 20)));
    CHECK(torch::equal(c.ldr[1].pixels, s.ldr[1].pixels.slice(1, 4, 12).slice(2, 12, 20)));

    std::mt19937_64 r1(3), r2(3);
    auto j1 = crop_patches(s, 16, 8, &r1, 3), j2 = crop_patches(s, 16, 8, &r2, 3);
    REQUIRE(j1.size() == j2.size());
    for (size_t i = 0; i < j1.size(); ++i) CHECK(j1[i].id == j2[i].id);

    auto padded = crop_patches(s, 40, 8);
    REQUIRE(padded.size() == 1);
    CHECK(padded[0].height() == 40);
    CHECK(padded[0].width() == 40);
}

TEST_CASE("synthetic scenes hit the saturation target") {
    for (double target : {0.05, 0.15, 0.3}) {
        for (uint64_t seed : {1u, 2u, 3u}) {
            SynthSceneParams p;
            p.saturation_frac = target;
            p.seed = seed;
            auto s = synth_scene(p);
            CHECK(std::abs(saturated_fraction(s.ldr[2].pixels) - target) <= 0.05);
        }
    }
}

TEST_CASE("static scenes are exposure-consistent") {
    SynthSceneParams p;
    p.motion_px = 0;
    p.noise_sigma = 0.0;
    p.role = Role::StaticLabeled;
    p.seed = 4;
    auto s = synth_scene(p);
    const auto t = s.times();
    auto medium = hdr::exposure_adjust(s.ldr[0].pixels, hdr::exposure_tensor(t[0]), hdr::exposure_tensor(t[1]), 2.2);
    auto unclipped = s.ldr[1].pixels < 1.0;
    CHECK(((medium - s.ldr[1].pixels).abs() * unclipped).max().item<double>() < 1e-3);

    p.saturation_frac = 0.0;
    auto flat = synth_scene(p);
    auto h0 = hdr::ldr_to_hdr(flat.ldr[0], 2.2).pixels;
    for (size_t i = 1; i < 3; ++i) {
        auto hi = hdr::ldr_to_hdr(flat.ldr[i], 2.2).pixels;
        auto ok = flat.ldr[i].pixels < 1.0;
        CHECK(((hi - h0).abs() * ok).max().item<double>() < 1e-3);
    }
    SynthSceneParams bad;
    bad.role = Role::StaticLabeled;
    bad.motion_px = 3;
    CHECK_THROWS_AS(synth_scene(bad), InvalidArgument);
}

TEST_CASE("synthetic scenes are reproducible and labeled only by role") {
    SynthSceneParams p;
    p.seed = 10;
    auto a = synth_scene(p), b = synth_scene(p);
    for (size_t i = 0; i < 3; ++i) CHECK(torch::equal(a.ldr[i].pixels, b.ldr[i].pixels));
    p.role = Role::Unlabeled;
    CHECK_FALSE(synth_scene(p).gt.has_value());
    SynthScene scene(p);
    CHECK(scene.frame_offset(1)[0] == 0.0);
    CHECK(scene.frame_offset(1)[1] == 0.0);
    CHECK(std::hypot(scene.frame_offset(2)[0], scene.frame_offset(2)[1]) > 0.0);
}

TEST_CASE("tensor file round trip is bit-exact") {
    auto dir = testing::scratch_dir("tensorfile");
    TensorFile f;
    f.meta = {{"k", 1}};
    f.tensors = {{"a", torch::rand({2, 3})}, {"b", torch::rand({4}, torch::kDouble)}};
    f.save(dir / "t.bin");
    auto g = TensorFile::load(dir / "t.bin");
    CHECK(g.meta == f.meta);
    REQUIRE(g.find("b") != nullptr);
    CHECK(torch::equal(*g.find("a"), f.tensors[0].second));
    CHECK(torch::equal(*g.find("b"), f.tensors[1].second));
    CHECK(g.find("c") == nullptr);
    {
        std::ofstream os(dir / "junk.bin");
        os << "garbage";
    }
    CHECK_THROWS_AS(TensorFile::load(dir / "junk.bin"), DataError);
}

}
