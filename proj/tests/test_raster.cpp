#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "coda/errors.hpp"
#include "coda/rasterizer.hpp"
#include "coda/synthetic.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

using namespace coda;
using namespace coda::testing;

namespace {

RenderAttributes attrs_of(const GaussianScene& s) {
    RenderAttributes a;
    a.count = s.count;
    a.feature_dim = s.feature_dim;
    a.positions = s.positions.data.data();
    a.log_scales = s.log_scales.data.data();
    a.rotations = s.rotations.data.data();
    a.opacity_logits = s.opacity_logits.data.data();
    a.sh_coeffs = s.sh_coeffs.data.data();
    a.features = s.feature_dim > 0 ? s.context_features.data.data() : nullptr;
    return a;
}

Camera test_camera(int w = 32, int h = 24) {
    return look_at(Vec3{0, -6, 1}, Vec3{0, 0, 0.5}, w, h, 60.0, 0.05, 100.0);
}

// Camera at the origin staring down +y with an odd image size, so the
// principal point lands exactly on a pixel center.
Camera axis_camera(int w = 5, int h = 5) {
    return look_at(Vec3{0, 0, 0}, Vec3{0, 1, 0}, w, h, 60.0, 0.05, 100.0);
}

GaussianScene single_splat(double depth_m, double logit, const double dc[3]) {
    GaussianScene s(1, 0);
    s.positions.at(0, 1) = depth_m;
    for (int a = 0; a < 3; ++a) s.log_scales.at(0, a) = -1.5;
    s.rotations.at(0, 0) = 1.0;
    s.opacity_logits.data[0] = logit;
    for (int ch = 0; ch < 3; ++ch) s.sh_coeffs.data[ch * kShCoeffs] = dc[ch];
    return s;
}

} // namespace

TEST_CASE("projection culls behind the near plane and sorts by depth then index") {
    const Camera cam = axis_camera();
    RasterConfig cfg;

    GaussianScene s(3, 0);
    // row 0 at 5 m, row 1 at 2 m, row 2 behind the camera
    s.positions.at(0, 1) = 5.0;
    s.positions.at(1, 1) = 2.0;
    s.positions.at(2, 1) = -1.0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (int a = 0; a < 3; ++a) s.log_scales.at(i, a) = -1.5;
        s.rotations.at(i, 0) = 1.0;
        s.opacity_logits.data[i] = 1.0;
    }

    const auto splats = project_gaussians(attrs_of(s), cam, cfg, 10);
    REQUIRE(splats.size() == 2);
    CHECK(splats[0].depth == doctest::Approx(2.0));
    CHECK(splats[0].index == 1);
    CHECK(splats[0].key == 11);
    CHECK(splats[1].depth == doctest::Approx(5.0));
    CHECK(splats[1].index == 0);
    CHECK(splats[1].key == 10);

    // equal depths fall back to index order
    s.positions.at(0, 1) = 2.0;
    s.positions.at(2, 1) = 2.0;
    const auto tied = project_gaussians(attrs_of(s), cam, cfg);
    REQUIRE(tied.size() == 3);
    CHECK(tied[0].index == 0);
    CHECK(tied[1].index == 1);
    CHECK(tied[2].index == 2);
}

TEST_CASE("projected conic inverts the 2d covariance and radii are positive") {
    std::mt19937_64 rng(41);
    const Camera cam = test_camera();
    RasterConfig cfg;
    const GaussianScene s = random_scene(40, 0, rng);
    const auto splats = project_gaussians(attrs_of(s), cam, cfg);
    REQUIRE(!splats.empty());
    for (const Splat& sp : splats) {
        const double a = sp.cov2d[0], b = sp.cov2d[1], c = sp.cov2d[2];
        const double A = sp.conic[0], B = sp.conic[1], C = sp.conic[2];
        CHECK(std::abs(a * A + b * B - 1.0) < 1e-9);
        CHECK(std::abs(a * B + b * C) < 1e-9);
        CHECK(std::abs(b * A + c * B) < 1e-9);
        CHECK(std::abs(b * B + c * C - 1.0) < 1e-9);
        CHECK(sp.radius > 0.0);
        CHECK(sp.depth > cam.near);
    }
    for (std::size_t i = 1; i < splats.size(); ++i)
        CHECK(splats[i - 1].depth <= splats[i].depth);
}

TEST_CASE("empty scene renders the plain background") {
    const Camera cam = test_camera(8, 6);
    RasterConfig cfg;
    RenderAttributes a;
    a.feature_dim = 2;
    const double dummy = 0.0;
    a.features = &dummy; // zero rows, never dereferenced
    const double bg[3] = {0.1, 0.2, 0.3};
    const double fbg[2] = {0.7, -0.4};
    const RenderOutput out = render(a, cam, cfg, bg, fbg);
    for (int iy = 0; iy < 6; ++iy)
        for (int ix = 0; ix < 8; ++ix) {
            for (int ch = 0; ch < 3; ++ch) CHECK(out.rgb.at(iy, ix, ch) == bg[ch]);
            CHECK(out.depth.at(iy, ix, 0) == 0.0);
            CHECK(out.accum.at(iy, ix, 0) == 0.0);
            for (int f = 0; f < 2; ++f) CHECK(out.feature.at(iy, ix, f) == fbg[f]);
        }
}

TEST_CASE("one centered splat composites in closed form") {
    const Camera cam = axis_camera();
    RasterConfig cfg;
    const double dc[3] = {0.4, -0.3, 0.1};
    const double logit = 3.0;
    GaussianScene s = single_splat(2.0, logit, dc);
    s.feature_dim = 2;
    s.context_features = ParamBlock("features", {1, 2});
    s.context_features.at(0, 0) = 0.8;
    s.context_features.at(0, 1) = -0.6;

    const double bg[3] = {0, 0, 0};
    const double fbg[2] = {0, 0};
    const RenderOutput out = render(attrs_of(s), cam, cfg, bg, fbg);

    // principal point (2.5, 2.5) is the center of pixel (2,2), so g = 1
    const double alpha = sigmoid(logit);
    for (int ch = 0; ch < 3; ++ch) {
        const double c = std::clamp(0.5 + kShC0 * dc[ch], 0.0, 1.0);
        CHECK(out.rgb.at(2, 2, ch) == doctest::Approx(alpha * c).epsilon(1e-12));
    }
    CHECK(out.accum.at(2, 2, 0) == doctest::Approx(alpha).epsilon(1e-12));
    CHECK(out.depth.at(2, 2, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(out.feature.at(2, 2, 0) == doctest::Approx(alpha * 0.8).epsilon(1e-12));
    CHECK(out.feature.at(2, 2, 1) == doctest::Approx(alpha * -0.6).epsilon(1e-12));
}

TEST_CASE("expected depth is zero wherever accumulation stays at or below one half") {
    const Camera cam = axis_camera();
    RasterConfig cfg;
    const double dc[3] = {0.4, 0.4, 0.4};
    const GaussianScene s = single_splat(2.0, -1.0, dc); // alpha = 0.269
    const double bg[3] = {0, 0, 0};
    const RenderOutput out = render(attrs_of(s), cam, cfg, bg, nullptr);
    CHECK(out.accum.at(2, 2, 0) > 0.0);
    CHECK(out.accum.at(2, 2, 0) < 0.5);
    for (double v : out.depth.data) CHECK(v == 0.0);
}

TEST_CASE("compositing weights are linear: a unit feature gradient returns the weight") {
    const Camera cam = axis_camera();
    RasterConfig cfg;
    const double dc[3] = {0.2, 0.2, 0.2};

    GaussianScene s(2, 1);
    for (std::size_t i = 0; i < 2; ++i) {
        s.positions.at(i, 1) = 2.0 + static_cast<double>(i);
        for (int a = 0; a < 3; ++a) s.log_scales.at(i, a) = -1.5;
        s.rotations.at(i, 0) = 1.0;
        for (int ch = 0; ch < 3; ++ch) s.sh_coeffs.data[i * kShTotal + ch * kShCoeffs] = dc[ch];
        s.context_features.at(i, 0) = 0.5;
    }
    s.opacity_logits.data[0] = 0.7;
    s.opacity_logits.data[1] = 1.3;

    const double bg[3] = {0, 0, 0};
    const double fbg[1] = {0};
    RenderCache cache;
    render(attrs_of(s), cam, cfg, bg, fbg, &cache);

    OutputGrads grads;
    grads.feature = Image(5, 5, 1);
    grads.feature.at(2, 2, 0) = 1.0;
    AttributeGrads out(2, 1);
    render_backward(attrs_of(s), cam, cfg, cache, grads, bg, fbg, out);

    const double a0 = sigmoid(0.7), a1 = sigmoid(1.3);
    CHECK(out.features[0] == doctest::Approx(a0).epsilon(1e-12));
    CHECK(out.features[1] == doctest::Approx(a1 * (1.0 - a0)).epsilon(1e-12));
}

TEST_CASE("early termination zeroes every gradient of a fully occluded splat") {
    const Camera cam = axis_camera();
    RasterConfig cfg;
    const double dc[3] = {0.3, 0.1, -0.2};

    GaussianScene s(4, 0);
    for (std::size_t i = 0; i < 4; ++i) {
        s.positions.at(i, 1) = 2.0 + static_cast<double>(i);
        for (int a = 0; a < 3; ++a) s.log_scales.at(i, a) = -1.5;
        s.rotations.at(i, 0) = 1.0;
        s.opacity_logits.data[i] = 9.0; // alpha' clamps to 0.99 at the center
        for (int ch = 0; ch < 3; ++ch) s.sh_coeffs.data[i * kShTotal + ch * kShCoeffs] = dc[ch];
    }

    const double bg[3] = {0, 0, 0};
    RenderCache cache;
    render(attrs_of(s), cam, cfg, bg, nullptr, &cache);

    OutputGrads grads;
    grads.rgb = Image(5, 5, 3);
    for (int ch = 0; ch < 3; ++ch) grads.rgb.at(2, 2, ch) = 1.0;
    AttributeGrads out(4, 0);
    render_backward(attrs_of(s), cam, cfg, cache, grads, bg, nullptr, out);

    // transmittance after three 0.99 splats is 1e-6 < 1e-4, so the fourth
    // splat never composites at the probed pixel
    for (int a = 0; a < 3; ++a) CHECK(out.positions[3 * 3 + a] == 0.0);
    CHECK(out.opacity_logits[3] == 0.0);
    for (std::size_t k = 0; k < kShTotal; ++k) CHECK(out.sh_coeffs[3 * kShTotal + k] == 0.0);
    // the front splat does composite (its opacity grad is clamp-gated, so
    // probe the color path instead)
    CHECK(out.sh_coeffs[0] != 0.0);
}

TEST_CASE("feature channels equal to the colors reproduce the rgb image bitwise") {
    std::mt19937_64 rng(77);
    const Camera cam = test_camera();
    RasterConfig cfg;

    GaussianScene s = random_scene(30, 3, rng);
    const double dir[3] = {0, 0, 1};
    for (std::size_t i = 0; i < s.count; ++i) {
        // direction-independent colors: zero out everything past the DC term
        for (int ch = 0; ch < 3; ++ch)
            for (std::size_t k = 1; k < kShCoeffs; ++k)
                s.sh_coeffs.data[i * kShTotal + ch * kShCoeffs + k] = 0.0;
        double rgb[3];
        evaluate_sh(s.sh_coeffs.data.data() + i * kShTotal, dir, rgb);
        for (int ch = 0; ch < 3; ++ch) s.context_features.at(i, ch) = rgb[ch];
    }

    const double bg[3] = {0.05, 0.05, 0.08};
    const RenderOutput out = render(attrs_of(s), cam, cfg, bg, bg);
    REQUIRE(out.feature.data.size() == out.rgb.data.size());
    CHECK(out.feature.data == out.rgb.data);
}

TEST_CASE("splitting the splat list across composite passes changes nothing") {
    std::mt19937_64 rng(99);
    const Camera cam = test_camera();
    RasterConfig cfg;
    const GaussianScene s = random_scene(30, 2, rng);
    const auto splats = project_gaussians(attrs_of(s), cam, cfg);
    REQUIRE(splats.size() > 6);

    CompositeState whole(cam.width, cam.height, 2);
    composite_pass(splats, cfg, whole);

    CompositeState parts(cam.width, cam.height, 2);
    const std::size_t cuts[3] = {3, splats.size() / 2, splats.size()};
    std::size_t begin = 0;
    for (std::size_t cut : cuts) {
        const std::vector<Splat> chunk(splats.begin() + static_cast<std::ptrdiff_t>(begin),
                                       splats.begin() + static_cast<std::ptrdiff_t>(cut));
        composite_pass(chunk, cfg, parts);
        begin = cut;
    }

    CHECK(whole.transmittance == parts.transmittance);
    CHECK(whole.color_sum == parts.color_sum);
    CHECK(whole.depth_sum == parts.depth_sum);
    CHECK(whole.accum == parts.accum);
    CHECK(whole.feat_sum == parts.feat_sum);
}

TEST_CASE("rigid world transforms with a compensating camera leave the render unchanged") {
    std::mt19937_64 rng(7);
    const Camera cam = test_camera();
    RasterConfig cfg;
    GaussianScene s = random_scene(25, 0, rng);
    const double bg[3] = {0.1, 0.1, 0.1};
    const RenderOutput base = render(attrs_of(s), cam, cfg, bg, nullptr);

    const Quat r0 = quat_normalize(Quat{0.8, 0.3, -0.4, 0.33});
    const Mat3 R0 = quat_to_mat(r0);
    const Vec3 t0{0.3, -0.2, 0.5};

    GaussianScene moved = s;
    for (std::size_t i = 0; i < s.count; ++i) {
        const Vec3 p{s.positions.at(i, 0), s.positions.at(i, 1), s.positions.at(i, 2)};
        const Vec3 q = R0 * p + t0;
        moved.positions.at(i, 0) = q.x;
        moved.positions.at(i, 1) = q.y;
        moved.positions.at(i, 2) = q.z;
        const Quat rot{s.rotations.at(i, 0), s.rotations.at(i, 1), s.rotations.at(i, 2),
                       s.rotations.at(i, 3)};
        const Quat rot2 = r0 * rot;
        moved.rotations.at(i, 0) = rot2.w;
        moved.rotations.at(i, 1) = rot2.x;
        moved.rotations.at(i, 2) = rot2.y;
        moved.rotations.at(i, 3) = rot2.z;
    }

    Camera cam2 = cam;
    cam2.R = cam.R * R0.transposed();
    cam2.t = cam.t - cam2.R * t0;

    const RenderOutput out = render(attrs_of(moved), cam2, cfg, bg, nullptr);
    double worst = 0.0;
    for (std::size_t k = 0; k < base.rgb.data.size(); ++k)
        worst = std::max(worst, std::abs(base.rgb.data[k] - out.rgb.data[k]));
    for (std::size_t k = 0; k < base.accum.data.size(); ++k)
        worst = std::max(worst, std::abs(base.accum.data[k] - out.accum.data[k]));
    CHECK(worst < 1e-9);
}

TEST_CASE("default-mode render stays inside valid output ranges") {
    std::mt19937_64 rng(3);
    const Camera cam = test_camera();
    RasterConfig cfg;
    for (int trial = 0; trial < 3; ++trial) {
        const GaussianScene s = random_scene(60, 2, rng);
        const double bg[3] = {0.2, 0.3, 0.4};
        const double fbg[2] = {0.0, 0.0};
        const RenderOutput out = render(attrs_of(s), cam, cfg, bg, fbg);
        for (double v : out.accum.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : out.rgb.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            CHECK(std::isfinite(v));
        }
        for (double v : out.depth.data) CHECK(v >= 0.0);
    }
}

TEST_CASE("exact mode matches the extended-precision reference on generated worlds") {
    for (std::uint64_t seed : {17u, 23u, 31u}) {
        SceneSpec sp;
        sp.seed = seed;
        sp.frames = 4;
        sp.width = 32;
        sp.height = 32;
        sp.background_count = 40;
        ObjectSpec ob;
        ob.count = 10;
        ob.c0[0] = -0.8;
        ob.c0[1] = 0.2;
        ob.c0[2] = 0.4;
        ob.c1[0] = 1.2;
        ob.c1[2] = 0.3;
        sp.objects.push_back(ob);

        const WorldBlobs blobs = build_world(sp);
        const double t = 0.5;
        const WorldSnapshot snap = snapshot_at(sp, blobs, t);
        const Camera cam = sp.camera_at(t);
        const OracleImages want = oracle_render(snap, cam, sp.background_color);

        RenderAttributes a;
        a.count = snap.count;
        a.positions = snap.positions.data();
        a.log_scales = snap.log_scales.data();
        a.rotations = snap.rotations.data();
        a.opacity_logits = snap.opacity_logits.data();
        a.sh_coeffs = snap.sh_coeffs.data();
        RasterConfig exact;
        exact.skip_threshold = 0.0;
        const RenderOutput got = render(a, cam, exact, sp.background_color, nullptr);

        double worst = 0.0;
        for (std::size_t k = 0; k < want.rgb.data.size(); ++k)
            worst = std::max(worst, std::abs(want.rgb.data[k] - got.rgb.data[k]));
        for (std::size_t k = 0; k < want.accum.data.size(); ++k)
            worst = std::max(worst, std::abs(want.accum.data[k] - got.accum.data[k]));
        for (std::size_t k = 0; k < want.depth.data.size(); ++k)
            worst = std::max(worst, std::abs(want.depth.data[k] - got.depth.data[k]));
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("attribute gradients match finite differences") {
    std::mt19937_64 rng(5);
    RasterConfig cfg;
    cfg.skip_threshold = 0.0; // keep the probe smooth: no per-pixel skips
    const Camera cam = test_camera(12, 10);
    const double bg[3] = {0.1, 0.2, 0.3};
    const double fbg[2] = {0.25, -0.5};

    for (int seed = 0; seed < 3; ++seed) {
        GaussianScene s = random_scene(8, 2, rng);

        OutputGrads w;
        w.rgb = random_image(12, 10, 3, rng, -1.0, 1.0);
        w.feature = random_image(12, 10, 2, rng, -1.0, 1.0);
        w.accum = random_image(12, 10, 1, rng, -1.0, 1.0);
        w.depth = random_image(12, 10, 1, rng, -1.0, 1.0);

        // the depth head gates on accum > 0.5; silence pixels near the gate
        // so finite differences cannot flip it
        {
            const RenderOutput base = render(attrs_of(s), cam, cfg, bg, fbg);
            for (std::size_t k = 0; k < base.accum.data.size(); ++k)
                if (std::abs(base.accum.data[k] - 0.5) < 1e-2) w.depth.data[k] = 0.0;
        }

        const auto loss = [&] {
            const RenderOutput out = render(attrs_of(s), cam, cfg, bg, fbg);
            double acc = 0.0;
            for (std::size_t k = 0; k < out.rgb.data.size(); ++k)
                acc += w.rgb.data[k] * out.rgb.data[k];
            for (std::size_t k = 0; k < out.feature.data.size(); ++k)
                acc += w.feature.data[k] * out.feature.data[k];
            for (std::size_t k = 0; k < out.accum.data.size(); ++k)
                acc += w.accum.data[k] * out.accum.data[k];
            for (std::size_t k = 0; k < out.depth.data.size(); ++k)
                acc += w.depth.data[k] * out.depth.data[k];
            return acc;
        };

        RenderCache cache;
        render(attrs_of(s), cam, cfg, bg, fbg, &cache);
        AttributeGrads out(s.count, s.feature_dim);
        render_backward(attrs_of(s), cam, cfg, cache, w, bg, fbg, out);

        s.positions.grad = out.positions;
        s.log_scales.grad = out.log_scales;
        s.rotations.grad = out.rotations;
        s.opacity_logits.grad = out.opacity_logits;
        s.sh_coeffs.grad = out.sh_coeffs;
        s.context_features.grad = out.features;

        for (ParamBlock* b : s.blocks()) {
            INFO(b->name);
            CHECK(block_grad_err(*b, loss) < 1e-4);
        }
    }
}

TEST_CASE("backward rejects a stale cache and mis-shaped gradient buffers") {
    std::mt19937_64 rng(1);
    const Camera cam = test_camera(8, 6);
    RasterConfig cfg;
    const GaussianScene s = random_scene(4, 0, rng);
    const double bg[3] = {0, 0, 0};

    OutputGrads grads;
    grads.rgb = Image(8, 6, 3);
    AttributeGrads out(4, 0);
    RenderCache empty;
    CHECK_THROWS_AS(render_backward(attrs_of(s), cam, cfg, empty, grads, bg, nullptr, out),
                    UsageError);

    RenderCache cache;
    render(attrs_of(s), cam, cfg, bg, nullptr, &cache);
    AttributeGrads wrong(3, 0);
    CHECK_THROWS_AS(render_backward(attrs_of(s), cam, cfg, cache, grads, bg, nullptr, wrong),
                    ShapeError);
}
