#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "coda/errors.hpp"
#include "coda/rasterizer.hpp"
#include "coda/synthetic.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace coda;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

const char* kTinySpec =
    "seed = 5\n"
    "frames = 3\n"
    "width = 16\n"
    "height = 12\n"
    "feature_dim = 8\n"
    "background_count = 12\n"
    "object = count=6 color=0.8,0.2,0.2 extent=0.3,0.3,0.3 c0=-0.8,0.2,0.5 c1=1.0,0,0 size=0.15\n";

SceneSpec tiny_spec() { return parse_scene_spec(kTinySpec, "tiny"); }

} // namespace

TEST_CASE("scene spec parsing: values land, objects parse, text is preserved") {
    const SceneSpec s = tiny_spec();
    CHECK(s.seed == 5);
    CHECK(s.frames == 3);
    CHECK(s.width == 16);
    CHECK(s.height == 12);
    CHECK(s.feature_dim == 8);
    CHECK(s.background_count == 12);
    REQUIRE(s.objects.size() == 1);
    CHECK(s.objects[0].count == 6);
    CHECK(s.objects[0].color[0] == 0.8);
    CHECK(s.objects[0].c0[0] == -0.8);
    CHECK(s.objects[0].c1[0] == 1.0);
    CHECK(s.objects[0].size == 0.15);
    CHECK(s.text == kTinySpec);

    CHECK(s.frame_time(0) == 0.0);
    CHECK(s.frame_time(2) == 1.0);
}

TEST_CASE("scene spec validation rejects bad input") {
    CHECK_THROWS_AS(parse_scene_spec("nonsense = 1\n", "x"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec("frames = 1\n", "x"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec("object = count=3 t_in=0.9 t_out=0.1\n", "x"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec("object = count=3 notakey=1\n", "x"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec("object = count=3 size=0.1 size=0.2\n", "x"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec("fov_deg = 180\n", "x"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec("background_size = 0\n", "x"), ConfigError);

    // a trajectory that exits the spacetime bounds is caught at parse time
    try {
        parse_scene_spec("object = count=2 c0=0,0,0 c1=9,0,0\n", "x");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("trajectory leaves bounds at t = ") !=
              std::string::npos);
    }
}

TEST_CASE("world blobs: deterministic, correctly counted and owned") {
    const SceneSpec s = tiny_spec();
    const WorldBlobs a = build_world(s);
    const WorldBlobs b = build_world(s);

    REQUIRE(a.offsets.size() == 12 + 6);
    REQUIRE(a.owner.size() == a.offsets.size());
    for (std::size_t i = 0; i < 12; ++i) CHECK(a.owner[i] == -1);
    for (std::size_t i = 12; i < 18; ++i) CHECK(a.owner[i] == 0);

    CHECK(a.log_scales == b.log_scales);
    CHECK(a.rotations == b.rotations);
    CHECK(a.opacity_logits == b.opacity_logits);
    CHECK(a.sh_coeffs == b.sh_coeffs);
    for (std::size_t i = 0; i < a.offsets.size(); ++i) {
        CHECK(a.offsets[i].x == b.offsets[i].x);
        CHECK(a.colors[i].x == b.colors[i].x);
    }
}

TEST_CASE("snapshots honor the appearance window and the polynomial trajectory") {
    SceneSpec s = tiny_spec();
    s.objects[0].t_in = 0.5;
    s.objects[0].t_out = 1.0;
    const WorldBlobs blobs = build_world(s);

    CHECK(snapshot_at(s, blobs, 0.25).count == 12);
    CHECK(snapshot_at(s, blobs, 0.75).count == 18);
    CHECK(snapshot_at(s, blobs, 0.5).count == 18); // window is inclusive

    // linear motion: centers displace by exactly c1 * dt
    s.objects[0].t_in = 0.0;
    const WorldSnapshot s1 = snapshot_at(s, blobs, 0.25);
    const WorldSnapshot s2 = snapshot_at(s, blobs, 0.5);
    REQUIRE(s1.count == 18);
    for (std::size_t i = 12; i < 18; ++i) {
        CHECK(s2.positions[i * 3 + 0] - s1.positions[i * 3 + 0] ==
              doctest::Approx(0.25).epsilon(1e-14));
        CHECK(s2.positions[i * 3 + 1] == s1.positions[i * 3 + 1]);
        CHECK(s2.positions[i * 3 + 2] == s1.positions[i * 3 + 2]);
    }
    // the static background never moves
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(s2.positions[i * 3 + 0] == s1.positions[i * 3 + 0]);
}

TEST_CASE("static spec renders identical frames at every time") {
    SceneSpec s = tiny_spec();
    s.objects.clear();
    const WorldBlobs blobs = build_world(s);
    const WorldSnapshot a = snapshot_at(s, blobs, 0.0);
    const WorldSnapshot b = snapshot_at(s, blobs, 1.0);
    const OracleImages ia = oracle_render(a, s.camera_at(0.0), s.background_color);
    const OracleImages ib = oracle_render(b, s.camera_at(1.0), s.background_color);
    CHECK(ia.rgb.data == ib.rgb.data);
    CHECK(ia.depth.data == ib.depth.data);
}

TEST_CASE("oracle: empty scene is the background, default skips stay within the drop bound") {
    SceneSpec s = tiny_spec();
    WorldSnapshot empty;
    const OracleImages img = oracle_render(empty, s.camera_at(0.0), s.background_color);
    for (int iy = 0; iy < 12; ++iy)
        for (int ix = 0; ix < 16; ++ix)
            for (int c = 0; c < 3; ++c)
                CHECK(img.rgb.at(iy, ix, c) == s.background_color[c]);

    const WorldBlobs blobs = build_world(s);
    const WorldSnapshot snap = snapshot_at(s, blobs, 0.5);
    const OracleImages want = oracle_render(snap, s.camera_at(0.5), s.background_color);

    RenderAttributes a;
    a.count = snap.count;
    a.positions = snap.positions.data();
    a.log_scales = snap.log_scales.data();
    a.rotations = snap.rotations.data();
    a.opacity_logits = snap.opacity_logits.data();
    a.sh_coeffs = snap.sh_coeffs.data();
    const RasterConfig cfg; // default 1/255 skip threshold
    const RenderOutput got = render(a, s.camera_at(0.5), cfg, s.background_color, nullptr);
    const double bound = static_cast<double>(snap.count) / 255.0;
    for (std::size_t k = 0; k < want.rgb.data.size(); ++k)
        CHECK(std::abs(want.rgb.data[k] - got.rgb.data[k]) <= bound);
}

TEST_CASE("codebook rows are unit length, well separated, deterministic") {
    const auto cb = make_codebook(5, 8, 1234);
    REQUIRE(cb.size() == 5);
    for (const auto& row : cb) {
        REQUIRE(row.size() == 8);
        double n2 = 0.0;
        for (double v : row) n2 += v * v;
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-12);
    }
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 8; ++c) dot += cb[i][c] * cb[j][c];
            CHECK(dot < 0.5); // anti-aligned rows are fine for argmax labeling
        }
    CHECK(make_codebook(5, 8, 1234) == cb);
    CHECK(make_codebook(5, 8, 1235) != cb);
}

TEST_CASE("teacher features are exact codebook rows and argmax recovers the mask") {
    const char* two =
        "seed = 3\n"
        "frames = 2\n"
        "width = 24\n"
        "height = 18\n"
        "feature_dim = 8\n"
        "background_count = 10\n"
        "object = count=8 color=0.2,0.6,0.9 extent=0.3,0.25,0.25 c0=-1.2,0.3,0.6 size=0.16\n"
        "object = count=8 color=0.9,0.7,0.2 extent=0.3,0.25,0.25 c0=1.2,0.3,0.6 size=0.16\n";
    const SceneSpec s = parse_scene_spec(two, "two");
    const WorldBlobs blobs = build_world(s);
    const auto cb = make_codebook(3, 8, codebook_seed(s));

    const WorldSnapshot snap = snapshot_at(s, blobs, 0.0);
    const OracleImages oracle = oracle_render(snap, s.camera_at(0.0), s.background_color, 3);
    REQUIRE(oracle.owner_weight.size() == 3);
    const Image labels = label_map(oracle);
    const Image feat = teacher_features(s, cb, labels, 0);

    int labeled[3] = {0, 0, 0};
    for (int iy = 0; iy < s.height; ++iy)
        for (int ix = 0; ix < s.width; ++ix) {
            const int lab = static_cast<int>(labels.at(iy, ix, 0));
            REQUIRE(lab >= 0);
            REQUIRE(lab <= 2);
            ++labeled[lab];
            int best = -1;
            double best_dot = -2.0;
            for (int k = 0; k < 3; ++k) {
                double dot = 0.0;
                for (int c = 0; c < 8; ++c) dot += feat.at(iy, ix, c) * cb[k][c];
                if (dot > best_dot) {
                    best_dot = dot;
                    best = k;
                }
            }
            CHECK(best == lab);
            for (int c = 0; c < 8; ++c) CHECK(feat.at(iy, ix, c) == cb[lab][c]);
        }
    // the scene actually exercises all three labels
    CHECK(labeled[0] > 0);
    CHECK(labeled[1] > 0);
    CHECK(labeled[2] > 0);
}

TEST_CASE("generated datasets are byte-identical across runs and load back") {
    namespace fs = std::filesystem;
    const std::string d1 = "/tmp/coda_synth_a", d2 = "/tmp/coda_synth_b";
    fs::remove_all(d1);
    fs::remove_all(d2);

    const SceneSpec s = tiny_spec();
    generate_dataset(s, d1);
    generate_dataset(s, d2);

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d1)) names.push_back(e.path().filename());
    REQUIRE(names.size() == 2 + 4 * 3); // spec, cameras, 4 planes x 3 frames
    for (const auto& n : names) CHECK(slurp(d1 + "/" + n) == slurp(d2 + "/" + n));

    const Dataset ds = load_dataset(d1, "reconstruction");
    REQUIRE(ds.frames.size() == 3);
    CHECK(ds.train_idx.size() == 3);
    CHECK(ds.test_idx.empty());
    CHECK(ds.spec.seed == 5);
    CHECK(ds.codebook.size() == 2);
    CHECK(!ds.init_points.empty());
    CHECK(ds.init_points.size() == ds.init_colors.size());
    for (const auto& f : ds.frames) {
        CHECK(f.rgb.width == 16);
        CHECK(f.rgb.height == 12);
        CHECK(f.rgb.channels == 3);
        CHECK(f.depth.channels == 1);
        CHECK(f.feat.channels == 8);
        CHECK(f.mask.channels == 1);
        CHECK(f.cam.width == 16);
    }
    CHECK(ds.frames[0].t == 0.0);
    CHECK(ds.frames[2].t == 1.0);

    CHECK_THROWS_AS(load_dataset(d1, "holdout"), ConfigError);
    fs::remove_all(d2);
}

TEST_CASE("nvs split holds out every tenth frame") {
    namespace fs = std::filesystem;
    const std::string dir = "/tmp/coda_synth_nvs";
    fs::remove_all(dir);

    SceneSpec s = tiny_spec();
    s = parse_scene_spec(std::string(kTinySpec) + "frames = 12\n", "tiny12");
    generate_dataset(s, dir);

    const Dataset ds = load_dataset(dir, "nvs");
    REQUIRE(ds.frames.size() == 12);
    REQUIRE(ds.test_idx == std::vector<std::size_t>{0, 10});
    REQUIRE(ds.train_idx.size() == 10);
    for (std::size_t i : ds.train_idx) CHECK(i % 10 != 0);
    fs::remove_all(dir);
}

TEST_CASE("orbit camera: zero offsets reproduce the rig, yaw keeps the pivot centered") {
    const SceneSpec s = tiny_spec();
    for (double t : {0.0, 0.37, 1.0}) {
        const Camera base = s.camera_at(t);
        const Camera orb = orbit_camera(s, t, 0.0, 0.0);
        CHECK(orb.t.x == base.t.x);
        CHECK(orb.t.y == base.t.y);
        CHECK(orb.t.z == base.t.z);
        for (int k = 0; k < 9; ++k) CHECK(orb.R.m[k] == base.R.m[k]);
    }

    const Camera turned = orbit_camera(s, 0.0, 30.0, -15.0);
    const Vec3 pivot = s.camera_lookat;
    const Vec3 pc = turned.to_camera(pivot);
    CHECK(std::abs(pc.x) < 1e-9);
    CHECK(std::abs(pc.y) < 1e-9);
    CHECK(pc.z > 0.0);
    // the orbit preserves the eye-pivot distance
    const Camera base = s.camera_at(0.0);
    const Vec3 pc0 = base.to_camera(pivot);
    CHECK(pc.z == doctest::Approx(pc0.z).epsilon(1e-12));
}
