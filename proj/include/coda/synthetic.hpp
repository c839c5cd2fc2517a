#pragma once

#include "coda/geometry.hpp"
#include "coda/io.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace coda {

// One cluster of Gaussian blobs moving along a quadratic trajectory in t,
// visible only inside [t_in, t_out].
struct ObjectSpec {
    std::size_t count = 8;
    double color[3] = {0.7, 0.3, 0.3};
    double extent[3] = {0.5, 0.5, 0.5};
    double c0[3] = {0, 0, 0};
    double c1[3] = {0, 0, 0};
    double c2[3] = {0, 0, 0};
    double t_in = 0.0;
    double t_out = 1.0;
    double size = 0.12;
};

struct SceneSpec {
    std::uint64_t seed = 1;
    std::size_t frames = 24;
    int width = 64, height = 48;
    std::size_t feature_dim = 8;
    double fov_deg = 60.0, near = 0.05, far = 100.0;
    double background_color[3] = {0.05, 0.05, 0.08};
    double bounds_lo[3] = {-4, -4, -1};
    double bounds_hi[3] = {4, 4, 3};
    std::size_t background_count = 48;
    double background_box_lo[3] = {-3, -3, -0.5};
    double background_box_hi[3] = {3, 3, 2};
    double background_size = 0.25;
    Vec3 camera_eye_start{0, -6, 1};
    Vec3 camera_eye_end{0, -6, 1};
    Vec3 camera_lookat{0, 0, 0.5};
    double teacher_noise = 0.0;
    std::vector<ObjectSpec> objects;
    std::string text; // original config text, copied into datasets

    double frame_time(std::size_t i) const {
        return frames < 2 ? 0.0 : static_cast<double>(i) / static_cast<double>(frames - 1);
    }
    Camera camera_at(double t) const;
};

// Parses the flat key = value format; throws ConfigError on unknown keys,
// malformed object lines, or bound violations.
SceneSpec parse_scene_spec(const std::string& text, const std::string& origin);
SceneSpec load_scene_spec(const std::string& path);

// The dataset camera at time t, orbited about the look-at point by yaw
// (about world up) and pitch degrees. Zero offsets return camera_at(t)
// exactly so offset-free renders match the training views bitwise.
Camera orbit_camera(const SceneSpec& spec, double t, double yaw_deg, double pitch_deg);

// Blob attributes are sampled once from the spec seed; only object centers
// move with t. owner is -1 for the static background field, else the object
// index.
struct WorldBlobs {
    std::vector<Vec3> offsets;
    std::vector<double> log_scales;
    std::vector<double> rotations;
    std::vector<double> opacity_logits;
    std::vector<double> sh_coeffs;
    std::vector<Vec3> colors;
    std::vector<int> owner;
};

WorldBlobs build_world(const SceneSpec& spec);

struct WorldSnapshot {
    std::size_t count = 0;
    std::vector<double> positions, log_scales, rotations, opacity_logits, sh_coeffs;
    std::vector<Vec3> colors;
    std::vector<int> owner;
};

WorldSnapshot snapshot_at(const SceneSpec& spec, const WorldBlobs& blobs, double t);

// Brute-force reference renderer: every Gaussian at every pixel, exact depth
// order, extended-precision sums, no skip or early termination. Only the
// near-plane test excludes a Gaussian. When n_owners > 0 it also returns the
// per-owner compositing weight images (index 0 = background field, k+1 =
// object k).
struct OracleImages {
    Image rgb, depth, accum;
    std::vector<Image> owner_weight;
};

OracleImages oracle_render(const WorldSnapshot& snap, const Camera& cam, const double bg[3],
                           int n_owners = 0);

// Unit vectors with pairwise cosine < 0.5; row 0 is the background.
std::vector<std::vector<double>> make_codebook(std::size_t entries, std::size_t dim,
                                               std::uint64_t seed);
std::uint64_t codebook_seed(const SceneSpec& spec);

// Pixel labels: the owner whose compositing weight exceeds 0.5, mapped to
// 0 = background, k+1 = object k.
Image label_map(const OracleImages& oracle);

Image teacher_features(const SceneSpec& spec, const std::vector<std::vector<double>>& codebook,
                       const Image& labels, std::size_t frame);

// Writes spec.txt, frame_{i:04}.ppm, depth/feat/mask_{i:04}.raw, cameras.csv.
void generate_dataset(const SceneSpec& spec, const std::string& out_dir);

struct DatasetFrame {
    Camera cam;
    double t = 0.0;
    Image rgb, depth, feat, mask;
};

struct Dataset {
    SceneSpec spec;
    std::vector<DatasetFrame> frames;
    std::vector<std::vector<double>> codebook;
    std::vector<Vec3> init_points, init_colors;
    std::vector<std::size_t> train_idx, test_idx;
};

// split is "reconstruction" (train on all, no holdout) or "nvs" (every 10th
// frame held out).
Dataset load_dataset(const std::string& dir, const std::string& split);

} // namespace coda
