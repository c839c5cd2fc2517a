#include "coda/scene.hpp"
#include "coda/errors.hpp"
#include "coda/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coda {

GaussianScene::GaussianScene(std::size_t n, std::size_t f)
    : count(n),
      feature_dim(f),
      positions("scene/positions", {n, 3}),
      log_scales("scene/log_scales", {n, 3}),
      rotations("scene/rotations", {n, 4}),
      opacity_logits("scene/opacity_logits", {n, 1}),
      sh_coeffs("scene/sh_coeffs", {n, kShTotal}),
      context_features("scene/context_features", {n, f}) {
    for (std::size_t i = 0; i < n; ++i) rotations.at(i, 0) = 1.0;
}

std::vector<ParamBlock*> GaussianScene::blocks() {
    return {&positions, &log_scales, &rotations, &opacity_logits, &sh_coeffs, &context_features};
}

std::vector<const ParamBlock*> GaussianScene::blocks() const {
    return {&positions, &log_scales, &rotations, &opacity_logits, &sh_coeffs, &context_features};
}

void GaussianScene::compact(const std::vector<bool>& keep) {
    if (keep.size() != count) throw ShapeError("compact mask size mismatch");
    GaussianScene out(static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)),
                      feature_dim);
    std::size_t w = 0;
    auto src = blocks();
    auto dst = out.blocks();
    for (std::size_t i = 0; i < count; ++i) {
        if (!keep[i]) continue;
        for (std::size_t b = 0; b < src.size(); ++b) {
            std::size_t c = src[b]->cols();
            for (std::size_t j = 0; j < c; ++j) dst[b]->at(w, j) = src[b]->at(i, j);
        }
        ++w;
    }
    *this = std::move(out);
}

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

} // namespace

void sh_basis(const double d[3], double b[16]) {
    const double x = d[0], y = d[1], z = d[2];
    const double xx = x * x, yy = y * y, zz = z * z;
    b[0] = kShC0;
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    b[4] = kC2[0] * x * y;
    b[5] = kC2[1] * y * z;
    b[6] = kC2[2] * (2.0 * zz - xx - yy);
    b[7] = kC2[3] * x * z;
    b[8] = kC2[4] * (xx - yy);
    b[9] = kC3[0] * y * (3.0 * xx - yy);
    b[10] = kC3[1] * x * y * z;
    b[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    b[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    b[14] = kC3[5] * z * (xx - yy);
    b[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_dir_grad(const double d[3], double g[16][3]) {
    const double x = d[0], y = d[1], z = d[2];
    const double xx = x * x, yy = y * y, zz = z * z;
    for (int j = 0; j < 16; ++j) g[j][0] = g[j][1] = g[j][2] = 0.0;
    g[1][1] = -kC1;
    g[2][2] = kC1;
    g[3][0] = -kC1;
    g[4][0] = kC2[0] * y;          g[4][1] = kC2[0] * x;
    g[5][1] = kC2[1] * z;          g[5][2] = kC2[1] * y;
    g[6][0] = kC2[2] * -2.0 * x;   g[6][1] = kC2[2] * -2.0 * y;  g[6][2] = kC2[2] * 4.0 * z;
    g[7][0] = kC2[3] * z;          g[7][2] = kC2[3] * x;
    g[8][0] = kC2[4] * 2.0 * x;    g[8][1] = kC2[4] * -2.0 * y;
    g[9][0] = kC3[0] * 6.0 * x * y;
    g[9][1] = kC3[0] * (3.0 * xx - 3.0 * yy);
    g[10][0] = kC3[1] * y * z;     g[10][1] = kC3[1] * x * z;    g[10][2] = kC3[1] * x * y;
    g[11][0] = kC3[2] * -2.0 * x * y;
    g[11][1] = kC3[2] * (4.0 * zz - xx - 3.0 * yy);
    g[11][2] = kC3[2] * 8.0 * y * z;
    g[12][0] = kC3[3] * -6.0 * x * z;
    g[12][1] = kC3[3] * -6.0 * y * z;
    g[12][2] = kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
    g[13][0] = kC3[4] * (4.0 * zz - 3.0 * xx - yy);
    g[13][1] = kC3[4] * -2.0 * x * y;
    g[13][2] = kC3[4] * 8.0 * x * z;
    g[14][0] = kC3[5] * 2.0 * x * z;
    g[14][1] = kC3[5] * -2.0 * y * z;
    g[14][2] = kC3[5] * (xx - yy);
    g[15][0] = kC3[6] * (3.0 * xx - 3.0 * yy);
    g[15][1] = kC3[6] * -6.0 * x * y;
}

void evaluate_sh(const double coeffs[48], const double dir[3], double rgb[3]) {
    double b[16];
    sh_basis(dir, b);
    for (int ch = 0; ch < 3; ++ch) {
        double v = 0.5;
        for (int j = 0; j < 16; ++j) v += coeffs[ch * 16 + j] * b[j];
        rgb[ch] = std::clamp(v, 0.0, 1.0);
    }
}

void evaluate_sh_backward(const double coeffs[48], const double dir[3],
                          const double drgb[3], double dcoeffs[48], double ddir[3]) {
    double b[16];
    sh_basis(dir, b);
    double g[16][3];
    sh_basis_dir_grad(dir, g);
    for (int ch = 0; ch < 3; ++ch) {
        double v = 0.5;
        for (int j = 0; j < 16; ++j) v += coeffs[ch * 16 + j] * b[j];
        if (v <= 0.0 || v >= 1.0) continue; // clamped: no gradient
        const double dch = drgb[ch];
        if (dch == 0.0) continue;
        for (int j = 0; j < 16; ++j) {
            dcoeffs[ch * 16 + j] += dch * b[j];
            const double c = coeffs[ch * 16 + j];
            ddir[0] += dch * c * g[j][0];
            ddir[1] += dch * c * g[j][1];
            ddir[2] += dch * c * g[j][2];
        }
    }
}

GaussianScene init_from_points(const std::vector<Vec3>& points,
                               const std::vector<Vec3>& colors,
                               std::size_t feature_dim, std::uint64_t seed) {
    const std::size_t n = points.size();
    if (n == 0) throw ConfigError("cannot initialize an empty scene");
    if (colors.size() != n) throw ShapeError("points/colors count mismatch");
    GaussianScene scene(n, feature_dim);
    const double opacity_logit = std::log(0.1 / 0.9);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t k = std::min<std::size_t>(3, n - 1);
    std::vector<double> dists;
    for (std::size_t i = 0; i < n; ++i) {
        scene.positions.at(i, 0) = points[i].x;
        scene.positions.at(i, 1) = points[i].y;
        scene.positions.at(i, 2) = points[i].z;

        double log_s;
        if (k == 0) {
            log_s = std::log(0.01);
        } else {
            dists.clear();
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) dists.push_back((points[j] - points[i]).norm());
            std::partial_sort(dists.begin(), dists.begin() + static_cast<long>(k), dists.end());
            double mean = 0.0;
            for (std::size_t j = 0; j < k; ++j) mean += dists[j];
            mean /= static_cast<double>(k);
            log_s = std::log(std::max(mean, 1e-6));
        }
        for (int a = 0; a < 3; ++a) scene.log_scales.at(i, a) = log_s;

        scene.opacity_logits.at(i, 0) = opacity_logit;
        const double c[3] = {colors[i].x, colors[i].y, colors[i].z};
        for (int ch = 0; ch < 3; ++ch)
            scene.sh_coeffs.at(i, static_cast<std::size_t>(ch) * 16) = (c[ch] - 0.5) / kShC0;

        double norm2 = 0.0;
        std::vector<double> f(feature_dim);
        do {
            norm2 = 0.0;
            for (std::size_t a = 0; a < feature_dim; ++a) {
                f[a] = gauss(rng);
                norm2 += f[a] * f[a];
            }
        } while (feature_dim > 0 && norm2 < 1e-12);
        const double inv = feature_dim > 0 ? 1.0 / std::sqrt(norm2) : 0.0;
        for (std::size_t a = 0; a < feature_dim; ++a)
            scene.context_features.at(i, a) = f[a] * inv;
    }
    return scene;
}

namespace {

void append_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
}

void append_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
}

void append_f64s(std::string& buf, const std::vector<double>& v) {
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

} // namespace

void save_scene(const GaussianScene& scene, std::ostream& os) {
    std::string payload;
    append_u64(payload, scene.count);
    append_u64(payload, scene.feature_dim);
    for (const ParamBlock* b : scene.blocks()) append_f64s(payload, b->data);
    os.write("C4DG", 4);
    write_u32(os, 1);
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    write_u32(os, crc32(payload.data(), payload.size()));
}

GaussianScene load_scene(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated scene file at offset 0");
    if (std::memcmp(magic, "C4DG", 4) != 0)
        throw FormatError("bad magic at offset 0 (expected C4DG)");
    std::uint32_t version = read_u32(is);
    if (version != 1) throw FormatError("unsupported scene version " + std::to_string(version));
    std::uint64_t n = read_u64(is);
    std::uint64_t f = read_u64(is);
    if (n > (1ull << 32) || f > (1ull << 20))
        throw FormatError("implausible scene header counts");
    GaussianScene scene(n, f);
    for (ParamBlock* b : scene.blocks()) read_f64_array(is, b->data.data(), b->size());

    std::string payload;
    append_u64(payload, n);
    append_u64(payload, f);
    for (const ParamBlock* b : scene.blocks())
        payload.append(reinterpret_cast<const char*>(b->data.data()),
                       b->size() * sizeof(double));
    std::uint32_t want = crc32(payload.data(), payload.size());
    std::uint32_t got = read_u32(is);
    if (want != got) throw FormatError("scene checksum mismatch");
    return scene;
}

void save_scene_file(const GaussianScene& scene, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    save_scene(scene, os);
    if (!os) throw FormatError("short write: " + path);
}

GaussianScene load_scene_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    return load_scene(is);
}

} // namespace coda
