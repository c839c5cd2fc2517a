#include "coda/synthetic.hpp"
#include "coda/errors.hpp"
#include "coda/numeric.hpp"
#include "coda/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

namespace coda {

namespace {

Vec3 parse_vec3(const std::string& s, const std::string& what) {
    const std::vector<double> v = parse_double_list(s, what);
    if (v.size() != 3) throw ConfigError(what + ": expected 3 comma-separated values");
    return {v[0], v[1], v[2]};
}

void parse_triplet(const std::string& s, const std::string& what, double out[3]) {
    const Vec3 v = parse_vec3(s, what);
    out[0] = v.x;
    out[1] = v.y;
    out[2] = v.z;
}

ObjectSpec parse_object_line(const std::string& value, const std::string& origin) {
    ObjectSpec o;
    std::istringstream iss(value);
    std::string tok;
    std::set<std::string> seen;
    while (iss >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ": object token '" + tok + "' is not key=value");
        const std::string k = tok.substr(0, eq);
        const std::string v = tok.substr(eq + 1);
        const std::string what = origin + ": object " + k;
        if (!seen.insert(k).second)
            throw ConfigError(origin + ": duplicate object token '" + k + "'");
        if (k == "count")
            o.count = static_cast<std::size_t>(parse_long(v, what));
        else if (k == "color")
            parse_triplet(v, what, o.color);
        else if (k == "extent")
            parse_triplet(v, what, o.extent);
        else if (k == "c0")
            parse_triplet(v, what, o.c0);
        else if (k == "c1")
            parse_triplet(v, what, o.c1);
        else if (k == "c2")
            parse_triplet(v, what, o.c2);
        else if (k == "t_in")
            o.t_in = parse_double(v, what);
        else if (k == "t_out")
            o.t_out = parse_double(v, what);
        else if (k == "size")
            o.size = parse_double(v, what);
        else
            throw ConfigError(origin + ": unknown object token '" + k + "'");
    }
    return o;
}

Vec3 object_center(const ObjectSpec& o, double t) {
    return {o.c0[0] + o.c1[0] * t + o.c2[0] * t * t,
            o.c0[1] + o.c1[1] * t + o.c2[1] * t * t,
            o.c0[2] + o.c1[2] * t + o.c2[2] * t * t};
}

void validate_scene_spec(const SceneSpec& s, const std::string& origin) {
    if (s.frames < 2) throw ConfigError(origin + ": frames must be >= 2");
    if (s.width < 1 || s.height < 1) throw ConfigError(origin + ": image size must be positive");
    if (s.feature_dim < 1) throw ConfigError(origin + ": feature_dim must be >= 1");
    if (!(s.fov_deg > 0.0 && s.fov_deg < 180.0))
        throw ConfigError(origin + ": fov_deg must be in (0, 180)");
    if (!(s.near > 0.0 && s.near < s.far))
        throw ConfigError(origin + ": need 0 < near < far");
    if (s.teacher_noise < 0.0) throw ConfigError(origin + ": teacher_noise must be >= 0");
    for (int a = 0; a < 3; ++a) {
        if (!(s.bounds_lo[a] < s.bounds_hi[a]))
            throw ConfigError(origin + ": bounds must satisfy lo < hi");
        if (s.background_count > 0 &&
            (s.background_box_lo[a] < s.bounds_lo[a] ||
             s.background_box_hi[a] > s.bounds_hi[a] ||
             s.background_box_lo[a] > s.background_box_hi[a]))
            throw ConfigError(origin + ": background_box must lie inside bounds");
    }
    if (s.background_count > 0 && s.background_size <= 0.0)
        throw ConfigError(origin + ": background_size must be positive");
    for (std::size_t k = 0; k < s.objects.size(); ++k) {
        const ObjectSpec& o = s.objects[k];
        const std::string oid = origin + ": object " + std::to_string(k);
        if (o.count < 1) throw ConfigError(oid + ": count must be >= 1");
        if (o.size <= 0.0) throw ConfigError(oid + ": size must be positive");
        if (o.t_in > o.t_out) throw ConfigError(oid + ": t_in must be <= t_out");
        const double t0 = std::max(0.0, o.t_in), t1 = std::min(1.0, o.t_out);
        if (t0 > t1) continue; // never visible
        for (int i = 0; i <= 32; ++i) {
            const double t = t0 + (t1 - t0) * i / 32.0;
            const Vec3 c = object_center(o, t);
            const double cv[3] = {c.x, c.y, c.z};
            for (int a = 0; a < 3; ++a)
                if (cv[a] - o.extent[a] < s.bounds_lo[a] ||
                    cv[a] + o.extent[a] > s.bounds_hi[a])
                    throw ConfigError(oid + ": trajectory leaves bounds at t = " +
                                      format_double(t));
        }
    }
}

std::string frame_name(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", stem, i, ext);
    return buf;
}

} // namespace

Camera SceneSpec::camera_at(double t) const {
    const Vec3 eye{camera_eye_start.x + (camera_eye_end.x - camera_eye_start.x) * t,
                   camera_eye_start.y + (camera_eye_end.y - camera_eye_start.y) * t,
                   camera_eye_start.z + (camera_eye_end.z - camera_eye_start.z) * t};
    return look_at(eye, camera_lookat, width, height, fov_deg, near, far);
}

Camera orbit_camera(const SceneSpec& spec, double t, double yaw_deg, double pitch_deg) {
    if (yaw_deg == 0.0 && pitch_deg == 0.0) return spec.camera_at(t);
    const Vec3 eye =
        spec.camera_eye_start + (spec.camera_eye_end - spec.camera_eye_start) * t;
    const Vec3 pivot = spec.camera_lookat;
    Vec3 v = eye - pivot;

    const double yaw = yaw_deg * M_PI / 180.0;
    v = Vec3{v.x * std::cos(yaw) - v.y * std::sin(yaw),
             v.x * std::sin(yaw) + v.y * std::cos(yaw), v.z};

    const double pitch = pitch_deg * M_PI / 180.0;
    Vec3 axis = v.cross(Vec3{0.0, 0.0, 1.0});
    const double an = axis.norm();
    if (pitch != 0.0 && an > 1e-9) {
        axis = axis * (1.0 / an);
        const double c = std::cos(pitch), s = std::sin(pitch);
        v = v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c));
    }
    return look_at(pivot + v, pivot, spec.width, spec.height, spec.fov_deg, spec.near,
                   spec.far);
}

SceneSpec parse_scene_spec(const std::string& text, const std::string& origin) {
    const KeyValueFile kv = parse_kv_text(text, origin);
    SceneSpec s;
    s.text = text;
    for (const auto& [key, value] : kv.entries) {
        const std::string what = origin + ": " + key;
        if (key == "seed")
            s.seed = static_cast<std::uint64_t>(parse_long(value, what));
        else if (key == "frames")
            s.frames = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "width")
            s.width = static_cast<int>(parse_long(value, what));
        else if (key == "height")
            s.height = static_cast<int>(parse_long(value, what));
        else if (key == "feature_dim")
            s.feature_dim = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "fov_deg")
            s.fov_deg = parse_double(value, what);
        else if (key == "near")
            s.near = parse_double(value, what);
        else if (key == "far")
            s.far = parse_double(value, what);
        else if (key == "background_color")
            parse_triplet(value, what, s.background_color);
        else if (key == "bounds_lo")
            parse_triplet(value, what, s.bounds_lo);
        else if (key == "bounds_hi")
            parse_triplet(value, what, s.bounds_hi);
        else if (key == "background_count")
            s.background_count = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "background_box_lo")
            parse_triplet(value, what, s.background_box_lo);
        else if (key == "background_box_hi")
            parse_triplet(value, what, s.background_box_hi);
        else if (key == "background_size")
            s.background_size = parse_double(value, what);
        else if (key == "camera_eye_start")
            s.camera_eye_start = parse_vec3(value, what);
        else if (key == "camera_eye_end")
            s.camera_eye_end = parse_vec3(value, what);
        else if (key == "camera_lookat")
            s.camera_lookat = parse_vec3(value, what);
        else if (key == "teacher_noise")
            s.teacher_noise = parse_double(value, what);
        else if (key == "object")
            s.objects.push_back(parse_object_line(value, origin));
        else
            throw ConfigError(origin + ": unknown key '" + key + "'");
    }
    validate_scene_spec(s, origin);
    return s;
}

SceneSpec load_scene_spec(const std::string& path) {
    return parse_scene_spec(read_text_file(path), path);
}

WorldBlobs build_world(const SceneSpec& spec) {
    WorldBlobs w;
    std::mt19937_64 rng(spec.seed);
    const double opacity_logit = std::log(0.85 / 0.15);

    auto push_blob = [&](const Vec3& offset, const Vec3& base_color, double size, int owner) {
        w.offsets.push_back(offset);
        for (int a = 0; a < 3; ++a)
            w.log_scales.push_back(std::log(size) + uniform(rng, -0.25, 0.25));
        double q[4], n2 = 0.0;
        do {
            n2 = 0.0;
            for (double& c : q) {
                c = uniform(rng, -1.0, 1.0);
                n2 += c * c;
            }
        } while (n2 < 1e-6);
        const double inv = 1.0 / std::sqrt(n2);
        for (double c : q) w.rotations.push_back(c * inv);
        w.opacity_logits.push_back(opacity_logit);
        Vec3 col{std::clamp(base_color.x + uniform(rng, -0.08, 0.08), 0.02, 0.98),
                 std::clamp(base_color.y + uniform(rng, -0.08, 0.08), 0.02, 0.98),
                 std::clamp(base_color.z + uniform(rng, -0.08, 0.08), 0.02, 0.98)};
        w.colors.push_back(col);
        double sh[kShTotal] = {0};
        sh[0 * kShCoeffs] = (col.x - 0.5) / kShC0;
        sh[1 * kShCoeffs] = (col.y - 0.5) / kShC0;
        sh[2 * kShCoeffs] = (col.z - 0.5) / kShC0;
        w.sh_coeffs.insert(w.sh_coeffs.end(), sh, sh + kShTotal);
        w.owner.push_back(owner);
    };

    for (std::size_t i = 0; i < spec.background_count; ++i) {
        Vec3 pos{uniform(rng, spec.background_box_lo[0], spec.background_box_hi[0]),
                 uniform(rng, spec.background_box_lo[1], spec.background_box_hi[1]),
                 uniform(rng, spec.background_box_lo[2], spec.background_box_hi[2])};
        Vec3 col{uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
        push_blob(pos, col, spec.background_size, -1);
    }
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        const ObjectSpec& o = spec.objects[k];
        for (std::size_t i = 0; i < o.count; ++i) {
            Vec3 off{uniform(rng, -o.extent[0], o.extent[0]),
                     uniform(rng, -o.extent[1], o.extent[1]),
                     uniform(rng, -o.extent[2], o.extent[2])};
            push_blob(off, Vec3{o.color[0], o.color[1], o.color[2]}, o.size,
                      static_cast<int>(k));
        }
    }
    return w;
}

WorldSnapshot snapshot_at(const SceneSpec& spec, const WorldBlobs& blobs, double t) {
    WorldSnapshot s;
    const std::size_t n = blobs.owner.size();
    for (std::size_t i = 0; i < n; ++i) {
        const int owner = blobs.owner[i];
        Vec3 pos = blobs.offsets[i];
        if (owner >= 0) {
            const ObjectSpec& o = spec.objects[static_cast<std::size_t>(owner)];
            if (t < o.t_in || t > o.t_out) continue;
            const Vec3 c = object_center(o, t);
            pos = {c.x + pos.x, c.y + pos.y, c.z + pos.z};
        }
        s.positions.insert(s.positions.end(), {pos.x, pos.y, pos.z});
        s.log_scales.insert(s.log_scales.end(), blobs.log_scales.begin() + i * 3,
                            blobs.log_scales.begin() + i * 3 + 3);
        s.rotations.insert(s.rotations.end(), blobs.rotations.begin() + i * 4,
                           blobs.rotations.begin() + i * 4 + 4);
        s.opacity_logits.push_back(blobs.opacity_logits[i]);
        s.sh_coeffs.insert(s.sh_coeffs.end(), blobs.sh_coeffs.begin() + i * kShTotal,
                           blobs.sh_coeffs.begin() + i * kShTotal + kShTotal);
        s.colors.push_back(blobs.colors[i]);
        s.owner.push_back(owner);
        ++s.count;
    }
    return s;
}

namespace {

// The reference renderer keeps its own Gaussian math so the main rasterizer
// is checked against an independent derivation, not a copy.
struct OracleSplat {
    std::size_t idx = 0;
    long double z = 0.0L;
    long double mean[2] = {0.0L, 0.0L};
    long double conic[3] = {0.0L, 0.0L, 0.0L};
    long double alpha = 0.0L;
    long double color[3] = {0.0L, 0.0L, 0.0L};
};

void oracle_sh_color(const double* coeffs, const long double d[3], long double rgb[3]) {
    static const long double pi = std::acos(-1.0L);
    static const long double c0 = 0.5L * std::sqrt(1.0L / pi);
    static const long double c1 = std::sqrt(3.0L / (4.0L * pi));
    static const long double c2[5] = {
        0.5L * std::sqrt(15.0L / pi), -0.5L * std::sqrt(15.0L / pi),
        0.25L * std::sqrt(5.0L / pi), -0.5L * std::sqrt(15.0L / pi),
        0.25L * std::sqrt(15.0L / pi)};
    static const long double c3[7] = {
        -0.25L * std::sqrt(35.0L / (2.0L * pi)), 0.5L * std::sqrt(105.0L / pi),
        -0.25L * std::sqrt(21.0L / (2.0L * pi)), 0.25L * std::sqrt(7.0L / pi),
        -0.25L * std::sqrt(21.0L / (2.0L * pi)), 0.25L * std::sqrt(105.0L / pi),
        -0.25L * std::sqrt(35.0L / (2.0L * pi))};
    const long double x = d[0], y = d[1], z = d[2];
    const long double xx = x * x, yy = y * y, zz = z * z;
    long double b[16];
    b[0] = c0;
    b[1] = -c1 * y;
    b[2] = c1 * z;
    b[3] = -c1 * x;
    b[4] = c2[0] * x * y;
    b[5] = c2[1] * y * z;
    b[6] = c2[2] * (2.0L * zz - xx - yy);
    b[7] = c2[3] * x * z;
    b[8] = c2[4] * (xx - yy);
    b[9] = c3[0] * y * (3.0L * xx - yy);
    b[10] = c3[1] * x * y * z;
    b[11] = c3[2] * y * (4.0L * zz - xx - yy);
    b[12] = c3[3] * z * (2.0L * zz - 3.0L * xx - 3.0L * yy);
    b[13] = c3[4] * x * (4.0L * zz - xx - yy);
    b[14] = c3[5] * z * (xx - yy);
    b[15] = c3[6] * x * (xx - 3.0L * yy);
    for (int ch = 0; ch < 3; ++ch) {
        long double v = 0.5L;
        for (int j = 0; j < 16; ++j) v += static_cast<long double>(coeffs[ch * 16 + j]) * b[j];
        rgb[ch] = std::clamp(v, 0.0L, 1.0L);
    }
}

} // namespace

OracleImages oracle_render(const WorldSnapshot& snap, const Camera& cam, const double bg[3],
                           int n_owners) {
    std::vector<OracleSplat> splats;
    splats.reserve(snap.count);
    for (std::size_t i = 0; i < snap.count; ++i) {
        const long double px = snap.positions[i * 3], py = snap.positions[i * 3 + 1],
                          pz = snap.positions[i * 3 + 2];
        const long double x = cam.R.m[0] * px + cam.R.m[1] * py + cam.R.m[2] * pz + cam.t.x;
        const long double y = cam.R.m[3] * px + cam.R.m[4] * py + cam.R.m[5] * pz + cam.t.y;
        const long double z = cam.R.m[6] * px + cam.R.m[7] * py + cam.R.m[8] * pz + cam.t.z;
        if (z <= cam.near) continue;

        OracleSplat sp;
        sp.idx = i;
        sp.z = z;
        sp.mean[0] = cam.fx * x / z + cam.cx;
        sp.mean[1] = cam.fy * y / z + cam.cy;

        // Rotation from the (normalized) quaternion.
        long double qw = snap.rotations[i * 4], qx = snap.rotations[i * 4 + 1],
                    qy = snap.rotations[i * 4 + 2], qz = snap.rotations[i * 4 + 3];
        const long double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
        qw /= qn;
        qx /= qn;
        qy /= qn;
        qz /= qn;
        const long double R[9] = {
            1.0L - 2.0L * (qy * qy + qz * qz), 2.0L * (qx * qy - qw * qz),
            2.0L * (qx * qz + qw * qy),
            2.0L * (qx * qy + qw * qz),        1.0L - 2.0L * (qx * qx + qz * qz),
            2.0L * (qy * qz - qw * qx),
            2.0L * (qx * qz - qw * qy),        2.0L * (qy * qz + qw * qx),
            1.0L - 2.0L * (qx * qx + qy * qy)};
        // World covariance as R diag(exp(2 ls)) R^T.
        const long double d0 = std::exp(2.0L * (long double)snap.log_scales[i * 3]);
        const long double d1 = std::exp(2.0L * (long double)snap.log_scales[i * 3 + 1]);
        const long double d2 = std::exp(2.0L * (long double)snap.log_scales[i * 3 + 2]);
        long double Sw[9];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                Sw[r * 3 + c] = R[r * 3 + 0] * d0 * R[c * 3 + 0] +
                                R[r * 3 + 1] * d1 * R[c * 3 + 1] +
                                R[r * 3 + 2] * d2 * R[c * 3 + 2];
        // Into the camera frame.
        long double RS[9];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                RS[r * 3 + c] = cam.R.m[r * 3 + 0] * Sw[0 * 3 + c] +
                                cam.R.m[r * 3 + 1] * Sw[1 * 3 + c] +
                                cam.R.m[r * 3 + 2] * Sw[2 * 3 + c];
        long double Sc[9];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                Sc[r * 3 + c] = RS[r * 3 + 0] * cam.R.m[c * 3 + 0] +
                                RS[r * 3 + 1] * cam.R.m[c * 3 + 1] +
                                RS[r * 3 + 2] * cam.R.m[c * 3 + 2];
        // Perspective Jacobian, then the low-pass floor.
        const long double j00 = cam.fx / z, j02 = -cam.fx * x / (z * z);
        const long double j11 = cam.fy / z, j12 = -cam.fy * y / (z * z);
        const long double a =
            j00 * (Sc[0] * j00 + Sc[2] * j02) + j02 * (Sc[6] * j00 + Sc[8] * j02) + 0.3L;
        const long double b =
            j00 * (Sc[1] * j11 + Sc[2] * j12) + j02 * (Sc[7] * j11 + Sc[8] * j12);
        const long double c =
            j11 * (Sc[4] * j11 + Sc[5] * j12) + j12 * (Sc[7] * j11 + Sc[8] * j12) + 0.3L;
        const long double det = a * c - b * b;
        if (det <= 0.0L) continue;
        sp.conic[0] = c / det;
        sp.conic[1] = -b / det;
        sp.conic[2] = a / det;

        sp.alpha = 1.0L / (1.0L + std::exp(-(long double)snap.opacity_logits[i]));
        const long double pn = std::sqrt(x * x + y * y + z * z);
        const long double dir[3] = {x / pn, y / pn, z / pn};
        oracle_sh_color(snap.sh_coeffs.data() + i * kShTotal, dir, sp.color);
        splats.push_back(sp);
    }
    std::sort(splats.begin(), splats.end(), [](const OracleSplat& a, const OracleSplat& b) {
        if (a.z != b.z) return a.z < b.z;
        return a.idx < b.idx;
    });

    OracleImages out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.depth = Image(cam.width, cam.height, 1);
    out.accum = Image(cam.width, cam.height, 1);
    for (int k = 0; k < n_owners; ++k) out.owner_weight.emplace_back(cam.width, cam.height, 1);

    std::vector<long double> owner_sum(static_cast<std::size_t>(std::max(n_owners, 0)));
    for (int iy = 0; iy < cam.height; ++iy)
        for (int ix = 0; ix < cam.width; ++ix) {
            long double T = 1.0L, cs[3] = {0, 0, 0}, zs = 0.0L, as = 0.0L;
            std::fill(owner_sum.begin(), owner_sum.end(), 0.0L);
            const long double px = ix + 0.5L, py = iy + 0.5L;
            for (const OracleSplat& sp : splats) {
                const long double dx = px - sp.mean[0], dy = py - sp.mean[1];
                const long double power = -0.5L * (sp.conic[0] * dx * dx +
                                                   2.0L * sp.conic[1] * dx * dy +
                                                   sp.conic[2] * dy * dy);
                const long double ap = std::min(0.99L, sp.alpha * std::exp(power));
                const long double w = T * ap;
                for (int ch = 0; ch < 3; ++ch) cs[ch] += w * sp.color[ch];
                zs += w * sp.z;
                as += w;
                if (n_owners > 0) {
                    const int slot = snap.owner[sp.idx] < 0 ? 0 : snap.owner[sp.idx] + 1;
                    if (slot < n_owners) owner_sum[slot] += w;
                }
                T *= 1.0L - ap;
            }
            for (int ch = 0; ch < 3; ++ch)
                out.rgb.at(iy, ix, ch) =
                    static_cast<double>(cs[ch] + (1.0L - as) * (long double)bg[ch]);
            out.depth.at(iy, ix, 0) = as > 0.5L ? static_cast<double>(zs / as) : 0.0;
            out.accum.at(iy, ix, 0) = static_cast<double>(as);
            for (int k = 0; k < n_owners; ++k)
                out.owner_weight[k].at(iy, ix, 0) = static_cast<double>(owner_sum[k]);
        }
    return out;
}

std::uint64_t codebook_seed(const SceneSpec& spec) { return spec.seed ^ 0xC0DEB00Cull; }

std::vector<std::vector<double>> make_codebook(std::size_t entries, std::size_t dim,
                                               std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> book;
    while (book.size() < entries) {
        std::vector<double> v(dim);
        double n2 = 0.0;
        for (double& c : v) {
            c = normal(rng);
            n2 += c * c;
        }
        if (n2 < 1e-12) continue;
        const double inv = 1.0 / std::sqrt(n2);
        for (double& c : v) c *= inv;
        bool ok = true;
        for (const auto& prev : book) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += prev[i] * v[i];
            if (dot >= 0.5) {
                ok = false;
                break;
            }
        }
        if (ok) book.push_back(std::move(v));
    }
    return book;
}

Image label_map(const OracleImages& oracle) {
    const int n_owners = static_cast<int>(oracle.owner_weight.size());
    Image labels(oracle.rgb.width, oracle.rgb.height, 1);
    for (int iy = 0; iy < labels.height; ++iy)
        for (int ix = 0; ix < labels.width; ++ix) {
            int label = 0;
            for (int k = 1; k < n_owners; ++k)
                if (oracle.owner_weight[k].at(iy, ix, 0) > 0.5) {
                    label = k;
                    break;
                }
            labels.at(iy, ix, 0) = label;
        }
    return labels;
}

Image teacher_features(const SceneSpec& spec, const std::vector<std::vector<double>>& codebook,
                       const Image& labels, std::size_t frame) {
    const int F = static_cast<int>(spec.feature_dim);
    Image feat(labels.width, labels.height, F);
    std::mt19937_64 rng(spec.seed ^ (0xFEA70000ull + frame));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int iy = 0; iy < labels.height; ++iy)
        for (int ix = 0; ix < labels.width; ++ix) {
            const auto& row = codebook[static_cast<std::size_t>(labels.at(iy, ix, 0))];
            if (spec.teacher_noise == 0.0) {
                for (int c = 0; c < F; ++c) feat.at(iy, ix, c) = row[c];
                continue;
            }
            double n2 = 0.0;
            std::vector<double> v(F);
            for (int c = 0; c < F; ++c) {
                v[c] = row[c] + spec.teacher_noise * normal(rng);
                n2 += v[c] * v[c];
            }
            const double inv = n2 < 1e-12 ? 0.0 : 1.0 / std::sqrt(n2);
            for (int c = 0; c < F; ++c) feat.at(iy, ix, c) = v[c] * inv;
        }
    return feat;
}

void generate_dataset(const SceneSpec& spec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/spec.txt", spec.text);

    const WorldBlobs blobs = build_world(spec);
    const auto codebook =
        make_codebook(spec.objects.size() + 1, spec.feature_dim, codebook_seed(spec));
    const int n_owners = static_cast<int>(spec.objects.size()) + 1;

    std::string csv = "frame,ex,ey,ez,lx,ly,lz,fov_deg,near,far,width,height,t\n";
    for (std::size_t i = 0; i < spec.frames; ++i) {
        const double t = spec.frame_time(i);
        const Camera cam = spec.camera_at(t);
        const WorldSnapshot snap = snapshot_at(spec, blobs, t);
        const OracleImages oracle = oracle_render(snap, cam, spec.background_color, n_owners);
        const Image labels = label_map(oracle);
        const Image feat = teacher_features(spec, codebook, labels, i);

        write_ppm(out_dir + "/" + frame_name("frame", i, "ppm"), oracle.rgb);
        write_raw_image(out_dir + "/" + frame_name("depth", i, "raw"), oracle.depth);
        write_raw_image(out_dir + "/" + frame_name("feat", i, "raw"), feat);
        write_raw_image(out_dir + "/" + frame_name("mask", i, "raw"), labels);

        const Vec3 eye{spec.camera_eye_start.x +
                           (spec.camera_eye_end.x - spec.camera_eye_start.x) * t,
                       spec.camera_eye_start.y +
                           (spec.camera_eye_end.y - spec.camera_eye_start.y) * t,
                       spec.camera_eye_start.z +
                           (spec.camera_eye_end.z - spec.camera_eye_start.z) * t};
        csv += std::to_string(i) + "," + format_double(eye.x) + "," + format_double(eye.y) +
               "," + format_double(eye.z) + "," + format_double(spec.camera_lookat.x) + "," +
               format_double(spec.camera_lookat.y) + "," + format_double(spec.camera_lookat.z) +
               "," + format_double(spec.fov_deg) + "," + format_double(spec.near) + "," +
               format_double(spec.far) + "," + std::to_string(spec.width) + "," +
               std::to_string(spec.height) + "," + format_double(t) + "\n";
    }
    write_text_file(out_dir + "/cameras.csv", csv);
}

Dataset load_dataset(const std::string& dir, const std::string& split) {
    if (split != "reconstruction" && split != "nvs")
        throw ConfigError("split must be 'reconstruction' or 'nvs', got '" + split + "'");
    Dataset ds;
    ds.spec = load_scene_spec(dir + "/spec.txt");
    ds.codebook = make_codebook(ds.spec.objects.size() + 1, ds.spec.feature_dim,
                                codebook_seed(ds.spec));

    const WorldBlobs blobs = build_world(ds.spec);
    const WorldSnapshot snap0 = snapshot_at(ds.spec, blobs, 0.0);
    for (std::size_t i = 0; i < snap0.count; ++i) {
        ds.init_points.push_back(Vec3{snap0.positions[i * 3], snap0.positions[i * 3 + 1],
                                      snap0.positions[i * 3 + 2]});
        ds.init_colors.push_back(snap0.colors[i]);
    }

    const std::string csv = read_text_file(dir + "/cameras.csv");
    std::istringstream iss(csv);
    std::string line;
    std::getline(iss, line); // header
    while (std::getline(iss, line)) {
        if (line.empty()) continue;
        const std::vector<double> v = parse_double_list(line, dir + "/cameras.csv row");
        if (v.size() != 13) throw FormatError(dir + "/cameras.csv: expected 13 columns");
        DatasetFrame f;
        const std::size_t i = static_cast<std::size_t>(v[0]);
        f.cam = look_at(Vec3{v[1], v[2], v[3]}, Vec3{v[4], v[5], v[6]},
                        static_cast<int>(v[10]), static_cast<int>(v[11]), v[7], v[8], v[9]);
        f.t = v[12];
        f.rgb = read_ppm(dir + "/" + frame_name("frame", i, "ppm"));
        f.depth = read_raw_image(dir + "/" + frame_name("depth", i, "raw"));
        f.feat = read_raw_image(dir + "/" + frame_name("feat", i, "raw"));
        f.mask = read_raw_image(dir + "/" + frame_name("mask", i, "raw"));
        ds.frames.push_back(std::move(f));
    }
    if (ds.frames.size() != ds.spec.frames)
        throw FormatError(dir + ": cameras.csv rows do not match spec frame count");

    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        if (split == "nvs" && i % 10 == 0)
            ds.test_idx.push_back(i);
        else
            ds.train_idx.push_back(i);
    }
    return ds;
}

} // namespace coda
