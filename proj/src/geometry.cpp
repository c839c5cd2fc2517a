#include "coda/geometry.hpp"
#include "coda/errors.hpp"

namespace coda {

Quat quat_normalize(const Quat& q) {
    double n = q.norm();
    if (n <= 0.0 || !std::isfinite(n)) throw NumericError("invalid rotation: zero quaternion");
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

void quat_normalize_backward(const Quat& q_raw, const double dqn[4], double dq[4]) {
    double n = q_raw.norm();
    double qn[4] = {q_raw.w / n, q_raw.x / n, q_raw.y / n, q_raw.z / n};
    double dot = qn[0] * dqn[0] + qn[1] * dqn[1] + qn[2] * dqn[2] + qn[3] * dqn[3];
    for (int i = 0; i < 4; ++i) dq[i] += (dqn[i] - qn[i] * dot) / n;
}

Mat3 quat_to_mat(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 R;
    R.m[0] = 1 - 2 * (y * y + z * z);
    R.m[1] = 2 * (x * y - w * z);
    R.m[2] = 2 * (x * z + w * y);
    R.m[3] = 2 * (x * y + w * z);
    R.m[4] = 1 - 2 * (x * x + z * z);
    R.m[5] = 2 * (y * z - w * x);
    R.m[6] = 2 * (x * z - w * y);
    R.m[7] = 2 * (y * z + w * x);
    R.m[8] = 1 - 2 * (x * x + y * y);
    return R;
}

void quat_to_mat_backward(const Quat& q, const Mat3& dR, double dqn[4]) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    // dR/dw, dR/dx, dR/dy, dR/dz as flat 3x3 blocks.
    const double dw[9] = {0, -z, y, z, 0, -x, -y, x, 0};
    const double dx_[9] = {0, y, z, y, -2 * x, -w, z, w, -2 * x};
    const double dy_[9] = {-2 * y, x, w, x, 0, z, -w, z, -2 * y};
    const double dz_[9] = {-2 * z, -w, x, w, -2 * z, y, x, y, 0};
    for (int i = 0; i < 9; ++i) {
        dqn[0] += 2.0 * dR.m[i] * dw[i];
        dqn[1] += 2.0 * dR.m[i] * dx_[i];
        dqn[2] += 2.0 * dR.m[i] * dy_[i];
        dqn[3] += 2.0 * dR.m[i] * dz_[i];
    }
}

Mat3 build_covariance(const double log_scale[3], const Quat& q_raw) {
    Quat qn = quat_normalize(q_raw);
    Mat3 R = quat_to_mat(qn);
    double s[3] = {std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])};
    // M = R diag(s); Sigma = M M^T.
    Mat3 M;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M.m[i * 3 + j] = R.m[i * 3 + j] * s[j];
    Mat3 Sigma;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += M.m[i * 3 + k] * M.m[j * 3 + k];
            Sigma.m[i * 3 + j] = acc;
        }
    return Sigma;
}

void build_covariance_backward(const double log_scale[3], const Quat& q_raw,
                               const Mat3& dSigma, double dlog_scale[3], double dq[4]) {
    Quat qn = quat_normalize(q_raw);
    Mat3 R = quat_to_mat(qn);
    double s[3] = {std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])};
    Mat3 M;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M.m[i * 3 + j] = R.m[i * 3 + j] * s[j];
    // Sigma = M M^T: dM = (dSigma + dSigma^T) M.
    Mat3 dM;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k)
                acc += (dSigma.m[i * 3 + k] + dSigma.m[k * 3 + i]) * M.m[k * 3 + j];
            dM.m[i * 3 + j] = acc;
        }
    // M = R diag(s): dR_ij = dM_ij * s_j; ds_j = sum_i dM_ij R_ij.
    Mat3 dR;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            dR.m[i * 3 + j] = dM.m[i * 3 + j] * s[j];
            // d/dlog_s = d/ds * s
            dlog_scale[j] += dM.m[i * 3 + j] * R.m[i * 3 + j] * s[j];
        }
    double dqn[4] = {0, 0, 0, 0};
    quat_to_mat_backward(qn, dR, dqn);
    quat_normalize_backward(q_raw, dqn, dq);
}

Camera look_at(const Vec3& eye, const Vec3& target, int width, int height,
               double fov_deg, double near, double far) {
    if (width <= 0 || height <= 0) throw ConfigError("camera needs positive image size");
    if (!(0.0 < near && near < far)) throw ConfigError("camera needs 0 < near < far");
    Vec3 f = target - eye;
    double fn = f.norm();
    if (fn < 1e-12) throw ConfigError("camera eye and target coincide");
    f = f * (1.0 / fn);
    Vec3 up{0.0, 0.0, 1.0};
    Vec3 r = f.cross(up);
    if (r.norm() < 1e-8) {
        up = Vec3{0.0, 1.0, 0.0};
        r = f.cross(up);
    }
    r = r * (1.0 / r.norm());
    Vec3 d = f.cross(r); // camera "down", unit by construction

    Camera cam;
    cam.width = width;
    cam.height = height;
    double half = 0.5 * fov_deg * M_PI / 180.0;
    cam.fx = 0.5 * static_cast<double>(width) / std::tan(half);
    cam.fy = cam.fx;
    cam.cx = 0.5 * static_cast<double>(width);
    cam.cy = 0.5 * static_cast<double>(height);
    cam.R.m[0] = r.x; cam.R.m[1] = r.y; cam.R.m[2] = r.z;
    cam.R.m[3] = d.x; cam.R.m[4] = d.y; cam.R.m[5] = d.z;
    cam.R.m[6] = f.x; cam.R.m[7] = f.y; cam.R.m[8] = f.z;
    cam.t = (cam.R * eye) * -1.0;
    cam.near = near;
    cam.far = far;
    return cam;
}

} // namespace coda
