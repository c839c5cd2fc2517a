#pragma once

#include <cmath>
#include <cstddef>

namespace coda {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Row-major 3x3 matrix.
struct Mat3 {
    double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = acc;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
        return r;
    }
    Vec3 transposed_mul(const Vec3& v) const {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
                m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }
};

struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat operator*(const Quat& o) const { // Hamilton product
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }
};

// Normalizes q; throws on zero norm.
Quat quat_normalize(const Quat& q);

// dL/dq_raw given dL/dq_normalized: (I - n n^T)/|q| applied to the 4-vector.
void quat_normalize_backward(const Quat& q_raw, const double dqn[4], double dq[4]);

// Rotation matrix from a unit quaternion.
Mat3 quat_to_mat(const Quat& qn);

// Accumulates dL/dqn (4 entries) from dL/dR.
void quat_to_mat_backward(const Quat& qn, const Mat3& dR, double dqn[4]);

// Sigma = R S S^T R^T with S = diag(exp(log_scale)). Throws on zero quaternion.
Mat3 build_covariance(const double log_scale[3], const Quat& q_raw);

// Given dL/dSigma (full 3x3), accumulates dL/dlog_scale and dL/dq_raw.
void build_covariance_backward(const double log_scale[3], const Quat& q_raw,
                               const Mat3& dSigma, double dlog_scale[3], double dq[4]);

// Pinhole camera, axes x right, y down, z forward; u = fx*x/z + cx.
struct Camera {
    int width = 0, height = 0;
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    Mat3 R;   // world-to-camera rotation
    Vec3 t;   // p_cam = R * p_world + t
    double near = 0.01, far = 100.0;

    Vec3 to_camera(const Vec3& p) const { return R * p + t; }
};

// fov_deg is the horizontal field of view; fy = fx (square pixels).
// World up is +z, with a +y fallback when the view axis is vertical.
Camera look_at(const Vec3& eye, const Vec3& target, int width, int height,
               double fov_deg, double near, double far);

} // namespace coda
