#pragma once

// Pose algebra, pinhole camera model, camera/chassis extrinsic coupling and
// the sign-exp coordinate codec. Everything here is a pure function on value
// types; doubles throughout, depth rasters in f32.
//
// Conventions (fixed once, used everywhere):
//   world/chassis frame: +x forward, +y left, +z up
//   camera frame:        +x right,   +y down, +z forward (optical axis)
//   depth is z-depth along the optical axis, not ray length.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace metricnav::geo {

constexpr double kPi = 3.14159265358979323846;

// normalize to (-pi, pi]
inline double wrap_angle(double t) {
    double r = std::fmod(t + kPi, 2.0 * kPi);
    if (r <= 0.0) r += 2.0 * kPi;
    return r - kPi;
}

struct Vec2 {
    double x = 0.0, y = 0.0;
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 v) { return std::sqrt(dot(v, v)); }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

struct Mat3 {
    // row-major
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }

    static Mat3 identity() { return {}; }

    Vec3 apply(Vec3 v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }
};

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a(r, k) * b(k, c);
            out(r, c) = s;
        }
    return out;
}

inline Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
}

inline Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
}

// Columns are the camera axes expressed in the chassis frame:
// cam +x -> chassis -y, cam +y -> chassis -z, cam +z -> chassis +x.
inline Mat3 camera_axis_map() {
    Mat3 a;
    a.m = {0, 0, 1, -1, 0, 0, 0, -1, 0};
    return a;
}

// Chassis pose on the ground plane. theta is kept in (-pi, pi].
struct Pose2 {
    double x = 0.0, y = 0.0, theta = 0.0;

    Pose2() = default;
    Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

    static Pose2 identity() { return {}; }

    Vec2 position() const { return {x, y}; }

    // rigid transform of a point expressed in this frame into the parent frame
    Vec2 apply(Vec2 p) const {
        const double c = std::cos(theta), s = std::sin(theta);
        return {x + c * p.x - s * p.y, y + s * p.x + c * p.y};
    }
};

inline Pose2 compose(const Pose2& a, const Pose2& b) {
    const double c = std::cos(a.theta), s = std::sin(a.theta);
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta);
}

inline Pose2 inverse(const Pose2& p) {
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta);
}

// pose of `b` expressed in the frame of `a`
inline Pose2 relative_pose(const Pose2& a, const Pose2& b) { return compose(inverse(a), b); }

struct SE3 {
    Mat3 rotation;
    Vec3 translation;

    static SE3 identity() { return {}; }

    Vec3 apply(Vec3 p) const { return rotation.apply(p) + translation; }

    // max deviation of R^T R from identity
    double orthonormality_error() const {
        const Mat3 g = rotation.transposed() * rotation;
        double e = 0.0;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) e = std::max(e, std::abs(g(r, c) - (r == c ? 1.0 : 0.0)));
        return e;
    }

    double det() const {
        const Mat3& r = rotation;
        return r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1)) -
               r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0)) +
               r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
    }

    bool is_rigid(double tol = 1e-9) const {
        return orthonormality_error() < tol && std::abs(det() - 1.0) < tol;
    }
};

inline SE3 compose(const SE3& a, const SE3& b) {
    return {a.rotation * b.rotation, a.rotation.apply(b.translation) + a.translation};
}

inline SE3 inverse(const SE3& t) {
    const Mat3 rt = t.rotation.transposed();
    return {rt, -1.0 * rt.apply(t.translation)};
}

// lift a planar pose to SE3 (frame on the ground plane)
inline SE3 pose2_to_se3(const Pose2& p) {
    return {rot_z(p.theta), {p.x, p.y, 0.0}};
}

// Camera mount relative to the chassis: straight above the chassis origin at
// `height`, pitched down by `pitch`, no yaw or roll.
struct Extrinsics {
    double height = 0.5;   // meters, valid range [0.25, 1.25]
    double pitch = 0.0;    // radians down, valid range [0, pi/6]

    bool valid() const {
        return height >= 0.25 && height <= 1.25 && pitch >= 0.0 && pitch <= kPi / 6.0 + 1e-12;
    }
};

// camera-to-parent pose of the mounted camera, given the chassis pose in that parent frame
inline SE3 camera_from_chassis(const Pose2& b, const Extrinsics& e) {
    return {rot_z(b.theta) * rot_y(e.pitch) * camera_axis_map(), {b.x, b.y, e.height}};
}

// inverse of camera_from_chassis for a camera known to sit on the given mount
inline Pose2 chassis_from_camera(const SE3& cam, const Extrinsics& e) {
    const Mat3 rz = cam.rotation * camera_axis_map().transposed() * rot_y(e.pitch).transposed();
    return Pose2(cam.translation.x, cam.translation.y, std::atan2(rz(1, 0), rz(0, 0)));
}

struct Intrinsics {
    double fx = 32.0, fy = 32.0;
    double cx = 32.0, cy = 32.0;
    int width = 64, height = 64;

    bool valid() const {
        return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
    }
};

// Invalid pixels carry the sentinel 0 plus a cleared mask bit, so Eq-free
// consumers can stay branch-free on the raster itself.
struct DepthMap {
    int width = 0, height = 0;
    std::vector<float> values;    // row-major, meters
    std::vector<uint8_t> valid;   // row-major, 0/1
    float max_range = 10.0f;

    DepthMap() = default;
    DepthMap(int w, int h, float max_r)
        : width(w), height(h), values((size_t)w * h, 0.0f), valid((size_t)w * h, 0), max_range(max_r) {}

    float at(int u, int v) const { return values[(size_t)v * width + u]; }
    bool is_valid(int u, int v) const { return valid[(size_t)v * width + u] != 0; }

    void set(int u, int v, float d) {
        values[(size_t)v * width + u] = d;
        valid[(size_t)v * width + u] = 1;
    }
};

enum class FrameTag { Camera, ChassisLast, World };

inline std::string frame_tag_name(FrameTag t, int index = -1) {
    switch (t) {
        case FrameTag::Camera: return "camera:" + std::to_string(index);
        case FrameTag::ChassisLast: return "chassis_last";
        case FrameTag::World: return "world";
    }
    return "?";
}

struct PointCloud {
    std::vector<Vec3> points;
    FrameTag frame = FrameTag::Camera;
    int frame_index = -1;   // timestep for FrameTag::Camera
};

inline Vec2 project(const Intrinsics& k, Vec3 p) {
    return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
}

inline Vec3 pixel_ray(const Intrinsics& k, double u, double v) {
    return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
}

// One point per valid pixel, camera frame, p = d * K^-1 [u v 1]^T with d as z-depth.
inline PointCloud backproject(const DepthMap& d, const Intrinsics& k, int frame_index = -1) {
    if (d.width != k.width || d.height != k.height)
        throw std::invalid_argument("backproject: depth " + std::to_string(d.width) + "x" +
                                    std::to_string(d.height) + " vs intrinsics " +
                                    std::to_string(k.width) + "x" + std::to_string(k.height));
    PointCloud out;
    out.frame = FrameTag::Camera;
    out.frame_index = frame_index;
    out.points.reserve((size_t)d.width * d.height);
    for (int v = 0; v < d.height; ++v)
        for (int u = 0; u < d.width; ++u) {
            if (!d.is_valid(u, v)) continue;
            const double z = d.at(u, v);
            out.points.push_back({(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z});
        }
    return out;
}

inline PointCloud transform_points(const PointCloud& c, const SE3& t, FrameTag new_tag,
                                   int new_index = -1) {
    PointCloud out;
    out.frame = new_tag;
    out.frame_index = new_index;
    out.points.reserve(c.points.size());
    for (const Vec3& p : c.points) out.points.push_back(t.apply(p));
    return out;
}

// Merge per-frame camera clouds into the chassis frame of the final timestep.
// cams[i] is the camera-to-world pose matching clouds[i]; the mount only ties
// the last camera to last_chassis and is kept for interface symmetry.
inline PointCloud reexpress_to_last_chassis(const std::vector<PointCloud>& clouds,
                                            const std::vector<SE3>& cams,
                                            const Pose2& last_chassis, const Extrinsics& e) {
    (void)e;
    if (clouds.size() != cams.size())
        throw std::invalid_argument("reexpress_to_last_chassis: " + std::to_string(clouds.size()) +
                                    " clouds vs " + std::to_string(cams.size()) + " cams");
    const SE3 world_to_last = inverse(pose2_to_se3(last_chassis));
    PointCloud out;
    out.frame = FrameTag::ChassisLast;
    size_t n = 0;
    for (const auto& c : clouds) n += c.points.size();
    out.points.reserve(n);
    for (size_t i = 0; i < clouds.size(); ++i) {
        const SE3 t = compose(world_to_last, cams[i]);
        for (const Vec3& p : clouds[i].points) out.points.push_back(t.apply(p));
    }
    return out;
}

// goal position re-expressed in the frame of chassis pose b
inline Vec2 goal_in_frame(Vec2 goal_world, const Pose2& b) {
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    const double dx = goal_world.x - b.x, dy = goal_world.y - b.y;
    return {c * dx + s * dy, -s * dx + c * dy};
}

// Odd, monotone, bijective codec expanding bounded activations to metric
// coordinates: sign(z) * (exp(|z|) - 1). Shared by the tensor op.
template <typename T>
inline T signexp(T z) {
    const T e = std::exp(std::abs(z)) - T(1);
    return z < T(0) ? -e : e;
}

template <typename T>
inline T signexp_inv(T y) {
    const T l = std::log1p(std::abs(y));
    return y < T(0) ? -l : l;
}

}  // namespace metricnav::geo
