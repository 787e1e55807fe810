#pragma once

// Procedural 2.5D heightfield world: scene generation, raycast depth/intensity
// rendering, kinematic robot stepping with swept-disc collision, and scene
// serialization.
//
// World frame: x right, y up (top-down view), z up in 3D; the square arena
// spans [0, size] x [0, size] with walled borders. Grid cell (ix, iy) covers
// [ix*res, (ix+1)*res) x [iy*res, (iy+1)*res); height 0 = free floor.
//
// Collision metric (shared by sim, planner, and all oracles): a robot disc of
// radius r at p collides iff some occupied cell CENTER lies within
// r + resolution/2 of p.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "metricnav/geometry.hpp"
#include "metricnav/io.hpp"
#include "metricnav/rng.hpp"

namespace metricnav::sim {

struct SceneConfig {
    double size_m = 12.0;
    double resolution = 0.05;
    double density = 0.15;       // target obstacle footprint area / interior area
    double wall_fraction = 0.35; // share of the area budget spent on wall segments
    double min_height = 0.2, max_height = 2.0;
    double border_height = 2.0;
    double min_connectivity = 0.4;
};

inline SceneConfig scene_preset(const std::string& name) {
    SceneConfig cfg;
    if (name == "cluttered") {
        cfg.density = 0.15;
        cfg.wall_fraction = 0.35;
    } else if (name == "open") {
        cfg.density = 0.05;
        cfg.wall_fraction = 0.15;
    } else {
        throw std::invalid_argument("unknown scene preset: " + name);
    }
    return cfg;
}

struct Scene {
    int cells = 0;
    double resolution = 0.05;
    std::vector<float> height;  // cells*cells, row-major by iy
    uint64_t seed = 0;

    double size() const { return cells * resolution; }
    float h(int ix, int iy) const { return height[static_cast<size_t>(iy) * cells + ix]; }
    float& h_mut(int ix, int iy) { return height[static_cast<size_t>(iy) * cells + ix]; }
    bool occupied(int ix, int iy) const { return h(ix, iy) > 0.0f; }
    bool in_grid(int ix, int iy) const { return ix >= 0 && ix < cells && iy >= 0 && iy < cells; }
    int cell_of(double v) const { return static_cast<int>(std::floor(v / resolution)); }
    double center(int i) const { return (i + 0.5) * resolution; }
};

// Disc collision against occupied cell centers within radius + res/2.
inline bool position_blocked(const Scene& s, double x, double y, double radius) {
    const double rho = radius + 0.5 * s.resolution;
    const int reach = static_cast<int>(std::ceil(rho / s.resolution)) + 1;
    const int cx = s.cell_of(x), cy = s.cell_of(y);
    if (!s.in_grid(cx, cy)) return true;
    const double rho2 = rho * rho;
    for (int iy = cy - reach; iy <= cy + reach; ++iy)
        for (int ix = cx - reach; ix <= cx + reach; ++ix) {
            if (!s.in_grid(ix, iy)) return true;  // outside the walled grid
            if (!s.occupied(ix, iy)) continue;
            const double dx = s.center(ix) - x, dy = s.center(iy) - y;
            if (dx * dx + dy * dy <= rho2) return true;
        }
    return false;
}

namespace detail {

inline void stamp_box(Scene& s, double x0, double y0, double x1, double y1, float h) {
    int ix0 = std::max(0, s.cell_of(x0)), ix1 = std::min(s.cells - 1, s.cell_of(x1));
    int iy0 = std::max(0, s.cell_of(y0)), iy1 = std::min(s.cells - 1, s.cell_of(y1));
    for (int iy = iy0; iy <= iy1; ++iy)
        for (int ix = ix0; ix <= ix1; ++ix)
            if (h > s.h(ix, iy)) s.h_mut(ix, iy) = h;
}

inline void stamp_cylinder(Scene& s, double cx, double cy, double r, float h) {
    int ix0 = std::max(0, s.cell_of(cx - r)), ix1 = std::min(s.cells - 1, s.cell_of(cx + r));
    int iy0 = std::max(0, s.cell_of(cy - r)), iy1 = std::min(s.cells - 1, s.cell_of(cy + r));
    for (int iy = iy0; iy <= iy1; ++iy)
        for (int ix = ix0; ix <= ix1; ++ix) {
            const double dx = s.center(ix) - cx, dy = s.center(iy) - cy;
            if (dx * dx + dy * dy <= r * r && h > s.h(ix, iy)) s.h_mut(ix, iy) = h;
        }
}

// Fraction of free cells inside the largest mutually-reachable component
// (4-connected), as a fraction of all free cells.
inline double largest_component_fraction(const Scene& s) {
    const int n = s.cells;
    std::vector<int> label(static_cast<size_t>(n) * n, -1);
    int total_free = 0;
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            if (!s.occupied(ix, iy)) ++total_free;
    if (total_free == 0) return 0.0;
    int best = 0;
    std::vector<int> stack;
    int comp = 0;
    for (int start = 0; start < n * n; ++start) {
        if (label[start] >= 0 || s.occupied(start % n, start / n)) continue;
        int size = 0;
        stack.push_back(start);
        label[start] = comp;
        while (!stack.empty()) {
            const int c = stack.back();
            stack.pop_back();
            ++size;
            const int ix = c % n, iy = c / n;
            const int nb[4][2] = {{ix + 1, iy}, {ix - 1, iy}, {ix, iy + 1}, {ix, iy - 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[0] >= n || q[1] < 0 || q[1] >= n) continue;
                const int idx = q[1] * n + q[0];
                if (label[idx] < 0 && !s.occupied(q[0], q[1])) {
                    label[idx] = comp;
                    stack.push_back(idx);
                }
            }
        }
        best = std::max(best, size);
        ++comp;
    }
    return static_cast<double>(best) / total_free;
}

}  // namespace detail

inline Scene generate_scene(uint64_t seed, const SceneConfig& cfg) {
    const int n = static_cast<int>(std::llround(cfg.size_m / cfg.resolution));
    for (uint64_t attempt = 0; attempt < 32; ++attempt) {
        Rng rng(splitmix64(seed ^ splitmix64(attempt * 0x9e3779b97f4a7c15ull + 1)));
        Scene s;
        s.cells = n;
        s.resolution = cfg.resolution;
        s.seed = seed;
        s.height.assign(static_cast<size_t>(n) * n, 0.0f);
        for (int i = 0; i < n; ++i) {
            s.h_mut(i, 0) = static_cast<float>(cfg.border_height);
            s.h_mut(i, n - 1) = static_cast<float>(cfg.border_height);
            s.h_mut(0, i) = static_cast<float>(cfg.border_height);
            s.h_mut(n - 1, i) = static_cast<float>(cfg.border_height);
        }

        const double interior = (cfg.size_m - 2 * cfg.resolution) * (cfg.size_m - 2 * cfg.resolution);
        const double budget = cfg.density * interior;
        const double wall_budget = cfg.wall_fraction * budget;
        double placed = 0.0, wall_placed = 0.0;
        int guard = 0;
        while (placed < budget && ++guard < 4096) {
            const float h =
                static_cast<float>(rng.uniform(cfg.min_height, cfg.max_height));
            if (wall_placed < wall_budget) {
                // Axis-aligned wall segment.
                const double len = rng.uniform(1.0, 4.0);
                const double thick = rng.uniform(0.1, 0.2);
                const bool horiz = rng.uniform() < 0.5;
                const double w = horiz ? len : thick, d = horiz ? thick : len;
                const double x0 = rng.uniform(cfg.resolution, cfg.size_m - w - cfg.resolution);
                const double y0 = rng.uniform(cfg.resolution, cfg.size_m - d - cfg.resolution);
                detail::stamp_box(s, x0, y0, x0 + w, y0 + d, h);
                placed += w * d;
                wall_placed += w * d;
            } else if (rng.uniform() < 0.5) {
                const double w = rng.uniform(0.3, 1.5), d = rng.uniform(0.3, 1.5);
                const double x0 = rng.uniform(cfg.resolution, cfg.size_m - w - cfg.resolution);
                const double y0 = rng.uniform(cfg.resolution, cfg.size_m - d - cfg.resolution);
                detail::stamp_box(s, x0, y0, x0 + w, y0 + d, h);
                placed += w * d;
            } else {
                const double r = rng.uniform(0.15, 0.6);
                const double cx = rng.uniform(r + cfg.resolution, cfg.size_m - r - cfg.resolution);
                const double cy = rng.uniform(r + cfg.resolution, cfg.size_m - r - cfg.resolution);
                detail::stamp_cylinder(s, cx, cy, r, h);
                placed += geo::kPi * r * r;
            }
        }
        if (detail::largest_component_fraction(s) >= cfg.min_connectivity) return s;
    }
    throw std::runtime_error("generate_scene: connectivity not reached in 32 attempts (seed " +
                             std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Rendering

struct Observation {
    geo::DepthMap depth;
    std::vector<float> intensity;  // width*height, row-major, in [0, 1]
    geo::SE3 gt_camera;
    geo::Pose2 gt_chassis;
    int timestep = 0;

    Observation() : depth(0, 0, 0.0f) {}
};

namespace detail {

struct RayHit {
    bool hit = false;
    double s = 0.0;        // z-depth parameter
    double nx = 0, ny = 0, nz = 0;
    float surface_h = 0.0f;  // column height, 0 for floor
};

// Amanatides–Woo traversal over the height grid. `dir` is scaled so that the
// parameter s equals camera z-depth (camera-frame unit-z component).
inline RayHit raycast(const Scene& sc, const geo::Vec3& o, const geo::Vec3& dir,
                      double max_range) {
    RayHit out;
    int ix = sc.cell_of(o.x), iy = sc.cell_of(o.y);
    if (!sc.in_grid(ix, iy)) return out;
    const int step_x = dir.x > 0 ? 1 : (dir.x < 0 ? -1 : 0);
    const int step_y = dir.y > 0 ? 1 : (dir.y < 0 ? -1 : 0);
    const double inf = std::numeric_limits<double>::infinity();
    auto boundary = [&](int i, int step) { return (step > 0 ? (i + 1) : i) * sc.resolution; };
    double t_max_x = step_x ? (boundary(ix, step_x) - o.x) / dir.x : inf;
    double t_max_y = step_y ? (boundary(iy, step_y) - o.y) / dir.y : inf;
    const double t_dx = step_x ? sc.resolution / std::abs(dir.x) : inf;
    const double t_dy = step_y ? sc.resolution / std::abs(dir.y) : inf;

    double s_enter = 0.0;
    double enter_nx = 0.0, enter_ny = 0.0;
    while (s_enter <= max_range) {
        const double s_exit = std::min(t_max_x, t_max_y);
        const float h = sc.h(ix, iy);
        const double z0 = o.z + s_enter * dir.z;
        if (h > 0.0f) {
            if (z0 <= h + 1e-12) {
                // Entered the cell below the column top: vertical face hit.
                out.hit = true;
                out.s = s_enter;
                out.nx = enter_nx;
                out.ny = enter_ny;
                out.nz = 0.0;
                if (s_enter == 0.0) out.nz = 1.0;  // camera inside a column: degenerate
                out.surface_h = h;
                return out;
            }
            if (dir.z < 0.0) {
                const double s_top = (h - o.z) / dir.z;
                if (s_top >= s_enter && s_top <= s_exit) {
                    out.hit = true;
                    out.s = s_top;
                    out.nz = 1.0;
                    out.surface_h = h;
                    return out;
                }
            }
        } else if (dir.z < 0.0) {
            const double s_floor = -o.z / dir.z;
            if (s_floor >= s_enter && s_floor <= s_exit) {
                out.hit = true;
                out.s = s_floor;
                out.nz = 1.0;
                out.surface_h = 0.0f;
                return out;
            }
        }
        // Advance to the next cell.
        if (t_max_x < t_max_y) {
            s_enter = t_max_x;
            t_max_x += t_dx;
            ix += step_x;
            enter_nx = -static_cast<double>(step_x);
            enter_ny = 0.0;
        } else {
            s_enter = t_max_y;
            t_max_y += t_dy;
            iy += step_y;
            enter_nx = 0.0;
            enter_ny = -static_cast<double>(step_y);
        }
        if (!sc.in_grid(ix, iy)) return out;
    }
    return out;
}

inline float shade(const RayHit& hit) {
    // Fixed directional light, mild ambient, height-indexed albedo.
    constexpr double lx = -0.45, ly = -0.3, lz = 0.84;  // direction TOWARD the light
    const double lambert = std::max(0.0, hit.nx * lx + hit.ny * ly + hit.nz * lz);
    const double albedo =
        hit.surface_h > 0.0f ? 0.35 + 0.4 * std::min(1.0, hit.surface_h / 2.0) : 0.75;
    const double v = albedo * (0.25 + 0.75 * lambert);
    return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

}  // namespace detail

inline Observation render(const Scene& sc, const geo::SE3& cam, const geo::Intrinsics& k,
                          double max_range) {
    Observation obs;
    obs.depth = geo::DepthMap(k.width, k.height, static_cast<float>(max_range));
    obs.intensity.assign(static_cast<size_t>(k.width) * k.height, 0.0f);
    obs.gt_camera = cam;
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            // Pixel-center ray with unit camera-z so s is z-depth.
            const geo::Vec3 d_cam{(u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0};
            const geo::Vec3 d_world = cam.rotation * d_cam;
            const detail::RayHit hit = detail::raycast(sc, cam.translation, d_world, max_range);
            if (hit.hit && hit.s > 0.0 && hit.s <= max_range) {
                obs.depth.set(u, v, static_cast<float>(hit.s));
                obs.intensity[static_cast<size_t>(v) * k.width + u] = detail::shade(hit);
            }
        }
    }
    return obs;
}

// ---------------------------------------------------------------------------
// Robot stepping

struct RobotState {
    geo::Pose2 pose;
    double radius = 0.15;
    geo::Extrinsics mount;
};

constexpr double kMaxStepTranslation = 0.2;  // meters
constexpr double kMaxStepRotation = 0.3;     // radians
constexpr int kCollisionSubsteps = 5;

struct StepResult {
    RobotState state;
    bool collided = false;
};

// Applies (dx, dy) in the CURRENT chassis frame plus dtheta, clamped, with a
// swept-disc collision test at kCollisionSubsteps intermediate poses. On
// collision the robot stops at the last free sub-step.
inline StepResult step(const RobotState& s, double dx, double dy, double dtheta,
                       const Scene& scene) {
    double norm = std::hypot(dx, dy);
    if (norm > kMaxStepTranslation) {
        const double f = kMaxStepTranslation / norm;
        dx *= f;
        dy *= f;
    }
    dtheta = std::clamp(dtheta, -kMaxStepRotation, kMaxStepRotation);

    const double c = std::cos(s.pose.theta), sn = std::sin(s.pose.theta);
    const double wx = c * dx - sn * dy;
    const double wy = sn * dx + c * dy;

    StepResult res{s, false};
    geo::Pose2 last_free = s.pose;
    for (int i = 1; i <= kCollisionSubsteps; ++i) {
        const double f = static_cast<double>(i) / kCollisionSubsteps;
        const geo::Pose2 p(s.pose.x + f * wx, s.pose.y + f * wy, s.pose.theta + f * dtheta);
        if (position_blocked(scene, p.x, p.y, s.radius)) {
            res.collided = true;
            break;
        }
        last_free = p;
    }
    res.state.pose = last_free;
    return res;
}

inline geo::SE3 camera_pose(const RobotState& s) {
    return geo::camera_from_chassis(s.pose, s.mount);
}

// ---------------------------------------------------------------------------
// Episode specification

struct EpisodeSpec {
    uint64_t scene_seed = 0;
    geo::Pose2 start;
    double goal_x = 0.0, goal_y = 0.0;
    uint64_t episode_seed = 0;
};

// ---------------------------------------------------------------------------
// Scene serialization: text header + raw little-endian f32 heights.

inline void write_scene(std::ostream& os, const Scene& s) {
    os << "scene 1\n";
    os << "seed " << s.seed << "\n";
    os << "resolution " << io::format_double(s.resolution) << "\n";
    os << "cells " << s.cells << "\n";
    os << "data\n";
    io::write_span(os, s.height.data(), s.height.size());
}

inline Scene read_scene(std::istream& is) {
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(is, line)) throw std::runtime_error(std::string("scene: missing ") + what);
        return line;
    };
    if (next("magic") != "scene 1") throw std::runtime_error("scene: bad magic: " + line);
    Scene s;
    {
        const std::string l = next("seed");
        if (l.rfind("seed ", 0) != 0) throw std::runtime_error("scene: expected seed, got " + l);
        s.seed = std::stoull(l.substr(5));
    }
    {
        const std::string l = next("resolution");
        if (l.rfind("resolution ", 0) != 0)
            throw std::runtime_error("scene: expected resolution, got " + l);
        s.resolution = std::stod(l.substr(11));
    }
    {
        const std::string l = next("cells");
        if (l.rfind("cells ", 0) != 0) throw std::runtime_error("scene: expected cells, got " + l);
        s.cells = std::stoi(l.substr(6));
    }
    if (next("data") != "data") throw std::runtime_error("scene: expected data, got " + line);
    s.height.resize(static_cast<size_t>(s.cells) * s.cells);
    io::read_span(is, s.height.data(), s.height.size());
    return s;
}

}  // namespace metricnav::sim
