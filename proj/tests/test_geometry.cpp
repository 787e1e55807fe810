#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "metricnav/geometry.hpp"
#include "metricnav/rng.hpp"
#include "metricnav/serialize.hpp"

using namespace metricnav;
using namespace metricnav::geo;

namespace {

// Independent oracle: planar rigid motions as 3x3 homogeneous matrices.
struct Hom3 {
    double m[9];

    static Hom3 from_pose(const Pose2& p) {
        const double c = std::cos(p.theta), s = std::sin(p.theta);
        return {{c, -s, p.x, s, c, p.y, 0, 0, 1}};
    }

    Hom3 mul(const Hom3& o) const {
        Hom3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = acc;
            }
        return r;
    }

    Pose2 to_pose() const { return Pose2(m[2], m[5], std::atan2(m[3], m[0])); }
};

Pose2 random_pose(Rng& rng) {
    return Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-8, 8));
}

void check_pose_close(const Pose2& a, const Pose2& b, double tol) {
    CHECK(std::abs(a.x - b.x) <= tol);
    CHECK(std::abs(a.y - b.y) <= tol);
    CHECK(std::abs(wrap_angle(a.theta - b.theta)) <= tol);
}

SE3 random_se3(Rng& rng) {
    SE3 t = compose(pose2_to_se3(random_pose(rng)),
                    SE3{rot_y(rng.uniform(-1.5, 1.5)), {0, 0, rng.uniform(-2, 2)}});
    t.rotation = t.rotation * rot_z(rng.uniform(-3, 3));
    return t;
}

}  // namespace

TEST_CASE("wrap_angle maps to (-pi, pi]") {
    CHECK(wrap_angle(kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(-kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(3 * kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(0.0) == 0.0);
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        double t = rng.uniform(-50, 50);
        double w = wrap_angle(t);
        CHECK(w > -kPi);
        CHECK(w <= kPi);
        CHECK(std::abs(std::remainder(w - t, 2 * kPi)) < 1e-9);
    }
}

TEST_CASE("pose composition basics") {
    Pose2 p(0.3, -1.2, 0.7);
    check_pose_close(compose(Pose2::identity(), p), p, 1e-15);
    check_pose_close(compose(p, Pose2::identity()), p, 1e-15);

    // quarter turn then 1m forward
    Pose2 q = compose(Pose2(1, 0, kPi / 2), Pose2(1, 0, 0));
    check_pose_close(q, Pose2(1, 1, kPi / 2), 1e-12);
}

TEST_CASE("pose group laws vs homogeneous-matrix oracle") {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        Pose2 a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);

        // compose matches the matrix product
        Pose2 ab = compose(a, b);
        Pose2 ab_oracle = Hom3::from_pose(a).mul(Hom3::from_pose(b)).to_pose();
        check_pose_close(ab, ab_oracle, 1e-12);

        // associativity
        check_pose_close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-12);

        // inverse
        check_pose_close(compose(a, inverse(a)), Pose2::identity(), 1e-12);
        check_pose_close(compose(inverse(a), a), Pose2::identity(), 1e-12);
    }
}

TEST_CASE("SE3 compose/inverse and orthonormality drift") {
    Rng rng(13);
    for (int i = 0; i < 100; ++i) {
        SE3 t = random_se3(rng);
        REQUIRE(t.is_rigid(1e-12));
        SE3 r = compose(t, inverse(t));
        CHECK(r.orthonormality_error() < 1e-12);
        CHECK(norm(r.translation) < 1e-12);
    }

    SE3 acc = SE3::identity();
    SE3 step = random_se3(rng);
    for (int i = 0; i < 10000; ++i) acc = compose(acc, step);
    CHECK(acc.orthonormality_error() < 1e-9);
}

TEST_CASE("camera_from_chassis zero-rotation mount") {
    SE3 cam = camera_from_chassis(Pose2::identity(), Extrinsics{1.0, 0.0});
    CHECK(cam.translation.x == Catch::Approx(0.0).margin(1e-15));
    CHECK(cam.translation.y == Catch::Approx(0.0).margin(1e-15));
    CHECK(cam.translation.z == Catch::Approx(1.0));

    // optical axis (camera +z) parallel to world +x
    Vec3 axis = cam.rotation.apply({0, 0, 1});
    CHECK(axis.x == Catch::Approx(1.0));
    CHECK(std::abs(axis.y) < 1e-15);
    CHECK(std::abs(axis.z) < 1e-15);

    // camera +y (image down) maps to world -z
    Vec3 down = cam.rotation.apply({0, 1, 0});
    CHECK(down.z == Catch::Approx(-1.0));
}

TEST_CASE("camera_from_chassis pitched mount tilts the optical axis down") {
    SE3 cam = camera_from_chassis(Pose2::identity(), Extrinsics{1.0, kPi / 6});
    Vec3 axis = cam.rotation.apply({0, 0, 1});
    CHECK(axis.z == Catch::Approx(-0.5));
    CHECK(axis.x == Catch::Approx(std::sqrt(3.0) / 2));
    CHECK(cam.is_rigid(1e-12));
}

TEST_CASE("chassis_from_camera inverts camera_from_chassis") {
    Rng rng(17);
    for (int i = 0; i < 300; ++i) {
        Pose2 b = random_pose(rng);
        Extrinsics e{rng.uniform(0.25, 1.25), rng.uniform(0.0, kPi / 6)};
        Pose2 back = chassis_from_camera(camera_from_chassis(b, e), e);
        check_pose_close(back, b, 1e-12);
    }
}

TEST_CASE("backproject principal point and unit tangent") {
    Intrinsics k;
    DepthMap d(k.width, k.height, 10.0f);
    d.set((int)k.cx, (int)k.cy, 2.0f);

    PointCloud c = backproject(d, k);
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].x == Catch::Approx(0.0).margin(1e-12));
    CHECK(c.points[0].y == Catch::Approx(0.0).margin(1e-12));
    CHECK(c.points[0].z == Catch::Approx(2.0));

    // Half-tangent pixel: u = cx + fx/2 lies inside a 64-wide image.
    DepthMap d2(k.width, k.height, 10.0f);
    int u = (int)(k.cx + k.fx / 2);
    REQUIRE(u < k.width);
    d2.set(u, (int)k.cy, 1.0f);
    PointCloud c2 = backproject(d2, k);
    REQUIRE(c2.points.size() == 1);
    CHECK(c2.points[0].x == Catch::Approx(0.5));
    CHECK(c2.points[0].z == Catch::Approx(1.0));
}

TEST_CASE("backproject rejects mismatched dimensions") {
    Intrinsics k;
    DepthMap d(32, 32, 10.0f);
    CHECK_THROWS_AS(backproject(d, k), std::invalid_argument);
}

TEST_CASE("project/backproject are mutual inverses on valid pixels") {
    Intrinsics k;
    Rng rng(19);
    DepthMap d(k.width, k.height, 10.0f);
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u)
            if (rng.uniform() < 0.5) d.set(u, v, (float)rng.uniform(0.1, 9.9));

    PointCloud c = backproject(d, k);
    size_t idx = 0;
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u) {
            if (!d.is_valid(u, v)) continue;
            Vec2 px = project(k, c.points[idx]);
            CHECK(std::abs(px.x - u) < 1e-9);
            CHECK(std::abs(px.y - v) < 1e-9);
            CHECK(std::abs(c.points[idx].z - d.at(u, v)) < 1e-9);
            ++idx;
        }
    REQUIRE(idx == c.points.size());
}

TEST_CASE("transform_points identity, translation, isometry") {
    Rng rng(23);
    PointCloud c;
    c.frame = FrameTag::Camera;
    for (int i = 0; i < 64; ++i)
        c.points.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});

    PointCloud same = transform_points(c, SE3::identity(), FrameTag::World);
    CHECK(same.frame == FrameTag::World);
    for (size_t i = 0; i < c.points.size(); ++i)
        CHECK(norm(same.points[i] - c.points[i]) < 1e-15);

    SE3 lift{Mat3::identity(), {0, 0, 1}};
    PointCloud up = transform_points(c, lift, FrameTag::World);
    for (size_t i = 0; i < c.points.size(); ++i)
        CHECK(up.points[i].z == Catch::Approx(c.points[i].z + 1.0));

    SE3 t = random_se3(rng);
    PointCloud moved = transform_points(c, t, FrameTag::World);
    for (int trial = 0; trial < 100; ++trial) {
        size_t i = (size_t)rng.uniform_int(0, (int64_t)c.points.size() - 1);
        size_t j = (size_t)rng.uniform_int(0, (int64_t)c.points.size() - 1);
        CHECK(std::abs(norm(moved.points[i] - moved.points[j]) -
                       norm(c.points[i] - c.points[j])) < 1e-9);
    }
}

TEST_CASE("reexpress_to_last_chassis axis convention and duplication") {
    Extrinsics e{1.0, 0.0};
    Pose2 chassis = Pose2::identity();
    PointCloud cloud;
    cloud.frame = FrameTag::Camera;
    cloud.frame_index = 0;
    cloud.points.push_back({0, 0, 1});  // 1m straight ahead of the camera

    SE3 cam = camera_from_chassis(chassis, e);
    PointCloud merged = reexpress_to_last_chassis({cloud}, {cam}, chassis, e);
    REQUIRE(merged.points.size() == 1);
    CHECK(merged.frame == FrameTag::ChassisLast);
    CHECK(merged.points[0].x == Catch::Approx(1.0));
    CHECK(merged.points[0].y == Catch::Approx(0.0).margin(1e-12));
    CHECK(merged.points[0].z == Catch::Approx(1.0));

    PointCloud dup = reexpress_to_last_chassis({cloud, cloud}, {cam, cam}, chassis, e);
    REQUIRE(dup.points.size() == 2);
    CHECK(norm(dup.points[0] - dup.points[1]) < 1e-15);

    CHECK_THROWS_AS(reexpress_to_last_chassis({cloud}, {cam, cam}, chassis, e),
                    std::invalid_argument);
}

TEST_CASE("reexpress matches pointwise transform oracle") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        Extrinsics e{rng.uniform(0.25, 1.25), rng.uniform(0.0, kPi / 6)};
        Pose2 last = random_pose(rng);
        std::vector<PointCloud> clouds;
        std::vector<SE3> cams;
        for (int f = 0; f < 3; ++f) {
            Pose2 b = random_pose(rng);
            cams.push_back(camera_from_chassis(b, e));
            PointCloud c;
            c.frame = FrameTag::Camera;
            c.frame_index = f;
            for (int i = 0; i < 10; ++i)
                c.points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 5)});
            clouds.push_back(c);
        }
        PointCloud merged = reexpress_to_last_chassis(clouds, cams, last, e);

        size_t idx = 0;
        const SE3 world_to_last = inverse(pose2_to_se3(last));
        for (int f = 0; f < 3; ++f) {
            PointCloud world = transform_points(clouds[f], cams[f], FrameTag::World);
            PointCloud in_last = transform_points(world, world_to_last, FrameTag::ChassisLast);
            for (const Vec3& p : in_last.points) {
                CHECK(norm(p - merged.points[idx]) < 1e-9);
                ++idx;
            }
        }
    }
}

TEST_CASE("goal_in_frame") {
    Vec2 g{3.0, -2.0};
    Vec2 r = goal_in_frame(g, Pose2::identity());
    CHECK(r.x == Catch::Approx(3.0));
    CHECK(r.y == Catch::Approx(-2.0));

    Vec2 at_goal = goal_in_frame(g, Pose2(3.0, -2.0, 1.1));
    CHECK(std::abs(at_goal.x) < 1e-12);
    CHECK(std::abs(at_goal.y) < 1e-12);

    // consistency with pose algebra: goal_in_frame(g, b) == inverse(b) applied to g
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        Pose2 b = random_pose(rng);
        Vec2 gw{rng.uniform(-5, 5), rng.uniform(-5, 5)};
        Vec2 via_op = goal_in_frame(gw, b);
        Vec2 via_alg = inverse(b).apply(gw);
        CHECK(std::abs(via_op.x - via_alg.x) < 1e-12);
        CHECK(std::abs(via_op.y - via_alg.y) < 1e-12);
    }
}

TEST_CASE("signexp codec") {
    CHECK(signexp(0.0) == 0.0);
    CHECK(signexp(std::log(2.0)) == Catch::Approx(1.0));
    CHECK(signexp(-std::log(2.0)) == Catch::Approx(-1.0));

    // round trip over a grid
    for (double z = -10.0; z <= 10.0; z += 0.01) {
        CHECK(std::abs(signexp_inv(signexp(z)) - z) < 1e-9);
    }

    // odd, strictly increasing
    double prev = signexp(-10.0);
    for (double z = -9.95; z <= 10.0; z += 0.05) {
        double v = signexp(z);
        CHECK(v > prev);
        CHECK(signexp(-z) == Catch::Approx(-v).margin(1e-12));
        prev = v;
    }

    // unit derivative at the origin (central finite difference)
    const double h = 1e-7;
    double d0 = (signexp(h) - signexp(-h)) / (2 * h);
    CHECK(std::abs(d0 - 1.0) < 1e-6);
}

TEST_CASE("pose and cloud serialization round-trips") {
    Pose2 p(1.25, -0.5, 2.0);
    CHECK(parse_pose2_line(pose2_line(p)).x == p.x);
    check_pose_close(parse_pose2_line(pose2_line(p)), p, 0.0);

    Rng rng(37);
    SE3 t = random_se3(rng);
    SE3 t2 = parse_se3_line(se3_line(t));
    CHECK(norm(t.translation - t2.translation) == 0.0);
    for (int i = 0; i < 9; ++i) CHECK(t.rotation.m[i] == t2.rotation.m[i]);

    PointCloud c;
    c.frame = FrameTag::Camera;
    c.frame_index = 3;
    for (int i = 0; i < 17; ++i)
        c.points.push_back({rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0, 8)});
    auto tmp = std::filesystem::temp_directory_path() / "mn_cloud_test.bin";
    write_cloud(tmp.string(), c);
    PointCloud c2 = read_cloud(tmp.string());
    REQUIRE(c2.points.size() == c.points.size());
    CHECK(c2.frame == FrameTag::Camera);
    CHECK(c2.frame_index == 3);
    for (size_t i = 0; i < c.points.size(); ++i)
        CHECK(norm(c.points[i] - c2.points[i]) < 1e-6);  // f32 storage
    std::filesystem::remove(tmp);
}
