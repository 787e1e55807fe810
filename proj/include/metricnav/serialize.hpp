#pragma once

// On-disk forms for geometry values: point clouds as a text header plus flat
// little-endian f32 triplets, poses as single text lines.

#include <fstream>
#include <sstream>

#include "metricnav/geometry.hpp"
#include "metricnav/io.hpp"

namespace metricnav::geo {

inline FrameTag parse_frame_tag(const std::string& s, int* index) {
    if (s == "chassis_last") return FrameTag::ChassisLast;
    if (s == "world") return FrameTag::World;
    if (s.rfind("camera:", 0) == 0) {
        *index = std::stoi(s.substr(7));
        return FrameTag::Camera;
    }
    throw std::runtime_error("unknown frame tag '" + s + "'");
}

inline void write_cloud(const std::string& path, const PointCloud& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "cloud 1\n";
    f << "frame " << frame_tag_name(c.frame, c.frame_index) << "\n";
    f << "count " << c.points.size() << "\n";
    f << "data\n";
    for (const Vec3& p : c.points) {
        const float xyz[3] = {(float)p.x, (float)p.y, (float)p.z};
        io::write_span(f, xyz, 3);
    }
}

inline PointCloud read_cloud(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    PointCloud out;
    size_t count = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "cloud") continue;
        if (key == "frame") {
            std::string tag;
            ls >> tag;
            out.frame = parse_frame_tag(tag, &out.frame_index);
        } else if (key == "count") {
            ls >> count;
        }
    }
    out.points.resize(count);
    for (size_t i = 0; i < count; ++i) {
        float xyz[3];
        io::read_span(f, xyz, 3);
        out.points[i] = {xyz[0], xyz[1], xyz[2]};
    }
    return out;
}

inline std::string pose2_line(const Pose2& p) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "pose2 %.17g %.17g %.17g", p.x, p.y, p.theta);
    return buf;
}

inline Pose2 parse_pose2_line(const std::string& line) {
    std::istringstream ls(line);
    std::string tag;
    double x, y, t;
    ls >> tag >> x >> y >> t;
    if (!ls || tag != "pose2") throw std::runtime_error("bad pose2 line '" + line + "'");
    return Pose2(x, y, t);
}

inline std::string se3_line(const SE3& t) {
    std::ostringstream os;
    os << "se3";
    os.precision(17);
    for (double v : t.rotation.m) os << ' ' << v;
    os << ' ' << t.translation.x << ' ' << t.translation.y << ' ' << t.translation.z;
    return os.str();
}

inline SE3 parse_se3_line(const std::string& line) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "se3") throw std::runtime_error("bad se3 line '" + line + "'");
    SE3 t;
    for (double& v : t.rotation.m) ls >> v;
    ls >> t.translation.x >> t.translation.y >> t.translation.z;
    if (!ls) throw std::runtime_error("bad se3 line '" + line + "'");
    return t;
}

}  // namespace metricnav::geo
