#pragma once

#include "psk/error.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace psk {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Points2 = std::vector<Vec2>;
using Points3 = std::vector<Vec3>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDefaultZMin = 1e-4;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

inline Mat3 skew(const Vec3& v)
{
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return m;
}

/// Rotation vector to unit quaternion (Rodrigues), stable near zero.
inline Eigen::Quaterniond so3_exp(const Vec3& w)
{
    const double theta = w.norm();
    if (theta < 1e-12) {
        Eigen::Quaterniond q(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
        return q.normalized();
    }
    const double s = std::sin(0.5 * theta) / theta;
    return Eigen::Quaterniond(std::cos(0.5 * theta), s * w.x(), s * w.y(), s * w.z());
}

inline Vec3 so3_log(const Eigen::Quaterniond& q_in)
{
    Eigen::Quaterniond q = q_in.normalized();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const Vec3 v = q.vec();
    const double n = v.norm();
    if (n < 1e-12) return 2.0 * v;
    const double theta = 2.0 * std::atan2(n, q.w());
    return (theta / n) * v;
}

/// Rigid transform x -> R x + t with R held as a unit quaternion.
///
/// Tangent convention used by every VJP in the library: a 6-vector
/// xi = (w, v) perturbs a pose as (exp(w) R, t + v), i.e. rotation is
/// perturbed on the left and translation additively.
struct Pose {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Vec3 translation = Vec3::Zero();

    Pose() = default;
    Pose(const Eigen::Quaterniond& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}

    static Pose identity() { return {}; }
    static Pose from_translation(const Vec3& t) { return {Eigen::Quaterniond::Identity(), t}; }
    static Pose from_rotation_vector(const Vec3& w, const Vec3& t = Vec3::Zero()) { return {so3_exp(w), t}; }
    static Pose from_matrix(const Mat3& r, const Vec3& t) { return {Eigen::Quaterniond(r), t}; }

    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

    Eigen::Matrix4d homogeneous() const
    {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation_matrix();
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// Result applies b first, then a.
inline Pose compose(const Pose& a, const Pose& b)
{
    Pose out;
    out.rotation = (a.rotation * b.rotation).normalized();
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

inline Pose inverse(const Pose& p)
{
    Pose out;
    out.rotation = p.rotation.conjugate().normalized();
    out.translation = -(out.rotation * p.translation);
    return out;
}

inline Pose retract(const Pose& p, const Vec6& xi)
{
    Pose out;
    out.rotation = (so3_exp(xi.head<3>()) * p.rotation).normalized();
    out.translation = p.translation + xi.tail<3>();
    return out;
}

/// Geodesic angle (radians) between two rotations, invariant to quaternion sign.
inline double rotation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b)
{
    const Eigen::Vector4d qa = a.normalized().coeffs();
    const Eigen::Vector4d qb = b.normalized().coeffs();
    const double chord = std::min((qa - qb).norm(), (qa + qb).norm());
    return 4.0 * std::asin(std::min(1.0, 0.5 * chord));
}

inline double rotation_angle(const Pose& a, const Pose& b) { return rotation_angle(a.rotation, b.rotation); }

inline double translation_distance(const Pose& a, const Pose& b) { return (a.translation - b.translation).norm(); }

inline Points3 transform_points(const Pose& p, std::span<const Vec3> pts)
{
    Points3 out;
    out.reserve(pts.size());
    const Mat3 r = p.rotation_matrix();
    for (const auto& x : pts) out.push_back(r * x + p.translation);
    return out;
}

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    void validate() const
    {
        if (!(fx > 0.0) || !(fy > 0.0))
            fail(ErrorCode::InvalidArgument, "focal lengths must be positive");
        if (width <= 0 || height <= 0)
            fail(ErrorCode::InvalidArgument, "image size must be positive");
        if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
            fail(ErrorCode::InvalidArgument, "principal point outside image");
    }

    Mat3 matrix() const
    {
        Mat3 k;
        k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }

    Vec2 project_camera_point(const Vec3& x) const { return {fx * x.x() / x.z() + cx, fy * x.y() / x.z() + cy}; }

    Vec3 backproject(double u, double v, double z) const { return {(u - cx) * z / fx, (v - cy) * z / fy, z}; }

    /// Intrinsics of the square window with left/top edge (x0, y0) and the
    /// given side, resampled to out_size x out_size. Output pixel j samples
    /// the source at x0 + (j + 0.5) * side / out_size.
    Intrinsics crop(double x0, double y0, double side, int out_size) const
    {
        const double s = out_size / side;
        Intrinsics k;
        k.fx = fx * s;
        k.fy = fy * s;
        k.cx = (cx - x0) * s - 0.5;
        k.cy = (cy - y0) * s - 0.5;
        k.width = out_size;
        k.height = out_size;
        return k;
    }
};

/// Pinhole projection of pose-transformed points. Pixel centers lie on
/// integer coordinates.
inline Points2 project(const Pose& p, std::span<const Vec3> pts, const Intrinsics& k, double z_min = kDefaultZMin)
{
    Points2 out;
    out.reserve(pts.size());
    const Mat3 r = p.rotation_matrix();
    for (const auto& x : pts) {
        const Vec3 c = r * x + p.translation;
        if (!(c.z() > z_min)) fail(ErrorCode::DepthBehindCamera, "point at camera depth " + std::to_string(c.z()));
        out.push_back(k.project_camera_point(c));
    }
    return out;
}

struct ProjectGrad {
    Vec6 pose = Vec6::Zero();
    Points3 points;
};

/// Vector-Jacobian product of project() for pixel cotangents `cot`.
inline ProjectGrad project_vjp(const Pose& p, std::span<const Vec3> pts, const Intrinsics& k,
                               std::span<const Vec2> cot, double z_min = kDefaultZMin)
{
    if (cot.size() != pts.size()) fail(ErrorCode::ShapeMismatch, "cotangent count differs from point count");
    ProjectGrad g;
    g.points.resize(pts.size());
    const Mat3 r = p.rotation_matrix();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3 a = r * pts[i];
        const Vec3 c = a + p.translation;
        if (!(c.z() > z_min)) fail(ErrorCode::DepthBehindCamera, "point at camera depth " + std::to_string(c.z()));
        const double iz = 1.0 / c.z();
        const Vec3 gc(k.fx * iz * cot[i].x(), k.fy * iz * cot[i].y(),
                      -(k.fx * c.x() * cot[i].x() + k.fy * c.y() * cot[i].y()) * iz * iz);
        g.pose.head<3>() += a.cross(gc);
        g.pose.tail<3>() += gc;
        g.points[i] = r.transpose() * gc;
    }
    return g;
}

using Face = std::array<int, 3>;

struct TriangleMesh {
    Points3 vertices;
    std::vector<Face> faces;
    Points3 vertex_colors;
    double diameter = 0.0;
    /// Smallest index of a coincident vertex, so seams split for colors
    /// still count as shared edges. Empty means no welding.
    std::vector<int> welded;

    bool empty() const { return vertices.empty(); }
    int weld(int i) const { return welded.empty() ? i : welded[i]; }
};

inline double mesh_diameter(std::span<const Vec3> vertices)
{
    if (vertices.size() < 2) fail(ErrorCode::EmptyMesh, "diameter needs at least two vertices");
    double best = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i)
        for (std::size_t j = i + 1; j < vertices.size(); ++j)
            best = std::max(best, (vertices[i] - vertices[j]).squaredNorm());
    return std::sqrt(best);
}

inline double mesh_diameter(const TriangleMesh& mesh) { return mesh_diameter(mesh.vertices); }

inline constexpr double kDefaultGray = 0.7;

/// Validates indices and face areas, fills missing colors and caches the
/// diameter.
inline TriangleMesh make_mesh(Points3 vertices, std::vector<Face> faces, Points3 colors = {})
{
    if (vertices.empty()) fail(ErrorCode::EmptyMesh, "mesh has no vertices");
    if (colors.empty()) colors.assign(vertices.size(), Vec3::Constant(kDefaultGray));
    if (colors.size() != vertices.size()) fail(ErrorCode::ShapeMismatch, "vertex color count differs from vertex count");
    for (auto& c : colors) c = c.cwiseMax(0.0).cwiseMin(1.0);

    TriangleMesh mesh;
    mesh.vertices = std::move(vertices);
    mesh.faces = std::move(faces);
    mesh.vertex_colors = std::move(colors);
    mesh.diameter = mesh.vertices.size() >= 2 ? mesh_diameter(mesh) : 0.0;

    // Weld by sweeping along x; tolerance relative to the object size.
    {
        const double tol = 1e-9 * std::max(mesh.diameter, 1e-12);
        std::vector<int> order(mesh.vertices.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return mesh.vertices[a].x() < mesh.vertices[b].x() || (mesh.vertices[a].x() == mesh.vertices[b].x() && a < b);
        });
        mesh.welded.resize(mesh.vertices.size());
        std::iota(mesh.welded.begin(), mesh.welded.end(), 0);
        for (std::size_t i = 0; i < order.size(); ++i) {
            const int a = order[i];
            for (std::size_t j = i + 1; j < order.size(); ++j) {
                const int b = order[j];
                if (mesh.vertices[b].x() - mesh.vertices[a].x() > tol) break;
                if ((mesh.vertices[a] - mesh.vertices[b]).norm() <= tol) {
                    const int root = std::min(mesh.welded[a], mesh.welded[b]);
                    mesh.welded[a] = mesh.welded[b] = root;
                }
            }
        }
        for (std::size_t i = 0; i < mesh.welded.size(); ++i) mesh.welded[i] = mesh.welded[mesh.welded[i]];
    }

    const double area_eps = 1e-12 * std::max(mesh.diameter * mesh.diameter, 1e-12);
    const int n = static_cast<int>(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        for (int idx : mesh.faces[f])
            if (idx < 0 || idx >= n) fail(ErrorCode::DegenerateFace, "face " + std::to_string(f) + " index out of range");
        const Vec3& a = mesh.vertices[mesh.faces[f][0]];
        const Vec3& b = mesh.vertices[mesh.faces[f][1]];
        const Vec3& c = mesh.vertices[mesh.faces[f][2]];
        if (0.5 * (b - a).cross(c - a).norm() <= area_eps)
            fail(ErrorCode::DegenerateFace, "face " + std::to_string(f) + " has zero area");
    }
    return mesh;
}

struct Aabb {
    Vec3 min;
    Vec3 max;
};

inline Aabb bounding_box(const TriangleMesh& mesh)
{
    if (mesh.empty()) fail(ErrorCode::EmptyMesh, "bounding box of empty mesh");
    Aabb box{mesh.vertices.front(), mesh.vertices.front()};
    for (const auto& v : mesh.vertices) {
        box.min = box.min.cwiseMin(v);
        box.max = box.max.cwiseMax(v);
    }
    return box;
}

/// The 8 box corners ordered lexicographically over (sign_x, sign_y, sign_z),
/// minus before plus.
inline std::array<Vec3, 8> bbox_corners(const TriangleMesh& mesh)
{
    const Aabb box = bounding_box(mesh);
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
        out[i] = Vec3((i & 4) ? box.max.x() : box.min.x(),
                      (i & 2) ? box.max.y() : box.min.y(),
                      (i & 1) ? box.max.z() : box.min.z());
    }
    return out;
}

} // namespace psk
