#pragma once

#include "psk/geometry.hpp"
#include "psk/image.hpp"

#include <limits>
#include <map>

namespace psk {

struct RenderSettings {
    /// Soft-silhouette edge width in pixels.
    double sigma = 1.0;
    /// Pixels farther than cutoff_sigmas * sigma from the outline saturate to 0/1.
    double cutoff_sigmas = 20.0;
    double hit_threshold = 0.5;
    /// Headlight shading: ambient + diffuse * |cos(normal, view ray)|.
    double ambient = 0.8;
    double diffuse = 0.2;
    double z_min = kDefaultZMin;
};

struct RenderOutput {
    ImageBuffer color;
    ImageBuffer depth;
    ImageBuffer silhouette;
    Pose pose_used;
};

namespace detail {

/// Mesh vertices in camera frame and their pixel projections.
struct ProjectedMesh {
    Points3 cam;
    Points2 px;
};

inline ProjectedMesh project_mesh(const Pose& p, const TriangleMesh& mesh, const Intrinsics& k, double z_min)
{
    if (mesh.empty()) fail(ErrorCode::EmptyMesh, "cannot render an empty mesh");
    ProjectedMesh pm;
    pm.cam = transform_points(p, mesh.vertices);
    pm.px.reserve(pm.cam.size());
    for (const auto& c : pm.cam) {
        if (!(c.z() > z_min)) fail(ErrorCode::DepthBehindCamera, "vertex at camera depth " + std::to_string(c.z()));
        pm.px.push_back(k.project_camera_point(c));
    }
    return pm;
}

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Nearest-face raster: per pixel the winning face (or -1), the screen-space
/// barycentrics of the pixel center and the perspective-correct depth.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<int> face;
    std::vector<Vec3> screen_bary;
    std::vector<double> depth;
};

inline Raster rasterize(const ProjectedMesh& pm, const TriangleMesh& mesh, const Intrinsics& k)
{
    Raster r;
    r.width = k.width;
    r.height = k.height;
    const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
    r.face.assign(n, -1);
    r.screen_bary.assign(n, Vec3::Zero());
    r.depth.assign(n, 0.0);
    std::vector<double> zbuf(n, std::numeric_limits<double>::infinity());

    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& tri = mesh.faces[f];
        const Vec2& a = pm.px[tri[0]];
        const Vec2& b = pm.px[tri[1]];
        const Vec2& c = pm.px[tri[2]];
        const double area = cross2(b - a, c - a);
        const double scale = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
        if (std::abs(area) <= 1e-12 * scale || scale == 0.0) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
        const int x1 = std::min(k.width - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
        const int y1 = std::min(k.height - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
        const double iza = 1.0 / pm.cam[tri[0]].z();
        const double izb = 1.0 / pm.cam[tri[1]].z();
        const double izc = 1.0 / pm.cam[tri[2]].z();
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Vec2 q(x, y);
                const double la = cross2(c - b, q - b) / area;
                const double lb = cross2(a - c, q - c) / area;
                const double lc = 1.0 - la - lb;
                if (la < 0.0 || lb < 0.0 || lc < 0.0) continue;
                const double z = 1.0 / (la * iza + lb * izb + lc * izc);
                const std::size_t i = static_cast<std::size_t>(y) * k.width + x;
                if (z < zbuf[i]) {
                    zbuf[i] = z;
                    r.face[i] = static_cast<int>(f);
                    r.screen_bary[i] = Vec3(la, lb, lc);
                    r.depth[i] = z;
                }
            }
        }
    }
    return r;
}

/// Perspective-correct barycentrics from screen-space ones.
inline Vec3 perspective_bary(const Vec3& screen, double za, double zb, double zc)
{
    const Vec3 w(screen.x() / za, screen.y() / zb, screen.z() / zc);
    return w / w.sum();
}

/// Silhouette outline piece: projected mesh edge between a front- and a
/// back-facing face (or an open boundary edge). `inside` orients the 2D line
/// so that inside_sign * cross(pb - pa, q - pa) > 0 on the covered side.
struct ContourSegment {
    int a;
    int b;
    double inside_sign;
};

inline bool strictly_inside(const Vec2& q, const Vec2& a, const Vec2& b, const Vec2& c)
{
    const double area = cross2(b - a, c - a);
    const double scale = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
    if (std::abs(area) <= 1e-12 * scale || scale == 0.0) return false;
    const double la = cross2(c - b, q - b) / area;
    const double lb = cross2(a - c, q - c) / area;
    const double eps = 1e-7;
    return la > eps && lb > eps && 1.0 - la - lb > eps;
}

inline std::vector<ContourSegment> contour_segments(const ProjectedMesh& pm, const TriangleMesh& mesh)
{
    std::vector<char> front(mesh.faces.size(), 0);
    std::map<std::pair<int, int>, std::vector<int>> edges;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        const Vec3 n = (pm.cam[t[1]] - pm.cam[t[0]]).cross(pm.cam[t[2]] - pm.cam[t[0]]);
        front[f] = n.dot(pm.cam[t[0]]) < 0.0;
        for (int e = 0; e < 3; ++e) {
            const int u = mesh.weld(t[e]), v = mesh.weld(t[(e + 1) % 3]);
            edges[{std::min(u, v), std::max(u, v)}].push_back(static_cast<int>(f));
        }
    }
    std::vector<ContourSegment> out;
    for (const auto& [key, faces] : edges) {
        std::size_t n_front = 0;
        for (int f : faces) n_front += front[f];
        const bool contour = faces.size() == 1 || (n_front > 0 && n_front < faces.size());
        if (!contour) continue;
        int ref = faces[0];
        for (int f : faces)
            if (front[f]) {
                ref = f;
                break;
            }
        const auto& t = mesh.faces[ref];
        int third = t[0];
        for (int v : t)
            if (mesh.weld(v) != key.first && mesh.weld(v) != key.second) third = v;
        const Vec2& pa = pm.px[key.first];
        const Vec2& pb = pm.px[key.second];
        const double side = cross2(pb - pa, pm.px[third] - pa);
        if ((pb - pa).squaredNorm() < 1e-24 || side == 0.0) continue;
        // Edges buried inside another face's projection are not outline.
        const Vec2 mid = 0.5 * (pa + pb);
        bool buried = false;
        for (const auto& g : mesh.faces) {
            if (strictly_inside(mid, pm.px[g[0]], pm.px[g[1]], pm.px[g[2]])) {
                buried = true;
                break;
            }
        }
        if (!buried) out.push_back({key.first, key.second, side > 0.0 ? 1.0 : -1.0});
    }
    return out;
}

/// Distance from q to segment (pa, pb). `grad` (optional) receives the
/// derivative of the signed outline distance sgn * dist w.r.t. (pa, pb).
inline double segment_distance(const Vec2& q, const Vec2& pa, const Vec2& pb, double inside_sign, double sgn,
                               std::array<Vec2, 2>* grad)
{
    const Vec2 e = pb - pa;
    const Vec2 w = q - pa;
    const double l2 = e.squaredNorm();
    const double t = w.dot(e) / l2;
    if (t > 0.0 && t < 1.0) {
        const double L = std::sqrt(l2);
        const double cr = cross2(e, w);
        const double line = inside_sign * cr / L;
        if (grad) {
            const double f = line == 0.0 ? 1.0 : sgn * (line > 0.0 ? 1.0 : -1.0);
            const Vec2 dc_db(w.y(), -w.x());
            const Vec2 dc_da(-w.y() + e.y(), w.x() - e.x());
            const Vec2 dl_db = e / L;
            const double s = f * inside_sign;
            (*grad)[1] = s * (dc_db / L - cr * dl_db / l2);
            (*grad)[0] = s * (dc_da / L + cr * dl_db / l2);
        }
        return std::abs(line);
    }
    const Vec2& p = t <= 0.0 ? pa : pb;
    const double d = (q - p).norm();
    if (grad) {
        *grad = {Vec2::Zero(), Vec2::Zero()};
        if (d > 0.0) (*grad)[t <= 0.0 ? 0 : 1] = sgn * (p - q) / d;
    }
    return d;
}

/// Exponent of the soft minimum over outline segments,
/// u = (sum_j d_j^-p)^(-1/p): zero exactly on the outline, smooth across the
/// medial axis where the plain minimum has a kink.
inline constexpr double kSoftMinPower = 8.0;

struct SoftSilhouetteState {
    std::vector<ContourSegment> segments;
    std::vector<char> near;     // some outline segment lies within the cutoff
    std::vector<char> covered;  // hard raster coverage of the pixel center
    std::vector<double> dmin;   // exact distance to the outline (within cutoff)
    std::vector<double> dist;   // soft-min distance u
    std::vector<double> value;
    double cutoff = 0.0;
};

struct SegmentRegion {
    int x0, x1, y0, y1;
};

inline SegmentRegion segment_region(const Vec2& pa, const Vec2& pb, double cutoff, const Intrinsics& k)
{
    return {std::max(0, static_cast<int>(std::ceil(std::min(pa.x(), pb.x()) - cutoff))),
            std::min(k.width - 1, static_cast<int>(std::floor(std::max(pa.x(), pb.x()) + cutoff))),
            std::max(0, static_cast<int>(std::ceil(std::min(pa.y(), pb.y()) - cutoff))),
            std::min(k.height - 1, static_cast<int>(std::floor(std::max(pa.y(), pb.y()) + cutoff)))};
}

inline SoftSilhouetteState soft_silhouette_state(const ProjectedMesh& pm, const TriangleMesh& mesh, const Raster& r,
                                                 const Intrinsics& k, const RenderSettings& s)
{
    if (!(s.sigma > 0.0)) fail(ErrorCode::InvalidArgument, "sigma must be positive");
    SoftSilhouetteState st;
    const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
    st.segments = contour_segments(pm, mesh);
    st.cutoff = s.cutoff_sigmas * s.sigma;
    st.near.assign(n, 0);
    st.covered.assign(n, 0);
    st.dmin.assign(n, std::numeric_limits<double>::infinity());
    st.dist.assign(n, 0.0);
    st.value.assign(n, 0.0);

    auto for_each_in_range = [&](auto&& fn) {
        for (const auto& seg : st.segments) {
            const Vec2& pa = pm.px[seg.a];
            const Vec2& pb = pm.px[seg.b];
            const auto reg = segment_region(pa, pb, st.cutoff, k);
            for (int y = reg.y0; y <= reg.y1; ++y)
                for (int x = reg.x0; x <= reg.x1; ++x) {
                    const double d = segment_distance(Vec2(x, y), pa, pb, seg.inside_sign, 1.0, nullptr);
                    if (d <= st.cutoff) fn(static_cast<std::size_t>(y) * k.width + x, d);
                }
        }
    };
    for_each_in_range([&](std::size_t i, double d) {
        st.near[i] = 1;
        st.dmin[i] = std::min(st.dmin[i], d);
    });
    std::vector<double> acc(n, 0.0);
    for_each_in_range([&](std::size_t i, double d) {
        acc[i] += st.dmin[i] > 0.0 ? std::pow(st.dmin[i] / d, kSoftMinPower) : 0.0;
    });

    const double below_half = std::nextafter(0.5, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        st.covered[i] = r.face[i] >= 0;
        if (!st.near[i]) {
            st.value[i] = st.covered[i] ? 1.0 : 0.0;
            continue;
        }
        st.dist[i] = st.dmin[i] > 0.0 ? st.dmin[i] * std::pow(acc[i], -1.0 / kSoftMinPower) : 0.0;
        const double sd = st.covered[i] ? st.dist[i] : -st.dist[i];
        st.value[i] = 1.0 / (1.0 + std::exp(-sd / s.sigma));
        if (!st.covered[i]) st.value[i] = std::min(st.value[i], below_half);
    }
    return st;
}

} // namespace detail

/// Nearest-hit camera-frame depth per pixel, 0 where no face covers the
/// pixel center.
inline ImageBuffer render_depth(const Pose& p, const TriangleMesh& mesh, const Intrinsics& k,
                                double z_min = kDefaultZMin)
{
    const auto pm = detail::project_mesh(p, mesh, k, z_min);
    const auto r = detail::rasterize(pm, mesh, k);
    ImageBuffer out(k.width, k.height, 1);
    out.data = r.depth;
    return out;
}

/// Per-pixel object-frame surface point under the nearest face (3 channels)
/// and the binary coverage mask.
struct CoordinateRender {
    ImageBuffer points;
    ImageBuffer mask;
};

inline CoordinateRender render_object_points(const Pose& p, const TriangleMesh& mesh, const Intrinsics& k,
                                             double z_min = kDefaultZMin)
{
    const auto pm = detail::project_mesh(p, mesh, k, z_min);
    const auto r = detail::rasterize(pm, mesh, k);
    CoordinateRender out{ImageBuffer(k.width, k.height, 3), ImageBuffer(k.width, k.height, 1)};
    for (std::size_t i = 0; i < r.face.size(); ++i) {
        if (r.face[i] < 0) continue;
        const auto& tri = mesh.faces[r.face[i]];
        const Vec3 w = detail::perspective_bary(r.screen_bary[i], pm.cam[tri[0]].z(), pm.cam[tri[1]].z(), pm.cam[tri[2]].z());
        const Vec3 x = w.x() * mesh.vertices[tri[0]] + w.y() * mesh.vertices[tri[1]] + w.z() * mesh.vertices[tri[2]];
        for (int c = 0; c < 3; ++c) out.points.data[i * 3 + c] = x[c];
        out.mask.data[i] = 1.0;
    }
    return out;
}

/// Soft coverage o(px) = sigmoid(d / sigma), d the signed distance from
/// the pixel center to the projected silhouette outline (positive inside).
inline ImageBuffer soft_silhouette(const Pose& p, const TriangleMesh& mesh, const Intrinsics& k, double sigma = 1.0,
                                   const RenderSettings& settings = {})
{
    RenderSettings s = settings;
    s.sigma = sigma;
    const auto pm = detail::project_mesh(p, mesh, k, s.z_min);
    const auto r = detail::rasterize(pm, mesh, k);
    const auto st = detail::soft_silhouette_state(pm, mesh, r, k, s);
    ImageBuffer out(k.width, k.height, 1);
    out.data = st.value;
    return out;
}

/// Gradient of sum(cotangent * soft_silhouette) with respect to the pose
/// tangent (rotation on the left, additive translation).
inline Vec6 soft_silhouette_vjp(const Pose& p, const TriangleMesh& mesh, const Intrinsics& k, double sigma,
                                const ImageBuffer& cotangent, const RenderSettings& settings = {})
{
    if (cotangent.width != k.width || cotangent.height != k.height || cotangent.channels != 1)
        fail(ErrorCode::ShapeMismatch, "silhouette cotangent must be a 1-channel image of the render size");
    RenderSettings s = settings;
    s.sigma = sigma;
    const auto pm = detail::project_mesh(p, mesh, k, s.z_min);
    const auto r = detail::rasterize(pm, mesh, k);
    const auto st = detail::soft_silhouette_state(pm, mesh, r, k, s);

    // dL/du per pixel; du/dd_j = (u / d_j)^(p + 1), or an even split among
    // segments touching the pixel when u = 0.
    const std::size_t n = st.value.size();
    std::vector<double> g_u(n, 0.0);
    std::vector<int> touching(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!st.near[i] || cotangent.data[i] == 0.0) continue;
        const double o = st.value[i];
        g_u[i] = (st.covered[i] ? 1.0 : -1.0) * cotangent.data[i] * o * (1.0 - o) / s.sigma;
    }
    for (const auto& seg : st.segments) {
        const auto reg = detail::segment_region(pm.px[seg.a], pm.px[seg.b], st.cutoff, k);
        for (int y = reg.y0; y <= reg.y1; ++y)
            for (int x = reg.x0; x <= reg.x1; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * k.width + x;
                if (g_u[i] != 0.0 && st.dmin[i] == 0.0 &&
                    detail::segment_distance(Vec2(x, y), pm.px[seg.a], pm.px[seg.b], seg.inside_sign, 1.0, nullptr) == 0.0)
                    ++touching[i];
            }
    }

    Points2 g_px(pm.px.size(), Vec2::Zero());
    std::array<Vec2, 2> grad;
    for (const auto& seg : st.segments) {
        const Vec2& pa = pm.px[seg.a];
        const Vec2& pb = pm.px[seg.b];
        const auto reg = detail::segment_region(pa, pb, st.cutoff, k);
        Vec2 acc_a = Vec2::Zero(), acc_b = Vec2::Zero();
        for (int y = reg.y0; y <= reg.y1; ++y)
            for (int x = reg.x0; x <= reg.x1; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * k.width + x;
                if (g_u[i] == 0.0) continue;
                const double sgn = st.covered[i] ? 1.0 : -1.0;
                const double d = detail::segment_distance(Vec2(x, y), pa, pb, seg.inside_sign, sgn, &grad);
                if (d > st.cutoff) continue;
                double w;
                if (st.dmin[i] == 0.0)
                    w = d == 0.0 ? 1.0 / touching[i] : 0.0;
                else
                    w = std::pow(st.dist[i] / d, detail::kSoftMinPower + 1.0);
                // grad holds d(sgn * d_j); g_u already carries sgn.
                const double c = g_u[i] * w * sgn;
                acc_a += c * grad[0];
                acc_b += c * grad[1];
            }
        g_px[seg.a] += acc_a;
        g_px[seg.b] += acc_b;
    }
    return project_vjp(p, mesh.vertices, k, g_px, s.z_min).pose;
}

/// Hard z-buffer color/depth plus the soft silhouette. The silhouette is
/// >= 0.5 exactly on raster-covered pixels, so depth is 0 wherever it falls
/// below the hit threshold.
inline RenderOutput render(const Pose& p, const TriangleMesh& mesh, const Intrinsics& k, const RenderSettings& s = {})
{
    const auto pm = detail::project_mesh(p, mesh, k, s.z_min);
    const auto r = detail::rasterize(pm, mesh, k);
    const auto st = detail::soft_silhouette_state(pm, mesh, r, k, s);

    std::vector<double> face_shade(mesh.faces.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& tri = mesh.faces[f];
        const Vec3& a = pm.cam[tri[0]];
        const Vec3& b = pm.cam[tri[1]];
        const Vec3& c = pm.cam[tri[2]];
        const Vec3 n = (b - a).cross(c - a).normalized();
        const Vec3 view = -((a + b + c) / 3.0).normalized();
        face_shade[f] = s.ambient + s.diffuse * std::abs(n.dot(view));
    }

    RenderOutput out;
    out.color = ImageBuffer(k.width, k.height, 3);
    out.depth = ImageBuffer(k.width, k.height, 1);
    out.silhouette = ImageBuffer(k.width, k.height, 1);
    out.silhouette.data = st.value;
    out.pose_used = p;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * k.width + x;
            if (r.face[i] >= 0) {
                // vertex colors interpolated perspective-correctly, flat shading per face
                const auto& tri = mesh.faces[r.face[i]];
                const Vec3 w = detail::perspective_bary(r.screen_bary[i], pm.cam[tri[0]].z(), pm.cam[tri[1]].z(),
                                                        pm.cam[tri[2]].z());
                const Vec3 base =
                    w.x() * mesh.vertex_colors[tri[0]] + w.y() * mesh.vertex_colors[tri[1]] + w.z() * mesh.vertex_colors[tri[2]];
                const Vec3 col = (face_shade[r.face[i]] * base).cwiseMax(0.0).cwiseMin(1.0);
                for (int c = 0; c < 3; ++c) out.color.data[i * 3 + c] = col[c];
            }
            if (st.value[i] >= s.hit_threshold && r.face[i] >= 0) out.depth.data[i] = r.depth[i];
        }
    }
    return out;
}

} // namespace psk
