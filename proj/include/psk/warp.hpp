#pragma once

// Depth-based reprojection of a source view into a target view: relative
// camera transform from two object poses, backprojection of the source
// depth, and a forward bilinear splat with a depth band standing in for the
// z-buffer.

#include "psk/geometry.hpp"
#include "psk/image.hpp"

namespace psk {

inline constexpr double kPairAngleMaxDeg = 60.0;

struct ViewPair {
    std::size_t source_index = 0, target_index = 0;
    ImageBuffer source_image, target_image;
    Pose source_pose, target_pose;
    double angular_gap = 0.0;  // degrees
};

inline ViewPair make_view_pair(std::size_t s, std::size_t t, ImageBuffer src, ImageBuffer tgt, const Pose& ps, const Pose& pt,
                               double max_gap_deg = kPairAngleMaxDeg)
{
    const double gap = rad2deg(rotation_angle(ps, pt));
    if (!(gap < max_gap_deg))
        fail(ErrorCode::InvalidArgument, "view pair gap " + std::to_string(gap) + " deg is not below " + std::to_string(max_gap_deg));
    return {s, t, std::move(src), std::move(tgt), ps, pt, gap};
}

/// T_{s->t} = pose_t o pose_s^-1: maps source-camera points to target-camera points.
inline Pose relative_transform(const Pose& pose_s, const Pose& pose_t) { return compose(pose_t, inverse(pose_s)); }

struct RelativeGrad {
    Vec6 source = Vec6::Zero();
    Vec6 target = Vec6::Zero();
};

/// Pulls a cotangent on T back to both poses (all in the (w, v) chart).
inline RelativeGrad relative_transform_vjp(const Pose& pose_s, const Pose& pose_t, const Vec6& g_t)
{
    const Pose t = relative_transform(pose_s, pose_t);
    const Mat3 rt = t.rotation_matrix();
    const Vec3 c = rt * pose_s.translation;
    const Vec3 a = g_t.head<3>(), b = g_t.tail<3>();
    RelativeGrad g;
    g.target.head<3>() = a + b.cross(c);
    g.target.tail<3>() = b;
    g.source.head<3>() = rt.transpose() * (c.cross(b) - a);
    g.source.tail<3>() = -rt.transpose() * b;
    return g;
}

struct BackProjection {
    Points3 points;                  // camera frame
    std::vector<std::size_t> pixel;  // flat source pixel index
};

inline BackProjection backproject(const ImageBuffer& depth, const Intrinsics& k)
{
    if (depth.channels != 1 || depth.width != k.width || depth.height != k.height)
        fail(ErrorCode::ShapeMismatch, "depth map must be single-channel at the intrinsics' size");
    BackProjection out;
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            const double z = depth.at(x, y);
            if (!(z > 0.0)) continue;
            out.points.push_back(k.backproject(x, y, z));
            out.pixel.push_back(static_cast<std::size_t>(y) * depth.width + x);
        }
    return out;
}

struct WarpSettings {
    /// Contributions within (1 + depth_band) * nearest depth of a target
    /// pixel are blended; farther ones are occluded.
    double depth_band = 0.005;  // 2.5 mm at 0.5 m; wider bands blend in faces seen edge-on behind the front one
    double z_min = kDefaultZMin;
};

struct WarpOutput {
    ImageBuffer warped;    // 3 channels, normalized splat colors
    ImageBuffer validity;  // 1 channel, accumulated splat weight clamped to [0, 1]
};

namespace detail {

struct Splat {
    int x0, y0;       // top-left target pixel of the bilinear footprint
    double fx, fy;    // fractional offsets
    double z;
    bool valid;
};

inline Splat splat_of(const Vec3& xt, const Intrinsics& k, double z_min)
{
    Splat s{0, 0, 0, 0, xt.z(), false};
    if (!(xt.z() > z_min)) return s;
    const Vec2 u = k.project_camera_point(xt);
    if (!u.allFinite()) return s;
    const double flx = std::floor(u.x()), fly = std::floor(u.y());
    if (flx < -1 || fly < -1 || flx > k.width || fly > k.height) return s;
    s.x0 = static_cast<int>(flx);
    s.y0 = static_cast<int>(fly);
    s.fx = u.x() - flx;
    s.fy = u.y() - fly;
    s.valid = true;
    return s;
}

inline std::array<double, 4> splat_weights(const Splat& s)
{
    return {(1 - s.fx) * (1 - s.fy), s.fx * (1 - s.fy), (1 - s.fx) * s.fy, s.fx * s.fy};
}

inline constexpr std::array<std::array<int, 2>, 4> kSplatOffsets{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}};

/// Shared forward pass; keeps the per-point splats and the nearest depth.
struct WarpState {
    BackProjection bp;
    std::vector<Splat> splats;
    std::vector<double> znear;  // per target pixel, +inf if nothing lands
    std::vector<double> bsum;   // accepted weight per target pixel
    WarpOutput out;
};

inline WarpState warp_state(const ImageBuffer& src, const ImageBuffer& src_depth, const Pose& t, const Intrinsics& k,
                            const WarpSettings& ws)
{
    if (src.channels != 3 || src.width != k.width || src.height != k.height)
        fail(ErrorCode::ShapeMismatch, "warp source must be a 3-channel image at the intrinsics' size");
    if (!src_depth.same_size(src)) fail(ErrorCode::ShapeMismatch, "warp source image and depth differ in size");
    WarpState st;
    st.bp = backproject(src_depth, k);
    const std::size_t npx = static_cast<std::size_t>(k.width) * k.height;
    st.znear.assign(npx, std::numeric_limits<double>::infinity());
    st.bsum.assign(npx, 0.0);
    const Mat3 r = t.rotation_matrix();
    st.splats.reserve(st.bp.points.size());
    for (const auto& p : st.bp.points) st.splats.push_back(splat_of(r * p + t.translation, k, ws.z_min));

    auto for_each_tap = [&](const Splat& s, auto&& fn) {
        const auto w = splat_weights(s);
        for (int j = 0; j < 4; ++j) {
            const int x = s.x0 + kSplatOffsets[j][0], y = s.y0 + kSplatOffsets[j][1];
            if (w[j] <= 0.0 || x < 0 || y < 0 || x >= k.width || y >= k.height) continue;
            fn(j, static_cast<std::size_t>(y) * k.width + x, w[j]);
        }
    };
    for (const auto& s : st.splats)
        if (s.valid) for_each_tap(s, [&](int, std::size_t q, double) { st.znear[q] = std::min(st.znear[q], s.z); });

    std::vector<double> csum(3 * npx, 0.0);
    for (std::size_t i = 0; i < st.splats.size(); ++i) {
        const auto& s = st.splats[i];
        if (!s.valid) continue;
        const std::size_t sp = st.bp.pixel[i];
        for_each_tap(s, [&](int, std::size_t q, double w) {
            if (s.z > st.znear[q] * (1.0 + ws.depth_band)) return;
            st.bsum[q] += w;
            for (int c = 0; c < 3; ++c) csum[3 * q + c] += w * src.data[3 * sp + c];
        });
    }
    st.out.warped = ImageBuffer(k.width, k.height, 3);
    st.out.validity = ImageBuffer(k.width, k.height, 1);
    for (std::size_t q = 0; q < npx; ++q) {
        if (!(st.bsum[q] > 0.0)) continue;
        for (int c = 0; c < 3; ++c) st.out.warped.data[3 * q + c] = csum[3 * q + c] / st.bsum[q];
        st.out.validity.data[q] = std::min(1.0, st.bsum[q]);
    }
    return st;
}

} // namespace detail

/// Forward-splats every foreground source pixel (depth > 0) through T into
/// the target view.
inline WarpOutput warp_source_to_target(const ImageBuffer& src, const ImageBuffer& src_depth, const Pose& t,
                                        const Intrinsics& k, const WarpSettings& ws = {})
{
    return detail::warp_state(src, src_depth, t, k, ws).out;
}

/// VJP of the warp w.r.t. T for cotangents on the warped colors and
/// (optionally) on the validity. Depth-band membership is held fixed; the
/// source depth and image are treated as constants.
inline Vec6 warp_vjp(const ImageBuffer& src, const ImageBuffer& src_depth, const Pose& t, const Intrinsics& k,
                     const ImageBuffer& g_warped, const ImageBuffer* g_validity = nullptr, const WarpSettings& ws = {})
{
    const auto st = detail::warp_state(src, src_depth, t, k, ws);
    require_same_shape(g_warped, st.out.warped, "warp cotangent");
    if (g_validity) require_same_shape(*g_validity, st.out.validity, "warp validity cotangent");

    Points3 pts;
    Points2 cot;
    for (std::size_t i = 0; i < st.splats.size(); ++i) {
        const auto& s = st.splats[i];
        if (!s.valid) continue;
        const std::size_t sp = st.bp.pixel[i];
        // d w_j / d(fx, fy) for the four taps
        const std::array<Vec2, 4> dw{Vec2(-(1 - s.fy), -(1 - s.fx)), Vec2(1 - s.fy, -s.fx), Vec2(-s.fy, 1 - s.fx),
                                     Vec2(s.fy, s.fx)};
        const auto w = detail::splat_weights(s);
        Vec2 g = Vec2::Zero();
        for (int j = 0; j < 4; ++j) {
            const int x = s.x0 + detail::kSplatOffsets[j][0], y = s.y0 + detail::kSplatOffsets[j][1];
            if (w[j] <= 0.0 || x < 0 || y < 0 || x >= k.width || y >= k.height) continue;
            const std::size_t q = static_cast<std::size_t>(y) * k.width + x;
            if (s.z > st.znear[q] * (1.0 + ws.depth_band)) continue;
            // C = sum b c / B  =>  dC/db_i = (c_i - C) / B ;  V = min(B, 1)
            double gb = 0;
            for (int c = 0; c < 3; ++c)
                gb += g_warped.data[3 * q + c] * (src.data[3 * sp + c] - st.out.warped.data[3 * q + c]) / st.bsum[q];
            if (g_validity && st.bsum[q] < 1.0) gb += g_validity->data[q];
            g += gb * dw[j];
        }
        if (g.isZero(0.0)) continue;
        pts.push_back(st.bp.points[i]);
        cot.push_back(g);
    }
    if (pts.empty()) return Vec6::Zero();
    return project_vjp(t, pts, k, cot, ws.z_min).pose;
}

} // namespace psk
