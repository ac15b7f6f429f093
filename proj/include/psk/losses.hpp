#pragma once

// Training objectives: pose consistency between two representations,
// supervised Huber on synthetic labels, the perceptual proxy, the warp
// MS-SSIM loss and the weighted total; plus silhouette masking and
// occlusion patches.

#include "psk/representation.hpp"
#include "psk/ssim.hpp"

#include <random>

namespace psk {

struct LossWeights {
    double lambda_pose = 1.0;
    double lambda_sup = 1.0;
    double lambda_percep = 0.1;

    void validate() const
    {
        if (!(lambda_pose >= 0) || !(lambda_sup >= 0) || !(lambda_percep >= 0))
            fail(ErrorCode::ConfigError, "loss weights must be nonnegative");
        if (lambda_pose + lambda_sup + lambda_percep <= 0) fail(ErrorCode::ConfigError, "at least one loss weight must be > 0");
    }
};

/// Distinct model points M_v: one per welded vertex, so duplicated seam
/// vertices are not counted twice.
inline Points3 model_points(const TriangleMesh& mesh)
{
    Points3 out;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        if (mesh.weld(static_cast<int>(i)) == static_cast<int>(i)) out.push_back(mesh.vertices[i]);
    return out;
}

// ---- silhouette masking ----------------------------------------------------

inline void check_mask_pair(const ImageBuffer& image, const ImageBuffer& sil)
{
    if (sil.channels != 1 || !image.same_size(sil))
        fail(ErrorCode::ShapeMismatch, "silhouette must be single-channel and match the image size");
}

/// M(I, m) = I * m per pixel.
inline ImageBuffer silhouette_mask(const ImageBuffer& image, const ImageBuffer& sil)
{
    check_mask_pair(image, sil);
    ImageBuffer out = image;
    for (std::size_t i = 0; i < sil.data.size(); ++i)
        for (int c = 0; c < image.channels; ++c) out.data[i * image.channels + c] *= sil.data[i];
    return out;
}

/// d/d(sil) of <g, silhouette_mask(image, sil)>.
inline ImageBuffer silhouette_mask_vjp_sil(const ImageBuffer& image, const ImageBuffer& g)
{
    require_same_shape(image, g, "silhouette_mask cotangent");
    ImageBuffer out(image.width, image.height, 1);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        for (int c = 0; c < image.channels; ++c) out.data[i] += g.data[i * image.channels + c] * image.data[i * image.channels + c];
    return out;
}

// ---- occlusion patches -----------------------------------------------------

struct OcclusionSettings {
    int min_patches = 1;
    int max_patches = 3;
    double min_side = 0.1;  // fraction of the image side
    double max_side = 0.4;
    double noise_mean = 0.5;
    double noise_sigma = 0.25;
};

struct Patch {
    int x0, y0, w, h;
    bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
};

inline std::vector<Patch> sample_patches(int width, int height, std::mt19937_64& rng, const OcclusionSettings& s)
{
    std::uniform_int_distribution<int> count(s.min_patches, std::max(s.min_patches, s.max_patches));
    std::uniform_real_distribution<double> side(s.min_side, s.max_side);
    const int n = count(rng);
    std::vector<Patch> out;
    for (int i = 0; i < n; ++i) {
        const int w = std::clamp(static_cast<int>(std::lround(side(rng) * width)), 1, width);
        const int h = std::clamp(static_cast<int>(std::lround(side(rng) * height)), 1, height);
        std::uniform_int_distribution<int> px(0, width - w), py(0, height - h);
        const int x0 = px(rng);
        const int y0 = py(rng);
        out.push_back({x0, y0, w, h});
    }
    return out;
}

/// 1 outside every patch, 0 inside.
inline ImageBuffer patch_keep_mask(int width, int height, const std::vector<Patch>& patches)
{
    ImageBuffer keep(width, height, 1, 1.0);
    for (const auto& p : patches)
        for (int y = p.y0; y < p.y0 + p.h; ++y)
            for (int x = p.x0; x < p.x0 + p.w; ++x) keep.at(x, y) = 0.0;
    return keep;
}

/// Fills the patches with clipped Gaussian noise drawn from rng.
inline ImageBuffer apply_patches(const ImageBuffer& image, const std::vector<Patch>& patches, std::mt19937_64& rng,
                                 const OcclusionSettings& s = {})
{
    ImageBuffer out = image;
    std::normal_distribution<double> noise(s.noise_mean, s.noise_sigma);
    for (const auto& p : patches)
        for (int y = p.y0; y < p.y0 + p.h; ++y)
            for (int x = p.x0; x < p.x0 + p.w; ++x)
                for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = std::clamp(noise(rng), 0.0, 1.0);
    return out;
}

struct Occluded {
    ImageBuffer image;
    ImageBuffer sil;
    std::vector<Patch> patches;
};

/// Random noise rectangles on the image; the silhouette is zeroed under them.
inline Occluded occlusion_augment(const ImageBuffer& image, const ImageBuffer& sil, std::mt19937_64& rng,
                                  const OcclusionSettings& s = {})
{
    check_mask_pair(image, sil);
    Occluded o;
    o.patches = sample_patches(image.width, image.height, rng, s);
    o.image = apply_patches(image, o.patches, rng, s);
    o.sil = sil;
    const auto keep = patch_keep_mask(image.width, image.height, o.patches);
    for (std::size_t i = 0; i < o.sil.data.size(); ++i) o.sil.data[i] *= keep.data[i];
    return o;
}

// ---- pose consistency --------------------------------------------------------

/// Mean vertex distance between two poses and its gradient w.r.t. each pose
/// (chart (w, v)). At coincident vertices the subgradient 0 is used.
struct VertexDistance {
    double value = 0.0;
    Vec6 grad_a = Vec6::Zero();
    Vec6 grad_b = Vec6::Zero();
};

inline VertexDistance mean_vertex_distance(const Pose& a, const Pose& b, std::span<const Vec3> pts)
{
    if (pts.empty()) fail(ErrorCode::EmptyMesh, "no model points");
    VertexDistance r;
    const Mat3 ra = a.rotation_matrix(), rb = b.rotation_matrix();
    const double inv = 1.0 / static_cast<double>(pts.size());
    for (const auto& v : pts) {
        const Vec3 xa = ra * v, xb = rb * v;
        const Vec3 e = (xa + a.translation) - (xb + b.translation);
        const double d = e.norm();
        r.value += d * inv;
        if (d == 0.0) continue;
        const Vec3 g = e / d * inv;
        r.grad_a.head<3>() += xa.cross(g);
        r.grad_a.tail<3>() += g;
        r.grad_b.head<3>() -= xb.cross(g);
        r.grad_b.tail<3>() -= g;
    }
    return r;
}

struct PoseConsistency {
    double value = 0.0;
    Representation grad_h2, grad_h3;
    Pose pose2, pose3;
};

/// L_pose = mean_v |PnP(h2) v - PnP(h3) v|, gradients through the PnP VJP.
inline PoseConsistency pose_consistency_loss(const Representation& h2, const Representation& h3, const TriangleMesh& mesh,
                                             const Intrinsics& k, const PnpOptions& opt = {})
{
    if (h2.kind != h3.kind) fail(ErrorCode::KindMismatch, "pose consistency needs representations of one kind");
    const auto s2 = solve_representation(h2, mesh, k, opt);
    const auto s3 = solve_representation(h3, mesh, k, opt);
    const auto pts = model_points(mesh);
    const auto d = mean_vertex_distance(s2.result.pose, s3.result.pose, pts);
    PoseConsistency out;
    out.value = d.value;
    out.pose2 = s2.result.pose;
    out.pose3 = s3.result.pose;
    out.grad_h2 = d.grad_a.isZero(0.0) ? Representation::zeros_like(h2)
                                       : solve_representation_vjp(h2, mesh, k, s2, d.grad_a, pnp_options_for(h2.kind, opt));
    out.grad_h3 = d.grad_b.isZero(0.0) ? Representation::zeros_like(h3)
                                       : solve_representation_vjp(h3, mesh, k, s3, d.grad_b, pnp_options_for(h3.kind, opt));
    return out;
}

// ---- supervised Huber --------------------------------------------------------

inline double huber(double r, double delta)
{
    const double a = std::abs(r);
    return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

inline double huber_grad(double r, double delta) { return std::clamp(r, -delta, delta); }

inline constexpr double kHuberDeltaSparse = 1.0;   // pixels
inline constexpr double kHuberDeltaDense = 0.05;   // normalized object units

inline double default_huber_delta(RepresentationKind k) { return k == RepresentationKind::Sparse ? kHuberDeltaSparse : kHuberDeltaDense; }

struct RepresentationLoss {
    double value = 0.0;
    Representation grad;  // d value / d h_pred
};

/// Sparse: mean Huber over the 16 corner coordinates. Dense: mean Huber
/// over the coordinate channels of ground-truth foreground pixels plus the
/// mean L1 between the masks.
inline RepresentationLoss supervised_loss(const Representation& pred, const Representation& gt, double delta)
{
    require_same_layout(pred, gt);
    if (!(delta > 0)) fail(ErrorCode::InvalidArgument, "Huber delta must be positive");
    RepresentationLoss out;
    out.grad = Representation::zeros_like(pred);
    if (pred.kind == RepresentationKind::Sparse) {
        const double inv = 1.0 / (2.0 * static_cast<double>(pred.corners.size()));
        for (std::size_t i = 0; i < pred.corners.size(); ++i)
            for (int c = 0; c < 2; ++c) {
                const double r = pred.corners[i][c] - gt.corners[i][c];
                out.value += huber(r, delta) * inv;
                out.grad.corners[i][c] = huber_grad(r, delta) * inv;
            }
        return out;
    }
    std::size_t fg = 0;
    for (double m : gt.mask.data) fg += m >= 0.5 ? 1 : 0;
    const std::size_t n = gt.mask.data.size();
    if (fg > 0) {
        const double inv = 1.0 / (3.0 * static_cast<double>(fg));
        for (std::size_t i = 0; i < n; ++i) {
            if (gt.mask.data[i] < 0.5) continue;
            for (int c = 0; c < 3; ++c) {
                const double r = pred.coords.data[3 * i + c] - gt.coords.data[3 * i + c];
                out.value += huber(r, delta) * inv;
                out.grad.coords.data[3 * i + c] = huber_grad(r, delta) * inv;
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = pred.mask.data[i] - gt.mask.data[i];
        out.value += std::abs(r) * inv;
        out.grad.mask.data[i] = (r > 0 ? 1.0 : r < 0 ? -1.0 : 0.0) * inv;
    }
    return out;
}

// ---- perceptual proxy ----------------------------------------------------------

struct ImageLoss {
    double value = 0.0;
    ImageBuffer grad_a, grad_b;
};

namespace detail {

inline const std::vector<double>& binomial5()
{
    static const std::vector<double> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    return k;
}

/// Mean |grad a - grad b| (forward differences) of one plane; accumulates
/// the gradient w.r.t. a (w.r.t. b is its negative).
inline double gradient_l1(const Plane& a, const Plane& b, double scale, Plane* ga)
{
    const int w = a.w, h = a.h;
    const double n = static_cast<double>(std::max(1, (w - 1) * h + w * (h - 1)));
    double s = 0;
    auto term = [&](int x0, int y0, int x1, int y1) {
        const double r = (a(x1, y1) - a(x0, y0)) - (b(x1, y1) - b(x0, y0));
        s += std::abs(r);
        if (ga && r != 0.0) {
            const double g = (r > 0 ? 1.0 : -1.0) * scale / n;
            (*ga)(x1, y1) += g;
            (*ga)(x0, y0) -= g;
        }
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) term(x, y, x + 1, y);
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) term(x, y, x, y + 1);
    return s / n;
}

} // namespace detail

inline constexpr int kProxyPyramidLevels = 3;

/// Stand-in for a VGG feature distance: (1 - MS-SSIM) plus the mean L1
/// difference of image gradients on a 3-level Gaussian pyramid (averaged over
/// levels and channels).
inline ImageLoss perceptual_proxy(const ImageBuffer& a, const ImageBuffer& b, bool want_grad = true)
{
    require_same_shape(a, b, "perceptual_proxy");
    if (a.channels != 3) fail(ErrorCode::ShapeMismatch, "perceptual_proxy expects 3-channel images");
    const auto ms = ms_ssim_with_grad(a, b, nullptr, want_grad);
    ImageLoss out;
    out.value = 1.0 - ms.value;
    if (want_grad) {
        out.grad_a = ms.grad_a;
        out.grad_b = ms.grad_b;
        for (auto& v : out.grad_a.data) v = -v;
        for (auto& v : out.grad_b.data) v = -v;
    }
    const auto& k = detail::binomial5();
    const double scale = 1.0 / (kProxyPyramidLevels * a.channels);
    for (int c = 0; c < a.channels; ++c) {
        std::vector<detail::Plane> pa{detail::channel_plane(a, c)}, pb{detail::channel_plane(b, c)};
        for (int l = 1; l < kProxyPyramidLevels; ++l) {
            pa.push_back(detail::pool2(detail::blur(pa.back(), k)));
            pb.push_back(detail::pool2(detail::blur(pb.back(), k)));
        }
        std::vector<detail::Plane> ga;
        for (int l = 0; l < kProxyPyramidLevels; ++l) {
            ga.emplace_back(pa[l].w, pa[l].h);
            out.value += scale * detail::gradient_l1(pa[l], pb[l], scale, want_grad ? &ga[l] : nullptr);
        }
        if (!want_grad) continue;
        for (int l = kProxyPyramidLevels - 1; l > 0; --l) {
            detail::Plane up(pa[l - 1].w, pa[l - 1].h);
            detail::pool2_adjoint(ga[l], up);
            const auto back = detail::blur(up, k);  // blur is self-adjoint
            for (std::size_t i = 0; i < back.v.size(); ++i) ga[l - 1].v[i] += back.v[i];
        }
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                out.grad_a.at(x, y, c) += ga[0](x, y);
                out.grad_b.at(x, y, c) -= ga[0](x, y);
            }
    }
    return out;
}

// ---- warp loss -----------------------------------------------------------------

inline constexpr double kValidityThreshold = 0.5;

/// 1 - MS-SSIM(warped, M(target, sil)); pixels with validity below 0.5 are
/// left out of every SSIM window and mean. Gradient is w.r.t. `warped`.
inline ImageLoss warp_loss(const ImageBuffer& warped, const ImageBuffer& target, const ImageBuffer& target_sil,
                           const ImageBuffer* validity = nullptr, bool want_grad = true)
{
    require_same_shape(warped, target, "warp_loss");
    const auto masked = silhouette_mask(target, target_sil);
    ImageBuffer mask;
    if (validity) {
        check_mask_pair(warped, *validity);
        mask = ImageBuffer(warped.width, warped.height, 1);
        for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = validity->data[i] >= kValidityThreshold ? 1.0 : 0.0;
    }
    const auto ms = ms_ssim_with_grad(warped, masked, validity ? &mask : nullptr, want_grad);
    ImageLoss out;
    out.value = std::clamp(1.0 - ms.value, 0.0, 1.0);
    if (want_grad) {
        out.grad_a = ms.grad_a;
        for (auto& v : out.grad_a.data) v = -v;
    }
    return out;
}

// ---- total -------------------------------------------------------------------------

struct LossParts {
    double l_pose = 0.0, l_sup = 0.0, l_percep = 0.0;
    std::vector<double> grad_pose, grad_sup, grad_percep;  // d part / d theta; empty = zero
};

struct LossReport {
    double l_pose = 0.0, l_sup = 0.0, l_percep = 0.0, l_total = 0.0;
    std::vector<double> grad_theta;
};

inline LossReport total_loss(const LossParts& p, const LossWeights& w)
{
    for (double v : {p.l_pose, p.l_sup, p.l_percep})
        if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite loss component");
    LossReport r{p.l_pose, p.l_sup, p.l_percep, 0.0, {}};
    r.l_total = w.lambda_pose * p.l_pose + w.lambda_sup * p.l_sup + w.lambda_percep * p.l_percep;
    const std::size_t n = std::max({p.grad_pose.size(), p.grad_sup.size(), p.grad_percep.size()});
    r.grad_theta.assign(n, 0.0);
    auto add = [&](const std::vector<double>& g, double lambda) {
        if (g.empty() || lambda == 0.0) return;
        if (g.size() != n) fail(ErrorCode::ShapeMismatch, "loss gradients differ in length");
        for (std::size_t i = 0; i < n; ++i) r.grad_theta[i] += lambda * g[i];
    };
    add(p.grad_pose, w.lambda_pose);
    add(p.grad_sup, w.lambda_sup);
    add(p.grad_percep, w.lambda_percep);
    for (double v : r.grad_theta)
        if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite loss gradient");
    return r;
}

} // namespace psk
