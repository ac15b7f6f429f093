#pragma once

// Intermediate representation h: either the 8 projected bounding-box
// corners (BB8-style) or a per-pixel normalized object-coordinate map with a
// mask (Pix2Pose-style), plus the adapters to and from PnP.

#include "psk/pnp.hpp"
#include "psk/renderer.hpp"

namespace psk {

enum class RepresentationKind { Sparse, Dense };

inline const char* to_string(RepresentationKind k) { return k == RepresentationKind::Sparse ? "sparse" : "dense"; }

inline RepresentationKind parse_representation_kind(const std::string& s)
{
    if (s == "sparse") return RepresentationKind::Sparse;
    if (s == "dense") return RepresentationKind::Dense;
    fail(ErrorCode::ConfigError, "unknown representation kind '" + s + "'");
}

/// Also used as its own cotangent type.
struct Representation {
    RepresentationKind kind = RepresentationKind::Sparse;
    Points2 corners;     // sparse: 8 pixels in bbox_corners order
    ImageBuffer coords;  // dense: 3 channels, object coordinates normalized by the bbox
    ImageBuffer mask;    // dense: 1 channel in [0, 1]

    static Representation sparse(Points2 px)
    {
        Representation h;
        h.kind = RepresentationKind::Sparse;
        h.corners = std::move(px);
        return h;
    }
    static Representation dense(ImageBuffer coords, ImageBuffer mask)
    {
        if (coords.channels != 3 || mask.channels != 1 || !coords.same_size(mask))
            fail(ErrorCode::ShapeMismatch, "dense representation needs 3-channel coords and a same-size mask");
        Representation h;
        h.kind = RepresentationKind::Dense;
        h.coords = std::move(coords);
        h.mask = std::move(mask);
        return h;
    }
    /// Zero cotangent with the same layout as `like`.
    static Representation zeros_like(const Representation& like)
    {
        Representation h;
        h.kind = like.kind;
        h.corners.assign(like.corners.size(), Vec2::Zero());
        if (like.kind == RepresentationKind::Dense) {
            h.coords = ImageBuffer(like.coords.width, like.coords.height, 3);
            h.mask = ImageBuffer(like.mask.width, like.mask.height, 1);
        }
        return h;
    }

    /// Flat view: 16 numbers for sparse, (x, y, z, mask) per pixel for dense.
    std::vector<double> flatten() const
    {
        std::vector<double> v;
        if (kind == RepresentationKind::Sparse) {
            for (const auto& c : corners) {
                v.push_back(c.x());
                v.push_back(c.y());
            }
            return v;
        }
        const std::size_t n = mask.data.size();
        v.resize(4 * n);
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) v[4 * i + c] = coords.data[3 * i + c];
            v[4 * i + 3] = mask.data[i];
        }
        return v;
    }
    /// Inverse of flatten, keeping this representation's layout.
    void assign_flat(std::span<const double> v)
    {
        if (kind == RepresentationKind::Sparse) {
            if (v.size() != 2 * corners.size()) fail(ErrorCode::ShapeMismatch, "flat sparse size mismatch");
            for (std::size_t i = 0; i < corners.size(); ++i) corners[i] = Vec2(v[2 * i], v[2 * i + 1]);
            return;
        }
        if (v.size() != 4 * mask.data.size()) fail(ErrorCode::ShapeMismatch, "flat dense size mismatch");
        for (std::size_t i = 0; i < mask.data.size(); ++i) {
            for (int c = 0; c < 3; ++c) coords.data[3 * i + c] = v[4 * i + c];
            mask.data[i] = v[4 * i + 3];
        }
    }
};

inline void require_same_layout(const Representation& a, const Representation& b)
{
    if (a.kind != b.kind) fail(ErrorCode::KindMismatch, "representation kinds differ");
    if (a.kind == RepresentationKind::Sparse) {
        if (a.corners.size() != b.corners.size()) fail(ErrorCode::ShapeMismatch, "corner counts differ");
    } else if (!a.coords.same_shape(b.coords) || !a.mask.same_shape(b.mask)) {
        fail(ErrorCode::ShapeMismatch, "dense representation sizes differ");
    }
}

/// h = pi(y, M, K).
inline Representation pi_map(const Pose& y, const TriangleMesh& mesh, const Intrinsics& k, RepresentationKind kind)
{
    if (kind == RepresentationKind::Sparse) {
        const auto corners = bbox_corners(mesh);
        return Representation::sparse(project(y, corners, k));
    }
    const auto box = bounding_box(mesh);
    const Vec3 extent = (box.max - box.min).cwiseMax(1e-12);
    auto cr = render_object_points(y, mesh, k);
    for (std::size_t i = 0; i < cr.mask.data.size(); ++i) {
        if (cr.mask.data[i] == 0.0) continue;
        for (int c = 0; c < 3; ++c) cr.points.data[3 * i + c] = (cr.points.data[3 * i + c] - box.min[c]) / extent[c];
    }
    return Representation::dense(std::move(cr.points), std::move(cr.mask));
}

inline constexpr std::size_t kMaxDenseCorrespondences = 500;

/// Correspondences plus, for dense h, the flat pixel index each came from.
struct IndexedCorrespondences {
    Correspondences c;
    std::vector<std::size_t> pixel;
};

inline IndexedCorrespondences to_correspondences_indexed(const Representation& h, const TriangleMesh& mesh)
{
    IndexedCorrespondences out;
    if (h.kind == RepresentationKind::Sparse) {
        if (h.corners.size() < 4) fail(ErrorCode::TooFewPoints, "fewer than 4 corners");
        const auto corners = bbox_corners(mesh);
        out.c.points3d.assign(corners.begin(), corners.begin() + std::min<std::size_t>(8, h.corners.size()));
        out.c.points2d = h.corners;
        out.c.weights.assign(h.corners.size(), 1.0);
        for (std::size_t i = 0; i < h.corners.size(); ++i) out.pixel.push_back(i);
        return out;
    }
    const auto box = bounding_box(mesh);
    const Vec3 extent = box.max - box.min;
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < h.mask.data.size(); ++i)
        if (h.mask.data[i] >= 0.5) valid.push_back(i);
    if (valid.size() < 4) fail(ErrorCode::TooFewPoints, "dense mask has " + std::to_string(valid.size()) + " pixels >= 0.5");
    const std::size_t stride = (valid.size() + kMaxDenseCorrespondences - 1) / kMaxDenseCorrespondences;
    for (std::size_t j = 0; j < valid.size(); j += stride) {
        const std::size_t i = valid[j];
        const int x = static_cast<int>(i % h.mask.width);
        const int y = static_cast<int>(i / h.mask.width);
        Vec3 p;
        for (int c = 0; c < 3; ++c) p[c] = box.min[c] + h.coords.data[3 * i + c] * extent[c];
        out.c.points3d.push_back(p);
        out.c.points2d.emplace_back(x, y);
        out.c.weights.push_back(h.mask.data[i]);
        out.pixel.push_back(i);
    }
    return out;
}

inline Correspondences to_correspondences(const Representation& h, const TriangleMesh& mesh)
{
    return to_correspondences_indexed(h, mesh).c;
}

/// Pulls a PnP gradient back onto the representation that produced the
/// correspondences (pixels for sparse; coordinates and mask for dense).
inline Representation correspondence_vjp(const Representation& h, const TriangleMesh& mesh,
                                         const IndexedCorrespondences& ic, const PnpGrad& g)
{
    Representation out = Representation::zeros_like(h);
    if (h.kind == RepresentationKind::Sparse) {
        for (std::size_t j = 0; j < ic.pixel.size(); ++j) out.corners[ic.pixel[j]] = g.points2d[j];
        return out;
    }
    const auto box = bounding_box(mesh);
    const Vec3 extent = box.max - box.min;
    for (std::size_t j = 0; j < ic.pixel.size(); ++j) {
        const std::size_t i = ic.pixel[j];
        for (int c = 0; c < 3; ++c) out.coords.data[3 * i + c] += g.points3d[j][c] * extent[c];
        out.mask.data[i] += g.weights[j];
    }
    return out;
}

/// Dense maps of a box often show a single face, so their correspondences
/// may be coplanar; the sparse corners never are.
inline PnpOptions pnp_options_for(RepresentationKind kind, PnpOptions opt = {})
{
    if (kind == RepresentationKind::Dense) opt.allow_planar = true;
    return opt;
}

/// PnP(h, K) with the correspondences kept for the backward pass.
struct SolvedRepresentation {
    IndexedCorrespondences corr;
    PnpResult result;
};

inline SolvedRepresentation solve_representation(const Representation& h, const TriangleMesh& mesh, const Intrinsics& k,
                                                 const PnpOptions& opt = {})
{
    SolvedRepresentation s;
    s.corr = to_correspondences_indexed(h, mesh);
    s.result = pnp_solve_detailed(s.corr.c, k, pnp_options_for(h.kind, opt));
    return s;
}

/// d/dh of upstream . pose for a solved representation.
inline Representation solve_representation_vjp(const Representation& h, const TriangleMesh& mesh, const Intrinsics& k,
                                                const SolvedRepresentation& s, const Vec6& upstream,
                                                const PnpOptions& opt = {})
{
    const auto g = pnp_vjp(s.corr.c, k, s.result.pose, upstream, opt);
    return correspondence_vjp(h, mesh, s.corr, g);
}

} // namespace psk
