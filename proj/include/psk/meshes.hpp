#pragma once

// Procedural meshes used by the scene generator, the demos and the tests.

#include "psk/geometry.hpp"

#include <functional>

namespace psk {

using ColorField = std::function<Vec3(const Vec3&)>;

/// Cube of the given side centered at the origin: 8 shared vertices, 12 faces.
inline TriangleMesh make_cube(double side = 1.0, const Vec3& color = Vec3::Constant(kDefaultGray))
{
    const double h = 0.5 * side;
    Points3 v;
    for (int i = 0; i < 8; ++i) v.emplace_back((i & 4) ? h : -h, (i & 2) ? h : -h, (i & 1) ? h : -h);
    // Outward-facing winding.
    std::vector<Face> f{{0, 1, 3}, {0, 3, 2}, {4, 6, 7}, {4, 7, 5}, {0, 4, 5}, {0, 5, 1},
                        {2, 3, 7}, {2, 7, 6}, {0, 2, 6}, {0, 6, 4}, {1, 5, 7}, {1, 7, 3}};
    return make_mesh(std::move(v), std::move(f), Points3(8, color));
}

/// Axis-aligned box centered at the origin; every side is split into an
/// n x n grid of quads (two triangles each) and colored by `field`.
inline TriangleMesh make_box(const Vec3& extent, int subdivisions, const ColorField& field)
{
    if (subdivisions < 1) fail(ErrorCode::InvalidArgument, "subdivisions must be >= 1");
    const Vec3 h = 0.5 * extent;
    Points3 verts;
    Points3 colors;
    std::vector<Face> faces;
    const int n = subdivisions;
    for (int axis = 0; axis < 3; ++axis) {
        const int ua = (axis + 1) % 3;
        const int va = (axis + 2) % 3;
        for (int side = -1; side <= 1; side += 2) {
            const int base = static_cast<int>(verts.size());
            for (int j = 0; j <= n; ++j) {
                for (int i = 0; i <= n; ++i) {
                    Vec3 p;
                    p[axis] = side * h[axis];
                    p[ua] = -h[ua] + extent[ua] * i / n;
                    p[va] = -h[va] + extent[va] * j / n;
                    verts.push_back(p);
                    colors.push_back(field(p));
                }
            }
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) {
                    const int a = base + j * (n + 1) + i;
                    const int b = a + 1;
                    const int c = a + (n + 1);
                    const int d = c + 1;
                    if (side > 0) {
                        faces.push_back({a, b, d});
                        faces.push_back({a, d, c});
                    } else {
                        faces.push_back({a, d, b});
                        faces.push_back({a, c, d});
                    }
                }
            }
        }
    }
    return make_mesh(std::move(verts), std::move(faces), std::move(colors));
}

/// Smooth, non-repeating color pattern over the object; low frequency so
/// neighboring faces differ by small steps.
inline Vec3 texture_field(const Vec3& p)
{
    const double r = 0.5 + 0.35 * std::sin(40.0 * p.x() + 9.0 * p.z() + 0.3);
    const double g = 0.5 + 0.35 * std::sin(33.0 * p.y() - 21.0 * p.x() + 1.7);
    const double b = 0.5 + 0.35 * std::cos(27.0 * p.z() + 17.0 * p.y() - 0.4);
    return {r, g, b};
}

/// Default experiment object: a 12 x 8 x 5 cm box with a smooth color
/// texture, 4 x 4 grid per side (192 triangles).
inline TriangleMesh make_textured_box(int subdivisions = 4)
{
    return make_box(Vec3(0.12, 0.08, 0.05), subdivisions, texture_field);
}

} // namespace psk
