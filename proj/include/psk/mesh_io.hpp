#pragma once

#include "psk/geometry.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace psk {

namespace detail {

inline int parse_obj_index(const std::string& token, int vertex_count, int line_no)
{
    const std::string head = token.substr(0, token.find('/'));
    int idx = 0;
    const auto res = std::from_chars(head.data(), head.data() + head.size(), idx);
    if (res.ec != std::errc() || res.ptr != head.data() + head.size())
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad face index '" + token + "'");
    if (idx == 0) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": face index 0 (OBJ indices are 1-based)");
    const int zero_based = idx > 0 ? idx - 1 : vertex_count + idx;
    if (zero_based < 0 || zero_based >= vertex_count)
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": face index " + head + " out of range");
    return zero_based;
}

} // namespace detail

/// Parses v/f records. Vertex colors come from the extended
/// "v x y z r g b" form; vertices without color get kDefaultGray.
/// Polygons are fan-triangulated.
inline TriangleMesh parse_obj(std::istream& in)
{
    Points3 vertices;
    Points3 colors;
    std::vector<Face> faces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            std::vector<double> vals;
            double x;
            while (ls >> x) vals.push_back(x);
            if (!ls.eof()) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": malformed vertex");
            if (vals.size() != 3 && vals.size() != 4 && vals.size() != 6 && vals.size() != 7)
                fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": vertex needs 3 coordinates");
            vertices.emplace_back(vals[0], vals[1], vals[2]);
            if (vals.size() >= 6) {
                const std::size_t off = vals.size() == 7 ? 4 : 3;
                colors.emplace_back(vals[off], vals[off + 1], vals[off + 2]);
            } else {
                colors.push_back(Vec3::Constant(kDefaultGray));
            }
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) idx.push_back(detail::parse_obj_index(tok, static_cast<int>(vertices.size()), line_no));
            if (idx.size() < 3) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": face needs 3 vertices");
            for (std::size_t i = 1; i + 1 < idx.size(); ++i) faces.push_back({idx[0], idx[i], idx[i + 1]});
        }
    }
    if (vertices.empty()) fail(ErrorCode::EmptyMesh, "OBJ has no vertices");
    return make_mesh(std::move(vertices), std::move(faces), std::move(colors));
}

inline TriangleMesh load_obj(const std::string& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path);
    try {
        return parse_obj(in);
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

inline void write_obj(std::ostream& out, const TriangleMesh& mesh)
{
    out << std::setprecision(17);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        const Vec3& c = mesh.vertex_colors[i];
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << ' ' << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
    }
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

inline void save_obj(const std::string& path, const TriangleMesh& mesh)
{
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path);
    write_obj(out, mesh);
    if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

} // namespace psk
