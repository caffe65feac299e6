#pragma once
// ICOM binary mesh format:
//   "ICOM" | u32 order | (10*4^order+2) x 3 f64 vertex coords | (20*4^order) x 3 u32 face indices
// all little-endian. Adjacency and the coarse hierarchy are rebuilt on load.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "binary_io.hpp"
#include "icosphere.hpp"

namespace cam {

inline io::ByteWriter encode_icom(const IcoMesh& mesh) {
    io::ByteWriter w;
    w.bytes("ICOM");
    w.u32(static_cast<std::uint32_t>(mesh.order));
    for (const auto& v : mesh.vertices)
        for (int k = 0; k < 3; ++k) w.f64(v[k]);
    for (const auto& f : mesh.faces)
        for (auto idx : f) w.u32(idx);
    return w;
}

inline void write_icom(const IcoMesh& mesh, const std::filesystem::path& path) { encode_icom(mesh).save(path); }

inline IcoMesh read_icom(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("ICOM");
    const auto order = r.u32("order");
    if (order > static_cast<std::uint32_t>(kMaxIcoOrder)) throw FormatError(r.source() + ": order out of range");
    IcoMesh mesh;
    mesh.order = static_cast<int>(order);
    mesh.vertices.resize(ico_vertex_count(mesh.order));
    for (auto& v : mesh.vertices) {
        for (int k = 0; k < 3; ++k) v[k] = r.f64("vertex");
        if (!std::isfinite(v.norm()) || std::abs(v.norm() - 1.0) > 1e-9)
            throw FormatError(r.source() + ": vertex not on the unit sphere");
    }
    mesh.faces.resize(ico_face_count(mesh.order));
    for (auto& f : mesh.faces)
        for (auto& idx : f) {
            idx = r.u32("face");
            if (idx >= mesh.vertices.size()) throw FormatError(r.source() + ": face index out of range");
        }
    r.expect_end();
    mesh.face_adjacency = detail::compute_face_adjacency(mesh.faces);
    mesh.coarse_faces = detail::derive_coarse_faces(mesh.faces, mesh.order);
    return mesh;
}

inline void write_obj(const IcoMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "# icosphere order " << mesh.order << "\n" << std::setprecision(17);
    for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

}  // namespace cam
