#pragma once
// Icosphere construction by recursive 4-way subdivision.
//
// Ordering is canonical and hierarchical:
//   * vertices of order k are a prefix of the vertices of order k+1; new
//     vertices are edge midpoints numbered in first-encounter order while
//     scanning faces in index order and edges (c0,c1), (c1,c2), (c2,c0);
//   * face f of order k has children 4f..4f+3 at order k+1, laid out as
//     (a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca).
// Consequently the order-L descendants of a coarse face g at order l occupy the
// contiguous range [g*4^(L-l), (g+1)*4^(L-l)), and child 0/1/2 preserve corner
// 0/1/2 of their parent.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "errors.hpp"

namespace cam {

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::uint32_t, 3>;

inline constexpr int kMaxIcoOrder = 8;

constexpr std::size_t ico_vertex_count(int order) { return 10 * (std::size_t{1} << (2 * order)) + 2; }
constexpr std::size_t ico_face_count(int order) { return 20 * (std::size_t{1} << (2 * order)); }

struct IcoMesh {
    int order = 0;
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    // face_adjacency[f][e] is the face across edge e of f, where edge e joins
    // corners e and (e+1)%3.
    std::vector<Face> face_adjacency;
    // Faces of every coarser order 0..order-1 (the subdivision hierarchy).
    std::vector<std::vector<Face>> coarse_faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }

    const std::vector<Face>& faces_at(int level) const {
        return level == order ? faces : coarse_faces.at(static_cast<std::size_t>(level));
    }
};

namespace detail {

inline std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t{a} << 32) | b;
}

inline std::vector<Face> compute_face_adjacency(const std::vector<Face>& faces) {
    constexpr std::uint32_t kNone = 0xFFFFFFFFu;
    std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> owners;
    owners.reserve(faces.size() * 2);
    for (std::uint32_t f = 0; f < faces.size(); ++f) {
        for (int e = 0; e < 3; ++e) {
            auto key = edge_key(faces[f][e], faces[f][(e + 1) % 3]);
            auto [it, inserted] = owners.try_emplace(key, f, kNone);
            if (!inserted) {
                if (it->second.second != kNone)
                    throw FormatError("non-manifold mesh: edge shared by more than two faces");
                it->second.second = f;
            }
        }
    }
    std::vector<Face> adj(faces.size());
    for (std::uint32_t f = 0; f < faces.size(); ++f) {
        for (int e = 0; e < 3; ++e) {
            const auto& [f0, f1] = owners.at(edge_key(faces[f][e], faces[f][(e + 1) % 3]));
            if (f1 == kNone) throw FormatError("open mesh: boundary edge found");
            adj[f][e] = (f0 == f) ? f1 : f0;
        }
    }
    return adj;
}

inline std::vector<Face> base_icosahedron_faces() {
    return {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
            {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
            {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
}

inline std::vector<Vec3> base_icosahedron_vertices() {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : v) p.normalize();
    return v;
}

// Rebuilds the coarse face levels of a hierarchically ordered mesh from its
// finest faces alone (used after loading a mesh from disk).
inline std::vector<std::vector<Face>> derive_coarse_faces(const std::vector<Face>& fine, int order) {
    std::vector<std::vector<Face>> levels(static_cast<std::size_t>(order));
    for (int level = 0; level < order; ++level) {
        const std::size_t span = std::size_t{1} << (2 * (order - level));
        const std::size_t ones = (span - 1) / 3;  // base-4 digits all equal to 1
        auto& out = levels[static_cast<std::size_t>(level)];
        out.resize(ico_face_count(level));
        for (std::size_t g = 0; g < out.size(); ++g) {
            out[g] = {fine[g * span][0], fine[g * span + ones][1], fine[g * span + 2 * ones][2]};
        }
    }
    return levels;
}

}  // namespace detail

inline IcoMesh build_icosphere(int order) {
    if (order < 0 || order > kMaxIcoOrder)
        throw BoundsError("icosphere order " + std::to_string(order) + " outside [0, " +
                          std::to_string(kMaxIcoOrder) + "]");
    IcoMesh mesh;
    mesh.order = order;
    mesh.vertices = detail::base_icosahedron_vertices();
    mesh.vertices.reserve(ico_vertex_count(order));
    std::vector<Face> faces = detail::base_icosahedron_faces();

    for (int level = 0; level < order; ++level) {
        std::unordered_map<std::uint64_t, std::uint32_t> midpoint;
        midpoint.reserve(faces.size() * 2);
        auto mid = [&](std::uint32_t a, std::uint32_t b) {
            auto [it, inserted] = midpoint.try_emplace(detail::edge_key(a, b),
                                                       static_cast<std::uint32_t>(mesh.vertices.size()));
            if (inserted) mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
            return it->second;
        };
        std::vector<Face> next;
        next.reserve(faces.size() * 4);
        for (const auto& [a, b, c] : faces) {
            const auto ab = mid(a, b);
            const auto bc = mid(b, c);
            const auto ca = mid(c, a);
            next.push_back({a, ab, ca});
            next.push_back({ab, b, bc});
            next.push_back({ca, bc, c});
            next.push_back({ab, bc, ca});
        }
        mesh.coarse_faces.push_back(std::move(faces));
        faces = std::move(next);
    }
    mesh.faces = std::move(faces);
    mesh.face_adjacency = detail::compute_face_adjacency(mesh.faces);
    return mesh;
}

// Unique undirected edges, each as (lo, hi), in first-encounter order.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> mesh_edges(const IcoMesh& mesh) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    edges.reserve(mesh.faces.size() * 3 / 2);
    for (std::uint32_t f = 0; f < mesh.faces.size(); ++f) {
        for (int e = 0; e < 3; ++e) {
            // each edge is emitted by the lower-indexed of its two faces
            if (mesh.face_adjacency[f][e] > f) {
                auto a = mesh.faces[f][e], b = mesh.faces[f][(e + 1) % 3];
                edges.emplace_back(std::min(a, b), std::max(a, b));
            }
        }
    }
    return edges;
}

inline std::vector<std::vector<std::uint32_t>> vertex_neighbors(const IcoMesh& mesh) {
    std::vector<std::vector<std::uint32_t>> nbrs(mesh.vertex_count());
    for (const auto& [a, b] : mesh_edges(mesh)) {
        nbrs[a].push_back(b);
        nbrs[b].push_back(a);
    }
    return nbrs;
}

}  // namespace cam
