#pragma once
// Triangular patch layout: each face of a coarse icosphere level becomes one
// patch holding the fine-mesh lattice points inside or on it. For the order-6
// mesh partitioned by order-2 faces this gives (P, V) = (320, 153).

#include <cstdint>
#include <string>
#include <vector>

#include "icosphere.hpp"

namespace cam {

struct PatchSlot {
    std::uint32_t patch;
    std::uint32_t slot;  // position within the patch's lattice ordering
};

struct PatchLayout {
    std::size_t patch_count = 0;
    std::size_t vertices_per_patch = 0;
    int patch_order = 0;
    // patch_vertex_ids[p][j]: fine-mesh vertex at lattice position j of patch p.
    // Lattice positions run row by row from corner 0 toward corner 2; within a
    // row they run toward corner 1.
    std::vector<std::vector<std::uint32_t>> patch_vertex_ids;
    // For every fine vertex, each (patch, slot) occurrence.
    std::vector<std::vector<PatchSlot>> vertex_incidence;

    std::size_t total_incidence() const { return patch_count * vertices_per_patch; }
};

inline constexpr int kPatchOrder = 2;
inline constexpr int kMeshOrder = 6;

namespace detail {

struct LatticeCoord {
    int i;  // steps toward corner 1
    int j;  // steps toward corner 2
};

inline std::size_t lattice_index(int i, int j, int n) {
    return static_cast<std::size_t>(j * (n + 1) - j * (j - 1) / 2 + i);
}

inline void assign_lattice(const IcoMesh& mesh, std::size_t face, int level, LatticeCoord ca, LatticeCoord cb,
                           LatticeCoord cc, int n, std::vector<std::uint32_t>& out, std::vector<bool>& seen) {
    if (level == mesh.order) {
        const auto& f = mesh.faces[face];
        const LatticeCoord coords[3] = {ca, cb, cc};
        for (int k = 0; k < 3; ++k) {
            const auto idx = lattice_index(coords[k].i, coords[k].j, n);
            if (seen[idx] && out[idx] != f[k])
                throw ConfigError("patch layout: mesh is not hierarchically ordered");
            out[idx] = f[k];
            seen[idx] = true;
        }
        return;
    }
    auto mid = [](LatticeCoord x, LatticeCoord y) { return LatticeCoord{(x.i + y.i) / 2, (x.j + y.j) / 2}; };
    const auto ab = mid(ca, cb), bc = mid(cb, cc), cA = mid(cc, ca);
    const std::size_t c0 = face * 4;
    assign_lattice(mesh, c0 + 0, level + 1, ca, ab, cA, n, out, seen);
    assign_lattice(mesh, c0 + 1, level + 1, ab, cb, bc, n, out, seen);
    assign_lattice(mesh, c0 + 2, level + 1, cA, bc, cc, n, out, seen);
    assign_lattice(mesh, c0 + 3, level + 1, ab, bc, cA, n, out, seen);
}

}  // namespace detail

// General form: patches are the faces of `patch_order`, which must be coarser
// than the mesh.
inline PatchLayout build_patch_layout(const IcoMesh& mesh, int patch_order) {
    if (patch_order < 0 || patch_order > mesh.order)
        throw ConfigError("patch order " + std::to_string(patch_order) + " incompatible with mesh order " +
                          std::to_string(mesh.order));
    const int n = 1 << (mesh.order - patch_order);
    PatchLayout layout;
    layout.patch_order = patch_order;
    layout.patch_count = ico_face_count(patch_order);
    layout.vertices_per_patch = static_cast<std::size_t>((n + 1) * (n + 2) / 2);
    layout.patch_vertex_ids.resize(layout.patch_count);
    layout.vertex_incidence.resize(mesh.vertex_count());
    for (std::size_t p = 0; p < layout.patch_count; ++p) {
        auto& ids = layout.patch_vertex_ids[p];
        ids.assign(layout.vertices_per_patch, 0);
        std::vector<bool> seen(layout.vertices_per_patch, false);
        detail::assign_lattice(mesh, p, patch_order, {0, 0}, {n, 0}, {0, n}, n, ids, seen);
        for (std::uint32_t j = 0; j < ids.size(); ++j)
            layout.vertex_incidence[ids[j]].push_back({static_cast<std::uint32_t>(p), j});
    }
    return layout;
}

// The production layout: order-6 mesh, order-2 patches.
inline PatchLayout build_patch_layout(const IcoMesh& mesh6) {
    if (mesh6.order != kMeshOrder)
        throw ConfigError("patch layout requires an order-" + std::to_string(kMeshOrder) + " mesh, got order " +
                          std::to_string(mesh6.order));
    return build_patch_layout(mesh6, kPatchOrder);
}

}  // namespace cam
