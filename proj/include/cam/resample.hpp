#pragma once
// Point location on an icosphere and barycentric resampling between meshes.
//
// A unit vector lies in the spherical triangle (a, b, c) exactly when its
// gnomonic projection onto the plane of the flat triangle lies inside it, so
// containment reduces to the signs of the three triple products
// det(p,b,c), det(a,p,c), det(a,b,p), which are also proportional to the
// barycentric weights of the projected point.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "icosphere.hpp"

namespace cam {

inline constexpr double kContainTol = 1e-12;

struct BaryLocation {
    std::uint32_t face_id = 0;
    std::array<double, 3> weights{};
};

namespace detail {

// Raw (unclamped) normalized weights; sets `in_front` false when p faces away
// from the triangle.
inline std::array<double, 3> gnomonic_weights(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                                              bool& in_front) {
    const double d0 = p.dot(b.cross(c));
    const double d1 = a.dot(p.cross(c));
    const double d2 = a.dot(b.cross(p));
    const double sum = d0 + d1 + d2;
    in_front = sum > 0.0;
    if (!in_front) return {-1.0, -1.0, -1.0};
    return {d0 / sum, d1 / sum, d2 / sum};
}

inline double min_weight(const std::array<double, 3>& w) { return std::min({w[0], w[1], w[2]}); }

inline std::array<double, 3> face_weights(const IcoMesh& mesh, const Face& f, const Vec3& p, bool& in_front) {
    return gnomonic_weights(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]], in_front);
}

// Zero weights inside the tolerance band (and any residual negatives), then
// renormalize so weights are nonnegative and sum to 1.
inline std::array<double, 3> clean_weights(std::array<double, 3> w) {
    for (auto& x : w)
        if (x < kContainTol) x = 0.0;
    const double s = w[0] + w[1] + w[2];
    for (auto& x : w) x /= s;
    return w;
}

}  // namespace detail

// Hierarchical descent through the subdivision levels. At each level the
// lowest-indexed containing child is taken; since descendants of a lower
// index face all have lower indices, this yields the globally lowest face
// index among faces containing p.
inline BaryLocation locate_face(const IcoMesh& mesh, const Vec3& p) {
    std::uint32_t begin = 0, end = static_cast<std::uint32_t>(ico_face_count(0));
    std::uint32_t chosen = 0;
    std::array<double, 3> chosen_w{};
    for (int level = 0; level <= mesh.order; ++level) {
        const auto& faces = mesh.faces_at(level);
        double best_min = -std::numeric_limits<double>::infinity();
        for (std::uint32_t f = begin; f < end; ++f) {
            bool front = false;
            auto w = detail::face_weights(mesh, faces[f], p, front);
            const double m = detail::min_weight(w);
            if (front && m >= -kContainTol) {
                chosen = f;
                chosen_w = w;
                break;
            }
            // Fallback for points that fall between children only through
            // rounding: keep the least-violating candidate.
            if (m > best_min) {
                best_min = m;
                chosen = f;
                chosen_w = w;
            }
        }
        begin = chosen * 4;
        end = begin + 4;
    }
    return {chosen, detail::clean_weights(chosen_w)};
}

inline std::vector<double> barycentric_resample(const IcoMesh& src, std::span<const double> src_values,
                                                const IcoMesh& dst) {
    if (src_values.size() != src.vertex_count())
        throw ShapeError("resample: got " + std::to_string(src_values.size()) + " values for a mesh with " +
                         std::to_string(src.vertex_count()) + " vertices");
    std::vector<double> out(dst.vertex_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto loc = locate_face(src, dst.vertices[i]);
        const auto& f = src.faces[loc.face_id];
        out[i] = loc.weights[0] * src_values[f[0]] + loc.weights[1] * src_values[f[1]] +
                 loc.weights[2] * src_values[f[2]];
    }
    return out;
}

}  // namespace cam
