#pragma once
// Region-of-interest label maps.
//
// CAMR layout: "CAMR" | u32 vertex count | count x u16 labels | UTF-8 JSON
// array of ROI names (to end of file). Label k names entry k of the array.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "icosphere.hpp"
#include "rng.hpp"

namespace cam {

struct RoiMap {
    std::vector<std::uint16_t> labels;
    std::vector<std::string> names;

    std::size_t roi_count() const { return names.size(); }

    std::size_t find(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ConfigError("unknown ROI \"" + name + "\"");
        return static_cast<std::size_t>(it - names.begin());
    }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> n(names.size(), 0);
        for (auto l : labels) ++n[l];
        return n;
    }
};

inline void validate_roi_map(const RoiMap& m, const std::string& where) {
    if (m.names.empty()) throw FormatError(where + ": empty ROI name table");
    if (m.names.size() > 65536) throw FormatError(where + ": too many ROIs");
    std::vector<bool> used(m.names.size(), false);
    for (std::size_t v = 0; v < m.labels.size(); ++v) {
        if (m.labels[v] >= m.names.size())
            throw FormatError(where + ": vertex " + std::to_string(v) + " has label " + std::to_string(m.labels[v]) +
                              " outside the name table");
        used[m.labels[v]] = true;
    }
    for (std::size_t k = 0; k < used.size(); ++k)
        if (!used[k]) throw FormatError(where + ": ROI id " + std::to_string(k) + " has no vertices");
}

inline void write_roi_map(const RoiMap& m, const std::filesystem::path& path) {
    validate_roi_map(m, path.string());
    io::ByteWriter w;
    w.bytes("CAMR");
    w.u32(static_cast<std::uint32_t>(m.labels.size()));
    for (auto l : m.labels) w.u16(l);
    w.bytes(nlohmann::json(m.names).dump());
    w.save(path);
}

// expected_vertices = 0 skips the mesh-size check.
inline RoiMap read_roi_map(const std::filesystem::path& path, std::size_t expected_vertices = 0) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("CAMR");
    const auto n = r.u32("vertex count");
    if (expected_vertices != 0 && n != expected_vertices)
        throw FormatError(r.source() + ": label count " + std::to_string(n) + " does not match mesh vertex count " +
                          std::to_string(expected_vertices));
    RoiMap m;
    m.labels.resize(n);
    for (auto& l : m.labels) l = r.u16("labels");
    const auto text = r.bytes(r.remaining(), "names");
    try {
        auto j = nlohmann::json::parse(text);
        m.names = j.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(r.source() + ": bad ROI name table: " + e.what());
    }
    validate_roi_map(m, r.source());
    return m;
}

// Voronoi cells of n_rois distinct random seed vertices under mesh-graph
// distance, via multi-source BFS. Every vertex is claimed through an
// already-claimed neighbor, so each cell is connected.
inline RoiMap synth_roi_map(const IcoMesh& mesh, std::size_t n_rois, std::uint64_t seed) {
    if (n_rois == 0 || n_rois > mesh.vertex_count() || n_rois > 65535)
        throw ConfigError("synthetic ROI count " + std::to_string(n_rois) + " out of range");
    Rng rng(derive_seed(seed, 0x524F49));
    std::vector<std::uint32_t> order(mesh.vertex_count());
    std::iota(order.begin(), order.end(), 0u);
    // partial Fisher-Yates: first n_rois entries become the seeds
    for (std::size_t i = 0; i < n_rois; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    constexpr std::uint16_t kUnset = 0xFFFF;
    RoiMap m;
    m.labels.assign(mesh.vertex_count(), kUnset);
    std::deque<std::uint32_t> queue;
    for (std::size_t k = 0; k < n_rois; ++k) {
        m.labels[order[k]] = static_cast<std::uint16_t>(k);
        queue.push_back(order[k]);
        m.names.push_back("roi_" + std::to_string(k));
    }
    const auto nbrs = vertex_neighbors(mesh);
    while (!queue.empty()) {
        const auto v = queue.front();
        queue.pop_front();
        for (auto u : nbrs[v])
            if (m.labels[u] == kUnset) {
                m.labels[u] = m.labels[v];
                queue.push_back(u);
            }
    }
    return m;
}

}  // namespace cam
