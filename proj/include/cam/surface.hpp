#pragma once
// Per-vertex surface features, the CAMF feature file, patch sequences and
// per-vertex z-score normalization.
//
// CAMF layout (little-endian):
//   "CAMF" | u8 version (=1) | u8 feature | u32 vertex count | count x f32 values

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "binary_io.hpp"
#include "icosphere.hpp"
#include "patch_layout.hpp"

namespace cam {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Mat<double>;

enum class Feature : std::uint8_t { Area = 0, Curvature = 1, InflatedSurface = 2, Sulc = 3, Thickness = 4, Volume = 5 };

inline constexpr std::array<std::string_view, 6> kFeatureNames = {"area",  "curvature", "inflated",
                                                                  "sulc",  "thickness", "volume"};

inline std::string_view feature_name(Feature f) { return kFeatureNames.at(static_cast<std::size_t>(f)); }

inline Feature parse_feature(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (std::size_t i = 0; i < kFeatureNames.size(); ++i)
        if (lower == kFeatureNames[i]) return static_cast<Feature>(i);
    throw ConfigError("unknown feature \"" + std::string(s) + "\"");
}

struct SurfaceSample {
    std::string subject_id;
    Feature feature = Feature::Thickness;
    std::vector<double> values;
};

inline constexpr std::uint8_t kCamfVersion = 1;

inline bool is_icosphere_vertex_count(std::size_t n) {
    for (int k = 0; k <= kMaxIcoOrder; ++k)
        if (ico_vertex_count(k) == n) return true;
    return false;
}

inline void validate_finite(const SurfaceSample& s, const std::string& where) {
    for (std::size_t i = 0; i < s.values.size(); ++i)
        if (!std::isfinite(s.values[i]))
            throw ValidationError(where + ": non-finite value at vertex " + std::to_string(i));
}

// Values are stored as f32; the in-memory sample keeps doubles.
inline void write_surface_sample(const SurfaceSample& s, const std::filesystem::path& path) {
    validate_finite(s, s.subject_id);
    io::ByteWriter w;
    w.bytes("CAMF");
    w.u8(kCamfVersion);
    w.u8(static_cast<std::uint8_t>(s.feature));
    w.u32(static_cast<std::uint32_t>(s.values.size()));
    for (double v : s.values) w.f32(static_cast<float>(v));
    w.save(path);
}

inline SurfaceSample read_surface_sample(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("CAMF");
    const auto version = r.u8("version");
    if (version != kCamfVersion)
        throw FormatError(r.source() + ": unsupported version " + std::to_string(version));
    const auto feature = r.u8("feature");
    if (feature >= kFeatureNames.size()) throw FormatError(r.source() + ": bad feature code");
    const auto count = r.u32("vertex count");
    if (!is_icosphere_vertex_count(count))
        throw FormatError(r.source() + ": vertex count " + std::to_string(count) + " is not an icosphere size");
    if (r.remaining() < std::size_t{count} * 4) throw FormatError(r.source() + ": truncated while reading values");
    SurfaceSample s;
    s.subject_id = path.stem().string();
    s.feature = static_cast<Feature>(feature);
    s.values.resize(count);
    for (auto& v : s.values) v = r.f32("values");
    r.expect_end();
    validate_finite(s, r.source());
    return s;
}

// One subject's single-channel feature arranged as P x V.
struct PatchSequence {
    MatD data;

    std::size_t patches() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t width() const { return static_cast<std::size_t>(data.cols()); }
};

inline PatchSequence patchify(const SurfaceSample& sample, const PatchLayout& layout) {
    if (sample.values.size() != layout.vertex_incidence.size())
        throw ShapeError("patchify: sample has " + std::to_string(sample.values.size()) +
                         " vertices, layout expects " + std::to_string(layout.vertex_incidence.size()));
    PatchSequence x{MatD(layout.patch_count, layout.vertices_per_patch)};
    for (std::size_t p = 0; p < layout.patch_count; ++p)
        for (std::size_t j = 0; j < layout.vertices_per_patch; ++j)
            x.data(p, j) = sample.values[layout.patch_vertex_ids[p][j]];
    return x;
}

// Incidence-averaging inverse of patchify; applied to any P x V matrix
// (e.g. absolute errors) it yields the per-vertex mean over occurrences.
inline std::vector<double> unpatchify(const MatD& x, const PatchLayout& layout) {
    if (static_cast<std::size_t>(x.rows()) != layout.patch_count ||
        static_cast<std::size_t>(x.cols()) != layout.vertices_per_patch)
        throw ShapeError("unpatchify: matrix shape does not match layout");
    std::vector<double> out(layout.vertex_incidence.size(), 0.0);
    for (std::size_t v = 0; v < out.size(); ++v) {
        const auto& inc = layout.vertex_incidence[v];
        double sum = 0.0;
        for (const auto& [p, j] : inc) sum += x(p, j);
        out[v] = sum / static_cast<double>(inc.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kStdFloor = 1e-6;

struct NormStats {
    Feature feature = Feature::Thickness;
    std::vector<double> mean;
    std::vector<double> std;
};

// Population (1/n) statistics, so the normalized training cohort has unit
// per-vertex variance exactly.
inline NormStats fit_norm_stats(const std::vector<SurfaceSample>& train) {
    if (train.size() < 2) throw ConfigError("normalization needs at least 2 training samples");
    const auto n = train.front().values.size();
    NormStats st;
    st.feature = train.front().feature;
    st.mean.assign(n, 0.0);
    st.std.assign(n, 0.0);
    for (const auto& s : train) {
        if (s.feature != st.feature) throw ConfigError("normalization: mixed features in training cohort");
        if (s.values.size() != n) throw ShapeError("normalization: samples differ in vertex count");
        for (std::size_t i = 0; i < n; ++i) st.mean[i] += s.values[i];
    }
    const double inv = 1.0 / static_cast<double>(train.size());
    for (auto& m : st.mean) m *= inv;
    for (const auto& s : train)
        for (std::size_t i = 0; i < n; ++i) {
            const double d = s.values[i] - st.mean[i];
            st.std[i] += d * d;
        }
    for (auto& sd : st.std) sd = std::max(std::sqrt(sd * inv), kStdFloor);
    return st;
}

inline SurfaceSample apply_norm(const SurfaceSample& s, const NormStats& st) {
    if (s.feature != st.feature)
        throw ConfigError("normalization stats are for " + std::string(feature_name(st.feature)) + ", sample is " +
                          std::string(feature_name(s.feature)));
    if (s.values.size() != st.mean.size()) throw ShapeError("normalization: vertex count mismatch");
    SurfaceSample out = s;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = (s.values[i] - st.mean[i]) / st.std[i];
    return out;
}

inline SurfaceSample invert_norm(const SurfaceSample& s, const NormStats& st) {
    if (s.values.size() != st.mean.size()) throw ShapeError("normalization: vertex count mismatch");
    SurfaceSample out = s;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = s.values[i] * st.std[i] + st.mean[i];
    return out;
}

// CAMN: "CAMN" | u8 feature | u32 count | count x f64 mean | count x f64 std
inline void write_norm_stats(const NormStats& st, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.bytes("CAMN");
    w.u8(static_cast<std::uint8_t>(st.feature));
    w.u32(static_cast<std::uint32_t>(st.mean.size()));
    for (double m : st.mean) w.f64(m);
    for (double s : st.std) w.f64(s);
    w.save(path);
}

inline NormStats read_norm_stats(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("CAMN");
    NormStats st;
    const auto f = r.u8("feature");
    if (f >= kFeatureNames.size()) throw FormatError(r.source() + ": bad feature code");
    st.feature = static_cast<Feature>(f);
    const auto n = r.u32("count");
    if (r.remaining() != std::size_t{n} * 16) throw FormatError(r.source() + ": truncated while reading statistics");
    st.mean.resize(n);
    st.std.resize(n);
    for (auto& m : st.mean) m = r.f64("mean");
    for (auto& s : st.std) {
        s = r.f64("std");
        if (!(s > 0.0)) throw FormatError(r.source() + ": nonpositive std");
    }
    return st;
}

}  // namespace cam
