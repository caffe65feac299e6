#pragma once
// Iterative masked anomaly scoring.
//
// The patch index range [0, P) is split into T contiguous blocks of
// floor(P/T) patches, the last block absorbing the remainder. Each block is
// masked in turn and reconstructed from the remaining visible patches; the
// block reconstructions are stitched into a full reconstruction X_recon, and
// the subject's score is ||X - X_recon||_1. Per-vertex errors average the
// absolute errors over every patch occurrence of the vertex; ROI scores
// average per-vertex errors over the ROI's vertices.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "manifest.hpp"
#include "parallel.hpp"
#include "patch_layout.hpp"
#include "roi.hpp"
#include "surface.hpp"

namespace cam {

struct IterationSchedule {
    std::size_t patches = 0;
    std::vector<std::pair<std::size_t, std::size_t>> blocks;  // [begin, end)

    std::size_t iterations() const { return blocks.size(); }
};

inline IterationSchedule build_schedule(std::size_t patches, std::size_t iterations) {
    if (iterations < 1 || iterations > patches)
        throw ConfigError("iteration count " + std::to_string(iterations) + " must lie in [1, " +
                          std::to_string(patches) + "]");
    IterationSchedule s;
    s.patches = patches;
    const std::size_t step = patches / iterations;
    for (std::size_t t = 0; t < iterations; ++t) {
        const std::size_t begin = t * step;
        const std::size_t end = (t + 1 == iterations) ? patches : begin + step;
        s.blocks.emplace_back(begin, end);
    }
    return s;
}

struct AnomalyReport {
    std::string subject_id;
    Group group = Group::Healthy;
    std::vector<double> per_patch_error;   // mean |X - X_recon| over each patch's entries
    std::vector<double> per_vertex_error;  // incidence-averaged |X - X_recon|
    std::vector<double> roi_scores;
    double global_score = 0.0;             // sum of |X - X_recon|
};

// Maps (X, masked block) to a full P x V prediction; only the masked rows are
// used.
using Reconstructor = std::function<MatD(const MatD&, const MaskPlan&)>;

template <typename Scalar>
Reconstructor encoder_reconstructor(const EncoderParams<Scalar>& params) {
    return [&params](const MatD& x, const MaskPlan& plan) -> MatD {
        return predict<Scalar>(x.cast<Scalar>(), plan, params).template cast<double>();
    };
}

inline MatD iterative_reconstruction(const MatD& x, const Reconstructor& model, const IterationSchedule& schedule) {
    if (static_cast<std::size_t>(x.rows()) != schedule.patches)
        throw ConfigError("schedule covers " + std::to_string(schedule.patches) + " patches, input has " +
                          std::to_string(x.rows()));
    MatD recon(x.rows(), x.cols());
    for (const auto& [begin, end] : schedule.blocks) {
        const MatD xhat = model(x, range_mask(begin, end));
        if (xhat.rows() != x.rows() || xhat.cols() != x.cols()) throw ShapeError("reconstructor returned wrong shape");
        const auto n = static_cast<Eigen::Index>(end - begin);
        recon.middleRows(static_cast<Eigen::Index>(begin), n) = xhat.middleRows(static_cast<Eigen::Index>(begin), n);
    }
    return recon;
}

inline std::vector<double> roi_means(const std::vector<double>& per_vertex, const RoiMap& rois) {
    if (per_vertex.size() != rois.labels.size()) throw ConfigError("ROI map does not match the mesh");
    std::vector<double> sum(rois.roi_count(), 0.0);
    std::vector<std::size_t> count(rois.roi_count(), 0);
    for (std::size_t v = 0; v < per_vertex.size(); ++v) {
        sum[rois.labels[v]] += per_vertex[v];
        ++count[rois.labels[v]];
    }
    for (std::size_t k = 0; k < sum.size(); ++k)
        sum[k] = count[k] ? sum[k] / static_cast<double>(count[k]) : 0.0;
    return sum;
}

inline AnomalyReport iterative_masked_score(const PatchSequence& x, const Reconstructor& model,
                                            const IterationSchedule& schedule, const PatchLayout& layout,
                                            const RoiMap& rois) {
    if (x.patches() != layout.patch_count || x.width() != layout.vertices_per_patch)
        throw ConfigError("patch sequence shape does not match the layout");
    if (schedule.patches != layout.patch_count) throw ConfigError("schedule does not match the layout");
    const MatD recon = iterative_reconstruction(x.data, model, schedule);
    const MatD err = (x.data - recon).cwiseAbs();
    AnomalyReport rep;
    rep.per_patch_error.resize(layout.patch_count);
    for (std::size_t p = 0; p < layout.patch_count; ++p) rep.per_patch_error[p] = err.row(static_cast<Eigen::Index>(p)).mean();
    rep.global_score = err.sum();
    rep.per_vertex_error = unpatchify(err, layout);
    rep.roi_scores = roi_means(rep.per_vertex_error, rois);
    return rep;
}

template <typename Scalar>
AnomalyReport iterative_masked_score(const PatchSequence& x, const EncoderParams<Scalar>& params,
                                     const IterationSchedule& schedule, const PatchLayout& layout,
                                     const RoiMap& rois) {
    if (params.config.patches != layout.patch_count || params.config.patch_dim != layout.vertices_per_patch)
        throw ConfigError("encoder geometry (" + std::to_string(params.config.patches) + "x" +
                          std::to_string(params.config.patch_dim) + ") does not match the patch layout (" +
                          std::to_string(layout.patch_count) + "x" + std::to_string(layout.vertices_per_patch) + ")");
    return iterative_masked_score(x, encoder_reconstructor(params), schedule, layout, rois);
}

// Scores every entry of `entries` (row order preserved). Files are read and
// normalized with the training statistics before scoring.
template <typename Scalar>
std::vector<AnomalyReport> score_cohort(const std::vector<ManifestEntry>& entries, const EncoderParams<Scalar>& params,
                                        const NormStats& norm, const PatchLayout& layout, const RoiMap& rois,
                                        const IterationSchedule& schedule, unsigned threads = 1) {
    std::vector<AnomalyReport> out(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) {
        const auto& e = entries[i];
        SurfaceSample s;
        try {
            s = read_surface_sample(e.path);
        } catch (const DataError& err) {
            throw IoError("subject " + e.subject_id + ": " + err.what());
        }
        const auto x = patchify(apply_norm(s, norm), layout);
        out[i] = iterative_masked_score(x, params, schedule, layout, rois);
        out[i].subject_id = e.subject_id;
        out[i].group = e.group;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Score CSV: subject_id,group,global,<roi name>...

inline constexpr int kScorePrecision = 9;

inline void write_score_csv(const std::vector<AnomalyReport>& reports, const RoiMap& rois,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "subject_id,group,global";
    for (const auto& n : rois.names) out << ',' << n;
    out << '\n' << std::setprecision(kScorePrecision);
    for (const auto& r : reports) {
        if (r.roi_scores.size() != rois.roi_count()) throw ShapeError("report ROI count does not match the ROI map");
        out << r.subject_id << ',' << to_string(r.group) << ',' << r.global_score;
        for (double s : r.roi_scores) out << ',' << s;
        out << '\n';
    }
}

struct ScoreTable {
    std::vector<std::string> roi_names;
    std::vector<AnomalyReport> rows;  // subject_id, group, global_score, roi_scores only
};

inline ScoreTable read_score_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open score table: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty score table");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "subject_id" || header[1] != "group" || header[2] != "global")
        throw FormatError(path.string() + ": expected header subject_id,group,global,...");
    ScoreTable t;
    t.roi_names.assign(header.begin() + 3, header.end());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
        AnomalyReport r;
        r.subject_id = cells[0];
        r.group = parse_group(cells[1]);
        try {
            r.global_score = std::stod(cells[2]);
            for (std::size_t k = 3; k < cells.size(); ++k) r.roi_scores.push_back(std::stod(cells[k]));
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
        t.rows.push_back(std::move(r));
    }
    return t;
}

}  // namespace cam
