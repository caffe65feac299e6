#pragma once
// Synthetic cohorts standing in for private clinical data.
//
// A healthy subject is base_value + a random real spherical-harmonic mixture up
// to smoothness_degree + i.i.d. vertex noise. Harmonic coefficients have
// variance proportional to (1+l)^-2, scaled so the smooth part has per-vertex
// variance smooth_sigma^2 everywhere (addition theorem). Anomalous subjects add
// amplitude * sqrt(smooth_sigma^2 + noise_sigma^2) inside the chosen ROIs.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icosphere.hpp"
#include "manifest.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "roi.hpp"
#include "surface.hpp"

namespace cam {

struct SynthConfig {
    std::size_t n_train = 120;
    std::size_t n_val = 80;
    std::size_t n_test_healthy = 50;
    std::size_t n_anomalous = 50;
    std::uint64_t seed = 0;
    int smoothness_degree = 6;
    std::vector<std::size_t> anomaly_roi_ids;
    double anomaly_amplitude_sigma = 3.0;
    double smooth_sigma = 1.0;
    double noise_sigma = 0.3;
    double base_value = 2.5;
    Feature feature = Feature::Thickness;

    std::size_t n_healthy() const { return n_train + n_val + n_test_healthy; }
    double vertex_sigma() const { return std::sqrt(smooth_sigma * smooth_sigma + noise_sigma * noise_sigma); }
};

// Real orthonormal spherical harmonics Y_lm, l <= degree, evaluated at every
// mesh vertex: rows = vertices, columns ordered (l, m = -l..l).
inline Eigen::MatrixXd real_sh_basis(const IcoMesh& mesh, int degree) {
    const auto n_fn = static_cast<Eigen::Index>((degree + 1) * (degree + 1));
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(mesh.vertex_count()), n_fn);
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const auto& p = mesh.vertices[v];
        const double theta = std::acos(std::clamp(p.z(), -1.0, 1.0));
        const double phi = std::atan2(p.y(), p.x());
        Eigen::Index col = 0;
        for (int l = 0; l <= degree; ++l)
            for (int m = -l; m <= l; ++m) {
                const unsigned am = static_cast<unsigned>(std::abs(m));
                const double y = std::sph_legendre(static_cast<unsigned>(l), am, theta);
                double val = y;
                if (m > 0) val = std::numbers::sqrt2 * y * std::cos(m * phi);
                if (m < 0) val = std::numbers::sqrt2 * y * std::sin(static_cast<double>(am) * phi);
                basis(static_cast<Eigen::Index>(v), col++) = val;
            }
    }
    return basis;
}

// Per-degree coefficient standard deviations giving smooth-part variance 1.
inline std::vector<double> sh_degree_scales(int degree) {
    double z = 0.0;
    for (int l = 0; l <= degree; ++l) z += (2.0 * l + 1.0) / (4.0 * std::numbers::pi) / ((1.0 + l) * (1.0 + l));
    std::vector<double> s(static_cast<std::size_t>(degree + 1));
    for (int l = 0; l <= degree; ++l) s[static_cast<std::size_t>(l)] = std::sqrt(1.0 / ((1.0 + l) * (1.0 + l)) / z);
    return s;
}

struct SyntheticSubject {
    std::string subject_id;
    Group group = Group::Healthy;
    Split split = Split::Train;
    SurfaceSample sample;
};

class SyntheticGenerator {
public:
    SyntheticGenerator(const IcoMesh& mesh, const RoiMap& rois, SynthConfig cfg) : rois_(rois), cfg_(std::move(cfg)) {
        if (cfg_.smoothness_degree < 0 || cfg_.smoothness_degree > 32)
            throw ConfigError("smoothness_degree must lie in [0, 32]");
        if (cfg_.anomaly_amplitude_sigma < 0.0 || cfg_.smooth_sigma < 0.0 || cfg_.noise_sigma < 0.0)
            throw ConfigError("synthetic amplitudes must be nonnegative");
        if (rois.labels.size() != mesh.vertex_count()) throw ConfigError("ROI map does not match the mesh");
        for (auto id : cfg_.anomaly_roi_ids)
            if (id >= rois.roi_count()) throw ConfigError("anomaly ROI id " + std::to_string(id) + " is not in the ROI map");
        basis_ = real_sh_basis(mesh, cfg_.smoothness_degree);
        scales_ = sh_degree_scales(cfg_.smoothness_degree);
        in_anomaly_.assign(mesh.vertex_count(), false);
        for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
            for (auto id : cfg_.anomaly_roi_ids)
                if (rois.labels[v] == id) in_anomaly_[v] = true;
    }

    const SynthConfig& config() const { return cfg_; }

    std::size_t subject_count() const { return cfg_.n_healthy() + cfg_.n_anomalous; }

    // Subject `index` in cohort order: train, val, test-healthy, anomalous.
    SyntheticSubject subject(std::size_t index) const {
        SyntheticSubject s;
        const auto nh = cfg_.n_healthy();
        s.group = index < nh ? Group::Healthy : Group::Anomalous;
        s.split = index < cfg_.n_train ? Split::Train
                  : index < cfg_.n_train + cfg_.n_val ? Split::Val
                                                       : Split::Test;
        char buf[32];
        if (s.group == Group::Healthy)
            std::snprintf(buf, sizeof buf, "h%05zu", index);
        else
            std::snprintf(buf, sizeof buf, "a%05zu", index - nh);
        s.subject_id = buf;
        s.sample.subject_id = s.subject_id;
        s.sample.feature = cfg_.feature;
        s.sample.values = field(derive_seed(cfg_.seed, 0x5355424A, index), s.group == Group::Anomalous);
        return s;
    }

    std::vector<double> field(std::uint64_t subject_seed, bool anomalous) const {
        Rng rng(subject_seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd coeff(basis_.cols());
        Eigen::Index col = 0;
        for (int l = 0; l <= cfg_.smoothness_degree; ++l)
            for (int m = -l; m <= l; ++m)
                coeff(col++) = normal(rng) * scales_[static_cast<std::size_t>(l)] * cfg_.smooth_sigma;
        const Eigen::VectorXd smooth = basis_ * coeff;
        const double shift = anomalous ? cfg_.anomaly_amplitude_sigma * cfg_.vertex_sigma() : 0.0;
        std::vector<double> out(static_cast<std::size_t>(smooth.size()));
        for (std::size_t v = 0; v < out.size(); ++v) {
            out[v] = cfg_.base_value + smooth(static_cast<Eigen::Index>(v)) + cfg_.noise_sigma * normal(rng);
            if (in_anomaly_[v]) out[v] += shift;
        }
        return out;
    }

    std::vector<SyntheticSubject> generate(unsigned threads = 1) const {
        std::vector<SyntheticSubject> out(subject_count());
        parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = subject(i); });
        return out;
    }

private:
    const RoiMap& rois_;
    SynthConfig cfg_;
    Eigen::MatrixXd basis_;
    std::vector<double> scales_;
    std::vector<bool> in_anomaly_;
};

// Writes subjects/<id>.camf and manifest.csv under `dir`; returns the manifest.
inline CohortManifest write_synthetic_cohort(const std::vector<SyntheticSubject>& subjects,
                                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "subjects");
    CohortManifest m;
    for (const auto& s : subjects) {
        const auto rel = std::filesystem::path("subjects") / (s.subject_id + ".camf");
        write_surface_sample(s.sample, dir / rel);
        m.entries.push_back({s.subject_id, s.group, s.split, rel});
    }
    write_manifest(m, dir / "manifest.csv");
    for (auto& e : m.entries) e.path = dir / e.path;
    return m;
}

}  // namespace cam
