#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cam/anomaly.hpp"
#include "cam/pipeline.hpp"
#include "test_util.hpp"

using namespace cam;

namespace {

const Geometry& geometry() {
    static const Geometry g = build_geometry();
    return g;
}

const RoiMap& rois() {
    static const RoiMap m = synth_roi_map(geometry().mesh, 6, 4);
    return m;
}

EncoderConfig tiny_encoder() {
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.dim = 16;
    return c;
}

SurfaceSample random_sample(const std::string& id, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(2.5, 0.4);
    SurfaceSample s;
    s.subject_id = id;
    s.values.resize(geometry().mesh.vertex_count());
    for (auto& v : s.values) v = n(rng);
    return s;
}

PatchSequence random_patches(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    SurfaceSample s;
    s.values.resize(geometry().mesh.vertex_count());
    for (auto& v : s.values) v = n(rng);
    return patchify(s, geometry().layout);
}

}  // namespace

TEST(Schedule, Examples) {
    const auto s = build_schedule(320, 10);
    ASSERT_EQ(s.iterations(), 10u);
    for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(s.blocks[t], std::make_pair(32 * t, 32 * t + 32));
    const auto r = build_schedule(7, 3);
    EXPECT_EQ(r.blocks, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {2, 4}, {4, 7}}));
    EXPECT_THROW(build_schedule(320, 0), ConfigError);
    EXPECT_THROW(build_schedule(5, 6), ConfigError);
    EXPECT_EQ(build_schedule(5, 5).blocks.back(), (std::pair<std::size_t, std::size_t>{4, 5}));
}

TEST(Schedule, RandomPartitions) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t p = 1 + rng() % 500;
        const std::size_t t = 1 + rng() % p;
        const auto s = build_schedule(p, t);
        ASSERT_EQ(s.iterations(), t);
        std::vector<int> hits(p, 0);
        std::size_t prev_end = 0;
        for (const auto& [b, e] : s.blocks) {
            ASSERT_EQ(b, prev_end);
            ASSERT_LT(b, e);
            for (std::size_t i = b; i < e; ++i) ++hits[i];
            prev_end = e;
        }
        EXPECT_EQ(prev_end, p);
        EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    }
}

TEST(IterativeScore, OracleReconstructorScoresZero) {
    const auto x = random_patches(3);
    const Reconstructor oracle = [](const MatD& in, const MaskPlan&) { return in; };
    const auto rep = iterative_masked_score(x, oracle, build_schedule(320, 10), geometry().layout, rois());
    EXPECT_EQ(rep.global_score, 0.0);
    for (double r : rep.roi_scores) EXPECT_EQ(r, 0.0);
    EXPECT_EQ(rep.roi_scores.size(), rois().roi_count());
    EXPECT_EQ(rep.per_vertex_error.size(), 40962u);
}

TEST(IterativeScore, EachPatchReconstructedOnce) {
    const auto x = random_patches(4);
    std::vector<int> masked_count(320, 0);
    int calls = 0;
    // Each call returns its own call index everywhere; the stitched result must
    // take block t's rows from call t only.
    const Reconstructor probe = [&](const MatD& in, const MaskPlan& plan) {
        for (auto m : plan.masked_ids) ++masked_count[m];
        return MatD(MatD::Constant(in.rows(), in.cols(), static_cast<double>(calls++)));
    };
    const auto sched = build_schedule(320, 7);
    const MatD recon = iterative_reconstruction(x.data, probe, sched);
    EXPECT_EQ(calls, 7);
    EXPECT_TRUE(std::all_of(masked_count.begin(), masked_count.end(), [](int c) { return c == 1; }));
    for (std::size_t t = 0; t < sched.blocks.size(); ++t)
        for (std::size_t p = sched.blocks[t].first; p < sched.blocks[t].second; ++p)
            EXPECT_TRUE((recon.row(static_cast<Eigen::Index>(p)).array() == static_cast<double>(t)).all());
}

TEST(IterativeScore, GlobalScoreDecomposesOverPatches) {
    const auto params = EncoderParams<double>::init(tiny_encoder(), 5);
    const auto x = random_patches(6);
    const auto rep = iterative_masked_score(x, params, build_schedule(320, 10), geometry().layout, rois());
    double sum = 0.0;
    for (double e : rep.per_patch_error) sum += 153.0 * e;
    EXPECT_NEAR(rep.global_score, sum, 1e-9);
    EXPECT_GT(rep.global_score, 0.0);
    for (double e : rep.per_vertex_error) EXPECT_GE(e, 0.0);
}

TEST(IterativeScore, RoiScoresAreConvexCombinations) {
    const auto params = EncoderParams<double>::init(tiny_encoder(), 7);
    const auto rep = iterative_masked_score(random_patches(8), params, build_schedule(320, 10), geometry().layout, rois());
    const auto& labels = rois().labels;
    for (std::size_t k = 0; k < rois().roi_count(); ++k) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t v = 0; v < labels.size(); ++v)
            if (labels[v] == k) {
                lo = std::min(lo, rep.per_vertex_error[v]);
                hi = std::max(hi, rep.per_vertex_error[v]);
            }
        EXPECT_GE(rep.roi_scores[k], lo);
        EXPECT_LE(rep.roi_scores[k], hi);
    }
}

TEST(IterativeScore, ConstantOffsetGivesUniformVertexError) {
    const auto x = random_patches(9);
    const Reconstructor shifted = [](const MatD& in, const MaskPlan&) { return MatD(in.array() + 0.25); };
    const auto rep = iterative_masked_score(x, shifted, build_schedule(320, 10), geometry().layout, rois());
    for (double e : rep.per_vertex_error) EXPECT_NEAR(e, 0.25, 1e-12);
    for (double r : rep.roi_scores) EXPECT_NEAR(r, 0.25, 1e-12);
    EXPECT_NEAR(rep.global_score, 0.25 * 320 * 153, 1e-6);
}

TEST(IterativeScore, ShiftBoundWithFixedReconstruction) {
    const auto x = random_patches(10);
    const MatD fixed = random_patches(11).data;
    const Reconstructor constant = [&](const MatD&, const MaskPlan&) { return fixed; };
    const auto sched = build_schedule(320, 10);
    const double c = 0.3;
    PatchSequence xc = x;
    xc.data.array() += c;
    const double s0 = iterative_masked_score(x, constant, sched, geometry().layout, rois()).global_score;
    const double s1 = iterative_masked_score(xc, constant, sched, geometry().layout, rois()).global_score;
    EXPECT_LE(s1, s0 + 320 * 153 * c + 1e-6);
}

TEST(IterativeScore, MaskedBlockIsInvisibleButContextMatters) {
    const auto params = EncoderParams<double>::init(tiny_encoder(), 12);
    const auto model = encoder_reconstructor(params);
    const auto x = random_patches(13);
    const auto block = range_mask(64, 96);
    const MatD base = model(x.data, block).middleRows(64, 32);

    MatD inside = x.data;
    inside.middleRows(64, 32).array() += 5.0;
    EXPECT_EQ(MatD(model(inside, block).middleRows(64, 32)), base);

    MatD outside = x.data;
    outside.row(3).array() += 5.0;
    EXPECT_GT((MatD(model(outside, block).middleRows(64, 32)) - base).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(IterativeScore, DeterministicAndShapeChecked) {
    const auto params = EncoderParams<float>::init(tiny_encoder(), 14);
    const auto x = random_patches(15);
    const auto sched = build_schedule(320, 10);
    const auto a = iterative_masked_score(x, params, sched, geometry().layout, rois());
    const auto b = iterative_masked_score(x, params, sched, geometry().layout, rois());
    EXPECT_EQ(a.global_score, b.global_score);
    EXPECT_EQ(a.per_vertex_error, b.per_vertex_error);
    EXPECT_EQ(a.roi_scores, b.roi_scores);

    auto wrong = tiny_encoder();
    wrong.patch_dim = 150;
    EXPECT_THROW(iterative_masked_score(x, EncoderParams<float>::init(wrong, 1), sched, geometry().layout, rois()),
                 ConfigError);
    EXPECT_THROW(iterative_masked_score(x, params, build_schedule(319, 10), geometry().layout, rois()), ConfigError);
}

TEST(ScoreCohort, CsvOrderAndErrors) {
    test::TempDir dir;
    std::vector<SurfaceSample> samples;
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 4; ++i) {
        samples.push_back(random_sample("s" + std::to_string(i), 20 + i));
        const auto path = dir / ("s" + std::to_string(i) + ".camf");
        write_surface_sample(samples.back(), path);
        entries.push_back({samples.back().subject_id, i < 2 ? Group::Healthy : Group::Anomalous, Split::Test, path});
    }
    const auto norm = fit_norm_stats(samples);
    const auto params = EncoderParams<float>::init(tiny_encoder(), 3);
    const auto sched = build_schedule(320, 10);
    const auto& L = geometry().layout;

    const auto reports = score_cohort(entries, params, norm, L, rois(), sched, 2);
    ASSERT_EQ(reports.size(), 4u);
    auto reversed = entries;
    std::reverse(reversed.begin(), reversed.end());
    const auto rev = score_cohort(reversed, params, norm, L, rois(), sched, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(rev[3 - i].subject_id, reports[i].subject_id);
        EXPECT_EQ(rev[3 - i].global_score, reports[i].global_score);
        EXPECT_EQ(rev[3 - i].roi_scores, reports[i].roi_scores);
    }

    write_score_csv(reports, rois(), dir / "scores.csv");
    const auto table = read_score_csv(dir / "scores.csv");
    EXPECT_EQ(table.roi_names, rois().names);
    ASSERT_EQ(table.rows.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(table.rows[i].subject_id, reports[i].subject_id);
        EXPECT_EQ(table.rows[i].group, reports[i].group);
        EXPECT_NEAR(table.rows[i].global_score, reports[i].global_score, 1e-8 * reports[i].global_score);
        for (std::size_t k = 0; k < rois().roi_count(); ++k)
            EXPECT_NEAR(table.rows[i].roi_scores[k], reports[i].roi_scores[k], 1e-8 * reports[i].roi_scores[k]);
    }

    write_score_csv({}, rois(), dir / "empty.csv");
    const auto text = test::read_file(dir / "empty.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
    EXPECT_EQ(text.rfind("subject_id,group,global,", 0), 0u);
    EXPECT_TRUE(read_score_csv(dir / "empty.csv").rows.empty());

    auto missing = entries;
    missing[2].path = dir / "nope.camf";
    try {
        score_cohort(missing, params, norm, L, rois(), sched, 1);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("s2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(read_score_csv(dir / "absent.csv"), IoError);
}
