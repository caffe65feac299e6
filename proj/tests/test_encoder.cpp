#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "cam/checkpoint.hpp"
#include "cam/encoder.hpp"
#include "test_util.hpp"

using namespace cam;

namespace {

using Grid = std::vector<std::vector<double>>;

EncoderConfig small_config(std::size_t layers = 2, std::size_t heads = 2, std::size_t dim = 8, std::size_t patches = 6,
                           std::size_t patch_dim = 5) {
    EncoderConfig c;
    c.layers = layers;
    c.heads = heads;
    c.dim = dim;
    c.patches = patches;
    c.patch_dim = patch_dim;
    return c;
}

MatD random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sd);
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Deterministic "hand-picked" values: small, irregular, no RNG.
void fill_fixed(MatD& m, double phase) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.3 * std::sin(1.7 * static_cast<double>(i) + phase) + 0.05;
}

Grid to_grid(const MatD& m) {
    Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
    return g;
}

// Scalar-loop reference for one block: LN2(MHA(LN1(Z)) + Z).
Grid scalar_layer(const Grid& z, const LayerParams<double>& L, std::size_t heads, double eps) {
    const std::size_t P = z.size(), D = z[0].size(), dh = D / heads;
    auto ln = [&](const Grid& x, const MatD& g, const MatD& b) {
        Grid y = x;
        for (std::size_t p = 0; p < P; ++p) {
            double mu = 0.0;
            for (std::size_t d = 0; d < D; ++d) mu += x[p][d];
            mu /= static_cast<double>(D);
            double var = 0.0;
            for (std::size_t d = 0; d < D; ++d) var += (x[p][d] - mu) * (x[p][d] - mu);
            var /= static_cast<double>(D);
            for (std::size_t d = 0; d < D; ++d) y[p][d] = (x[p][d] - mu) / std::sqrt(var + eps) * g(0, d) + b(0, d);
        }
        return y;
    };
    auto affine = [&](const Grid& x, const MatD& w, const MatD& b) {
        Grid y(P, std::vector<double>(D, 0.0));
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t j = 0; j < D; ++j) {
                double s = b(0, j);
                for (std::size_t i = 0; i < D; ++i) s += x[p][i] * w(i, j);
                y[p][j] = s;
            }
        return y;
    };
    const Grid a = ln(z, L.ln1_g, L.ln1_b);
    const Grid q = affine(a, L.wq, L.bq), k = affine(a, L.wk, MatD::Zero(1, static_cast<Eigen::Index>(D))), v = affine(a, L.wv, L.bv);
    Grid o(P, std::vector<double>(D, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < P; ++i) {
            std::vector<double> s(P);
            for (std::size_t j = 0; j < P; ++j) {
                double dot = 0.0;
                for (std::size_t d = h * dh; d < (h + 1) * dh; ++d) dot += q[i][d] * k[j][d];
                s[j] = dot / std::sqrt(static_cast<double>(dh));
            }
            double total = 0.0;
            for (std::size_t j = 0; j < P; ++j) total += std::exp(s[j]);
            for (std::size_t d = h * dh; d < (h + 1) * dh; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < P; ++j) acc += std::exp(s[j]) / total * v[j][d];
                o[i][d] = acc;
            }
        }
    }
    Grid r = affine(o, L.wo, L.bo);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t d = 0; d < D; ++d) r[p][d] += z[p][d];
    return ln(r, L.ln2_g, L.ln2_b);
}

void expect_grid_near(const MatD& got, const Grid& want, double tol) {
    ASSERT_EQ(static_cast<std::size_t>(got.rows()), want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        for (std::size_t j = 0; j < want[i].size(); ++j) EXPECT_NEAR(got(i, j), want[i][j], tol) << i << "," << j;
}

}  // namespace

TEST(EncoderConfig, Validation) {
    EncoderConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.heads, 8u);
    EXPECT_EQ(c.dim, 64u);
    EXPECT_EQ(c.layers, 6u);
    c.heads = 12;
    try {
        c.validate();
        FAIL() << "dim 64 with 12 heads must be rejected";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("divisible"), std::string::npos);
    }
    c = EncoderConfig{};
    c.layers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(c.validate(true));
    c = EncoderConfig{};
    c.mask_ratio = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = EncoderConfig{};
    c.dim = 768;
    c.heads = 12;
    EXPECT_NO_THROW(c.validate());
}

TEST(SampleMask, SizeDistinctSorted) {
    Rng rng(1);
    const auto plan = sample_mask(320, 0.5, rng);
    EXPECT_EQ(plan.size(), 160u);
    EXPECT_TRUE(std::is_sorted(plan.masked_ids.begin(), plan.masked_ids.end()));
    EXPECT_EQ(std::set<std::uint32_t>(plan.masked_ids.begin(), plan.masked_ids.end()).size(), 160u);
    EXPECT_LT(plan.masked_ids.back(), 320u);
    EXPECT_EQ(sample_mask(7, 0.3, rng).size(), 2u);
    EXPECT_THROW(sample_mask(10, 0.0, rng), ConfigError);
    Rng a(5), b(5);
    EXPECT_EQ(sample_mask(320, 0.5, a).masked_ids, sample_mask(320, 0.5, b).masked_ids);
}

TEST(SampleMask, EachPatchMaskedHalfTheTime) {
    Rng rng(77);
    std::vector<int> hits(320, 0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d)
        for (auto m : sample_mask(320, 0.5, rng).masked_ids) ++hits[m];
    for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.5, 0.02);
}

TEST(Embed, VisibleMaskedAndShapes) {
    const auto cfg = small_config();
    const auto params = EncoderParams<double>::init(cfg, 3);
    const MatD x = random_matrix(6, 5, 4);
    const MatD plain = embed(x, MaskPlan{}, params);
    for (Eigen::Index p = 0; p < 6; ++p) {
        const MatD want = x.row(p) * params.w_embed + params.b_embed + params.pos_embed.row(p);
        for (Eigen::Index d = 0; d < 8; ++d) EXPECT_NEAR(plain(p, d), want(0, d), 1e-14);
    }
    const MatD all = embed(x, range_mask(0, 6), params);
    for (Eigen::Index p = 0; p < 6; ++p)
        for (Eigen::Index d = 0; d < 8; ++d) EXPECT_EQ(all(p, d), params.mask_token(0, d) + params.pos_embed(p, d));
    // Masked rows do not see X.
    const MaskPlan plan{{1, 4}};
    MatD x2 = x;
    x2.row(1).setConstant(100.0);
    x2.row(4) *= -3.0;
    EXPECT_EQ(embed(x, plan, params), embed(x2, plan, params));
    EXPECT_THROW(embed(MatD(random_matrix(5, 5, 1)), plan, params), ShapeError);
    EXPECT_THROW(embed(x, MaskPlan{{6}}, params), ShapeError);
}

TEST(EncoderForward, SingleLayerMatchesScalarOracle) {
    struct Case {
        std::size_t dim, heads, patches;
    };
    for (const auto& c : {Case{2, 1, 3}, Case{4, 2, 5}, Case{6, 3, 4}}) {
        auto cfg = small_config(1, c.heads, c.dim, c.patches, 3);
        auto params = EncoderParams<double>::zeros(cfg);
        double phase = 0.1;
        params.for_each([&](const std::string&, MatD& t, bool) { fill_fixed(t, phase += 0.37); });
        MatD z0(static_cast<Eigen::Index>(c.patches), static_cast<Eigen::Index>(c.dim));
        fill_fixed(z0, 2.0);
        z0 *= 3.0;
        const MatD z = encoder_forward(z0, params);
        expect_grid_near(z, scalar_layer(to_grid(z0), params.layers[0], c.heads, cfg.ln_eps), 1e-10);
    }
}

TEST(EncoderForward, StacksLayersAndIdentityWithoutLayers) {
    auto cfg = small_config(3, 2, 4, 5, 3);
    auto params = EncoderParams<double>::init(cfg, 8);
    const MatD z0 = random_matrix(5, 4, 2);
    Grid want = to_grid(z0);
    for (const auto& L : params.layers) want = scalar_layer(want, L, 2, cfg.ln_eps);
    expect_grid_near(encoder_forward(z0, params), want, 1e-10);

    auto id_cfg = cfg;
    id_cfg.layers = 0;
    const auto id = EncoderParams<double>::init(id_cfg, 1);
    EXPECT_EQ(encoder_forward(z0, id), z0);
}

TEST(EncoderForward, PermutationEquivariant) {
    const auto cfg = small_config(2, 2, 8, 6);
    const auto params = EncoderParams<double>::init(cfg, 5);
    const MatD z0 = random_matrix(6, 8, 9);
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    MatD zp(6, 8);
    for (int i = 0; i < 6; ++i) zp.row(i) = z0.row(perm[i]);
    const MatD out = encoder_forward(z0, params), outp = encoder_forward(zp, params);
    for (int i = 0; i < 6; ++i)
        for (int d = 0; d < 8; ++d) EXPECT_NEAR(outp(i, d), out(perm[i], d), 1e-12);
}

TEST(EncoderForward, NonFiniteReportsLayer) {
    const auto cfg = small_config(3, 2, 8, 6);
    auto params = EncoderParams<double>::init(cfg, 5);
    params.layers[1].wv(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        encoder_forward(random_matrix(6, 8, 1), params);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
    }
    MatD bad = random_matrix(6, 8, 1);
    bad(2, 3) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(encoder_forward(bad, EncoderParams<double>::init(cfg, 5)), NumericError);
}

TEST(EncoderForward, SoftmaxRowsAndLayerNormMoments) {
    const auto cfg = small_config(1, 2, 8, 6);
    auto params = EncoderParams<double>::init(cfg, 12);
    const MatD z0 = random_matrix(6, 8, 3, 3.0);
    ForwardCache<double> cache;
    encoder_forward(z0, params, &cache);
    for (const auto& p : cache.layers[0].probs)
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
            EXPECT_GE(p.row(r).minCoeff(), 0.0);
        }
    for (const auto* c : {&cache.layers[0].ln1, &cache.layers[0].ln2})
        for (Eigen::Index r = 0; r < c->xhat.rows(); ++r) {
            const double mean = c->xhat.row(r).mean();
            const double var = (c->xhat.row(r).array() - mean).square().mean();
            EXPECT_NEAR(mean, 0.0, 1e-6);
            EXPECT_NEAR(var, 1.0, 1e-6);
        }
    MatD s = random_matrix(4, 7, 1, 50.0);  // large logits: max subtraction keeps this finite
    softmax_rows(s);
    EXPECT_TRUE(s.allFinite());
    for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
}

TEST(Reconstruct, HeadIsAffine) {
    const auto cfg = small_config(1, 2, 8, 6, 5);
    auto params = EncoderParams<double>::zeros(cfg);
    const MatD z = random_matrix(6, 8, 4);
    EXPECT_TRUE((reconstruct(z, params).array() == 0.0).all());
    params.head_b = random_matrix(1, 5, 2);
    const MatD bias_only = reconstruct(z, params);
    for (Eigen::Index p = 0; p < 6; ++p) EXPECT_EQ(MatD(bias_only.row(p)), params.head_b);
    params.head_w = random_matrix(8, 5, 3);
    const MatD got = reconstruct(z, params);
    for (Eigen::Index p = 0; p < 6; ++p)
        for (Eigen::Index j = 0; j < 5; ++j) {
            double s = params.head_b(0, j);
            for (Eigen::Index d = 0; d < 8; ++d) s += z(p, d) * params.head_w(d, j);
            EXPECT_NEAR(got(p, j), s, 1e-12);
        }
}

TEST(Predict, DeterministicAndBlindUnderFullMask) {
    const auto cfg = small_config(2, 2, 8, 6, 5);
    const auto params = EncoderParams<float>::init(cfg, 21);
    const Mat<float> x = random_matrix(6, 5, 1).cast<float>();
    const MaskPlan plan{{0, 3}};
    EXPECT_EQ(predict(x, plan, params), predict(x, plan, params));
    const auto full = range_mask(0, 6);
    const Mat<float> other = random_matrix(6, 5, 99).cast<float>();
    EXPECT_EQ(predict(x, full, params), predict(other, full, params));
}

TEST(EncoderParams, NamesDecayAndInit) {
    auto cfg = small_config(2, 2, 8, 6, 5);
    cfg.use_ffn = true;
    const auto p = EncoderParams<double>::init(cfg, 4);
    std::vector<std::string> decayed, plain;
    p.for_each([&](const std::string& n, const MatD&, bool d) { (d ? decayed : plain).push_back(n); });
    for (const auto& n : decayed) EXPECT_TRUE(n.ends_with(".weight")) << n;
    for (const auto& n : plain) EXPECT_FALSE(n.ends_with(".weight")) << n;
    EXPECT_EQ(decayed.size(), 1u + 2u * 6u + 1u);
    EXPECT_TRUE(std::find(plain.begin(), plain.end(), "pos_embed") != plain.end());
    EXPECT_TRUE(std::find(plain.begin(), plain.end(), "layer1.ln2.scale") != plain.end());
    EXPECT_TRUE((p.layers[0].ln1_g.array() == 1.0).all());
    EXPECT_TRUE((p.layers[0].bq.array() == 0.0).all());
    const auto q = EncoderParams<double>::init(cfg, 4);
    EXPECT_EQ(p.w_embed, q.w_embed);
    EXPECT_EQ(p.pos_embed, q.pos_embed);
    EXPECT_NE(p.w_embed, EncoderParams<double>::init(cfg, 5).w_embed);
}

TEST(Checkpoint, RoundTripAndMismatches) {
    test::TempDir dir;
    auto cfg = small_config(2, 2, 8, 6, 5);
    cfg.use_ffn = true;
    const auto p = EncoderParams<float>::init(cfg, 7);
    save_checkpoint(p, dir / "m.camw");
    const auto r = load_checkpoint<float>(dir / "m.camw", cfg);
    EXPECT_EQ(r.config, cfg);
    std::vector<const Mat<float>*> a, b;
    p.for_each([&](const std::string&, const Mat<float>& t, bool) { a.push_back(&t); });
    r.for_each([&](const std::string&, const Mat<float>& t, bool) { b.push_back(&t); });
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);

    save_checkpoint(p, dir / "m2.camw");
    EXPECT_EQ(test::read_file(dir / "m.camw"), test::read_file(dir / "m2.camw"));

    auto other = cfg;
    other.dim = 16;
    EXPECT_THROW(load_checkpoint<float>(dir / "m.camw", other), ConfigError);

    const auto bytes = test::read_file(dir / "m.camw");
    std::ofstream(dir / "t.camw", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    EXPECT_THROW(load_checkpoint<float>(dir / "t.camw"), FormatError);
    // Corrupt the first tensor name ("embed.weight" -> "embed.weighX").
    auto bad = bytes;
    const auto pos = bad.find("embed.weight");
    ASSERT_NE(pos, std::string::npos);
    bad[pos + 11] = 'X';
    std::ofstream(dir / "n.camw", std::ios::binary) << bad;
    EXPECT_THROW(load_checkpoint<float>(dir / "n.camw"), FormatError);
    // Corrupt a stored row count.
    auto shape = bytes;
    shape[pos + 12] = static_cast<char>(shape[pos + 12] + 1);
    std::ofstream(dir / "s.camw", std::ios::binary) << shape;
    EXPECT_THROW(load_checkpoint<float>(dir / "s.camw"), FormatError);
}
