#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cam/trainer.hpp"

using namespace cam;

namespace {

EncoderConfig small_config(std::size_t layers, bool ffn) {
    EncoderConfig c;
    c.layers = layers;
    c.heads = 2;
    c.dim = 8;
    c.patches = 6;
    c.patch_dim = 5;
    c.use_ffn = ffn;
    return c;
}

template <typename S = double>
Mat<S> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0, double mean = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(mean, sd);
    Mat<S> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
    return m;
}

std::vector<const MatD*> tensors(const EncoderParams<double>& p) {
    std::vector<const MatD*> out;
    p.for_each([&](const std::string&, const MatD& t, bool) { out.push_back(&t); });
    return out;
}

}  // namespace

TEST(MaskedL1Loss, ValuesAndOracle) {
    const MatD x = random_matrix(6, 5, 1);
    const MaskPlan plan{{0, 2, 5}};
    EXPECT_EQ(masked_l1_loss(x, x, plan), 0.0);
    MatD shifted = x.array() + 0.25;
    EXPECT_NEAR(masked_l1_loss(shifted, x, plan), 5 * 0.25, 1e-12);

    const MatD y = random_matrix(6, 5, 2);
    double want = 0.0;
    for (auto m : plan.masked_ids)
        for (int j = 0; j < 5; ++j) want += std::abs(y(m, j) - x(m, j));
    want /= 3.0;
    EXPECT_NEAR(masked_l1_loss(y, x, plan), want, 1e-12);
    // Unmasked rows do not matter.
    MatD y2 = y;
    y2.row(1).setConstant(1e6);
    EXPECT_EQ(masked_l1_loss(y2, x, plan), masked_l1_loss(y, x, plan));
    EXPECT_THROW(masked_l1_loss(y, x, MaskPlan{}), ConfigError);
    EXPECT_THROW(masked_l1_loss(MatD(random_matrix(6, 4, 1)), x, plan), ShapeError);
}

TEST(MaskedL1Loss, FullSizeConstantOffset) {
    const MatD x = MatD::Zero(320, 153);
    const MatD c = MatD::Constant(320, 153, -0.5);
    Rng rng(4);
    EXPECT_NEAR(masked_l1_loss(c, x, sample_mask(320, 0.5, rng)), 153 * 0.5, 1e-9);
}

TEST(Backward, HeadGradientVanishesAtZeroResidual) {
    auto params = EncoderParams<double>::init(small_config(1, false), 3);
    params.head_w.setZero();
    const MatD x = MatD::Zero(6, 5);
    params.head_b.setZero();
    const auto lg = backward(x, MaskPlan{{1, 3, 4}}, params);
    EXPECT_EQ(lg.loss, 0.0);
    EXPECT_TRUE((lg.grad.head_w.array() == 0.0).all());
    EXPECT_TRUE((lg.grad.head_b.array() == 0.0).all());
}

TEST(Backward, DuplicatedBatchGivesSameMeanGradient) {
    const auto params = EncoderParams<double>::init(small_config(2, true), 5);
    const MatD a = random_matrix(6, 5, 1), b = random_matrix(6, 5, 2);
    const MaskPlan pa{{0, 3, 4}}, pb{{1, 2, 5}};
    const auto once = batch_loss_and_gradient<double>({{&a, pa}, {&b, pb}}, params);
    const auto twice = batch_loss_and_gradient<double>({{&a, pa}, {&b, pb}, {&a, pa}, {&b, pb}}, params);
    EXPECT_NEAR(once.loss, twice.loss, 1e-12);
    const auto g1 = tensors(once.grad), g2 = tensors(twice.grad);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_LT((*g1[i] - *g2[i]).cwiseAbs().maxCoeff(), 1e-12);
    const auto par = batch_loss_and_gradient<double>({{&a, pa}, {&b, pb}, {&a, pa}, {&b, pb}}, params, 4);
    const auto g3 = tensors(par.grad);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(*g2[i], *g3[i]);
}

TEST(GradientCheck, FullModelWithFeedForward) {
    const auto params = EncoderParams<double>::init(small_config(2, true), 11);
    const MatD a = random_matrix(6, 5, 1, 1.0, 0.5), b = random_matrix(6, 5, 2);
    const auto res = gradient_check(params, {{&a, MaskPlan{{0, 2, 3}}}, {&b, MaskPlan{{1, 4, 5}}}}, 1e-4, 400, 3);
    std::size_t n_tensors = 0;
    params.for_each([&](const std::string&, const MatD&, bool) { ++n_tensors; });
    EXPECT_GE(res.coordinates, 200u);
    EXPECT_EQ(res.tensors_covered.size(), n_tensors);
    EXPECT_LT(res.max_rel_error, 1e-4) << "worst tensor " << res.worst_tensor;
}

TEST(GradientCheck, AttentionOnly) {
    const auto params = EncoderParams<double>::init(small_config(3, false), 12);
    const MatD a = random_matrix(6, 5, 7);
    const auto res = gradient_check(params, {{&a, MaskPlan{{0, 1, 5}}}}, 1e-5, 300, 4);
    EXPECT_GE(res.coordinates, 200u);
    EXPECT_LT(res.max_rel_error, 1e-4) << "worst tensor " << res.worst_tensor;
}

TEST(GradientCheck, EmbeddingAndHeadOnly) {
    auto cfg = small_config(0, false);
    const auto params = EncoderParams<double>::init(cfg, 13);
    const MatD a = random_matrix(6, 5, 8);
    const auto res = gradient_check(params, {{&a, MaskPlan{{2, 3}}}}, 1e-5, 200, 5);
    // The model is affine in each parameter, so differences are exact up to rounding.
    EXPECT_LT(res.max_rel_error, 1e-7) << "worst tensor " << res.worst_tensor;
}

TEST(Backward, MaskedInputsDoNotReachEmbeddingGradient) {
    const auto params = EncoderParams<double>::init(small_config(2, false), 9);
    const MaskPlan plan{{1, 4}};
    const MatD x = random_matrix(6, 5, 3);
    MatD seen = x;
    seen.row(1).array() += 7.0;
    seen.row(4).setConstant(-3.0);
    const auto g0 = loss_and_gradient(x, x, plan, params);
    const auto g1 = loss_and_gradient(seen, x, plan, params);
    EXPECT_EQ(g0.grad.w_embed, g1.grad.w_embed);
    EXPECT_EQ(g0.loss, g1.loss);
}

TEST(CosineLr, Schedule) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
    EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5);
    EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 0.0), 5e-4, 1e-15);
    EXPECT_NEAR(cosine_lr(25, 100, 1.0, 0.0), (1.0 + std::sqrt(0.5)) / 2.0, 1e-15);
    for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, 1.0, 0.0), cosine_lr(s - 1, 100, 1.0, 0.0));
    EXPECT_THROW(cosine_lr(101, 100, 1e-3, 0.0), BoundsError);
    EXPECT_THROW(cosine_lr(0, 0, 1e-3, 0.0), BoundsError);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
    auto p = EncoderParams<double>::init(small_config(1, false), 2);
    const auto before = p;
    auto st = AdamWState<double>::zeros_like(p);
    adamw_step(p, st, EncoderParams<double>::zeros(p.config), 0.1, AdamWConfig{.weight_decay = 0.0});
    EXPECT_EQ(p.w_embed, before.w_embed);
    EXPECT_EQ(p.layers[0].wq, before.layers[0].wq);

    auto q = before;
    auto st2 = AdamWState<double>::zeros_like(q);
    adamw_step(q, st2, EncoderParams<double>::zeros(q.config), 0.1, AdamWConfig{.weight_decay = 0.5});
    EXPECT_LT((q.w_embed - 0.95 * before.w_embed).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((q.layers[0].wo - 0.95 * before.layers[0].wo).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(q.pos_embed, before.pos_embed);
    EXPECT_EQ(q.mask_token, before.mask_token);
    EXPECT_EQ(q.layers[0].ln1_g, before.layers[0].ln1_g);
    EXPECT_EQ(q.head_b, before.head_b);
}

TEST(AdamW, FirstTwoStepsByHand) {
    auto p = EncoderParams<double>::zeros(small_config(1, false));
    p.head_b(0, 0) = 1.0;
    p.head_w(0, 0) = 2.0;
    auto g = EncoderParams<double>::zeros(p.config);
    g.head_b(0, 0) = 0.3;
    g.head_w(0, 0) = -0.2;
    auto st = AdamWState<double>::zeros_like(p);
    const AdamWConfig opt{.weight_decay = 0.1};
    adamw_step(p, st, g, 0.01, opt);
    // Step one: mhat = g, vhat = g^2, update = lr * sign(g) (up to eps).
    EXPECT_NEAR(p.head_b(0, 0), 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-14);
    EXPECT_NEAR(p.head_w(0, 0), 2.0 * (1.0 - 0.001) + 0.01 * 0.2 / (0.2 + 1e-8), 1e-14);
    // Step two with a new gradient.
    g.head_b(0, 0) = -0.1;
    adamw_step(p, st, g, 0.01, opt);
    const double m = 0.9 * 0.1 * 0.3 + 0.1 * -0.1;
    const double v = 0.999 * 0.001 * 0.09 + 0.001 * 0.01;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    EXPECT_NEAR(p.head_b(0, 0), 1.0 - 0.01 * 0.3 / (0.3 + 1e-8) - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
    EXPECT_EQ(st.step, 2u);
}

TEST(TrainConfig, Validation) {
    TrainConfig t;
    EXPECT_NO_THROW(t.validate());
    EXPECT_EQ(t.max_epochs, 200u);
    t.max_epochs = 201;
    EXPECT_THROW(t.validate(), ConfigError);
    t = TrainConfig{};
    t.learning_rate = 0.0;
    EXPECT_THROW(t.validate(), ConfigError);
    t = TrainConfig{};
    t.batch_size = 0;
    EXPECT_THROW(t.validate(), ConfigError);
    t = TrainConfig{};
    t.eta_min = 1.0;
    EXPECT_THROW(t.validate(), ConfigError);
}

namespace {

struct SmallRun {
    std::vector<Mat<float>> train_set, val_set;
    EncoderParams<float> init;
    TrainConfig tc;
};

SmallRun constant_field_run() {
    SmallRun r;
    const auto cfg = small_config(1, false);
    // One constant subject repeated 64 times per epoch, so 50 epochs give 3200 optimizer steps.
    for (int i = 0; i < 64; ++i) r.train_set.push_back(Mat<float>::Constant(6, 5, 1.5f));
    r.val_set.push_back(Mat<float>::Constant(6, 5, 1.5f));
    r.init = EncoderParams<float>::init(cfg, 1);
    r.tc.learning_rate = 1e-2;
    r.tc.max_epochs = 50;
    r.tc.batch_size = 1;
    r.tc.patience = 50;
    r.tc.seed = 3;
    return r;
}

}  // namespace

TEST(Train, LearnsConstantField) {
    auto r = constant_field_run();
    const auto res = train(r.train_set, r.val_set, r.init, r.tc);
    EXPECT_EQ(res.history.size(), 50u);
    EXPECT_GT(res.history.front().train_l1, 0.1);
    EXPECT_LT(res.best_val_l1, 1e-3);
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
    auto r = constant_field_run();
    r.tc.max_epochs = 2;
    r.tc.batch_size = 8;
    const auto a = train(r.train_set, r.val_set, r.init, r.tc);
    const auto b = train(r.train_set, r.val_set, r.init, r.tc);
    r.tc.threads = 4;
    const auto c = train(r.train_set, r.val_set, r.init, r.tc);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].train_l1, b.history[i].train_l1);
        EXPECT_EQ(a.history[i].val_l1, c.history[i].val_l1);
    }
    EXPECT_EQ(a.params.w_embed, b.params.w_embed);
    EXPECT_EQ(a.params.w_embed, c.params.w_embed);
    EXPECT_EQ(a.params.head_b, c.params.head_b);
}

TEST(Train, KeepsBestValidationCheckpointAndStopsEarly) {
    auto cfg = small_config(1, false);
    std::vector<Mat<float>> tr, va;
    for (int i = 0; i < 8; ++i) tr.push_back(random_matrix<float>(6, 5, 100 + i));
    for (int i = 0; i < 3; ++i) va.push_back(random_matrix<float>(6, 5, 200 + i));
    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.max_epochs = 40;
    tc.batch_size = 2;
    tc.patience = 3;
    tc.seed = 8;
    std::vector<EpochRecord> seen;
    const auto res = train(tr, va, EncoderParams<float>::init(cfg, 2), tc, [&](const EpochRecord& e) { seen.push_back(e); });
    ASSERT_EQ(seen.size(), res.history.size());
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    for (const auto& e : res.history)
        if (e.val_l1 < best) {
            best = e.val_l1;
            best_epoch = e.epoch;
        }
    EXPECT_EQ(res.best_val_l1, best);
    EXPECT_EQ(res.best_epoch, best_epoch);
    const double again = validation_loss(va, fixed_validation_masks(va.size(), cfg, tc.seed), res.params, 1);
    EXPECT_EQ(again, best);
    if (res.stopped_early) {
        EXPECT_EQ(res.history.size(), best_epoch + tc.patience);
    }
}

TEST(Train, RejectsEmptySets) {
    auto r = constant_field_run();
    EXPECT_THROW(train({}, r.val_set, r.init, r.tc), ConfigError);
    EXPECT_THROW(train(r.train_set, {}, r.init, r.tc), ConfigError);
}
