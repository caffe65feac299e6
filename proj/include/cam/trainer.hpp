#pragma once
// Self-supervised masked training: AdamW with decoupled weight decay, cosine
// annealing over optimizer steps, early stopping on a fixed-mask validation
// loss, and a finite-difference gradient check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "backprop.hpp"
#include "rng.hpp"

namespace cam {

inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min) {
    if (total_steps == 0 || step > total_steps)
        throw BoundsError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                          "]");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return eta_min + (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

template <typename Scalar>
struct AdamWState {
    EncoderParams<Scalar> m, v;
    std::size_t step = 0;

    static AdamWState zeros_like(const EncoderParams<Scalar>& p) {
        return {EncoderParams<Scalar>::zeros(p.config), EncoderParams<Scalar>::zeros(p.config), 0};
    }
};

// One bias-corrected AdamW update. Decay is skipped for tensors not flagged
// as decayed (LN scale/shift, biases, mask token, positional embeddings).
template <typename Scalar>
void adamw_step(EncoderParams<Scalar>& params, AdamWState<Scalar>& state, const EncoderParams<Scalar>& grad,
                double lr, const AdamWConfig& opt) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    std::vector<std::pair<Mat<Scalar>*, bool>> p;
    std::vector<const Mat<Scalar>*> g;
    std::vector<Mat<Scalar>*> m, v;
    params.for_each([&](const std::string&, Mat<Scalar>& t, bool decayed) { p.emplace_back(&t, decayed); });
    grad.for_each([&](const std::string&, const Mat<Scalar>& t, bool) { g.push_back(&t); });
    state.m.for_each([&](const std::string&, Mat<Scalar>& t, bool) { m.push_back(&t); });
    state.v.for_each([&](const std::string&, Mat<Scalar>& t, bool) { v.push_back(&t); });
    const auto b1 = static_cast<Scalar>(opt.beta1), b2 = static_cast<Scalar>(opt.beta2);
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto& w = *p[i].first;
        if (p[i].second && opt.weight_decay != 0.0) w *= static_cast<Scalar>(1.0 - lr * opt.weight_decay);
        m[i]->array() = b1 * m[i]->array() + (Scalar(1) - b1) * g[i]->array();
        v[i]->array() = b2 * v[i]->array() + (Scalar(1) - b2) * g[i]->array().square();
        const auto mhat = m[i]->array() / static_cast<Scalar>(bc1);
        const auto vhat = v[i]->array() / static_cast<Scalar>(bc2);
        w.array() -= static_cast<Scalar>(lr) * mhat / (vhat.sqrt() + static_cast<Scalar>(opt.eps));
    }
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t coordinates = 0;
    std::vector<std::string> tensors_covered;
};

// Compares analytic gradients of the mean masked loss over `batch` with
// central differences at `n_coords` random coordinates drawn round-robin
// across all tensors, so every tensor is covered.
inline GradCheckResult gradient_check(const EncoderParams<double>& params,
                                      const std::vector<MaskedSample<double>>& batch, double epsilon,
                                      std::size_t n_coords = 200, std::uint64_t seed = 0) {
    const auto analytic = batch_loss_and_gradient(batch, params).grad;
    auto loss_at = [&](const EncoderParams<double>& p) {
        double s = 0.0;
        for (const auto& b : batch) s += masked_l1_loss(predict(*b.x, b.plan, p), *b.x, b.plan);
        return s / static_cast<double>(batch.size());
    };

    std::vector<std::string> names;
    std::vector<Eigen::Index> sizes;
    params.for_each([&](const std::string& n, const Mat<double>& t, bool) {
        names.push_back(n);
        sizes.push_back(t.size());
    });
    std::vector<const Mat<double>*> grads;
    analytic.for_each([&](const std::string&, const Mat<double>& t, bool) { grads.push_back(&t); });

    // Per-tensor shuffled coordinate lists, consumed round-robin.
    Rng rng(derive_seed(seed, 0x47434B));
    std::vector<std::vector<Eigen::Index>> pools(names.size());
    for (std::size_t t = 0; t < names.size(); ++t) {
        pools[t].resize(static_cast<std::size_t>(sizes[t]));
        std::iota(pools[t].begin(), pools[t].end(), Eigen::Index{0});
        std::shuffle(pools[t].begin(), pools[t].end(), rng);
    }
    std::vector<std::pair<std::size_t, Eigen::Index>> picks;
    for (std::size_t round = 0; picks.size() < n_coords; ++round) {
        bool any = false;
        for (std::size_t t = 0; t < names.size() && picks.size() < n_coords; ++t)
            if (round < pools[t].size()) {
                picks.emplace_back(t, pools[t][round]);
                any = true;
            }
        if (!any) break;
    }

    GradCheckResult res;
    EncoderParams<double> work = params;
    std::vector<Mat<double>*> slots;
    work.for_each([&](const std::string&, Mat<double>& t, bool) { slots.push_back(&t); });
    std::vector<bool> covered(names.size(), false);
    for (const auto& [t, idx] : picks) {
        double& w = slots[t]->data()[idx];
        const double orig = w;
        w = orig + epsilon;
        const double fp = loss_at(work);
        w = orig - epsilon;
        const double fm = loss_at(work);
        w = orig;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double a = grads[t]->data()[idx];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_tensor = names[t];
        }
        covered[t] = true;
        ++res.coordinates;
    }
    for (std::size_t t = 0; t < names.size(); ++t)
        if (covered[t]) res.tensors_covered.push_back(names[t]);
    return res;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t max_epochs = 200;
    std::size_t batch_size = 32;
    std::size_t patience = 20;
    double weight_decay = 0.05;
    double eta_min = 0.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (max_epochs == 0 || max_epochs > 200) throw ConfigError("train: max_epochs must lie in [1, 200]");
        if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
        if (patience == 0) throw ConfigError("train: patience must be at least 1");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be nonnegative");
        if (eta_min < 0.0 || eta_min > learning_rate) throw ConfigError("train: eta_min must lie in [0, learning_rate]");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_l1 = 0.0;
    double val_l1 = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    EncoderParams<float> params;  // best-validation checkpoint
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_l1 = std::numeric_limits<double>::infinity();
    bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline std::vector<MaskPlan> fixed_validation_masks(std::size_t n, const EncoderConfig& cfg, std::uint64_t seed) {
    std::vector<MaskPlan> plans;
    plans.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x56414C, i));
        plans.push_back(sample_mask(cfg.patches, cfg.mask_ratio, rng));
    }
    return plans;
}

inline double validation_loss(const std::vector<Mat<float>>& val, const std::vector<MaskPlan>& plans,
                              const EncoderParams<float>& params, unsigned threads) {
    std::vector<double> losses(val.size());
    parallel_for(val.size(), threads, [&](std::size_t i) {
        losses[i] = masked_l1_loss(predict(val[i], plans[i], params), val[i], plans[i]);
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(val.size());
}

// Trains from an initial parameter set. Each sample gets a fresh mask at every
// step; validation uses one fixed mask per subject for the whole run.
inline TrainResult train(const std::vector<Mat<float>>& train_set, const std::vector<Mat<float>>& val_set,
                         EncoderParams<float> params, const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
    tc.validate();
    if (train_set.empty() || val_set.empty()) throw ConfigError("train: training and validation sets must be nonempty");
    const auto& ecfg = params.config;
    const std::size_t steps_per_epoch = (train_set.size() + tc.batch_size - 1) / tc.batch_size;
    const std::size_t total_steps = steps_per_epoch * tc.max_epochs;
    const auto val_plans = fixed_validation_masks(val_set.size(), ecfg, tc.seed);
    const AdamWConfig opt{.weight_decay = tc.weight_decay};

    auto state = AdamWState<float>::zeros_like(params);
    TrainResult result;
    result.params = params;
    std::size_t step = 0, since_best = 0;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        Rng rng(derive_seed(tc.seed, 0x45504F43, epoch));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        double lr = tc.learning_rate;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<MaskedSample<float>> batch;
            for (std::size_t i = b * tc.batch_size; i < std::min(order.size(), (b + 1) * tc.batch_size); ++i)
                batch.push_back({&train_set[order[i]], sample_mask(ecfg.patches, ecfg.mask_ratio, rng)});
            const auto lg = batch_loss_and_gradient(batch, params, tc.threads);
            lr = cosine_lr(step, total_steps, tc.learning_rate, tc.eta_min);
            adamw_step(params, state, lg.grad, lr, opt);
            ++step;
            loss_sum += lg.loss;
        }
        if (!params.all_finite()) throw NumericError("train: parameters diverged in epoch " + std::to_string(epoch));
        EpochRecord rec{epoch, loss_sum / static_cast<double>(steps_per_epoch),
                        validation_loss(val_set, val_plans, params, tc.threads), lr};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_l1 < result.best_val_l1) {
            result.best_val_l1 = rec.val_l1;
            result.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

}  // namespace cam
