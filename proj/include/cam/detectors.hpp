#pragma once
// Classical reference detectors over per-subject feature vectors (one row per
// subject): ECOD, a full-covariance Gaussian mixture, and an isolation forest.
// Higher scores mean more anomalous for all three.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "errors.hpp"
#include "rng.hpp"

namespace cam::detectors {

using Matrix = Eigen::MatrixXd;

inline void check_dims(const Matrix& train, const Matrix& test) {
    if (train.rows() == 0) throw ShapeError("detector: empty training set");
    if (train.cols() != test.cols())
        throw ShapeError("detector: train has " + std::to_string(train.cols()) + " features, test has " +
                         std::to_string(test.cols()));
}

// ---------------------------------------------------------------------------
// ECOD: per-dimension empirical tail probabilities. Tail probabilities are
// taken from the ECDF of train plus the query point, i.e. (count + 1)/(n + 1),
// so they never vanish. Score = max(O_left, O_right, O_auto), where O_auto
// takes the left tail in negatively skewed dimensions and the right tail
// otherwise.

inline double sample_skewness(const Eigen::VectorXd& x) {
    const double m = x.mean();
    const double m2 = (x.array() - m).square().mean();
    const double m3 = (x.array() - m).cube().mean();
    return m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

inline std::vector<double> ecod_score(const Matrix& train, const Matrix& test) {
    check_dims(train, test);
    const auto n = static_cast<double>(train.rows());
    const auto d = train.cols();
    std::vector<std::vector<double>> sorted(static_cast<std::size_t>(d));
    std::vector<double> skew(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
        auto& col = sorted[static_cast<std::size_t>(j)];
        col.assign(train.col(j).data(), train.col(j).data() + train.rows());
        std::sort(col.begin(), col.end());
        skew[static_cast<std::size_t>(j)] = sample_skewness(train.col(j));
    }
    std::vector<double> out(static_cast<std::size_t>(test.rows()));
    for (Eigen::Index i = 0; i < test.rows(); ++i) {
        double o_left = 0.0, o_right = 0.0, o_auto = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto& col = sorted[static_cast<std::size_t>(j)];
            const double x = test(i, j);
            const auto le = static_cast<double>(std::upper_bound(col.begin(), col.end(), x) - col.begin());
            const auto ge = static_cast<double>(col.end() - std::lower_bound(col.begin(), col.end(), x));
            const double nl = -std::log((le + 1.0) / (n + 1.0));
            const double nr = -std::log((ge + 1.0) / (n + 1.0));
            o_left += nl;
            o_right += nr;
            o_auto += skew[static_cast<std::size_t>(j)] < 0.0 ? nl : nr;
        }
        out[static_cast<std::size_t>(i)] = std::max({o_left, o_right, o_auto});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian mixture (full covariance), EM with k-means++ initialization.

class GaussianMixture {
public:
    static constexpr double kCovReg = 1e-6;

    GaussianMixture(std::size_t components, std::uint64_t seed, std::size_t max_iter = 200, double tol = 1e-8)
        : k_(components), seed_(seed), max_iter_(max_iter), tol_(tol) {
        if (components == 0) throw ConfigError("GMM: at least one component required");
    }

    void fit(const Matrix& x) {
        const auto n = x.rows();
        if (static_cast<std::size_t>(n) < k_) throw ConfigError("GMM: fewer samples than components");
        dim_ = x.cols();
        Matrix resp = initial_responsibilities(x);
        history_.clear();
        m_step(x, resp);
        double prev = -std::numeric_limits<double>::infinity();
        for (std::size_t it = 0; it < max_iter_; ++it) {
            const double ll = e_step(x, resp);
            history_.push_back(ll);
            if (std::abs(ll - prev) <= tol_ * std::max(1.0, std::abs(ll))) break;
            prev = ll;
            m_step(x, resp);
        }
    }

    // Negative log-likelihood of each row.
    std::vector<double> score(const Matrix& x) const {
        if (x.cols() != dim_) throw ShapeError("GMM: feature dimension mismatch");
        std::vector<double> out(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            Eigen::VectorXd lp(static_cast<Eigen::Index>(k_));
            for (std::size_t c = 0; c < k_; ++c)
                lp(static_cast<Eigen::Index>(c)) = std::log(weights_[c]) + log_gaussian(x.row(i).transpose(), c);
            out[static_cast<std::size_t>(i)] = -log_sum_exp(lp);
        }
        return out;
    }

    // Mean log-likelihood after each E-step.
    const std::vector<double>& log_likelihood_history() const { return history_; }
    const std::vector<Eigen::VectorXd>& means() const { return means_; }

private:
    static double log_sum_exp(const Eigen::VectorXd& v) {
        const double m = v.maxCoeff();
        return m + std::log((v.array() - m).exp().sum());
    }

    double log_gaussian(const Eigen::VectorXd& x, std::size_t c) const {
        const Eigen::VectorXd diff = x - means_[c];
        const Eigen::VectorXd sol = chol_[c].matrixL().solve(diff);
        return -0.5 * sol.squaredNorm() - log_det_half_[c] -
               0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
    }

    Matrix initial_responsibilities(const Matrix& x) {
        const auto n = x.rows();
        Rng rng(derive_seed(seed_, 0x474D4D));
        std::vector<Eigen::VectorXd> centers;
        std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
        centers.push_back(x.row(first(rng)).transpose());
        Eigen::VectorXd d2(n);
        while (centers.size() < k_) {
            for (Eigen::Index i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& c : centers) best = std::min(best, (x.row(i).transpose() - c).squaredNorm());
                d2(i) = best;
            }
            const double total = d2.sum();
            Eigen::Index pick = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double r = u(rng), acc = 0.0;
                for (pick = 0; pick < n - 1; ++pick) {
                    acc += d2(pick);
                    if (acc >= r) break;
                }
            } else {
                pick = first(rng);
            }
            centers.push_back(x.row(pick).transpose());
        }
        std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
        for (int iter = 0; iter < 10; ++iter) {  // a few Lloyd refinements
            for (Eigen::Index i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k_; ++c) {
                    const double dist = (x.row(i).transpose() - centers[c]).squaredNorm();
                    if (dist < best) {
                        best = dist;
                        assign[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(c);
                    }
                }
            }
            for (std::size_t c = 0; c < k_; ++c) {
                Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.cols());
                double cnt = 0;
                for (Eigen::Index i = 0; i < n; ++i)
                    if (assign[static_cast<std::size_t>(i)] == static_cast<Eigen::Index>(c)) {
                        sum += x.row(i).transpose();
                        ++cnt;
                    }
                if (cnt > 0) centers[c] = sum / cnt;
            }
        }
        Matrix resp = Matrix::Zero(n, static_cast<Eigen::Index>(k_));
        for (Eigen::Index i = 0; i < n; ++i) resp(i, assign[static_cast<std::size_t>(i)]) = 1.0;
        return resp;
    }

    void m_step(const Matrix& x, const Matrix& resp) {
        const auto n = static_cast<double>(x.rows());
        weights_.assign(k_, 0.0);
        means_.assign(k_, Eigen::VectorXd::Zero(dim_));
        chol_.clear();
        log_det_half_.assign(k_, 0.0);
        for (std::size_t c = 0; c < k_; ++c) {
            const auto col = resp.col(static_cast<Eigen::Index>(c));
            const double nk = std::max(col.sum(), 10.0 * std::numeric_limits<double>::epsilon());
            weights_[c] = nk / n;
            means_[c] = (x.transpose() * col) / nk;
            const Matrix centered = x.rowwise() - means_[c].transpose();
            Matrix cov = (centered.transpose() * col.asDiagonal() * centered) / nk;
            cov.diagonal().array() += kCovReg;
            Eigen::LLT<Matrix> llt(cov);
            if (llt.info() != Eigen::Success) throw NumericError("GMM: covariance singular after regularization");
            log_det_half_[c] = llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
            chol_.push_back(std::move(llt));
        }
    }

    // Fills responsibilities and returns the mean log-likelihood.
    double e_step(const Matrix& x, Matrix& resp) const {
        double total = 0.0;
        Eigen::VectorXd lp(static_cast<Eigen::Index>(k_));
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (std::size_t c = 0; c < k_; ++c)
                lp(static_cast<Eigen::Index>(c)) = std::log(weights_[c]) + log_gaussian(x.row(i).transpose(), c);
            const double lse = log_sum_exp(lp);
            total += lse;
            resp.row(i) = (lp.array() - lse).exp().transpose();
        }
        return total / static_cast<double>(x.rows());
    }

    std::size_t k_;
    std::uint64_t seed_;
    std::size_t max_iter_;
    double tol_;
    Eigen::Index dim_ = 0;
    std::vector<double> weights_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<Eigen::LLT<Matrix>> chol_;
    std::vector<double> log_det_half_;
    std::vector<double> history_;
};

inline std::vector<double> gmm_score(const Matrix& train, const Matrix& test, std::size_t components,
                                     std::uint64_t seed = 0) {
    check_dims(train, test);
    GaussianMixture gmm(components, seed);
    gmm.fit(train);
    return gmm.score(test);
}

// ---------------------------------------------------------------------------
// Isolation forest

// Average unsuccessful-search path length in a BST of n points.
inline double average_path_length(double n) {
    if (n <= 1.0) return 0.0;
    if (n <= 2.0) return 1.0;
    constexpr double kEuler = 0.5772156649015329;
    return 2.0 * (std::log(n - 1.0) + kEuler) - 2.0 * (n - 1.0) / n;
}

class IsolationForest {
public:
    IsolationForest(std::size_t n_estimators, std::uint64_t seed, std::size_t subsample = 256)
        : n_estimators_(n_estimators), seed_(seed), subsample_(subsample) {
        if (n_estimators == 0) throw ConfigError("IForest: at least one estimator required");
        if (subsample == 0) throw ConfigError("IForest: subsample size must be positive");
    }

    void fit(const Matrix& x) {
        if (x.rows() == 0) throw ShapeError("IForest: empty training set");
        dim_ = x.cols();
        psi_ = std::min<std::size_t>(subsample_, static_cast<std::size_t>(x.rows()));
        const int height_limit = static_cast<int>(std::ceil(std::log2(std::max<double>(2.0, static_cast<double>(psi_)))));
        trees_.assign(n_estimators_, {});
        for (std::size_t t = 0; t < n_estimators_; ++t) {
            Rng rng(derive_seed(seed_, 0x49464F52, t));
            std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
            std::iota(idx.begin(), idx.end(), Eigen::Index{0});
            for (std::size_t i = 0; i < psi_; ++i) {  // sample without replacement
                std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
                std::swap(idx[i], idx[pick(rng)]);
            }
            idx.resize(psi_);
            build(trees_[t], x, idx, 0, height_limit, rng);
        }
    }

    // 2^(-E[h(x)] / c(psi)), in (0, 1].
    std::vector<double> score(const Matrix& x) const {
        if (x.cols() != dim_) throw ShapeError("IForest: feature dimension mismatch");
        const double cn = average_path_length(static_cast<double>(psi_));
        std::vector<double> out(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double h = 0.0;
            for (const auto& tree : trees_) h += path_length(tree, x.row(i));
            h /= static_cast<double>(trees_.size());
            out[static_cast<std::size_t>(i)] = cn > 0.0 ? std::pow(2.0, -h / cn) : 1.0;
        }
        return out;
    }

private:
    struct Node {
        Eigen::Index feature = -1;  // -1 marks a leaf
        double split = 0.0;
        std::size_t left = 0, right = 0;
        std::size_t size = 0;
    };
    using Tree = std::vector<Node>;

    std::size_t build(Tree& tree, const Matrix& x, std::vector<Eigen::Index> idx, int depth, int limit, Rng& rng) {
        const std::size_t id = tree.size();
        tree.push_back({});
        tree[id].size = idx.size();
        if (depth >= limit || idx.size() <= 1) return id;
        std::vector<Eigen::Index> usable;
        std::vector<std::pair<double, double>> ranges(static_cast<std::size_t>(dim_));
        for (Eigen::Index j = 0; j < dim_; ++j) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (auto i : idx) {
                lo = std::min(lo, x(i, j));
                hi = std::max(hi, x(i, j));
            }
            ranges[static_cast<std::size_t>(j)] = {lo, hi};
            if (hi > lo) usable.push_back(j);
        }
        if (usable.empty()) return id;
        std::uniform_int_distribution<std::size_t> pick_f(0, usable.size() - 1);
        const auto f = usable[pick_f(rng)];
        const auto [lo, hi] = ranges[static_cast<std::size_t>(f)];
        std::uniform_real_distribution<double> pick_s(lo, hi);
        const double split = pick_s(rng);
        std::vector<Eigen::Index> l, r;
        for (auto i : idx) (x(i, f) < split ? l : r).push_back(i);
        tree[id].feature = f;
        tree[id].split = split;
        const auto li = build(tree, x, std::move(l), depth + 1, limit, rng);
        const auto ri = build(tree, x, std::move(r), depth + 1, limit, rng);
        tree[id].left = li;
        tree[id].right = ri;
        return id;
    }

    template <typename Row>
    static double path_length(const Tree& tree, const Row& row) {
        std::size_t node = 0;
        double depth = 0.0;
        while (tree[node].feature >= 0) {
            node = row(tree[node].feature) < tree[node].split ? tree[node].left : tree[node].right;
            depth += 1.0;
        }
        return depth + average_path_length(static_cast<double>(tree[node].size));
    }

    std::size_t n_estimators_;
    std::uint64_t seed_;
    std::size_t subsample_;
    std::size_t psi_ = 0;
    Eigen::Index dim_ = 0;
    std::vector<Tree> trees_;
};

inline std::vector<double> iforest_score(const Matrix& train, const Matrix& test, std::size_t n_estimators,
                                         std::uint64_t seed = 0) {
    check_dims(train, test);
    IsolationForest forest(n_estimators, seed);
    forest.fit(train);
    return forest.score(test);
}

}  // namespace cam::detectors
