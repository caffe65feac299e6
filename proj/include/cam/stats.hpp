#pragma once
// ROC-AUC, permutation significance and two-sample t-tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace cam::stats {

struct LabeledScores {
    std::vector<double> scores;
    std::vector<int> labels;  // 0 = healthy/control, 1 = case
    std::string group;

    static LabeledScores from_groups(const std::vector<double>& controls, const std::vector<double>& cases,
                                     std::string group = {}) {
        LabeledScores s;
        s.group = std::move(group);
        for (double c : controls) {
            s.scores.push_back(c);
            s.labels.push_back(0);
        }
        for (double c : cases) {
            s.scores.push_back(c);
            s.labels.push_back(1);
        }
        return s;
    }
};

namespace detail {

inline void validate_labeled(const LabeledScores& s) {
    if (s.scores.size() != s.labels.size()) throw ValidationError("scores and labels differ in length");
    std::size_t n1 = 0;
    for (int l : s.labels) {
        if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
        n1 += static_cast<std::size_t>(l);
    }
    if (n1 == 0 || n1 == s.labels.size()) throw ValidationError("both classes required");
    for (double x : s.scores)
        if (std::isnan(x)) throw ValidationError("NaN score");
}

// Twice the tie-corrected rank of each score (integers, so sums stay exact).
inline std::vector<std::int64_t> doubled_midranks(const std::vector<double>& scores) {
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<std::int64_t> r2(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // ranks i+1..j share the midrank (i+1+j)/2
        const auto twice_mid = static_cast<std::int64_t>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) r2[order[k]] = twice_mid;
        i = j;
    }
    return r2;
}

// 2*U for the cases, where U = #{case > control} + 0.5 #{ties}.
inline std::int64_t doubled_u(const std::vector<std::int64_t>& r2, const std::vector<int>& labels) {
    std::int64_t sum = 0, n1 = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) {
            sum += r2[i];
            ++n1;
        }
    return sum - n1 * (n1 + 1);
}

inline std::pair<std::size_t, std::size_t> class_sizes(const std::vector<int>& labels) {
    const auto n1 = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    return {labels.size() - n1, n1};
}

}  // namespace detail

// Mann-Whitney AUC via rank sums, O(n log n).
inline double auc(const LabeledScores& s) {
    detail::validate_labeled(s);
    const auto [n0, n1] = detail::class_sizes(s.labels);
    const auto u2 = detail::doubled_u(detail::doubled_midranks(s.scores), s.labels);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n0) * static_cast<double>(n1));
}

// One-sided Monte-Carlo permutation test of the AUC with add-one smoothing:
// p = (1 + #{AUC_perm >= AUC_obs}) / (1 + n_perm).
inline double permutation_test_auc(const LabeledScores& s, std::size_t n_perm = 10000, std::uint64_t seed = 0) {
    detail::validate_labeled(s);
    const auto r2 = detail::doubled_midranks(s.scores);
    const auto observed = detail::doubled_u(r2, s.labels);
    Rng rng(derive_seed(seed, 0x5045524D));
    std::vector<int> labels = s.labels;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n_perm; ++k) {
        std::shuffle(labels.begin(), labels.end(), rng);
        if (detail::doubled_u(r2, labels) >= observed) ++hits;
    }
    return static_cast<double>(1 + hits) / static_cast<double>(1 + n_perm);
}

// Exact permutation p-value: fraction of all C(n, n1) labelings (including the
// observed one) whose AUC is at least the observed AUC. Small n only.
inline double permutation_test_auc_exact(const LabeledScores& s) {
    detail::validate_labeled(s);
    const auto n = s.labels.size();
    if (n > 30) throw ValidationError("exhaustive permutation test limited to 30 samples");
    const auto r2 = detail::doubled_midranks(s.scores);
    const auto observed = detail::doubled_u(r2, s.labels);
    const auto [n0, n1] = detail::class_sizes(s.labels);
    std::vector<int> labels(n, 0);
    std::fill(labels.end() - static_cast<std::ptrdiff_t>(n1), labels.end(), 1);
    std::size_t total = 0, hits = 0;
    do {
        ++total;
        if (detail::doubled_u(r2, labels) >= observed) ++hits;
    } while (std::next_permutation(labels.begin(), labels.end()));
    return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Student t distribution via the regularized incomplete beta function.

namespace detail {

// Continued fraction for I_x(a, b) (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta: a and b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    // Use the symmetry relation where the continued fraction converges fastest.
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// P(|T| >= |t|) for T ~ Student-t(df).
inline double student_t_two_tailed_p(double t, double df) {
    if (!(df > 0.0)) throw ValidationError("degrees of freedom must be positive");
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_var(const std::vector<double>& x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return {m, ss / static_cast<double>(x.size() - 1)};
}

}  // namespace detail

// Two-tailed two-sample t-test; pooled (Student) by default, Welch on request.
inline TTestResult student_ttest_two_tailed(const std::vector<double>& a, const std::vector<double>& b,
                                            bool welch = false) {
    if (a.size() < 2 || b.size() < 2) throw ValidationError("t-test needs at least 2 samples per group");
    const auto [ma, va] = detail::mean_var(a);
    const auto [mb, vb] = detail::mean_var(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    TTestResult r;
    double se = 0.0;
    if (welch) {
        const double qa = va / na, qb = vb / nb;
        se = std::sqrt(qa + qb);
        r.df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    } else {
        const double pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
        se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
        r.df = na + nb - 2.0;
    }
    if (!(se > 0.0) || !std::isfinite(se)) throw ValidationError("t-test: degenerate (zero) variance");
    r.t = (ma - mb) / se;
    r.p = student_t_two_tailed_p(r.t, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// ROI identification

struct RoiTestResult {
    std::string roi;
    std::size_t roi_index = 0;
    double t = 0.0;
    double p = 1.0;
    double auc = 0.5;
};

// Per-ROI comparison of case vs control score columns (t = case - control).
// ROIs whose scores have zero variance get t = 0, p = 1.
inline std::vector<RoiTestResult> roi_tests(const std::vector<std::vector<double>>& control_rows,
                                            const std::vector<std::vector<double>>& case_rows,
                                            const std::vector<std::string>& roi_names, bool welch = false) {
    if (control_rows.empty() || case_rows.empty()) throw ValidationError("both classes required");
    std::vector<RoiTestResult> out;
    for (std::size_t k = 0; k < roi_names.size(); ++k) {
        std::vector<double> c0, c1;
        for (const auto& r : control_rows) c0.push_back(r.at(k));
        for (const auto& r : case_rows) c1.push_back(r.at(k));
        RoiTestResult res;
        res.roi = roi_names[k];
        res.roi_index = k;
        res.auc = auc(LabeledScores::from_groups(c0, c1));
        try {
            const auto t = student_ttest_two_tailed(c1, c0, welch);
            res.t = t.t;
            res.p = t.p;
        } catch (const ValidationError&) {
            res.t = 0.0;
            res.p = 1.0;
        }
        out.push_back(res);
    }
    return out;
}

// ROIs with p < alpha, sorted by AUC descending.
inline std::vector<RoiTestResult> identify_rois(const std::vector<std::vector<double>>& control_rows,
                                                const std::vector<std::vector<double>>& case_rows,
                                                const std::vector<std::string>& roi_names, double alpha = 0.01,
                                                bool welch = false) {
    auto all = roi_tests(control_rows, case_rows, roi_names, welch);
    std::vector<RoiTestResult> out;
    std::copy_if(all.begin(), all.end(), std::back_inserter(out), [&](const auto& r) { return r.p < alpha; });
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.auc > b.auc; });
    return out;
}

}  // namespace cam::stats
