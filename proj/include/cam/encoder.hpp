#pragma once
// Masked patch encoder and linear reconstruction head.
//
// Each block computes  Z' = LN2( MHA( LN1(Z) ) + Z )  with softmax attention
// over patch positions, optionally followed by a residual GELU MLP
// (use_ffn). Masked patches are embedded as a learned mask token; every row
// receives a learned positional embedding. Row-vector convention throughout:
// activations are (rows = patches) x (cols = features), weights are in x out.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "rng.hpp"
#include "surface.hpp"

namespace cam {

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct EncoderConfig {
    std::size_t layers = 6;
    std::size_t heads = 8;
    std::size_t dim = 64;
    std::size_t patch_dim = 153;
    std::size_t patches = 320;
    double mask_ratio = 0.5;
    bool use_ffn = false;
    std::size_t ffn_mult = 4;
    double ln_eps = 1e-6;

    std::size_t head_dim() const { return dim / heads; }

    // allow_identity admits layers = 0 (embedding + head only), used by tests.
    void validate(bool allow_identity = false) const {
        if (heads == 0 || dim == 0) throw ConfigError("encoder: heads and dim must be positive");
        if (dim % heads != 0)
            throw ConfigError("encoder: dim " + std::to_string(dim) + " is not divisible by heads " +
                              std::to_string(heads) +
                              " (multi-head attention splits dim evenly across heads; e.g. dim=64 heads=8, or "
                              "dim=768 heads=12 for 64 per head)");
        if (layers == 0 && !allow_identity) throw ConfigError("encoder: at least one layer required");
        if (patch_dim == 0 || patches == 0) throw ConfigError("encoder: empty patch geometry");
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("encoder: mask_ratio must lie in (0, 1)");
        if (use_ffn && ffn_mult == 0) throw ConfigError("encoder: ffn_mult must be positive");
        if (!(ln_eps > 0.0)) throw ConfigError("encoder: ln_eps must be positive");
    }

    bool operator==(const EncoderConfig&) const = default;
};

template <typename Scalar>
struct LayerParams {
    Mat<Scalar> ln1_g, ln1_b;
    Mat<Scalar> wq, bq, wk, wv, bv, wo, bo;  // no key bias: softmax is invariant to it
    Mat<Scalar> ln2_g, ln2_b;
    Mat<Scalar> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // empty unless use_ffn
};

// All learnable tensors. Biases and per-feature vectors are 1 x n matrices so
// every tensor shares one type for optimizers and serialization.
template <typename Scalar>
struct EncoderParams {
    EncoderConfig config;
    Mat<Scalar> w_embed, b_embed;
    Mat<Scalar> pos_embed;
    Mat<Scalar> mask_token;
    std::vector<LayerParams<Scalar>> layers;
    Mat<Scalar> head_w, head_b;

    // fn(name, tensor, decayed): `decayed` marks tensors that receive AdamW
    // weight decay (projection matrices only).
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn) {
        fn("embed.weight", self.w_embed, true);
        fn("embed.bias", self.b_embed, false);
        fn("pos_embed", self.pos_embed, false);
        fn("mask_token", self.mask_token, false);
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& L = self.layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "ln1.scale", L.ln1_g, false);
            fn(p + "ln1.shift", L.ln1_b, false);
            fn(p + "attn.q.weight", L.wq, true);
            fn(p + "attn.q.bias", L.bq, false);
            fn(p + "attn.k.weight", L.wk, true);
            fn(p + "attn.v.weight", L.wv, true);
            fn(p + "attn.v.bias", L.bv, false);
            fn(p + "attn.o.weight", L.wo, true);
            fn(p + "attn.o.bias", L.bo, false);
            fn(p + "ln2.scale", L.ln2_g, false);
            fn(p + "ln2.shift", L.ln2_b, false);
            if (self.config.use_ffn) {
                fn(p + "ffn.fc1.weight", L.ffn_w1, true);
                fn(p + "ffn.fc1.bias", L.ffn_b1, false);
                fn(p + "ffn.fc2.weight", L.ffn_w2, true);
                fn(p + "ffn.fc2.bias", L.ffn_b2, false);
            }
        }
        fn("head.weight", self.head_w, true);
        fn("head.bias", self.head_b, false);
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        visit(*this, std::forward<Fn>(fn));
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        visit(*this, std::forward<Fn>(fn));
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Mat<Scalar>& t, bool) { n += static_cast<std::size_t>(t.size()); });
        return n;
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const std::string&, const Mat<Scalar>& t, bool) { ok = ok && t.allFinite(); });
        return ok;
    }

    template <typename Other>
    EncoderParams<Other> cast() const {
        EncoderParams<Other> out = EncoderParams<Other>::zeros(config);
        std::vector<const Mat<Scalar>*> src;
        for_each([&](const std::string&, const Mat<Scalar>& t, bool) { src.push_back(&t); });
        std::size_t i = 0;
        out.for_each([&](const std::string&, Mat<Other>& t, bool) { t = src[i++]->template cast<Other>(); });
        return out;
    }

    static EncoderParams zeros(const EncoderConfig& cfg) {
        const auto D = static_cast<Eigen::Index>(cfg.dim);
        const auto V = static_cast<Eigen::Index>(cfg.patch_dim);
        const auto P = static_cast<Eigen::Index>(cfg.patches);
        const auto F = static_cast<Eigen::Index>(cfg.dim * cfg.ffn_mult);
        auto z = [](Eigen::Index r, Eigen::Index c) { return Mat<Scalar>::Zero(r, c); };
        EncoderParams p;
        p.config = cfg;
        p.w_embed = z(V, D);
        p.b_embed = z(1, D);
        p.pos_embed = z(P, D);
        p.mask_token = z(1, D);
        p.layers.resize(cfg.layers);
        for (auto& L : p.layers) {
            L.ln1_g = z(1, D);
            L.ln1_b = z(1, D);
            L.wq = z(D, D);
            L.bq = z(1, D);
            L.wk = z(D, D);
            L.wv = z(D, D);
            L.bv = z(1, D);
            L.wo = z(D, D);
            L.bo = z(1, D);
            L.ln2_g = z(1, D);
            L.ln2_b = z(1, D);
            if (cfg.use_ffn) {
                L.ffn_w1 = z(D, F);
                L.ffn_b1 = z(1, F);
                L.ffn_w2 = z(F, D);
                L.ffn_b2 = z(1, D);
            }
        }
        p.head_w = z(D, V);
        p.head_b = z(1, V);
        return p;
    }

    // Xavier-normal projections, N(0, 0.02) positions and mask token, unit LN
    // scales, zero biases.
    static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed) {
        cfg.validate(true);
        EncoderParams p = zeros(cfg);
        Rng rng(derive_seed(seed, 0x494E4954));
        std::normal_distribution<double> normal(0.0, 1.0);
        auto fill = [&](Mat<Scalar>& m, double sd) {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(sd * normal(rng));
        };
        auto xavier = [&](Mat<Scalar>& m) { fill(m, std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols()))); };
        p.for_each([&](const std::string& name, Mat<Scalar>& t, bool decayed) {
            if (decayed)
                xavier(t);
            else if (name == "pos_embed" || name == "mask_token")
                fill(t, 0.02);
            else if (name.ends_with(".scale"))
                t.setOnes();
        });
        return p;
    }
};

struct MaskPlan {
    std::vector<std::uint32_t> masked_ids;  // sorted, unique

    std::vector<bool> as_flags(std::size_t patches) const {
        std::vector<bool> f(patches, false);
        for (auto m : masked_ids) f.at(m) = true;
        return f;
    }
    std::size_t size() const { return masked_ids.size(); }
};

inline std::size_t masked_count(std::size_t patches, double ratio) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(patches)));
}

// Uniform subset of size round(ratio * P) without replacement.
inline MaskPlan sample_mask(std::size_t patches, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
    const auto m = masked_count(patches, ratio);
    std::vector<std::uint32_t> ids(patches);
    for (std::uint32_t i = 0; i < patches; ++i) ids[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, patches - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return {std::move(ids)};
}

inline MaskPlan range_mask(std::size_t begin, std::size_t end) {
    MaskPlan plan;
    for (std::size_t i = begin; i < end; ++i) plan.masked_ids.push_back(static_cast<std::uint32_t>(i));
    return plan;
}

template <typename Scalar>
Mat<Scalar> embed(const Mat<Scalar>& x, const MaskPlan& plan, const EncoderParams<Scalar>& params) {
    const auto& cfg = params.config;
    if (static_cast<std::size_t>(x.rows()) != cfg.patches || static_cast<std::size_t>(x.cols()) != cfg.patch_dim)
        throw ShapeError("embed: input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                         ", encoder expects " + std::to_string(cfg.patches) + "x" + std::to_string(cfg.patch_dim));
    for (auto m : plan.masked_ids)
        if (m >= cfg.patches) throw ShapeError("embed: masked patch id out of range");
    const auto flags = plan.as_flags(cfg.patches);
    Mat<Scalar> z = (x * params.w_embed).rowwise() + params.b_embed.row(0);
    for (std::size_t p = 0; p < cfg.patches; ++p)
        if (flags[p]) z.row(static_cast<Eigen::Index>(p)) = params.mask_token;
    z += params.pos_embed;
    return z;
}

// ---------------------------------------------------------------------------
// Forward pass with optional activation caching for backpropagation.

template <typename Scalar>
struct LayerNormCache {
    Mat<Scalar> xhat;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd;
};

template <typename Scalar>
struct LayerCache {
    Mat<Scalar> z_in;
    LayerNormCache<Scalar> ln1;
    Mat<Scalar> a;        // LN1 output
    Mat<Scalar> q, k, v;  // projections
    std::vector<Mat<Scalar>> probs;  // per-head attention matrices
    Mat<Scalar> o;        // concatenated head outputs
    LayerNormCache<Scalar> ln2;
    Mat<Scalar> y;        // LN2 output
    Mat<Scalar> ffn_pre, ffn_act;
};

template <typename Scalar>
struct ForwardCache {
    std::vector<LayerCache<Scalar>> layers;
};

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const Mat<Scalar>& g, const Mat<Scalar>& b, double eps,
                       LayerNormCache<Scalar>* cache) {
    const auto n = x.cols();
    Mat<Scalar> xhat(x.rows(), n);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar mu = x.row(r).mean();
        const auto centered = (x.row(r).array() - mu).eval();
        const Scalar var = centered.square().sum() / static_cast<Scalar>(n);
        rstd(r) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
        xhat.row(r) = centered * rstd(r);
    }
    Mat<Scalar> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

template <typename Scalar>
void softmax_rows(Mat<Scalar>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        const Scalar mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename Scalar>
Scalar gelu(Scalar u) {
    return Scalar(0.5) * u * (Scalar(1) + std::tanh(Scalar(kGeluC) * (u + Scalar(0.044715) * u * u * u)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar u) {
    const Scalar t = std::tanh(Scalar(kGeluC) * (u + Scalar(0.044715) * u * u * u));
    return Scalar(0.5) * (Scalar(1) + t) +
           Scalar(0.5) * u * (Scalar(1) - t * t) * Scalar(kGeluC) * (Scalar(1) + Scalar(3 * 0.044715) * u * u);
}

template <typename Scalar>
Mat<Scalar> attention_block(const Mat<Scalar>& z, const LayerParams<Scalar>& L, const EncoderConfig& cfg,
                            LayerCache<Scalar>* cache) {
    LayerNormCache<Scalar> ln1, ln2;
    Mat<Scalar> a = layer_norm(z, L.ln1_g, L.ln1_b, cfg.ln_eps, cache ? &ln1 : nullptr);
    Mat<Scalar> q = (a * L.wq).rowwise() + L.bq.row(0);
    Mat<Scalar> k = a * L.wk;
    Mat<Scalar> v = (a * L.wv).rowwise() + L.bv.row(0);
    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    Mat<Scalar> o(z.rows(), z.cols());
    std::vector<Mat<Scalar>> probs;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        Mat<Scalar> s = (q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose()) * scale;
        softmax_rows(s);
        o.middleCols(c0, dh).noalias() = s * v.middleCols(c0, dh);
        if (cache) probs.push_back(std::move(s));
    }
    Mat<Scalar> r = ((o * L.wo).rowwise() + L.bo.row(0)) + z;
    Mat<Scalar> y = layer_norm(r, L.ln2_g, L.ln2_b, cfg.ln_eps, cache ? &ln2 : nullptr);
    Mat<Scalar> out = y;
    Mat<Scalar> pre, act;
    if (cfg.use_ffn) {
        pre = (y * L.ffn_w1).rowwise() + L.ffn_b1.row(0);
        act = pre.unaryExpr([](Scalar u) { return gelu(u); });
        out += (act * L.ffn_w2).rowwise() + L.ffn_b2.row(0);
    }
    if (cache) {
        cache->z_in = z;
        cache->ln1 = std::move(ln1);
        cache->a = std::move(a);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->o = std::move(o);
        cache->ln2 = std::move(ln2);
        cache->y = std::move(y);
        cache->ffn_pre = std::move(pre);
        cache->ffn_act = std::move(act);
    }
    return out;
}

template <typename Scalar>
Mat<Scalar> encoder_forward(const Mat<Scalar>& z0, const EncoderParams<Scalar>& params,
                            ForwardCache<Scalar>* cache = nullptr) {
    if (!z0.allFinite()) throw NumericError("encoder: non-finite input embedding");
    if (cache) cache->layers.assign(params.layers.size(), {});
    Mat<Scalar> z = z0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        z = attention_block(z, params.layers[l], params.config, cache ? &cache->layers[l] : nullptr);
        if (!z.allFinite()) throw NumericError("encoder: non-finite activation in layer " + std::to_string(l));
    }
    return z;
}

template <typename Scalar>
Mat<Scalar> reconstruct(const Mat<Scalar>& z, const EncoderParams<Scalar>& params) {
    return (z * params.head_w).rowwise() + params.head_b.row(0);
}

// embed -> encoder -> head
template <typename Scalar>
Mat<Scalar> predict(const Mat<Scalar>& x, const MaskPlan& plan, const EncoderParams<Scalar>& params) {
    return reconstruct(encoder_forward(embed(x, plan, params), params), params);
}

}  // namespace cam
