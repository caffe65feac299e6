#pragma once
// Masked l1 objective and its exact reverse-mode gradient through
// reconstruct o encoder_forward o embed.

#include <cmath>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "parallel.hpp"

namespace cam {

// Mean over masked patches of the per-patch l1 norm; unmasked rows are ignored.
template <typename Scalar>
double masked_l1_loss(const Mat<Scalar>& xhat, const Mat<Scalar>& x, const MaskPlan& plan) {
    if (plan.masked_ids.empty()) throw ConfigError("masked l1 loss: empty mask plan");
    if (xhat.rows() != x.rows() || xhat.cols() != x.cols()) throw ShapeError("masked l1 loss: shape mismatch");
    double total = 0.0;
    for (auto m : plan.masked_ids) {
        const auto r = static_cast<Eigen::Index>(m);
        total += static_cast<double>((xhat.row(r) - x.row(r)).cwiseAbs().sum());
    }
    return total / static_cast<double>(plan.masked_ids.size());
}

template <typename Scalar>
struct LossAndGrad {
    double loss = 0.0;
    EncoderParams<Scalar> grad;
};

namespace detail {

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const LayerNormCache<Scalar>& c, const Mat<Scalar>& g,
                                Mat<Scalar>& dg, Mat<Scalar>& db) {
    dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    db += dy.colwise().sum();
    const Mat<Scalar> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
    const auto n = static_cast<Scalar>(dy.cols());
    Mat<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const Scalar mean_d = dxhat.row(r).sum() / n;
        const Scalar mean_dx = dxhat.row(r).dot(c.xhat.row(r)) / n;
        dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

template <typename Scalar>
Mat<Scalar> attention_block_backward(const Mat<Scalar>& dout, const LayerCache<Scalar>& c,
                                     const LayerParams<Scalar>& L, LayerParams<Scalar>& G, const EncoderConfig& cfg) {
    Mat<Scalar> dy = dout;
    if (cfg.use_ffn) {
        G.ffn_w2 += c.ffn_act.transpose() * dout;
        G.ffn_b2 += dout.colwise().sum();
        Mat<Scalar> dpre = dout * L.ffn_w2.transpose();
        dpre.array() *= c.ffn_pre.unaryExpr([](Scalar u) { return gelu_grad(u); }).array();
        G.ffn_w1 += c.y.transpose() * dpre;
        G.ffn_b1 += dpre.colwise().sum();
        dy += dpre * L.ffn_w1.transpose();
    }
    const Mat<Scalar> dr = layer_norm_backward(dy, c.ln2, L.ln2_g, G.ln2_g, G.ln2_b);

    // r = o Wo + bo + z_in
    Mat<Scalar> dz = dr;
    G.wo += c.o.transpose() * dr;
    G.bo += dr.colwise().sum();
    const Mat<Scalar> d_o = dr * L.wo.transpose();

    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    Mat<Scalar> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        const auto& p = c.probs[h];
        const auto doh = d_o.middleCols(c0, dh);
        dv.middleCols(c0, dh).noalias() = p.transpose() * doh;
        Mat<Scalar> dp = doh * c.v.middleCols(c0, dh).transpose();
        // softmax Jacobian, row-wise: ds = p * (dp - <dp, p>)
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inner = (dp.array() * p.array()).rowwise().sum();
        Mat<Scalar> ds = (p.array() * (dp.array().colwise() - inner.array())).matrix() * scale;
        dq.middleCols(c0, dh).noalias() = ds * c.k.middleCols(c0, dh);
        dk.middleCols(c0, dh).noalias() = ds.transpose() * c.q.middleCols(c0, dh);
    }
    G.wq += c.a.transpose() * dq;
    G.bq += dq.colwise().sum();
    G.wk += c.a.transpose() * dk;
    G.wv += c.a.transpose() * dv;
    G.bv += dv.colwise().sum();
    const Mat<Scalar> da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dz += layer_norm_backward(da, c.ln1, L.ln1_g, G.ln1_g, G.ln1_b);
    return dz;
}

}  // namespace detail

// Loss of reconstructing `target` from `input` with `plan` masked, and the
// gradient for every tensor. `input` and `target` are the same matrix during
// training; they are separate so tests can perturb what the encoder sees.
// The l1 subgradient at a zero residual is 0.
template <typename Scalar>
LossAndGrad<Scalar> loss_and_gradient(const Mat<Scalar>& input, const Mat<Scalar>& target, const MaskPlan& plan,
                                      const EncoderParams<Scalar>& params) {
    const auto& cfg = params.config;
    if (plan.masked_ids.empty()) throw ConfigError("masked l1 loss: empty mask plan");
    ForwardCache<Scalar> cache;
    const Mat<Scalar> z0 = embed(input, plan, params);
    const Mat<Scalar> z = encoder_forward(z0, params, &cache);
    const Mat<Scalar> xhat = reconstruct(z, params);

    LossAndGrad<Scalar> out;
    out.loss = masked_l1_loss(xhat, target, plan);
    out.grad = EncoderParams<Scalar>::zeros(cfg);
    auto& G = out.grad;

    Mat<Scalar> dxhat = Mat<Scalar>::Zero(xhat.rows(), xhat.cols());
    const Scalar inv_m = Scalar(1) / static_cast<Scalar>(plan.masked_ids.size());
    for (auto m : plan.masked_ids) {
        const auto r = static_cast<Eigen::Index>(m);
        for (Eigen::Index j = 0; j < xhat.cols(); ++j) {
            const Scalar d = xhat(r, j) - target(r, j);
            dxhat(r, j) = d > 0 ? inv_m : (d < 0 ? -inv_m : Scalar(0));
        }
    }
    G.head_w = z.transpose() * dxhat;
    G.head_b = dxhat.colwise().sum();
    Mat<Scalar> dz = dxhat * params.head_w.transpose();

    for (std::size_t l = params.layers.size(); l-- > 0;)
        dz = detail::attention_block_backward(dz, cache.layers[l], params.layers[l], G.layers[l], cfg);

    // z0 = (masked ? mask_token : x W + b) + pos
    G.pos_embed = dz;
    const auto flags = plan.as_flags(cfg.patches);
    for (std::size_t p = 0; p < cfg.patches; ++p) {
        const auto r = static_cast<Eigen::Index>(p);
        if (flags[p]) {
            G.mask_token += dz.row(r);
        } else {
            G.w_embed.noalias() += input.row(r).transpose() * dz.row(r);
            G.b_embed += dz.row(r);
        }
    }
    if (!G.all_finite()) throw NumericError("backward: non-finite gradient");
    return out;
}

template <typename Scalar>
LossAndGrad<Scalar> backward(const Mat<Scalar>& x, const MaskPlan& plan, const EncoderParams<Scalar>& params) {
    return loss_and_gradient(x, x, plan, params);
}

template <typename Scalar>
struct MaskedSample {
    const Mat<Scalar>* x;
    MaskPlan plan;
};

// Mean loss and gradient over a batch. Per-sample work may run in parallel;
// the reduction is always performed in batch order so results are identical
// for any thread count.
template <typename Scalar>
LossAndGrad<Scalar> batch_loss_and_gradient(const std::vector<MaskedSample<Scalar>>& batch,
                                            const EncoderParams<Scalar>& params, unsigned threads = 1) {
    if (batch.empty()) throw ConfigError("empty batch");
    std::vector<LossAndGrad<Scalar>> parts(batch.size());
    parallel_for(batch.size(), threads,
                 [&](std::size_t i) { parts[i] = backward(*batch[i].x, batch[i].plan, params); });
    LossAndGrad<Scalar> out = std::move(parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) {
        out.loss += parts[i].loss;
        std::vector<Mat<Scalar>*> dst;
        out.grad.for_each([&](const std::string&, Mat<Scalar>& t, bool) { dst.push_back(&t); });
        std::size_t k = 0;
        parts[i].grad.for_each([&](const std::string&, const Mat<Scalar>& t, bool) { *dst[k++] += t; });
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(batch.size());
    out.loss /= static_cast<double>(batch.size());
    out.grad.for_each([&](const std::string&, Mat<Scalar>& t, bool) { t *= inv; });
    return out;
}

}  // namespace cam
