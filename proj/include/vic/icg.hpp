#pragma once

// Implicit context generator: pre-LN multi-head self-attention over the
// stacked tokens of two frames. Each head's attention map is cut into the
// prev/cls/match/curr blocks; the head-averaged match block is appended to
// every token and projected back to model width.

#include "vic/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace vic {

enum class ContextTargets { kCurr, kBoth };

struct AttentionBlocks {
    Matrix prev;   ///< m x m, prev queries over prev keys
    Matrix cls;    ///< m x n, prev queries over curr keys
    Matrix match;  ///< n x m, curr queries over prev keys
    Matrix curr;   ///< n x n
};

inline AttentionBlocks split_attention(const Matrix& a, Eigen::Index m, Eigen::Index n) {
    if (m < 0 || n < 0 || a.rows() != m + n || a.cols() != m + n)
        throw ValidationError("attention map is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              ", expected " + std::to_string(m + n) + " square");
    return {a.topLeftCorner(m, m), a.topRightCorner(m, n), a.bottomLeftCorner(n, m), a.bottomRightCorner(n, n)};
}

inline Matrix assemble_attention(const AttentionBlocks& b) {
    const Eigen::Index m = b.prev.rows(), n = b.curr.rows();
    Matrix a(m + n, m + n);
    a.topLeftCorner(m, m) = b.prev;
    a.topRightCorner(m, n) = b.cls;
    a.bottomLeftCorner(n, m) = b.match;
    a.bottomRightCorner(n, n) = b.curr;
    return a;
}

struct AttentionMaps {
    Eigen::Index m = 0;
    Eigen::Index n = 0;
    std::vector<Matrix> heads;  ///< row-stochastic (m+n) x (m+n), one per head
    Matrix match_mean;          ///< n x m, mean of the heads' match blocks

    AttentionBlocks blocks(std::size_t head) const { return split_attention(heads.at(head), m, n); }
};

inline Matrix mean_match_block(const std::vector<Matrix>& heads, Eigen::Index m, Eigen::Index n) {
    Matrix mean = Matrix::Zero(n, m);
    if (heads.empty()) return mean;
    for (const auto& h : heads) mean += h.bottomLeftCorner(n, m);
    return mean / static_cast<double>(heads.size());
}

inline nlohmann::json attention_to_json(const AttentionMaps& maps) {
    const auto mat = [](const Matrix& x) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(x.cols()));
            for (Eigen::Index c = 0; c < x.cols(); ++c) row[static_cast<std::size_t>(c)] = x(r, c);
            rows.push_back(row);
        }
        return rows;
    };
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : maps.heads) heads.push_back(mat(h));
    return {{"m", maps.m}, {"n", maps.n}, {"heads", heads}, {"match_mean", mat(maps.match_mean)}};
}

struct AttentionLayerParams {
    Matrix ln_gamma, ln_beta;  ///< 1 x d
    Matrix wq, bq, wk, wv, bv, wo, bo;  ///< no key bias: softmax rows are invariant to it
};

struct IcgParams {
    int d = 64;
    int heads = 4;
    int n_max = 64;
    int avg_layers = 1;  ///< match blocks are averaged over the last avg_layers layers
    ContextTargets context_targets = ContextTargets::kBoth;
    std::vector<AttentionLayerParams> layers;
    Matrix ctx_prev_w, ctx_prev_b;  ///< d x (d + n_max), 1 x d
    Matrix ctx_curr_w, ctx_curr_b;

    int num_layers() const { return static_cast<int>(layers.size()); }
    int head_dim() const { return d / heads; }

    static IcgParams zeros(int d, int heads, int num_layers, int n_max) {
        if (heads < 1 || d % heads != 0)
            throw ConfigError("model width d=" + std::to_string(d) + " must be divisible by heads=" + std::to_string(heads));
        if (num_layers < 1) throw ConfigError("icg needs at least one layer");
        if (n_max < 1) throw ConfigError("icg.n_max must be positive");
        IcgParams p;
        p.d = d;
        p.heads = heads;
        p.n_max = n_max;
        for (int l = 0; l < num_layers; ++l) {
            AttentionLayerParams a;
            a.ln_gamma = Matrix::Ones(1, d);
            a.ln_beta = Matrix::Zero(1, d);
            for (Matrix* w : {&a.wq, &a.wk, &a.wv, &a.wo}) *w = Matrix::Zero(d, d);
            for (Matrix* b : {&a.bq, &a.bv, &a.bo}) *b = Matrix::Zero(1, d);
            p.layers.push_back(std::move(a));
        }
        p.ctx_prev_w = Matrix::Zero(d, d + n_max);
        p.ctx_curr_w = Matrix::Zero(d, d + n_max);
        p.ctx_prev_b = Matrix::Zero(1, d);
        p.ctx_curr_b = Matrix::Zero(1, d);
        return p;
    }

    template <class Self, class F>
    static void visit_impl(Self& self, F& f) {
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& a = self.layers[l];
            const std::string pre = "icg.layer" + std::to_string(l) + ".";
            f(pre + "ln_gamma", "head", a.ln_gamma);
            f(pre + "ln_beta", "head", a.ln_beta);
            f(pre + "wq", "head", a.wq);
            f(pre + "bq", "head", a.bq);
            f(pre + "wk", "head", a.wk);
            f(pre + "wv", "head", a.wv);
            f(pre + "bv", "head", a.bv);
            f(pre + "wo", "head", a.wo);
            f(pre + "bo", "head", a.bo);
        }
        f(std::string("icg.ctx_prev_w"), "head", self.ctx_prev_w);
        f(std::string("icg.ctx_prev_b"), "head", self.ctx_prev_b);
        f(std::string("icg.ctx_curr_w"), "head", self.ctx_curr_w);
        f(std::string("icg.ctx_curr_b"), "head", self.ctx_curr_b);
    }
    template <class F>
    void visit(F&& f) { visit_impl(*this, f); }
    template <class F>
    void visit(F&& f) const { visit_impl(*this, f); }
};

inline Matrix concat_frames(const Matrix& prev, const Matrix& curr) {
    if (prev.rows() > 0 && curr.rows() > 0 && prev.cols() != curr.cols())
        throw ValidationError("token width mismatch: " + std::to_string(prev.cols()) + " vs " +
                              std::to_string(curr.cols()));
    const Eigen::Index d = prev.rows() > 0 ? prev.cols() : curr.cols();
    Matrix joint(prev.rows() + curr.rows(), d);
    if (prev.rows() > 0) joint.topRows(prev.rows()) = prev;
    if (curr.rows() > 0) joint.bottomRows(curr.rows()) = curr;
    return joint;
}

// ---------------------------------------------------------------------------
// Self-attention layer

struct AttentionLayerCache {
    Matrix input;    ///< T x d
    Matrix xhat;     ///< layer-normalized input before affine
    Vector inv_std;  ///< per row
    Matrix normed;   ///< after affine
    Matrix q, k, v;  ///< T x d
    std::vector<Matrix> attn;  ///< per head, T x T
    Matrix concat;   ///< T x d, heads' outputs side by side
};

struct AttentionLayerOutput {
    Matrix output;
    AttentionLayerCache cache;
};

namespace detail {

constexpr double kLayerNormEps = 1e-5;

inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

inline void softmax_rows(Matrix& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
}

}  // namespace detail

inline AttentionLayerOutput self_attention_forward(const Matrix& tokens, const IcgParams& params, int layer) {
    if (layer < 0 || layer >= params.num_layers()) throw ConfigError("attention layer index out of range");
    const auto& lp = params.layers[static_cast<std::size_t>(layer)];
    const Eigen::Index t = tokens.rows();
    const int d = params.d, hd = params.head_dim();
    if (tokens.cols() != d && t > 0) throw ValidationError("token width does not match model width");

    AttentionLayerOutput out;
    auto& c = out.cache;
    c.input = tokens;
    c.xhat.resize(t, d);
    c.inv_std.resize(t);
    for (Eigen::Index r = 0; r < t; ++r) {
        const double mu = tokens.row(r).mean();
        const double var = (tokens.row(r).array() - mu).square().mean();
        c.inv_std[r] = 1.0 / std::sqrt(var + detail::kLayerNormEps);
        c.xhat.row(r) = (tokens.row(r).array() - mu) * c.inv_std[r];
    }
    c.normed = c.xhat.array().rowwise() * lp.ln_gamma.row(0).array();
    c.normed.rowwise() += lp.ln_beta.row(0);
    c.q = detail::affine(c.normed, lp.wq, lp.bq);
    c.k = c.normed * lp.wk.transpose();
    c.v = detail::affine(c.normed, lp.wv, lp.bv);
    c.concat.resize(t, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < params.heads; ++h) {
        Matrix s = (c.q.middleCols(h * hd, hd) * c.k.middleCols(h * hd, hd).transpose()) * scale;
        detail::softmax_rows(s);
        c.concat.middleCols(h * hd, hd) = s * c.v.middleCols(h * hd, hd);
        c.attn.push_back(std::move(s));
    }
    out.output = tokens + detail::affine(c.concat, lp.wo, lp.bo);
    return out;
}

// d_attn: optional extra gradient on each head's attention map (empty vector
// when the maps feed nothing downstream). Returns d(input).
inline Matrix self_attention_backward(const IcgParams& params, int layer, const AttentionLayerCache& c,
                                      const Matrix& d_out, const std::vector<Matrix>& d_attn, IcgParams& grad) {
    const auto& lp = params.layers[static_cast<std::size_t>(layer)];
    auto& gp = grad.layers[static_cast<std::size_t>(layer)];
    const int d = params.d, hd = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix d_in = d_out;  // residual path
    gp.wo.noalias() += d_out.transpose() * c.concat;
    gp.bo += d_out.colwise().sum();
    const Matrix d_concat = d_out * lp.wo;

    Matrix dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
    for (int h = 0; h < params.heads; ++h) {
        const auto& a = c.attn[static_cast<std::size_t>(h)];
        const auto d_oh = d_concat.middleCols(h * hd, hd);
        Matrix da = d_oh * c.v.middleCols(h * hd, hd).transpose();
        if (!d_attn.empty() && d_attn[static_cast<std::size_t>(h)].size() > 0) da += d_attn[static_cast<std::size_t>(h)];
        dv.middleCols(h * hd, hd) = a.transpose() * d_oh;
        const Vector row_dot = (da.array() * a.array()).rowwise().sum();
        Matrix ds = a.array() * (da.colwise() - row_dot).array();
        ds *= scale;
        dq.middleCols(h * hd, hd) = ds * c.k.middleCols(h * hd, hd);
        dk.middleCols(h * hd, hd) = ds.transpose() * c.q.middleCols(h * hd, hd);
    }
    gp.wq.noalias() += dq.transpose() * c.normed;
    gp.bq += dq.colwise().sum();
    gp.wk.noalias() += dk.transpose() * c.normed;
    gp.wv.noalias() += dv.transpose() * c.normed;
    gp.bv += dv.colwise().sum();
    const Matrix d_normed = dq * lp.wq + dk * lp.wk + dv * lp.wv;

    gp.ln_gamma += (d_normed.array() * c.xhat.array()).colwise().sum().matrix();
    gp.ln_beta += d_normed.colwise().sum();
    const Matrix d_xhat = d_normed.array().rowwise() * lp.ln_gamma.row(0).array();
    for (Eigen::Index r = 0; r < d_xhat.rows(); ++r) {
        const double mean_d = d_xhat.row(r).mean();
        const double mean_dx = (d_xhat.row(r).array() * c.xhat.row(r).array()).mean();
        d_in.row(r).array() +=
            c.inv_std[r] * (d_xhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx);
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// Context concatenation and projection

inline void check_capacity(const IcgParams& p, Eigen::Index m, Eigen::Index n) {
    if (m > p.n_max || n > p.n_max)
        throw CapacityError("frame population " + std::to_string(std::max(m, n)) + " exceeds icg.n_max=" +
                            std::to_string(p.n_max) + "; raise icg.n_max");
}

// Current token j gets row j of the mean match map, previous token i gets
// column i; both zero-padded to n_max, then projected by a role-specific map.
inline Matrix context_inform(const Matrix& attn_out, const Matrix& abar, const IcgParams& p) {
    const Eigen::Index n = abar.rows(), m = abar.cols();
    if (attn_out.rows() != m + n) throw ValidationError("context map shape does not match token count");
    check_capacity(p, m, n);
    const int d = p.d;
    Matrix out(m + n, d);
    if (m > 0) {
        Matrix prev = attn_out.topRows(m) * p.ctx_prev_w.leftCols(d).transpose();
        if (p.context_targets == ContextTargets::kBoth && n > 0)
            prev.noalias() += abar.transpose() * p.ctx_prev_w.middleCols(d, n).transpose();
        prev.rowwise() += p.ctx_prev_b.row(0);
        out.topRows(m) = prev;
    }
    if (n > 0) {
        Matrix curr = attn_out.bottomRows(n) * p.ctx_curr_w.leftCols(d).transpose();
        if (m > 0) curr.noalias() += abar * p.ctx_curr_w.middleCols(d, m).transpose();
        curr.rowwise() += p.ctx_curr_b.row(0);
        out.bottomRows(n) = curr;
    }
    return out;
}

// Accumulates parameter gradients; writes d(attn_out) and d(abar).
inline void context_inform_backward(const Matrix& attn_out, const Matrix& abar, const IcgParams& p,
                                    const Matrix& d_out, IcgParams& grad, Matrix& d_attn_out, Matrix& d_abar) {
    const Eigen::Index n = abar.rows(), m = abar.cols();
    const int d = p.d;
    d_attn_out.setZero(m + n, d);
    d_abar.setZero(n, m);
    if (m > 0) {
        const auto g = d_out.topRows(m);
        grad.ctx_prev_w.leftCols(d).noalias() += g.transpose() * attn_out.topRows(m);
        grad.ctx_prev_b += g.colwise().sum();
        d_attn_out.topRows(m) = g * p.ctx_prev_w.leftCols(d);
        if (p.context_targets == ContextTargets::kBoth && n > 0) {
            grad.ctx_prev_w.middleCols(d, n).noalias() += g.transpose() * abar.transpose();
            d_abar.noalias() += (g * p.ctx_prev_w.middleCols(d, n)).transpose();
        }
    }
    if (n > 0) {
        const auto g = d_out.bottomRows(n);
        grad.ctx_curr_w.leftCols(d).noalias() += g.transpose() * attn_out.bottomRows(n);
        grad.ctx_curr_b += g.colwise().sum();
        d_attn_out.bottomRows(n) = g * p.ctx_curr_w.leftCols(d);
        if (m > 0) {
            grad.ctx_curr_w.middleCols(d, m).noalias() += g.transpose() * abar;
            d_abar.noalias() += g * p.ctx_curr_w.middleCols(d, m);
        }
    }
}

// ---------------------------------------------------------------------------
// Whole module

struct IcgForward {
    Eigen::Index m = 0, n = 0;
    Matrix tokens;  ///< (m+n) x d context-informed representation
    Matrix attn_out;
    Matrix abar;    ///< n x m
    std::vector<AttentionLayerCache> layers;

    AttentionMaps final_maps() const {
        AttentionMaps maps;
        maps.m = m;
        maps.n = n;
        maps.heads = layers.back().attn;
        maps.match_mean = mean_match_block(maps.heads, m, n);
        return maps;
    }
};

inline int first_averaged_layer(const IcgParams& p) {
    return std::max(0, p.num_layers() - std::max(1, p.avg_layers));
}

inline IcgForward icg_forward(const Matrix& prev, const Matrix& curr, const IcgParams& p) {
    IcgForward f;
    f.m = prev.rows();
    f.n = curr.rows();
    check_capacity(p, f.m, f.n);
    Matrix z = concat_frames(prev, curr);
    for (int l = 0; l < p.num_layers(); ++l) {
        auto step = self_attention_forward(z, p, l);
        z = std::move(step.output);
        f.layers.push_back(std::move(step.cache));
    }
    f.attn_out = z;
    std::vector<Matrix> used;
    for (int l = first_averaged_layer(p); l < p.num_layers(); ++l)
        for (const auto& a : f.layers[static_cast<std::size_t>(l)].attn) used.push_back(a);
    f.abar = mean_match_block(used, f.m, f.n);
    f.tokens = context_inform(f.attn_out, f.abar, p);
    return f;
}

// Returns d(prev) and d(curr) stacked as (m+n) x d.
inline Matrix icg_backward(const IcgForward& f, const IcgParams& p, const Matrix& d_tokens, IcgParams& grad) {
    Matrix d_z, d_abar;
    context_inform_backward(f.attn_out, f.abar, p, d_tokens, grad, d_z, d_abar);
    const int first = first_averaged_layer(p);
    const double share = 1.0 / static_cast<double>((p.num_layers() - first) * p.heads);
    for (int l = p.num_layers() - 1; l >= 0; --l) {
        std::vector<Matrix> d_attn;
        if (l >= first && f.m > 0 && f.n > 0) {
            for (int h = 0; h < p.heads; ++h) {
                Matrix g = Matrix::Zero(f.m + f.n, f.m + f.n);
                g.bottomLeftCorner(f.n, f.m) = d_abar * share;
                d_attn.push_back(std::move(g));
            }
        }
        d_z = self_attention_backward(p, l, f.layers[static_cast<std::size_t>(l)], d_z, d_attn, grad);
    }
    return d_z;
}

}  // namespace vic
