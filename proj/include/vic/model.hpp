#pragma once

// Full matcher: featurizer -> ICG -> OMPM, with the ablation switches, a
// per-pair forward/backward and parameter (de)serialization.

#include "vic/core.hpp"
#include "vic/dataset.hpp"
#include "vic/featurizer.hpp"
#include "vic/icg.hpp"
#include "vic/losses.hpp"
#include "vic/ompm.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>

namespace vic {

struct ModelConfig {
    int d_in = 32;
    int d_pe = 16;
    int d = 64;
    int heads = 4;
    int layers = 2;
    int n_max = 64;
    int avg_layers = 1;
    ContextTargets context_targets = ContextTargets::kBoth;
    int mlp_depth = 3;
    int mlp_hidden = 32;
    bool icg_on = true;
    bool ompm_on = true;
    // Matcher used when ompm_on is false: p = sigmoid(temperature * (cos - threshold)).
    double cosine_temperature = 10.0;
    double cosine_threshold = 0.5;

    void validate() const {
        if (d_in < 1) throw ConfigError("d_in must be positive");
        if (d_pe <= 0 || d_pe % 4 != 0) throw ConfigError("d_pe must be a positive multiple of 4");
        if (heads < 1 || d % heads != 0) throw ConfigError("d must be divisible by heads");
        if (layers < 1) throw ConfigError("icg needs at least one layer");
        if (n_max < 1) throw ConfigError("n_max must be positive");
        if (mlp_depth < 1) throw ConfigError("mlp_depth must be >= 1");
        if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_in", c.d_in},
                       {"d_pe", c.d_pe},
                       {"d", c.d},
                       {"heads", c.heads},
                       {"layers", c.layers},
                       {"n_max", c.n_max},
                       {"avg_layers", c.avg_layers},
                       {"context_targets", c.context_targets == ContextTargets::kBoth ? "both" : "curr"},
                       {"mlp_depth", c.mlp_depth},
                       {"mlp_hidden", c.mlp_hidden},
                       {"icg_on", c.icg_on},
                       {"ompm_on", c.ompm_on},
                       {"cosine_temperature", c.cosine_temperature},
                       {"cosine_threshold", c.cosine_threshold}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    const ModelConfig d;
    c.d_in = j.value("d_in", d.d_in);
    c.d_pe = j.value("d_pe", d.d_pe);
    c.d = j.value("d", d.d);
    c.heads = j.value("heads", d.heads);
    c.layers = j.value("layers", d.layers);
    c.n_max = j.value("n_max", d.n_max);
    c.avg_layers = j.value("avg_layers", d.avg_layers);
    const std::string ct = j.value("context_targets", std::string("both"));
    if (ct != "both" && ct != "curr") throw ConfigError("context_targets must be 'both' or 'curr'");
    c.context_targets = ct == "both" ? ContextTargets::kBoth : ContextTargets::kCurr;
    c.mlp_depth = j.value("mlp_depth", d.mlp_depth);
    c.mlp_hidden = j.value("mlp_hidden", d.mlp_hidden);
    c.icg_on = j.value("icg_on", d.icg_on);
    c.ompm_on = j.value("ompm_on", d.ompm_on);
    c.cosine_temperature = j.value("cosine_temperature", d.cosine_temperature);
    c.cosine_threshold = j.value("cosine_threshold", d.cosine_threshold);
}

struct ModelParams {
    ModelConfig config;
    FeaturizerParams featurizer;
    IcgParams icg;
    MlpParams mlp;

    // Same shapes, all zeros; used for gradient accumulation.
    static ModelParams zeros(const ModelConfig& c) {
        c.validate();
        ModelParams p;
        p.config = c;
        p.featurizer = FeaturizerParams::zeros(c.d_in, c.d_pe, c.d);
        p.icg = IcgParams::zeros(c.d, c.heads, c.layers, c.n_max);
        p.icg.avg_layers = c.avg_layers;
        p.icg.context_targets = c.context_targets;
        p.mlp = MlpParams::zeros(c.d, c.mlp_hidden, c.mlp_depth);
        return p;
    }

    ModelParams zeros_like() const {
        ModelParams g = zeros(config);
        g.set_zero();
        return g;
    }

    // Visits (name, group, matrix) for every tensor the active configuration uses.
    template <class Self, class F>
    static void visit_impl(Self& self, F& f) {
        self.featurizer.visit(f);
        if (self.config.icg_on) self.icg.visit(f);
        if (self.config.ompm_on) self.mlp.visit(f);
    }
    template <class F>
    void visit(F&& f) { visit_impl(*this, f); }
    template <class F>
    void visit(F&& f) const { visit_impl(*this, f); }

    void set_zero() {
        visit([](const std::string&, const char*, Matrix& m) { m.setZero(); });
    }
};

inline ModelParams init_model(const ModelConfig& c, std::uint64_t seed) {
    ModelParams p = ModelParams::zeros(c);
    Rng rng = make_rng(seed, "model.init");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto fill = [&](Matrix& m, double std) {
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std * gauss(rng);
    };
    fill(p.featurizer.weight, 1.0 / std::sqrt(static_cast<double>(c.d_in + c.d_pe)));
    // descriptors carry identity, positions mostly tell groups apart
    p.featurizer.weight.leftCols(c.d_in) *= 6.0;
    p.featurizer.weight.rightCols(c.d_pe) *= 0.5;
    const double sd = 1.0 / std::sqrt(static_cast<double>(c.d));
    for (auto& l : p.icg.layers) {
        fill(l.wq, sd);
        fill(l.wk, sd);
        fill(l.wv, sd);
        fill(l.wo, 0.05 * sd);  // blocks start close to the identity
    }
    for (Matrix* w : {&p.icg.ctx_prev_w, &p.icg.ctx_curr_w}) {
        fill(*w, 0.1 * sd);
        w->leftCols(c.d) += Matrix::Identity(c.d, c.d);
    }
    for (std::size_t l = 0; l < p.mlp.weights.size(); ++l)
        fill(p.mlp.weights[l], 1.0 / std::sqrt(static_cast<double>(p.mlp.weights[l].cols())));
    p.mlp.biases.back().setConstant(-2.0);
    return p;
}

// ---------------------------------------------------------------------------
// Pair forward / backward

struct PairForward {
    Matrix inputs_prev, inputs_curr;  ///< [descriptor | pe]
    Matrix proj_prev, proj_curr;      ///< featurizer output
    std::optional<IcgForward> icg;
    Matrix tok_prev, tok_curr;        ///< tokens fed to the matcher
    PairwiseForward pairwise;         ///< when ompm_on
    Matrix cosine;                    ///< when !ompm_on
    Matrix logits;                    ///< m x n
    MatchProbabilities probs;
};

inline PairForward forward_pair(const ModelParams& model, const Frame& prev, const Frame& curr) {
    const auto& c = model.config;
    PairForward f;
    f.inputs_prev = frame_inputs(prev, c.d_in, c.d_pe);
    f.inputs_curr = frame_inputs(curr, c.d_in, c.d_pe);
    f.proj_prev = project_inputs(f.inputs_prev, model.featurizer);
    f.proj_curr = project_inputs(f.inputs_curr, model.featurizer);
    const Eigen::Index m = f.proj_prev.rows(), n = f.proj_curr.rows();
    if (c.icg_on && m + n > 0) {
        f.icg = icg_forward(f.proj_prev, f.proj_curr, model.icg);
        f.tok_prev = f.icg->tokens.topRows(m);
        f.tok_curr = f.icg->tokens.bottomRows(n);
    } else {
        f.tok_prev = f.proj_prev;
        f.tok_curr = f.proj_curr;
    }
    if (c.ompm_on) {
        f.pairwise = pairwise_forward(f.tok_prev, f.tok_curr, model.mlp);
        f.logits = f.pairwise.logits;
        f.probs = f.pairwise.probs;
    } else {
        f.cosine = Matrix::Zero(m, n);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j) f.cosine(i, j) = cosine_similarity(f.tok_prev.row(i), f.tok_curr.row(j));
        f.logits = c.cosine_temperature * (f.cosine.array() - c.cosine_threshold);
        f.probs.p = f.logits.unaryExpr([](double v) { return sigmoid(v); });
    }
    return f;
}

inline MatchProbabilities predict_pair(const ModelParams& model, const Frame& prev, const Frame& curr) {
    return forward_pair(model, prev, curr).probs;
}

// Gradients w.r.t. the logits and the matcher tokens flow back to every parameter.
inline void backward_pair(const ModelParams& model, const PairForward& f, const Matrix& d_logits,
                          const Matrix& d_tok_prev_extra, const Matrix& d_tok_curr_extra, ModelParams& grad) {
    const auto& c = model.config;
    const Eigen::Index m = f.tok_prev.rows(), n = f.tok_curr.rows();
    Matrix d_prev = d_tok_prev_extra, d_curr = d_tok_curr_extra;
    if (c.ompm_on) {
        Matrix dp, dc;
        pairwise_backward(f.pairwise, f.tok_prev, f.tok_curr, model.mlp, d_logits, grad.mlp, dp, dc);
        d_prev += dp;
        d_curr += dc;
    } else {
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                const double g = d_logits(i, j) * c.cosine_temperature;
                if (g == 0.0) continue;
                const auto a = f.tok_prev.row(i), b = f.tok_curr.row(j);
                const double na = std::max(a.norm(), 1e-12), nb = std::max(b.norm(), 1e-12);
                const double cs = f.cosine(i, j);
                d_prev.row(i) += g * (b / (na * nb) - cs * a / (na * na));
                d_curr.row(j) += g * (a / (na * nb) - cs * b / (nb * nb));
            }
    }
    Matrix d_proj_prev, d_proj_curr;
    if (f.icg) {
        const Matrix d_tokens = concat_frames(d_prev, d_curr);
        const Matrix d_in = icg_backward(*f.icg, model.icg, d_tokens, grad.icg);
        d_proj_prev = d_in.topRows(m);
        d_proj_curr = d_in.bottomRows(n);
    } else {
        d_proj_prev = d_prev;
        d_proj_curr = d_curr;
    }
    project_inputs_backward(f.inputs_prev, d_proj_prev, grad.featurizer);
    project_inputs_backward(f.inputs_curr, d_proj_curr, grad.featurizer);
}

// ---------------------------------------------------------------------------
// Loss for one labelled pair

struct LossOptions {
    double group_radius = 0.2;
    GroupAnchor anchor = GroupAnchor::kCurr;
    bool kl_on = true;
    double kl_weight = 1.0;  // l_kl is reported already scaled
    KlConfig kl{20, 1e-8, Binning::kSoft};
    OtConfig ot;
};

// Returns the loss breakdown; accumulates gradients scaled by `weight` into grad when given.
inline LossBreakdown pair_loss(const ModelParams& model, const Frame& prev, const Frame& curr,
                               const LossOptions& opt, ModelParams* grad = nullptr, double weight = 1.0) {
    LossBreakdown parts;
    const PairForward f = forward_pair(model, prev, curr);
    const Eigen::Index m = f.tok_prev.rows(), n = f.tok_curr.rows();
    if (m == 0 || n == 0) return parts;
    const GroupLabelMatrix labels = build_group_labels(prev, curr, opt.group_radius, opt.anchor);
    const LossValue cls = loss_cls_logits(f.logits, labels.y);
    parts.l_cls = cls.value;
    Matrix d_p = Matrix::Zero(m, n);
    if (opt.kl_on) {
        const LossValue kl = loss_kl(f.probs.p, labels.y, opt.kl);
        parts.l_kl = opt.kl_weight * kl.value;
        d_p += opt.kl_weight * kl.grad;
    }
    const OtLoss ot = loss_ot(f.tok_prev, f.tok_curr, labels.y, opt.ot);
    parts.l_ot = ot.value;
    parts.ot_degenerate = ot.degenerate ? 1 : 0;
    parts.sinkhorn_unconverged = ot.converged ? 0 : 1;
    parts.l_total = total_loss(parts);
    if (grad) {
        const Matrix d_logits =
            (cls.grad.array() + d_p.array() * f.probs.p.array() * (1.0 - f.probs.p.array())).matrix() * weight;
        backward_pair(model, f, d_logits, ot.d_prev * weight, ot.d_curr * weight, *grad);
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Parameter serialization

inline nlohmann::json params_to_json(const ModelParams& p) {
    nlohmann::json tensors = nlohmann::json::object();
    p.visit([&](const std::string& name, const char*, const Matrix& m) {
        std::vector<double> data(static_cast<std::size_t>(m.size()));
        for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(k++)] = m(r, c);
        tensors[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
    });
    return tensors;
}

inline ModelParams params_from_json(const ModelConfig& config, const nlohmann::json& tensors) {
    ModelParams p = ModelParams::zeros(config);
    p.visit([&](const std::string& name, const char*, Matrix& m) {
        if (!tensors.contains(name)) throw VersionError("checkpoint lacks tensor '" + name + "'");
        const auto& t = tensors.at(name);
        const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
        if (rows != m.rows() || cols != m.cols())
            throw VersionError("tensor '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) +
                               " in the checkpoint but the config expects " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()));
        const auto data = t.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw VersionError("tensor '" + name + "' is truncated");
        for (Eigen::Index r = 0, k = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(k++)];
    });
    return p;
}

}  // namespace vic
