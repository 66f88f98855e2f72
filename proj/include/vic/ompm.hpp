#pragma once

// One-to-many pairwise matcher: an MLP scores the Hadamard product of every
// (prev, curr) token pair, matches are decoded under a per-row group cap, and
// inflow/outflow counts are read off the probability matrix.

#include "vic/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace vic {

struct MatchProbabilities {
    Matrix p;  ///< m x n; row i = previous-frame pedestrian, column j = current

    Eigen::Index m() const { return p.rows(); }
    Eigen::Index n() const { return p.cols(); }
};

using BinaryMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

struct MatchMatrix {
    BinaryMatrix m;  ///< n x m; row j = current pedestrian, column i = previous
    int k = 1;
};

struct MlpParams {
    std::vector<Matrix> weights;  ///< layer l: out x in
    std::vector<Matrix> biases;   ///< layer l: 1 x out

    int depth() const { return static_cast<int>(weights.size()); }

    // depth linear layers d -> hidden -> ... -> 1; depth 1 is a single d -> 1 map.
    static MlpParams zeros(int d, int hidden, int depth) {
        if (depth < 1) throw ConfigError("mlp depth must be >= 1");
        MlpParams p;
        for (int l = 0; l < depth; ++l) {
            const int in = l == 0 ? d : hidden;
            const int out = l == depth - 1 ? 1 : hidden;
            p.weights.push_back(Matrix::Zero(out, in));
            p.biases.push_back(Matrix::Zero(1, out));
        }
        return p;
    }

    template <class Self, class F>
    static void visit_impl(Self& self, F& f) {
        for (std::size_t l = 0; l < self.weights.size(); ++l) {
            f("mlp.w" + std::to_string(l), "head", self.weights[l]);
            f("mlp.b" + std::to_string(l), "head", self.biases[l]);
        }
    }
    template <class F>
    void visit(F&& f) { visit_impl(*this, f); }
    template <class F>
    void visit(F&& f) const { visit_impl(*this, f); }
};

// ---------------------------------------------------------------------------
// Scoring

struct PairwiseForward {
    Eigen::Index m = 0, n = 0;
    std::vector<Matrix> activations;  ///< input of each layer; [0] is the Hadamard block
    Matrix logits;                    ///< m x n
    MatchProbabilities probs;
};

// Pair (i, j) is row i*n + j of the Hadamard block. Hidden layers use tanh.
inline PairwiseForward pairwise_forward(const Matrix& prev, const Matrix& curr, const MlpParams& mlp) {
    PairwiseForward f;
    f.m = prev.rows();
    f.n = curr.rows();
    f.logits.resize(f.m, f.n);
    f.probs.p.resize(f.m, f.n);
    if (f.m == 0 || f.n == 0) return f;
    if (prev.cols() != curr.cols()) throw ValidationError("pairwise scoring needs equal token widths");
    Matrix h(f.m * f.n, prev.cols());
    for (Eigen::Index i = 0; i < f.m; ++i)
        for (Eigen::Index j = 0; j < f.n; ++j) h.row(i * f.n + j) = prev.row(i).cwiseProduct(curr.row(j));
    for (int l = 0; l < mlp.depth(); ++l) {
        Matrix z = h * mlp.weights[static_cast<std::size_t>(l)].transpose();
        z.rowwise() += mlp.biases[static_cast<std::size_t>(l)].row(0);
        f.activations.push_back(std::move(h));
        h = l + 1 < mlp.depth() ? Matrix(z.array().tanh()) : std::move(z);
    }
    for (Eigen::Index i = 0; i < f.m; ++i)
        for (Eigen::Index j = 0; j < f.n; ++j) {
            f.logits(i, j) = h(i * f.n + j, 0);
            f.probs.p(i, j) = sigmoid(f.logits(i, j));
        }
    return f;
}

inline MatchProbabilities pairwise_scores(const Matrix& prev, const Matrix& curr, const MlpParams& mlp) {
    return pairwise_forward(prev, curr, mlp).probs;
}

// Backpropagates d(logits); accumulates MLP gradients and writes token gradients.
inline void pairwise_backward(const PairwiseForward& f, const Matrix& prev, const Matrix& curr, const MlpParams& mlp,
                              const Matrix& d_logits, MlpParams& grad, Matrix& d_prev, Matrix& d_curr) {
    d_prev.setZero(f.m, prev.cols());
    d_curr.setZero(f.n, curr.cols());
    if (f.m == 0 || f.n == 0) return;
    Matrix g(f.m * f.n, 1);
    for (Eigen::Index i = 0; i < f.m; ++i)
        for (Eigen::Index j = 0; j < f.n; ++j) g(i * f.n + j, 0) = d_logits(i, j);
    for (int l = mlp.depth() - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        const Matrix& a = f.activations[ul];
        grad.weights[ul].noalias() += g.transpose() * a;
        grad.biases[ul] += g.colwise().sum();
        Matrix ga = g * mlp.weights[ul];
        if (l > 0) ga.array() *= 1.0 - a.array().square();  // a = tanh(z_{l-1})
        g = std::move(ga);
    }
    for (Eigen::Index i = 0; i < f.m; ++i)
        for (Eigen::Index j = 0; j < f.n; ++j) {
            const auto row = g.row(i * f.n + j);
            d_prev.row(i) += row.cwiseProduct(curr.row(j));
            d_curr.row(j) += row.cwiseProduct(prev.row(i));
        }
}

// ---------------------------------------------------------------------------
// Decoding and constraints

// M[j,i] = 1 for p(i,j) >= tau, keeping at most k per current pedestrian
// (largest probabilities, ties to the lower previous index).
inline MatchMatrix decode_matches(const MatchProbabilities& probs, double tau, int k) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
    if (k < 1) throw ConfigError("group cap k must be >= 1");
    const Eigen::Index m = probs.m(), n = probs.n();
    MatchMatrix out{BinaryMatrix::Zero(n, m), k};
    std::vector<Eigen::Index> cand;
    for (Eigen::Index j = 0; j < n; ++j) {
        cand.clear();
        for (Eigen::Index i = 0; i < m; ++i)
            if (probs.p(i, j) >= tau) cand.push_back(i);
        std::stable_sort(cand.begin(), cand.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return probs.p(a, j) > probs.p(b, j); });
        const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(k));
        for (std::size_t c = 0; c < keep; ++c) out.m(j, cand[c]) = 1;
    }
    return out;
}

enum class MatchMode { kO2O, kO2M };

struct ConstraintReport {
    bool satisfied = true;
    std::vector<Eigen::Index> bad_rows;  ///< current pedestrians over their cap
    std::vector<Eigen::Index> bad_cols;  ///< previous pedestrians matched more than once (O2O)
};

inline ConstraintReport check_constraints(const BinaryMatrix& m, MatchMode mode, int k) {
    ConstraintReport r;
    const int row_cap = mode == MatchMode::kO2O ? 1 : k;
    for (Eigen::Index j = 0; j < m.rows(); ++j)
        if (m.row(j).sum() > row_cap) r.bad_rows.push_back(j);
    if (mode == MatchMode::kO2O)
        for (Eigen::Index i = 0; i < m.cols(); ++i)
            if (m.col(i).sum() > 1) r.bad_cols.push_back(i);
    r.satisfied = r.bad_rows.empty() && r.bad_cols.empty();
    return r;
}

// ---------------------------------------------------------------------------
// Counting

enum class CountMode { kLiteral, kDedup };

inline std::string to_string(CountMode m) { return m == CountMode::kLiteral ? "literal" : "dedup"; }

inline CountMode parse_count_mode(const std::string& s) {
    if (s == "literal") return CountMode::kLiteral;
    if (s == "dedup") return CountMode::kDedup;
    throw ConfigError("count mode must be 'literal' or 'dedup', got '" + s + "'");
}

struct FlowCounts {
    int inflow = 0;
    int outflow = 0;
    int shared = 0;       ///< matched current pedestrians (literal: rounded pair sum)
    int shared_prev = 0;  ///< matched previous pedestrians (literal: same as shared)
    CountMode mode = CountMode::kDedup;
};

// Round half up: p >= 0.5 counts as one.
inline int round_probability(double p) { return p >= 0.5 ? 1 : 0; }

inline FlowCounts count_flows(const MatchProbabilities& probs, Eigen::Index m, Eigen::Index n, CountMode mode,
                              double tau) {
    if (probs.m() != m || probs.n() != n) throw ValidationError("probability matrix shape does not match (m, n)");
    FlowCounts c;
    c.mode = mode;
    if (mode == CountMode::kLiteral) {
        int raw = 0;
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j) raw += round_probability(probs.p(i, j));
        c.shared = c.shared_prev = raw;
        c.inflow = std::max(0, static_cast<int>(n) - raw);
        c.outflow = std::max(0, static_cast<int>(m) - raw);
        return c;
    }
    for (Eigen::Index j = 0; j < n; ++j)
        if (m > 0 && probs.p.col(j).maxCoeff() >= tau) ++c.shared;
    for (Eigen::Index i = 0; i < m; ++i)
        if (n > 0 && probs.p.row(i).maxCoeff() >= tau) ++c.shared_prev;
    c.inflow = static_cast<int>(n) - c.shared;
    c.outflow = static_cast<int>(m) - c.shared_prev;
    return c;
}

inline int aggregate_video(int n0, std::span<const int> inflows) {
    if (n0 < 0) throw ValidationError("first-frame count must be non-negative");
    int total = n0;
    for (int v : inflows) {
        if (v < 0) throw ValidationError("inflow counts must be non-negative");
        total += v;
    }
    return total;
}

inline nlohmann::json pair_record_json(double t_prev, double t_curr, const FlowCounts& c, Eigen::Index m,
                                       Eigen::Index n) {
    return {{"pair", {t_prev, t_curr}},
            {"inflow", c.inflow},
            {"outflow", c.outflow},
            {"shared", c.shared},
            {"P_shape", {m, n}}};
}

}  // namespace vic
