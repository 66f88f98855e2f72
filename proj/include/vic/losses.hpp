#pragma once

// Supervision: radius-based group labels, pairwise cross-entropy, the
// histogram KL term, an entropic OT solver and the group-contrastive
// transport loss built on it. Every differentiable loss returns its value
// together with the gradient of that value.

#include "vic/baselines.hpp"
#include "vic/core.hpp"
#include "vic/dataset.hpp"
#include "vic/ompm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace vic {

// ---------------------------------------------------------------------------
// Group labels

enum class GroupAnchor { kCurr, kPrev };

struct GroupLabelMatrix {
    Matrix y;  ///< m x n, entries 0/1
    double radius = 0.2;
};

// Curr anchor: Y[i,j] = 1 when prev pedestrian i is visible in curr at x* and
// curr pedestrian j lies within radius of x*. The prev anchor mirrors this
// with the ball drawn around curr pedestrian j's previous position.
inline GroupLabelMatrix build_group_labels(const Frame& prev, const Frame& curr, double radius,
                                           GroupAnchor anchor = GroupAnchor::kCurr) {
    if (!(radius > 0)) throw ConfigError("group label radius must be positive");
    if (!prev.fully_labeled() || !curr.fully_labeled())
        throw LabelingError("group labels need identities in frames " + std::to_string(prev.index) + " and " +
                            std::to_string(curr.index));
    const auto m = static_cast<Eigen::Index>(prev.size()), n = static_cast<Eigen::Index>(curr.size());
    GroupLabelMatrix g{Matrix::Zero(m, n), radius};
    const Frame& home = anchor == GroupAnchor::kCurr ? curr : prev;
    std::map<std::int64_t, Eigen::Index> where;
    for (std::size_t k = 0; k < home.size(); ++k) where[*home.observations[k].identity] = static_cast<Eigen::Index>(k);
    const double r2 = radius * radius;
    const auto near = [&](const PedestrianObservation& a, const PedestrianObservation& b) {
        const double dx = a.x - b.x, dy = a.y - b.y;
        return dx * dx + dy * dy <= r2;
    };
    if (anchor == GroupAnchor::kCurr) {
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto it = where.find(*prev.observations[static_cast<std::size_t>(i)].identity);
            if (it == where.end()) continue;
            const auto& star = curr.observations[static_cast<std::size_t>(it->second)];
            for (Eigen::Index j = 0; j < n; ++j)
                if (near(curr.observations[static_cast<std::size_t>(j)], star)) g.y(i, j) = 1.0;
        }
    } else {
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto it = where.find(*curr.observations[static_cast<std::size_t>(j)].identity);
            if (it == where.end()) continue;
            const auto& star = prev.observations[static_cast<std::size_t>(it->second)];
            for (Eigen::Index i = 0; i < m; ++i)
                if (near(prev.observations[static_cast<std::size_t>(i)], star)) g.y(i, j) = 1.0;
        }
    }
    return g;
}

struct LossValue {
    double value = 0.0;
    Matrix grad;  ///< d value / d input, same shape as the input
};

// ---------------------------------------------------------------------------
// Pairwise cross-entropy

constexpr double kProbClamp = 1e-7;

// Mean BCE over all pairs. Gradient is w.r.t. p and vanishes where p is clamped.
inline LossValue loss_cls(const Matrix& p, const Matrix& y) {
    if (p.rows() != y.rows() || p.cols() != y.cols()) throw ValidationError("loss_cls: shape mismatch");
    LossValue out{0.0, Matrix::Zero(p.rows(), p.cols())};
    const double count = static_cast<double>(p.size());
    if (count == 0) return out;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double raw = p(i, j);
            const double q = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
            const double t = y(i, j);
            out.value -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
            if (raw > kProbClamp && raw < 1.0 - kProbClamp) out.grad(i, j) = (-t / q + (1.0 - t) / (1.0 - q)) / count;
        }
    out.value /= count;
    return out;
}

// Same value as loss_cls(sigmoid(logits), y); the gradient is taken w.r.t. the
// logits as (p - y) / N, which equals the chain-rule gradient wherever the
// clamp is inactive and stays informative once a prediction saturates.
inline LossValue loss_cls_logits(const Matrix& logits, const Matrix& y) {
    const Matrix p = logits.unaryExpr([](double v) { return sigmoid(v); });
    LossValue out = loss_cls(p, y);
    if (p.size() > 0) out.grad = (p - y) / static_cast<double>(p.size());
    return out;
}

// ---------------------------------------------------------------------------
// Histogram KL

enum class Binning {
    kHard,  ///< bin = floor(v * K), with v = 1 in the last bin
    kSoft,  ///< linear split between neighbouring bin centres; differentiable
};

struct KlConfig {
    int bins = 20;
    double epsilon = 1e-8;
    Binning binning = Binning::kHard;

    void validate() const {
        if (bins < 2) throw ConfigError("KL needs at least two bins");
        if (!(epsilon > 0)) throw ConfigError("KL smoothing epsilon must be positive");
    }
};

inline int hard_bin(double v, int bins) {
    return std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
}

// Returns the (up to two) bins v contributes to and the weight of the lower one.
inline void soft_bin(double v, int bins, int& lo, double& w_lo) {
    const double pos = v * bins - 0.5;  // in units of bin centres
    if (pos <= 0.0) {
        lo = 0;
        w_lo = 1.0;
        return;
    }
    if (pos >= bins - 1) {
        lo = bins - 2;
        w_lo = 0.0;
        return;
    }
    lo = static_cast<int>(std::floor(pos));
    w_lo = 1.0 - (pos - lo);
}

inline Vector histogram(const Matrix& values, int bins, Binning binning) {
    Vector h = Vector::Zero(bins);
    if (values.size() == 0) return h;
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        const double v = values.data()[k];
        if (binning == Binning::kHard) {
            h[hard_bin(v, bins)] += 1.0;
        } else {
            int lo;
            double w;
            soft_bin(v, bins, lo, w);
            h[lo] += w;
            h[lo + 1] += 1.0 - w;
        }
    }
    return h / static_cast<double>(values.size());
}

inline double kl_from_histograms(const Vector& p, const Vector& q, double eps) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
        if (p[k] > 0.0) s += p[k] * std::log(p[k] / (q[k] + eps));
    return s;
}

// sum_k P(k) log(P(k) / (Q(k) + eps)), P from predictions, Q from the 0/1
// labels. The gradient is w.r.t. p; zero for hard binning.
inline LossValue loss_kl(const Matrix& p, const Matrix& y, const KlConfig& cfg) {
    cfg.validate();
    if (p.rows() != y.rows() || p.cols() != y.cols()) throw ValidationError("loss_kl: shape mismatch");
    LossValue out{0.0, Matrix::Zero(p.rows(), p.cols())};
    if (p.size() == 0) return out;
    const Vector hp = histogram(p, cfg.bins, cfg.binning);
    const Vector hq = histogram(y, cfg.bins, cfg.binning);
    out.value = kl_from_histograms(hp, hq, cfg.epsilon);
    if (cfg.binning == Binning::kHard) return out;
    // dL/dP(k) = log(P(k)/(Q(k)+eps)) + 1, and dP(k)/dv follows the soft split.
    Vector d_hist(cfg.bins);
    for (int k = 0; k < cfg.bins; ++k)
        d_hist[k] = hp[k] > 0.0 ? std::log(hp[k] / (hq[k] + cfg.epsilon)) + 1.0 : 0.0;
    const double count = static_cast<double>(p.size());
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double pos = p(i, j) * cfg.bins - 0.5;
            if (pos <= 0.0 || pos >= cfg.bins - 1) continue;
            const int lo = static_cast<int>(std::floor(pos));
            // w_lo = 1 - (pos - lo): dw_lo/dv = -K, dw_hi/dv = +K
            out.grad(i, j) = cfg.bins * (d_hist[lo + 1] - d_hist[lo]) / count;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Sinkhorn

struct SinkhornConfig {
    double epsilon = 0.1;
    int max_iter = 200;
    double tol = 1e-9;
};

struct SinkhornResult {
    Matrix plan;
    int iterations = 0;
    bool converged = false;
    double residual = 0.0;  ///< max abs marginal error of the returned plan
};

namespace detail {

inline double logsumexp(const Eigen::Ref<const Vector>& v) {
    const double mx = v.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((v.array() - mx).exp().sum());
}

inline double safe_log(double x) { return x > 0 ? std::log(x) : -std::numeric_limits<double>::infinity(); }

// Log-domain Sinkhorn state; f and g are stored per iteration when a trace is requested.
struct SinkhornTrace {
    std::vector<Vector> f, g;
};

inline SinkhornResult sinkhorn_impl(const Matrix& cost, const Vector& mu, const Vector& nu, const SinkhornConfig& cfg,
                                    SinkhornTrace* trace) {
    const Eigen::Index a = cost.rows(), b = cost.cols();
    if (mu.size() != a || nu.size() != b) throw ValidationError("sinkhorn: marginal sizes do not match cost");
    if (!(cfg.epsilon > 0)) throw ConfigError("sinkhorn epsilon must be positive");
    if ((mu.array() < 0).any() || (nu.array() < 0).any()) throw ValidationError("sinkhorn: negative marginal");
    const double mass = mu.sum();
    if (std::abs(mass - nu.sum()) > 1e-9 * std::max(1.0, mass))
        throw ValidationError("sinkhorn: marginals carry different total mass");
    SinkhornResult res;
    res.plan = Matrix::Zero(a, b);
    if (a == 0 || b == 0 || mass == 0.0) {
        res.converged = true;
        return res;
    }
    const double eps = cfg.epsilon;
    Vector log_mu(a), log_nu(b);
    for (Eigen::Index i = 0; i < a; ++i) log_mu[i] = safe_log(mu[i]);
    for (Eigen::Index j = 0; j < b; ++j) log_nu[j] = safe_log(nu[j]);
    const Matrix neg = -cost / eps;
    Vector f = Vector::Zero(a), g = Vector::Zero(b);
    const auto make_plan = [&] {
        Matrix p(a, b);
        for (Eigen::Index i = 0; i < a; ++i)
            for (Eigen::Index j = 0; j < b; ++j) {
                const double e = (f[i] + g[j]) / eps + neg(i, j);
                p(i, j) = std::isfinite(e) ? std::exp(e) : 0.0;
            }
        return p;
    };
    for (int it = 1; it <= cfg.max_iter; ++it) {
        for (Eigen::Index i = 0; i < a; ++i) {
            if (!std::isfinite(log_mu[i])) {
                f[i] = -std::numeric_limits<double>::infinity();
                continue;
            }
            Vector row = g / eps + neg.row(i).transpose();
            f[i] = eps * (log_mu[i] - logsumexp(row));
        }
        for (Eigen::Index j = 0; j < b; ++j) {
            if (!std::isfinite(log_nu[j])) {
                g[j] = -std::numeric_limits<double>::infinity();
                continue;
            }
            Vector col = f / eps + neg.col(j);
            g[j] = eps * (log_nu[j] - logsumexp(col));
        }
        if (trace) {
            trace->f.push_back(f);
            trace->g.push_back(g);
        }
        res.iterations = it;
        res.plan = make_plan();
        res.residual = std::max((res.plan.rowwise().sum() - mu).cwiseAbs().maxCoeff(),
                                (res.plan.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff());
        if (cfg.tol > 0 && res.residual < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    if (cfg.tol <= 0) res.converged = true;  // fixed iteration count requested
    return res;
}

}  // namespace detail

// Entropic OT: min <P, C> - eps H(P) subject to P 1 = mu, P^T 1 = nu.
// On non-convergence the last iterate is returned with converged = false.
inline SinkhornResult sinkhorn(const Matrix& cost, const Vector& mu, const Vector& nu,
                               const SinkhornConfig& cfg = {}) {
    return detail::sinkhorn_impl(cost, mu, nu, cfg, nullptr);
}

// ---------------------------------------------------------------------------
// Group-contrastive transport loss

struct OtConfig {
    SinkhornConfig sinkhorn;
    double lambda_neg = 1.0;
};

struct OtLoss {
    double value = 0.0;
    Matrix d_prev;  ///< gradient w.r.t. the prev tokens
    Matrix d_curr;
    bool degenerate = false;  ///< no positive label; loss defined as 0
    bool converged = true;
    int iterations = 0;
};

// Plan = Sinkhorn on C = 1 - cos over rows/columns that hold a positive,
// with uniform marginals; loss = <plan, C> + lambda_neg * <plan, [Y == 0]>.
// The gradient is exact for the iterations actually run (unrolled).
inline OtLoss loss_ot(const Matrix& prev, const Matrix& curr, const Matrix& y, const OtConfig& cfg) {
    OtLoss out;
    out.d_prev = Matrix::Zero(prev.rows(), prev.cols());
    out.d_curr = Matrix::Zero(curr.rows(), curr.cols());
    std::vector<Eigen::Index> rows, cols;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        if (y.row(i).maxCoeff() > 0.5) rows.push_back(i);
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        if (y.col(j).maxCoeff() > 0.5) cols.push_back(j);
    if (rows.empty() || cols.empty()) {
        out.degenerate = true;
        return out;
    }
    const auto a = static_cast<Eigen::Index>(rows.size()), b = static_cast<Eigen::Index>(cols.size());
    const double eps = cfg.sinkhorn.epsilon;

    // Cosine cost on the restricted block.
    Vector norm_p(a), norm_c(b);
    for (Eigen::Index r = 0; r < a; ++r) norm_p[r] = std::max(prev.row(rows[r]).norm(), 1e-12);
    for (Eigen::Index c = 0; c < b; ++c) norm_c[c] = std::max(curr.row(cols[c]).norm(), 1e-12);
    Matrix cosine(a, b), cost(a, b), weight(a, b);
    for (Eigen::Index r = 0; r < a; ++r)
        for (Eigen::Index c = 0; c < b; ++c) {
            cosine(r, c) = prev.row(rows[r]).dot(curr.row(cols[c])) / (norm_p[r] * norm_c[c]);
            cost(r, c) = 1.0 - cosine(r, c);
            weight(r, c) = cost(r, c) + (y(rows[r], cols[c]) > 0.5 ? 0.0 : cfg.lambda_neg);
        }
    const Vector mu = Vector::Constant(a, 1.0 / a), nu = Vector::Constant(b, 1.0 / b);
    detail::SinkhornTrace trace;
    const SinkhornResult sk = detail::sinkhorn_impl(cost, mu, nu, cfg.sinkhorn, &trace);
    out.converged = sk.converged;
    out.iterations = sk.iterations;
    const Matrix& plan = sk.plan;
    out.value = (plan.array() * weight.array()).sum();

    // Backward. d value / d plan = weight; d value / d cost (direct) = plan.
    Matrix d_cost = plan;
    const Matrix d_logplan = plan.array() * weight.array();  // times d(plan)/d(log plan)
    const int t_last = sk.iterations - 1;
    Vector d_f = d_logplan.rowwise().sum() / eps;
    Vector d_g = d_logplan.colwise().sum().transpose() / eps;
    d_cost -= d_logplan / eps;
    for (int t = t_last; t >= 0; --t) {
        const Vector& f_t = trace.f[static_cast<std::size_t>(t)];
        // g_t[j] = eps log nu_j - eps LSE_i((f_t[i] - C_ij)/eps)
        for (Eigen::Index j = 0; j < b; ++j) {
            Vector z = (f_t.array() - cost.col(j).array()) / eps;
            const double mx = z.maxCoeff();
            Vector alpha = (z.array() - mx).exp();
            alpha /= alpha.sum();
            d_f -= d_g[j] * alpha;
            d_cost.col(j) += d_g[j] * alpha;
        }
        d_g.setZero();
        // f_t[i] = eps log mu_i - eps LSE_j((g_{t-1}[j] - C_ij)/eps), with g_{-1} = 0
        const Vector g_prev = t > 0 ? trace.g[static_cast<std::size_t>(t - 1)] : Vector::Zero(b);
        for (Eigen::Index i = 0; i < a; ++i) {
            Vector z = (g_prev.array() - cost.row(i).transpose().array()) / eps;
            const double mx = z.maxCoeff();
            Vector beta = (z.array() - mx).exp();
            beta /= beta.sum();
            d_g -= d_f[i] * beta;
            d_cost.row(i) += d_f[i] * beta.transpose();
        }
        d_f.setZero();
    }

    // cost = 1 - cos(p, c)
    for (Eigen::Index r = 0; r < a; ++r)
        for (Eigen::Index c = 0; c < b; ++c) {
            const double d_cos = -d_cost(r, c);
            if (d_cos == 0.0) continue;
            const auto pi = rows[r];
            const auto cj = cols[c];
            out.d_prev.row(pi) += d_cos * (curr.row(cj) / (norm_p[r] * norm_c[c]) -
                                           cosine(r, c) * prev.row(pi) / (norm_p[r] * norm_p[r]));
            out.d_curr.row(cj) += d_cos * (prev.row(pi) / (norm_p[r] * norm_c[c]) -
                                           cosine(r, c) * curr.row(cj) / (norm_c[c] * norm_c[c]));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Total

struct LossBreakdown {
    double l_ot = 0.0;
    double l_cls = 0.0;
    double l_kl = 0.0;
    double l_total = 0.0;
    int sinkhorn_unconverged = 0;
    int ot_degenerate = 0;

    LossBreakdown& operator+=(const LossBreakdown& o) {
        l_ot += o.l_ot;
        l_cls += o.l_cls;
        l_kl += o.l_kl;
        l_total += o.l_total;
        sinkhorn_unconverged += o.sinkhorn_unconverged;
        ot_degenerate += o.ot_degenerate;
        return *this;
    }
};

// Unweighted sum of the three terms; NaN in any term is a training error.
inline double total_loss(const LossBreakdown& parts) {
    const std::pair<const char*, double> terms[] = {{"l_ot", parts.l_ot}, {"l_cls", parts.l_cls}, {"l_kl", parts.l_kl}};
    for (const auto& [name, v] : terms)
        if (!std::isfinite(v)) throw TrainingError(std::string("loss term ") + name + " is not finite");
    return parts.l_ot + parts.l_cls + parts.l_kl;
}

}  // namespace vic
