#pragma once

// One-to-one reference matchers: Kuhn-Munkres on a cosine cost, an
// exhaustive assignment oracle, and thresholded Hungarian counting.

#include "vic/core.hpp"
#include "vic/ompm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

namespace vic {

struct Assignment {
    std::vector<std::pair<int, int>> pairs;  ///< (row i, column j), sorted by row
    double cost = 0.0;
};

inline double assignment_cost(const Matrix& cost, const std::vector<std::pair<int, int>>& pairs) {
    double total = 0.0;
    for (const auto& [i, j] : pairs) total += cost(i, j);
    return total;
}

// Minimum-cost matching that covers the smaller side of a rectangular cost
// matrix. Padded entries all carry max-entry + 1.
inline Assignment hungarian(const Matrix& cost) {
    const int rows = static_cast<int>(cost.rows()), cols = static_cast<int>(cost.cols());
    Assignment out;
    if (rows == 0 || cols == 0) return out;
    if (!cost.allFinite()) throw ValidationError("hungarian: cost matrix has non-finite entries");
    const int s = std::max(rows, cols);
    Matrix a = Matrix::Constant(s, s, cost.maxCoeff() + 1.0);
    a.topLeftCorner(rows, cols) = cost;

    // Potentials-based O(s^3) shortest augmenting path, 1-based with a sentinel column 0.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(s + 1, 0.0), v(s + 1, 0.0);
    std::vector<int> p(s + 1, 0), way(s + 1, 0);
    for (int i = 1; i <= s; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(s + 1, inf);
        std::vector<char> used(s + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= s; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= s; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (int j = 1; j <= s; ++j) {
        const int i = p[j] - 1;
        if (i < rows && j - 1 < cols) out.pairs.emplace_back(i, j - 1);
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    out.cost = assignment_cost(cost, out.pairs);
    return out;
}

// Enumerates every injection of the smaller side into the larger one.
// Factorial time; intended as an oracle for min(m, n) <= 8.
inline Assignment exhaustive_assignment(const Matrix& cost) {
    const int rows = static_cast<int>(cost.rows()), cols = static_cast<int>(cost.cols());
    Assignment best;
    if (rows == 0 || cols == 0) return best;
    const bool transpose = rows > cols;
    const int small = std::min(rows, cols), large = std::max(rows, cols);
    const auto at = [&](int s, int l) { return transpose ? cost(l, s) : cost(s, l); };

    std::vector<int> chosen(static_cast<std::size_t>(small));
    std::vector<char> taken(static_cast<std::size_t>(large), 0);
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<int> best_chosen;
    const auto rec = [&](auto&& self, int s, double acc) -> void {
        if (s == small) {
            if (acc < best_cost) {
                best_cost = acc;
                best_chosen = chosen;
            }
            return;
        }
        for (int l = 0; l < large; ++l) {
            if (taken[static_cast<std::size_t>(l)]) continue;
            taken[static_cast<std::size_t>(l)] = 1;
            chosen[static_cast<std::size_t>(s)] = l;
            self(self, s + 1, acc + at(s, l));
            taken[static_cast<std::size_t>(l)] = 0;
        }
    };
    rec(rec, 0, 0.0);
    for (int s = 0; s < small; ++s) {
        const int l = best_chosen[static_cast<std::size_t>(s)];
        best.pairs.emplace_back(transpose ? l : s, transpose ? s : l);
    }
    std::sort(best.pairs.begin(), best.pairs.end());
    best.cost = assignment_cost(cost, best.pairs);
    return best;
}

inline double cosine_similarity(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

// 1 - cosine similarity between every (prev, curr) row pair.
inline Matrix cosine_cost(const Matrix& prev, const Matrix& curr) {
    Matrix c(prev.rows(), curr.rows());
    for (Eigen::Index i = 0; i < prev.rows(); ++i)
        for (Eigen::Index j = 0; j < curr.rows(); ++j) c(i, j) = 1.0 - cosine_similarity(prev.row(i), curr.row(j));
    return c;
}

struct O2OResult {
    MatchMatrix matches;  ///< n x m, k = 1
    FlowCounts counts;
};

// Hungarian on cosine cost; assigned pairs with similarity below threshold are dropped.
inline O2OResult o2o_match(const Matrix& prev, const Matrix& curr, double threshold) {
    if (prev.rows() > 0 && curr.rows() > 0 && prev.cols() != curr.cols())
        throw ValidationError("o2o_match needs equal feature widths");
    const Eigen::Index m = prev.rows(), n = curr.rows();
    O2OResult r;
    r.matches = MatchMatrix{BinaryMatrix::Zero(n, m), 1};
    const Matrix cost = cosine_cost(prev, curr);
    for (const auto& [i, j] : hungarian(cost).pairs) {
        if (1.0 - cost(i, j) < threshold) continue;
        r.matches.m(j, i) = 1;
        ++r.counts.shared;
    }
    r.counts.shared_prev = r.counts.shared;
    r.counts.inflow = static_cast<int>(n) - r.counts.shared;
    r.counts.outflow = static_cast<int>(m) - r.counts.shared;
    r.counts.mode = CountMode::kDedup;
    return r;
}

}  // namespace vic
