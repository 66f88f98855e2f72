#pragma once

// Counting metrics: MAE, (root) MSE, length-weighted relative error and a
// per-density breakdown keyed on each video's ground-truth total.

#include "vic/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace vic {

struct VideoResult {
    std::string id;
    std::int64_t predicted = 0;
    std::int64_t ground_truth = 0;
    std::int64_t length = 1;  ///< sampled frame count
};

enum class MseConvention { kRoot, kSquared };

struct MaeMse {
    double mae = 0.0;
    double mse = 0.0;
};

inline MaeMse mae_mse(const std::vector<VideoResult>& results, MseConvention conv = MseConvention::kRoot) {
    if (results.empty()) throw ValidationError("mae_mse needs at least one video");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (const auto& r : results) {
        const double e = static_cast<double>(r.ground_truth - r.predicted);
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double k = static_cast<double>(results.size());
    const double mean_sq = sq_sum / k;
    return {abs_sum / k, conv == MseConvention::kRoot ? std::sqrt(mean_sq) : mean_sq};
}

// Percentage. Weights are T_i / sum(T) with the integer total computed exactly
// and the weighted sum accumulated with Kahan compensation.
inline double wrae(const std::vector<VideoResult>& results) {
    if (results.empty()) throw ValidationError("wrae needs at least one video");
    std::int64_t total_len = 0;
    for (const auto& r : results) {
        if (r.ground_truth <= 0)
            throw ValidationError("wrae is undefined for video '" + r.id + "' with zero ground-truth count");
        if (r.length < 1) throw ValidationError("video '" + r.id + "' has non-positive length");
        total_len += r.length;
    }
    double sum = 0.0, comp = 0.0;
    for (const auto& r : results) {
        const double term = (static_cast<double>(r.length) / static_cast<double>(total_len)) *
                            (std::abs(static_cast<double>(r.ground_truth - r.predicted)) /
                             static_cast<double>(r.ground_truth));
        const double y = term - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return sum * 100.0;
}

struct BucketStat {
    std::string label;
    double lower = 0.0;
    double upper = 0.0;  ///< +inf for the last bucket
    int videos = 0;
    double mae = 0.0;
};

inline const std::vector<double>& default_density_bounds() {
    static const std::vector<double> bounds{0.0, 50.0, 100.0, 150.0, 200.0};
    return bounds;
}

// Half-open buckets [b_k, b_{k+1}); the last is unbounded. Empty buckets are omitted.
inline std::vector<BucketStat> density_breakdown(const std::vector<VideoResult>& results,
                                                 const std::vector<double>& bounds = default_density_bounds()) {
    for (std::size_t k = 1; k < bounds.size(); ++k)
        if (!(bounds[k] > bounds[k - 1])) throw ConfigError("density bucket bounds must be strictly increasing");
    std::vector<BucketStat> out;
    for (std::size_t b = 0; b < bounds.size(); ++b) {
        BucketStat s;
        s.label = "D" + std::to_string(b);
        s.lower = bounds[b];
        s.upper = b + 1 < bounds.size() ? bounds[b + 1] : std::numeric_limits<double>::infinity();
        double abs_sum = 0.0;
        for (const auto& r : results) {
            const double g = static_cast<double>(r.ground_truth);
            if (g >= s.lower && g < s.upper) {
                ++s.videos;
                abs_sum += std::abs(static_cast<double>(r.ground_truth - r.predicted));
            }
        }
        if (s.videos == 0) continue;
        s.mae = abs_sum / s.videos;
        out.push_back(s);
    }
    return out;
}

inline int density_bucket(std::int64_t ground_truth, const std::vector<double>& bounds = default_density_bounds()) {
    int idx = -1;
    for (std::size_t b = 0; b < bounds.size(); ++b)
        if (static_cast<double>(ground_truth) >= bounds[b]) idx = static_cast<int>(b);
    return idx;
}

struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    double wrae = 0.0;
    std::vector<BucketStat> buckets;
    std::vector<VideoResult> videos;
};

inline MetricsReport make_report(const std::vector<VideoResult>& results,
                                 MseConvention conv = MseConvention::kRoot) {
    MetricsReport r;
    const auto mm = mae_mse(results, conv);
    r.mae = mm.mae;
    r.mse = mm.mse;
    r.wrae = wrae(results);
    r.buckets = density_breakdown(results);
    r.videos = results;
    return r;
}

inline nlohmann::json report_json(const MetricsReport& r) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : r.buckets) {
        nlohmann::json j{{"label", b.label}, {"lower", b.lower}, {"videos", b.videos}, {"mae", b.mae}};
        j["upper"] = std::isinf(b.upper) ? nlohmann::json(nullptr) : nlohmann::json(b.upper);
        buckets.push_back(j);
    }
    nlohmann::json videos = nlohmann::json::array();
    for (const auto& v : r.videos)
        videos.push_back({{"id", v.id}, {"predicted", v.predicted}, {"ground_truth", v.ground_truth}, {"length", v.length}});
    return {{"mae", r.mae}, {"mse", r.mse}, {"wrae", r.wrae}, {"density", buckets}, {"videos", videos}};
}

// One row per video followed by a summary row with id "ALL".
inline std::string report_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "id,predicted,ground_truth,length,abs_error\n";
    for (const auto& v : r.videos)
        os << v.id << ',' << v.predicted << ',' << v.ground_truth << ',' << v.length << ','
           << std::llabs(v.ground_truth - v.predicted) << '\n';
    os << "ALL,mae=" << r.mae << ",mse=" << r.mse << ",wrae=" << r.wrae << ",\n";
    return os.str();
}

// Bar chart of per-bucket MAE.
inline std::string report_svg(const MetricsReport& r) {
    const int w = 420, h = 240, pad = 40;
    double top = 1.0;
    for (const auto& b : r.buckets) top = std::max(top, b.mae);
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<text x=\"" << pad << "\" y=\"20\" font-size=\"12\">MAE per density bucket (WRAE " << r.wrae
       << "%)</text>\n";
    os << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - 10 << "\" y2=\"" << h - pad
       << "\" stroke=\"black\"/>\n";
    const double slot = r.buckets.empty() ? 0.0 : static_cast<double>(w - pad - 10) / r.buckets.size();
    for (std::size_t k = 0; k < r.buckets.size(); ++k) {
        const auto& b = r.buckets[k];
        const double bh = (h - 2.0 * pad) * b.mae / top;
        const double x = pad + slot * k + slot * 0.15;
        os << "<rect x=\"" << x << "\" y=\"" << (h - pad - bh) << "\" width=\"" << slot * 0.7 << "\" height=\"" << bh
           << "\" fill=\"steelblue\"/>\n";
        os << "<text x=\"" << x << "\" y=\"" << h - pad + 14 << "\" font-size=\"11\">" << b.label << "</text>\n";
        os << "<text x=\"" << x << "\" y=\"" << (h - pad - bh - 4) << "\" font-size=\"10\">" << b.mae << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace vic
