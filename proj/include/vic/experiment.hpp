#pragma once

// Video-level prediction, the synthetic benchmark presets, and the paired
// O2M-vs-O2O comparison and ablation harnesses.

#include "vic/baselines.hpp"
#include "vic/core.hpp"
#include "vic/dataset.hpp"
#include "vic/metrics.hpp"
#include "vic/model.hpp"
#include "vic/ompm.hpp"
#include "vic/simulator.hpp"
#include "vic/training.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace vic {

struct EvalOptions {
    double sigma = 3.0;
    double tau = 0.5;
    int k = 5;
    CountMode count_mode = CountMode::kDedup;
    bool oracle = false;  ///< report ground truth as the prediction

    void validate() const {
        if (!(sigma > 0)) throw ConfigError("sigma must be positive");
        if (!(tau > 0 && tau < 1)) throw ConfigError("tau must lie in (0,1)");
        if (k < 1) throw ConfigError("k must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const EvalOptions& o) {
    j = {{"sigma", o.sigma}, {"tau", o.tau}, {"k", o.k}, {"count_mode", to_string(o.count_mode)}, {"oracle", o.oracle}};
}

inline void from_json(const nlohmann::json& j, EvalOptions& o) {
    const EvalOptions d;
    o.sigma = j.value("sigma", d.sigma);
    o.tau = j.value("tau", d.tau);
    o.k = j.value("k", d.k);
    o.count_mode = parse_count_mode(j.value("count_mode", to_string(d.count_mode)));
    o.oracle = j.value("oracle", d.oracle);
}

struct VideoPrediction {
    VideoResult result;
    nlohmann::json pairs = nlohmann::json::array();
};

struct EvalRun {
    MetricsReport report;
    std::vector<VideoPrediction> videos;
};

inline VideoResult truth_of(const VideoSequence& seq, double sigma) {
    const auto gt = ground_truth_summary(seq, sigma);
    return {seq.id, gt.unique_total, gt.unique_total, std::max(1, gt.sampled_frames)};
}

// N_0 + sum of predicted inflows over the sigma-sampled pairs.
template <class PairCounter>
VideoPrediction predict_with(const VideoSequence& seq, double sigma, PairCounter&& counter) {
    VideoPrediction out;
    const auto pos = sample_frame_positions(seq, sigma);
    if (pos.empty()) throw ValidationError("sequence '" + seq.id + "' has no frames");
    std::vector<int> inflows;
    for (std::size_t k = 1; k < pos.size(); ++k) {
        const Frame& prev = seq.frames[pos[k - 1]];
        const Frame& curr = seq.frames[pos[k]];
        nlohmann::json rec;
        const FlowCounts c = counter(prev, curr, rec);
        inflows.push_back(c.inflow);
        out.pairs.push_back(std::move(rec));
    }
    out.result.id = seq.id;
    out.result.predicted = aggregate_video(static_cast<int>(seq.frames[pos.front()].size()), inflows);
    out.result.length = static_cast<std::int64_t>(pos.size());
    return out;
}

inline VideoPrediction predict_video(const ModelParams& model, const VideoSequence& seq, const EvalOptions& opt) {
    return predict_with(seq, opt.sigma, [&](const Frame& prev, const Frame& curr, nlohmann::json& rec) {
        const auto m = static_cast<Eigen::Index>(prev.size()), n = static_cast<Eigen::Index>(curr.size());
        const MatchProbabilities probs = predict_pair(model, prev, curr);
        const FlowCounts c = count_flows(probs, m, n, opt.count_mode, opt.tau);
        rec = pair_record_json(prev.timestamp, curr.timestamp, c, m, n);
        rec["matches"] = decode_matches(probs, opt.tau, opt.k).m.sum();
        return c;
    });
}

// Hungarian O2O baseline on the raw appearance descriptors.
inline VideoPrediction o2o_video(const VideoSequence& seq, double sigma, double threshold) {
    return predict_with(seq, sigma, [&](const Frame& prev, const Frame& curr, nlohmann::json& rec) {
        const auto m = static_cast<Eigen::Index>(prev.size()), n = static_cast<Eigen::Index>(curr.size());
        const int d = static_cast<int>(seq.descriptor_dim());
        const Matrix fp = frame_descriptors(prev, d), fc = frame_descriptors(curr, d);
        const O2OResult r = o2o_match(fp, fc, threshold);
        rec = pair_record_json(prev.timestamp, curr.timestamp, r.counts, m, n);
        return r.counts;
    });
}

inline EvalRun finish_run(std::vector<VideoPrediction> videos, const std::vector<VideoSequence>& dataset,
                          double sigma) {
    EvalRun run;
    std::vector<VideoResult> results;
    for (std::size_t v = 0; v < videos.size(); ++v) {
        videos[v].result.ground_truth = truth_of(dataset[v], sigma).ground_truth;
        results.push_back(videos[v].result);
    }
    run.report = make_report(results);
    run.videos = std::move(videos);
    return run;
}

inline EvalRun evaluate_model(const ModelParams& model, const std::vector<VideoSequence>& dataset,
                              const EvalOptions& opt) {
    opt.validate();
    std::vector<VideoPrediction> videos(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t v) {
        if (opt.oracle) {
            videos[v].result = truth_of(dataset[v], opt.sigma);
        } else {
            videos[v] = predict_video(model, dataset[v], opt);
        }
    });
    return finish_run(std::move(videos), dataset, opt.sigma);
}

inline EvalRun evaluate_o2o(const std::vector<VideoSequence>& dataset, double sigma, double threshold) {
    std::vector<VideoPrediction> videos(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t v) { videos[v] = o2o_video(dataset[v], sigma, threshold); });
    return finish_run(std::move(videos), dataset, sigma);
}

// ---------------------------------------------------------------------------
// Presets

struct BenchmarkOptions {
    int videos = 20;
    int num_frames = 60;
    double occlusion_dropout = 0.2;
    double group_feature_corr = 0.8;
    double sigma = 3.0;
    int descriptor_dim = 32;
    int max_attempts = 40;
};

inline void to_json(nlohmann::json& j, const BenchmarkOptions& o) {
    j = {{"videos", o.videos},
         {"num_frames", o.num_frames},
         {"occlusion_dropout", o.occlusion_dropout},
         {"group_feature_corr", o.group_feature_corr},
         {"sigma", o.sigma},
         {"descriptor_dim", o.descriptor_dim},
         {"max_attempts", o.max_attempts}};
}

inline void from_json(const nlohmann::json& j, BenchmarkOptions& o) {
    const BenchmarkOptions d;
    o.videos = j.value("videos", d.videos);
    o.num_frames = j.value("num_frames", d.num_frames);
    o.occlusion_dropout = j.value("occlusion_dropout", d.occlusion_dropout);
    o.group_feature_corr = j.value("group_feature_corr", d.group_feature_corr);
    o.sigma = j.value("sigma", d.sigma);
    o.descriptor_dim = j.value("descriptor_dim", d.descriptor_dim);
    o.max_attempts = j.value("max_attempts", d.max_attempts);
}

// Simulator settings for a video whose unique count should land near target.
inline SimConfig preset_video_config(const BenchmarkOptions& o, double target, std::uint64_t seed) {
    SimConfig c;
    c.num_frames = o.num_frames;
    c.occlusion_dropout = o.occlusion_dropout;
    c.group_feature_corr = o.group_feature_corr;
    c.descriptor_dim = o.descriptor_dim;
    c.initial_groups = std::max(1, static_cast<int>(std::lround(target / 25.0)));
    const double mean_group = 0.5 * (c.group_size_min + c.group_size_max);
    const double arrivals = std::max(0.0, target / mean_group - c.initial_groups);
    c.group_rate = arrivals / (c.num_frames / c.fps);
    c.seed = seed;
    return c;
}

// Videos are spread evenly over the density buckets. The arrival rate is swept
// per video; a draw whose unique count misses its bucket is redrawn with a
// rate rescaled toward the bucket centre.
inline std::vector<SimConfig> benchmark_configs(std::uint64_t seed, const BenchmarkOptions& o = {}) {
    static constexpr std::array<double, 5> lower{0, 50, 100, 150, 200};
    static constexpr std::array<double, 5> upper{50, 100, 150, 200, 250};
    std::vector<SimConfig> out;
    for (int v = 0; v < o.videos; ++v) {
        const std::size_t b = static_cast<std::size_t>(v) % lower.size();
        const int slot = v / static_cast<int>(lower.size());
        const int per_bucket = (o.videos + static_cast<int>(lower.size()) - 1 - static_cast<int>(b)) /
                               static_cast<int>(lower.size());
        const double width = upper[b] - lower[b];
        const double target = lower[b] + width * (slot + 0.5) / std::max(1, per_bucket);
        Rng rng = make_rng(seed, "bench.video", static_cast<std::uint64_t>(v));
        SimConfig c = preset_video_config(o, target, rng());
        bool placed = false;
        for (int attempt = 0; attempt < o.max_attempts; ++attempt) {
            const int total = ground_truth_total(generate(c), o.sigma);
            if (total >= lower[b] && total < upper[b]) {
                placed = true;
                break;
            }
            const double scale = std::clamp(target / std::max(1, total), 0.5, 2.0);
            c.group_rate *= scale;
            c.seed = rng();
        }
        if (!placed) throw ValidationError("benchmark preset could not place video " + std::to_string(v));
        out.push_back(c);
    }
    return out;
}

inline std::vector<VideoSequence> generate_all(const std::vector<SimConfig>& configs) {
    std::vector<VideoSequence> out(configs.size());
    parallel_for(configs.size(), [&](std::size_t k) {
        out[k] = generate(configs[k]);
        out[k].id = "v" + std::to_string(k) + "-" + out[k].id;
    });
    return out;
}

// Training data: same appearance model and density range as the benchmark,
// drawn from a separate stream.
inline std::vector<SimConfig> training_configs(std::uint64_t seed, int videos = 20, const BenchmarkOptions& o = {}) {
    std::vector<SimConfig> out;
    for (int v = 0; v < videos; ++v) {
        const double target = 25.0 + 200.0 * v / std::max(1, videos - 1);
        out.push_back(preset_video_config(o, target, make_rng(seed, "train.video", static_cast<std::uint64_t>(v))()));
    }
    return out;
}

// Model and training settings used by the comparison and ablation harnesses.
struct ExperimentPreset {
    BenchmarkOptions bench;
    ModelConfig model;
    TrainConfig train;
    int train_videos = 20;
    std::vector<double> o2o_thresholds{0.3, 0.5, 0.7};
    EvalOptions eval;
};

inline ExperimentPreset default_experiment() {
    ExperimentPreset p;
    p.model.n_max = 128;
    p.train.lr_backbone = 0.003;
    p.train.lr_head = 0.03;
    p.train.epochs = 30;
    p.train.batch_pairs = 4;
    p.train.max_pairs_per_epoch = 200;
    // simulated groups are ~0.03 wide; a 0.2 ball would merge neighbouring groups
    p.train.group_radius = 0.06;
    p.train.kl_weight = 0.005;  // at weight 1 the KL term collapses predictions toward 0
    return p;
}

inline void to_json(nlohmann::json& j, const ExperimentPreset& p) {
    j = {{"bench", p.bench},           {"model", p.model},
         {"train", p.train},           {"train_videos", p.train_videos},
         {"o2o_thresholds", p.o2o_thresholds}, {"eval", p.eval}};
}

inline void from_json(const nlohmann::json& j, ExperimentPreset& p) {
    const ExperimentPreset d = default_experiment();
    p.bench = j.contains("bench") ? j.at("bench").get<BenchmarkOptions>() : d.bench;
    p.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
    p.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
    p.train_videos = j.value("train_videos", d.train_videos);
    p.o2o_thresholds = j.value("o2o_thresholds", d.o2o_thresholds);
    p.eval = j.contains("eval") ? j.at("eval").get<EvalOptions>() : d.eval;
}

// ---------------------------------------------------------------------------
// Paired runs

struct SeedData {
    std::vector<VideoSequence> train;
    std::vector<VideoSequence> bench;
};

inline SeedData make_seed_data(const ExperimentPreset& p, std::uint64_t seed) {
    return {generate_all(training_configs(seed, p.train_videos, p.bench)), generate_all(benchmark_configs(seed, p.bench))};
}

struct ComparisonRow {
    std::uint64_t seed = 0;
    double model_wrae = 0.0;
    double o2o_wrae = 0.0;  ///< best over the threshold sweep
    double o2o_threshold = 0.0;
    std::vector<double> o2o_sweep;
};

inline ComparisonRow compare_seed(const ExperimentPreset& p, std::uint64_t seed, const SeedData& data) {
    ComparisonRow row;
    row.seed = seed;
    TrainConfig tc = p.train;
    tc.seed = seed;
    const TrainResult tr = train(data.train, tc, p.model);
    row.model_wrae = evaluate_model(tr.params, data.bench, p.eval).report.wrae;
    row.o2o_wrae = std::numeric_limits<double>::infinity();
    for (double thr : p.o2o_thresholds) {
        const double w = evaluate_o2o(data.bench, p.eval.sigma, thr).report.wrae;
        row.o2o_sweep.push_back(w);
        if (w < row.o2o_wrae) {
            row.o2o_wrae = w;
            row.o2o_threshold = thr;
        }
    }
    return row;
}

struct AblationVariant {
    std::string name;
    bool icg_on, ompm_on, kl_on;
};

// Row structure of the component ablation: baseline matcher alone, each
// module alone, both modules, then the full objective.
inline std::vector<AblationVariant> ablation_grid() {
    return {{"none", false, false, false},
            {"icg", true, false, false},
            {"ompm", false, true, false},
            {"icg+ompm", true, true, false},
            {"full", true, true, true}};
}

inline double variant_wrae(const ExperimentPreset& p, std::uint64_t seed, const SeedData& data, bool icg_on,
                           bool ompm_on, bool kl_on, int mlp_depth) {
    TrainConfig tc = p.train;
    tc.seed = seed;
    tc.icg_on = icg_on;
    tc.ompm_on = ompm_on;
    tc.kl_on = kl_on;
    tc.mlp_depth = mlp_depth;
    const TrainResult tr = train(data.train, tc, p.model);
    return evaluate_model(tr.params, data.bench, p.eval).report.wrae;
}

inline nlohmann::json eval_run_json(const EvalRun& run) {
    nlohmann::json j = report_json(run.report);
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& v : run.videos) pairs[v.result.id] = v.pairs;
    j["pairs"] = pairs;
    return j;
}

}  // namespace vic
