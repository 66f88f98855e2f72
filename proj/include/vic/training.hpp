#pragma once

// Optimization loop, finite-difference gradient verification, checkpoints
// and loss curves.

#include "vic/core.hpp"
#include "vic/dataset.hpp"
#include "vic/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace vic {

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
    Optimizer optimizer = Optimizer::kSgd;
    double lr_backbone = 0.005;  ///< featurizer
    double lr_head = 0.05;       ///< ICG, context projection and MLP
    double momentum = 0.9;       ///< SGD momentum; Adam beta1
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double grad_clip = 5.0;      ///< global gradient-norm cap per step; 0 disables
    bool cosine_anneal = false;  ///< scale both learning rates by 0.5 (1 + cos(pi t / T)) over all steps
    int epochs = 10;
    int batch_pairs = 4;
    int max_pairs_per_epoch = 0;  ///< 0 = every training pair
    double sigma = 3.0;
    double group_radius = 0.2;
    GroupAnchor anchor = GroupAnchor::kCurr;
    bool icg_on = true;
    bool ompm_on = true;
    bool kl_on = true;
    int mlp_depth = 3;
    double kl_weight = 1.0;
    int kl_bins = 20;
    double kl_epsilon = 1e-8;
    double sinkhorn_epsilon = 0.1;
    int sinkhorn_max_iter = 50;
    double sinkhorn_tol = 1e-6;
    double lambda_neg = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr_backbone > 0 && lr_head > 0)) throw ConfigError("learning rates must be positive");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
        if (epochs < 0 || batch_pairs < 1) throw ConfigError("epochs >= 0 and batch_pairs >= 1 required");
        if (mlp_depth < 1) throw ConfigError("mlp_depth must be >= 1");
        if (!(sigma > 0)) throw ConfigError("sigma must be positive");
        if (!(kl_weight >= 0)) throw ConfigError("kl_weight must be non-negative");
    }

    LossOptions loss_options() const {
        LossOptions o;
        o.group_radius = group_radius;
        o.anchor = anchor;
        o.kl_on = kl_on;
        o.kl_weight = kl_weight;
        o.kl = KlConfig{kl_bins, kl_epsilon, Binning::kSoft};
        o.ot.sinkhorn = SinkhornConfig{sinkhorn_epsilon, sinkhorn_max_iter, sinkhorn_tol};
        o.ot.lambda_neg = lambda_neg;
        return o;
    }

    // Folds the ablation switches and depth into a model configuration.
    ModelConfig apply(ModelConfig mc) const {
        mc.icg_on = icg_on;
        mc.ompm_on = ompm_on;
        mc.mlp_depth = mlp_depth;
        return mc;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"optimizer", c.optimizer == Optimizer::kSgd ? "sgd" : "adam"},
                       {"lr_backbone", c.lr_backbone},
                       {"lr_head", c.lr_head},
                       {"momentum", c.momentum},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_epsilon", c.adam_epsilon},
                       {"grad_clip", c.grad_clip},
                       {"cosine_anneal", c.cosine_anneal},
                       {"epochs", c.epochs},
                       {"batch_pairs", c.batch_pairs},
                       {"max_pairs_per_epoch", c.max_pairs_per_epoch},
                       {"sigma", c.sigma},
                       {"group_radius", c.group_radius},
                       {"anchor", c.anchor == GroupAnchor::kCurr ? "curr" : "prev"},
                       {"icg_on", c.icg_on},
                       {"ompm_on", c.ompm_on},
                       {"kl_on", c.kl_on},
                       {"mlp_depth", c.mlp_depth},
                       {"kl_weight", c.kl_weight},
                       {"kl_bins", c.kl_bins},
                       {"kl_epsilon", c.kl_epsilon},
                       {"sinkhorn_epsilon", c.sinkhorn_epsilon},
                       {"sinkhorn_max_iter", c.sinkhorn_max_iter},
                       {"sinkhorn_tol", c.sinkhorn_tol},
                       {"lambda_neg", c.lambda_neg},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    const std::string opt = j.value("optimizer", std::string("sgd"));
    if (opt != "sgd" && opt != "adam") throw ConfigError("optimizer must be 'sgd' or 'adam'");
    c.optimizer = opt == "sgd" ? Optimizer::kSgd : Optimizer::kAdam;
    c.lr_backbone = j.value("lr_backbone", d.lr_backbone);
    c.lr_head = j.value("lr_head", d.lr_head);
    c.momentum = j.value("momentum", d.momentum);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.cosine_anneal = j.value("cosine_anneal", d.cosine_anneal);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_pairs = j.value("batch_pairs", d.batch_pairs);
    c.max_pairs_per_epoch = j.value("max_pairs_per_epoch", d.max_pairs_per_epoch);
    c.sigma = j.value("sigma", d.sigma);
    c.group_radius = j.value("group_radius", d.group_radius);
    const std::string anchor = j.value("anchor", std::string("curr"));
    if (anchor != "curr" && anchor != "prev") throw ConfigError("anchor must be 'curr' or 'prev'");
    c.anchor = anchor == "curr" ? GroupAnchor::kCurr : GroupAnchor::kPrev;
    c.icg_on = j.value("icg_on", d.icg_on);
    c.ompm_on = j.value("ompm_on", d.ompm_on);
    c.kl_on = j.value("kl_on", d.kl_on);
    c.mlp_depth = j.value("mlp_depth", d.mlp_depth);
    c.kl_weight = j.value("kl_weight", d.kl_weight);
    c.kl_bins = j.value("kl_bins", d.kl_bins);
    c.kl_epsilon = j.value("kl_epsilon", d.kl_epsilon);
    c.sinkhorn_epsilon = j.value("sinkhorn_epsilon", d.sinkhorn_epsilon);
    c.sinkhorn_max_iter = j.value("sinkhorn_max_iter", d.sinkhorn_max_iter);
    c.sinkhorn_tol = j.value("sinkhorn_tol", d.sinkhorn_tol);
    c.lambda_neg = j.value("lambda_neg", d.lambda_neg);
    c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// Training pairs

// Pairs at interval sigma starting from every frame inside the first sigma
// seconds, so each offset of the sampling grid contributes.
inline std::vector<FramePair> training_pairs(const VideoSequence& seq, double sigma) {
    std::vector<FramePair> out;
    if (seq.frames.empty()) return out;
    const double t0 = seq.frames.front().timestamp;
    for (std::size_t s = 0; s < seq.frames.size() && seq.frames[s].timestamp - t0 < sigma - 1e-9; ++s) {
        VideoSequence view;
        view.frames.assign(seq.frames.begin() + static_cast<std::ptrdiff_t>(s), seq.frames.end());
        const auto pos = sample_frame_positions(view, sigma);
        for (std::size_t k = 1; k < pos.size(); ++k)
            out.push_back({&seq.frames[s + pos[k - 1]], &seq.frames[s + pos[k]]});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter arithmetic

inline void add_scaled(ModelParams& dst, const ModelParams& src, double scale = 1.0) {
    std::vector<const Matrix*> from;
    src.visit([&](const std::string&, const char*, const Matrix& m) { from.push_back(&m); });
    std::size_t k = 0;
    dst.visit([&](const std::string&, const char*, Matrix& m) { m += scale * *from[k++]; });
}

inline double squared_norm(const ModelParams& p) {
    double s = 0.0;
    p.visit([&](const std::string&, const char*, const Matrix& m) { s += m.squaredNorm(); });
    return s;
}

// Runs fn(k) for k in [0, count) on up to VIC_THREADS threads.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const unsigned threads = std::min<unsigned>(thread_cap(), static_cast<unsigned>(std::max<std::size_t>(count, 1)));
    if (threads <= 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t k = t; k < count; k += threads) fn(k);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Mean loss (and optionally mean gradient) over pairs. Per-pair gradients are
// reduced in pair order so the result does not depend on the thread count.
inline LossBreakdown batch_loss(const ModelParams& model, const std::vector<FramePair>& pairs, const LossOptions& opt,
                                ModelParams* grad) {
    std::vector<LossBreakdown> parts(pairs.size());
    std::vector<ModelParams> grads(grad ? pairs.size() : 0);
    const double w = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t k) {
        ModelParams* g = nullptr;
        if (grad) {
            grads[k] = model.zeros_like();
            g = &grads[k];
        }
        parts[k] = pair_loss(model, *pairs[k].prev, *pairs[k].curr, opt, g, w);
    });
    LossBreakdown total;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        total += parts[k];
        if (grad) add_scaled(*grad, grads[k]);
    }
    if (!pairs.empty()) {
        total.l_ot *= w;
        total.l_cls *= w;
        total.l_kl *= w;
        total.l_total *= w;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Training

class DivergedError : public TrainingError {
public:
    DivergedError(const std::string& what, std::shared_ptr<const ModelParams> last_good)
        : TrainingError(what), last_good_(std::move(last_good)) {}
    const ModelParams& last_good() const { return *last_good_; }

private:
    std::shared_ptr<const ModelParams> last_good_;
};

struct TrainResult {
    ModelParams params;
    std::vector<LossBreakdown> curve;  ///< mean training loss per epoch
    LossBreakdown final_eval;          ///< loss of the final parameters over all training pairs
    long steps = 0;
};

inline TrainResult train(const std::vector<VideoSequence>& dataset, const TrainConfig& cfg,
                         const ModelConfig& model_cfg = {}) {
    cfg.validate();
    std::vector<FramePair> pairs;
    for (const auto& seq : dataset) {
        if (!seq.fully_labeled())
            throw LabelingError("sequence '" + seq.id + "' lacks identity labels; training needs labelled data");
        for (const auto& p : training_pairs(seq, cfg.sigma))
            if (p.prev->size() > 0 && p.curr->size() > 0) pairs.push_back(p);
    }
    const LossOptions opt = cfg.loss_options();
    TrainResult res;
    res.params = init_model(cfg.apply(model_cfg), cfg.seed);
    ModelParams velocity = res.params.zeros_like();
    ModelParams second = res.params.zeros_like();  // Adam only
    auto last_good = std::make_shared<const ModelParams>(res.params);
    Rng shuffle_rng = make_rng(cfg.seed, "train.shuffle");
    std::size_t per_epoch = pairs.size();
    if (cfg.max_pairs_per_epoch > 0) per_epoch = std::min(per_epoch, static_cast<std::size_t>(cfg.max_pairs_per_epoch));
    const double total_steps = static_cast<double>(
        cfg.epochs * ((per_epoch + static_cast<std::size_t>(cfg.batch_pairs) - 1) / static_cast<std::size_t>(cfg.batch_pairs)));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<FramePair> order = pairs;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        if (cfg.max_pairs_per_epoch > 0 && order.size() > static_cast<std::size_t>(cfg.max_pairs_per_epoch))
            order.resize(static_cast<std::size_t>(cfg.max_pairs_per_epoch));
        LossBreakdown epoch_sum;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_pairs)) {
            const std::vector<FramePair> batch(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_pairs)));
            ModelParams grad = res.params.zeros_like();
            LossBreakdown parts;
            try {
                parts = batch_loss(res.params, batch, opt, &grad);
            } catch (const TrainingError& e) {
                throw DivergedError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                                    last_good);
            }
            const double gnorm = std::sqrt(squared_norm(grad));
            if (!std::isfinite(gnorm))
                throw DivergedError("non-finite gradient in epoch " + std::to_string(epoch), last_good);
            const double clip = (cfg.grad_clip > 0 && gnorm > cfg.grad_clip) ? cfg.grad_clip / gnorm : 1.0;
            std::vector<Matrix*> vel;
            velocity.visit([&](const std::string&, const char*, Matrix& m) { vel.push_back(&m); });
            std::vector<Matrix*> sec;
            second.visit([&](const std::string&, const char*, Matrix& m) { sec.push_back(&m); });
            std::vector<const Matrix*> g;
            grad.visit([&](const std::string&, const char*, const Matrix& m) { g.push_back(&m); });
            const double t = static_cast<double>(res.steps + 1);
            const double anneal =
                cfg.cosine_anneal ? 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(res.steps) / total_steps))
                                  : 1.0;
            const double bias1 = 1.0 - std::pow(cfg.momentum, t), bias2 = 1.0 - std::pow(cfg.adam_beta2, t);
            std::size_t k = 0;
            res.params.visit([&](const std::string&, const char* group, Matrix& w) {
                const double lr = anneal * (std::string_view(group) == "backbone" ? cfg.lr_backbone : cfg.lr_head);
                Matrix& v = *vel[k];
                if (cfg.optimizer == Optimizer::kSgd) {
                    v = cfg.momentum * v + clip * *g[k];
                    w -= lr * v;
                } else {
                    Matrix& s2 = *sec[k];
                    v = cfg.momentum * v + (1.0 - cfg.momentum) * clip * *g[k];
                    s2 = cfg.adam_beta2 * s2 + (1.0 - cfg.adam_beta2) * (clip * *g[k]).cwiseAbs2();
                    w.array() -= lr * (v.array() / bias1) / ((s2.array() / bias2).sqrt() + cfg.adam_epsilon);
                }
                ++k;
            });
            epoch_sum += parts;
            ++batches;
            ++res.steps;
        }
        if (batches > 0) {
            epoch_sum.l_ot /= batches;
            epoch_sum.l_cls /= batches;
            epoch_sum.l_kl /= batches;
            epoch_sum.l_total /= batches;
        }
        res.curve.push_back(epoch_sum);
        last_good = std::make_shared<const ModelParams>(res.params);
    }
    res.final_eval = batch_loss(res.params, pairs, opt, nullptr);
    return res;
}

inline std::string loss_curve_csv(const std::vector<LossBreakdown>& curve) {
    std::ostringstream os;
    os << std::setprecision(17) << "epoch,l_ot,l_cls,l_kl,l_total\n";
    for (std::size_t e = 0; e < curve.size(); ++e)
        os << e << ',' << curve[e].l_ot << ',' << curve[e].l_cls << ',' << curve[e].l_kl << ',' << curve[e].l_total
           << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
    double max_rel_error = 0.0;
    int coordinates = 0;
    std::map<std::string, double> per_tensor;  ///< max relative error per tensor
    bool passed(double tol = 1e-3) const { return coordinates > 0 && max_rel_error < tol; }
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences on `coords` coordinates spread round-robin over every
// tensor the params visitor exposes. loss(params) must be deterministic.
template <class Params, class LossFn>
GradCheckReport finite_difference_check(Params& params, const Params& analytic, LossFn&& loss, double h, int coords,
                                        std::uint64_t seed) {
    std::vector<std::pair<std::string, Matrix*>> tensors;
    params.visit([&](const std::string& name, const char*, Matrix& m) {
        if (m.size() > 0) tensors.emplace_back(name, &m);
    });
    std::vector<const Matrix*> grads;
    analytic.visit([&](const std::string&, const char*, const Matrix& m) {
        if (m.size() > 0) grads.push_back(&m);
    });
    GradCheckReport rep;
    if (tensors.empty()) return rep;
    Rng rng = make_rng(seed, "gradcheck");
    const int total = std::max<int>(coords, static_cast<int>(tensors.size()));
    for (int c = 0; c < total; ++c) {
        const std::size_t t = static_cast<std::size_t>(c) % tensors.size();
        Matrix& m = *tensors[t].second;
        const auto idx = std::uniform_int_distribution<Eigen::Index>(0, m.size() - 1)(rng);
        const double saved = m.data()[idx];
        m.data()[idx] = saved + h;
        const double up = loss(params);
        m.data()[idx] = saved - h;
        const double down = loss(params);
        m.data()[idx] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = relative_error(grads[t]->data()[idx], numeric);
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        auto& slot = rep.per_tensor[tensors[t].first];
        slot = std::max(slot, err);
        ++rep.coordinates;
    }
    return rep;
}

// Checks the full pipeline gradient of the mean batch loss. Sinkhorn runs a
// fixed number of iterations here so the loss is a smooth function of the
// parameters.
inline GradCheckReport grad_check(const ModelParams& model, const std::vector<FramePair>& batch, LossOptions opt,
                                  double h = 1e-5, int coords = 100, std::uint64_t seed = 0) {
    opt.ot.sinkhorn.tol = 0.0;
    ModelParams work = model;
    ModelParams grad = model.zeros_like();
    batch_loss(work, batch, opt, &grad);
    return finite_difference_check(
        work, grad, [&](const ModelParams& p) { return batch_loss(p, batch, opt, nullptr).l_total; }, h, coords,
        seed);
}

// ---------------------------------------------------------------------------
// Checkpoints

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    TrainConfig train_config;
    long step = 0;
    LossBreakdown final_eval;
};

inline nlohmann::json breakdown_json(const LossBreakdown& b) {
    return {{"l_ot", b.l_ot}, {"l_cls", b.l_cls}, {"l_kl", b.l_kl}, {"l_total", b.l_total}};
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json j;
    j["format"] = "vic-checkpoint";
    j["version"] = kCheckpointVersion;
    j["model_config"] = ck.params.config;
    j["train_config"] = ck.train_config;
    j["seed"] = ck.train_config.seed;
    j["step"] = ck.step;
    j["final_eval"] = breakdown_json(ck.final_eval);
    j["params"] = params_to_json(ck.params);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint '" + path.string() + "'");
    os << j.dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const std::exception& e) {
        throw ParseError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.value("format", std::string()) != "vic-checkpoint") throw VersionError("not a vic checkpoint: " + path.string());
    if (j.value("version", 0) != kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(j.value("version", 0)) + " is not supported");
    Checkpoint ck;
    const ModelConfig mc = j.at("model_config").get<ModelConfig>();
    ck.params = params_from_json(mc, j.at("params"));
    ck.train_config = j.at("train_config").get<TrainConfig>();
    ck.step = j.value("step", 0L);
    const auto& fe = j.at("final_eval");
    ck.final_eval.l_ot = fe.value("l_ot", 0.0);
    ck.final_eval.l_cls = fe.value("l_cls", 0.0);
    ck.final_eval.l_kl = fe.value("l_kl", 0.0);
    ck.final_eval.l_total = fe.value("l_total", 0.0);
    return ck;
}

}  // namespace vic
