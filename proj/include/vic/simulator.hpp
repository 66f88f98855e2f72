#pragma once

// Synthetic pedestrian flow: groups enter through the arena boundary, walk
// with a shared velocity, and carry group-correlated appearance descriptors.

#include "vic/core.hpp"
#include "vic/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace vic {

struct SimConfig {
    int num_frames = 60;
    double fps = 1.0;
    int group_size_min = 1;
    int group_size_max = 4;
    double group_rate = 0.3;     ///< expected new groups per second
    int initial_groups = 6;      ///< groups already inside the arena at t=0
    int max_groups = 0;          ///< cap on groups ever created; 0 = unlimited
    double speed_min = 0.03;     ///< arena units per second
    double speed_max = 0.06;
    double direction_jitter = 0.1;  ///< heading std, radians per sqrt(second)
    double group_radius = 0.03;     ///< member offsets are drawn inside this disk
    double member_jitter = 0.003;   ///< per-frame uniform positional jitter, per axis
    int descriptor_dim = 32;
    double group_feature_corr = 0.8;
    double appearance_noise = 0.1;
    double occlusion_dropout = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        const auto req = [](bool ok, const char* what) {
            if (!ok) throw ConfigError(std::string("invalid simulator config: ") + what);
        };
        req(num_frames >= 1, "num_frames >= 1");
        req(fps > 0, "fps > 0");
        req(group_size_min >= 1 && group_size_min <= group_size_max, "1 <= group_size_min <= group_size_max");
        req(group_rate >= 0, "group_rate >= 0");
        req(initial_groups >= 0 && max_groups >= 0, "group counts >= 0");
        req(speed_min >= 0 && speed_min <= speed_max && speed_max > 0, "0 <= speed_min <= speed_max, speed_max > 0");
        req(direction_jitter >= 0 && group_radius >= 0 && member_jitter >= 0, "jitter/radius >= 0");
        req(group_radius + member_jitter < 0.5, "group_radius + member_jitter < 0.5");
        req(descriptor_dim >= 1, "descriptor_dim >= 1");
        req(group_feature_corr >= 0 && group_feature_corr <= 1, "group_feature_corr in [0,1]");
        req(appearance_noise >= 0, "appearance_noise >= 0");
        req(occlusion_dropout >= 0 && occlusion_dropout < 1, "occlusion_dropout in [0,1)");
    }

    // Largest displacement one pedestrian can show between consecutive frames.
    double max_step() const { return speed_max / fps + 2.0 * std::sqrt(2.0) * member_jitter; }
};

inline void to_json(nlohmann::json& j, const SimConfig& c) {
    j = nlohmann::json{{"num_frames", c.num_frames},
                       {"fps", c.fps},
                       {"group_size_min", c.group_size_min},
                       {"group_size_max", c.group_size_max},
                       {"group_rate", c.group_rate},
                       {"initial_groups", c.initial_groups},
                       {"max_groups", c.max_groups},
                       {"speed_min", c.speed_min},
                       {"speed_max", c.speed_max},
                       {"direction_jitter", c.direction_jitter},
                       {"group_radius", c.group_radius},
                       {"member_jitter", c.member_jitter},
                       {"descriptor_dim", c.descriptor_dim},
                       {"group_feature_corr", c.group_feature_corr},
                       {"appearance_noise", c.appearance_noise},
                       {"occlusion_dropout", c.occlusion_dropout},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
    const SimConfig d;
    c.num_frames = j.value("num_frames", d.num_frames);
    c.fps = j.value("fps", d.fps);
    c.group_size_min = j.value("group_size_min", d.group_size_min);
    c.group_size_max = j.value("group_size_max", d.group_size_max);
    c.group_rate = j.value("group_rate", d.group_rate);
    c.initial_groups = j.value("initial_groups", d.initial_groups);
    c.max_groups = j.value("max_groups", d.max_groups);
    c.speed_min = j.value("speed_min", d.speed_min);
    c.speed_max = j.value("speed_max", d.speed_max);
    c.direction_jitter = j.value("direction_jitter", d.direction_jitter);
    c.group_radius = j.value("group_radius", d.group_radius);
    c.member_jitter = j.value("member_jitter", d.member_jitter);
    c.descriptor_dim = j.value("descriptor_dim", d.descriptor_dim);
    c.group_feature_corr = j.value("group_feature_corr", d.group_feature_corr);
    c.appearance_noise = j.value("appearance_noise", d.appearance_noise);
    c.occlusion_dropout = j.value("occlusion_dropout", d.occlusion_dropout);
    c.seed = j.value("seed", d.seed);
}

namespace detail {

inline Vector random_unit(Rng& rng, int dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vector v(dim);
    for (int k = 0; k < dim; ++k) v[k] = n(rng);
    const double norm = v.norm();
    return norm > 0 ? Vector(v / norm) : v;
}

inline bool inside_arena(double x, double y) { return x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0; }

}  // namespace detail

inline VideoSequence generate(const SimConfig& cfg) {
    cfg.validate();
    constexpr double kPi = std::numbers::pi;

    Rng kin = make_rng(cfg.seed, "sim.kinematics");
    Rng app = make_rng(cfg.seed, "sim.appearance");
    Rng occ = make_rng(cfg.seed, "sim.occlusion");
    Rng order = make_rng(cfg.seed, "sim.order");

    enum class State { kPending, kActive, kGone };
    struct Ped {
        std::int64_t id;
        double dx, dy;
        Vector individual;
        State state = State::kPending;
    };
    struct Group {
        std::int64_t id;
        double cx, cy, heading, speed;
        Vector anchor;
        std::vector<Ped> members;
    };

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double dt = 1.0 / cfg.fps;

    VideoSequence seq;
    seq.id = "sim-" + std::to_string(cfg.seed);
    seq.fps = cfg.fps;

    std::vector<Group> groups;
    std::int64_t next_pid = 0, next_gid = 0;

    const auto make_group = [&](double cx, double cy, double heading) {
        Group g;
        g.id = next_gid++;
        g.cx = cx;
        g.cy = cy;
        g.heading = heading;
        g.speed = cfg.speed_min + (cfg.speed_max - cfg.speed_min) * unit(kin);
        g.anchor = detail::random_unit(app, cfg.descriptor_dim);
        const int size = std::uniform_int_distribution<int>(cfg.group_size_min, cfg.group_size_max)(kin);
        for (int k = 0; k < size; ++k) {
            const double r = cfg.group_radius * std::sqrt(unit(kin));
            const double a = 2.0 * kPi * unit(kin);
            Ped p{next_pid++, r * std::cos(a), r * std::sin(a), detail::random_unit(app, cfg.descriptor_dim)};
            seq.groups[p.id] = g.id;
            g.members.push_back(std::move(p));
        }
        groups.push_back(std::move(g));
    };
    const auto can_spawn = [&] { return cfg.max_groups == 0 || next_gid < cfg.max_groups; };

    for (int k = 0; k < cfg.initial_groups && can_spawn(); ++k) {
        const double cx = 0.1 + 0.8 * unit(kin), cy = 0.1 + 0.8 * unit(kin);
        make_group(cx, cy, 2.0 * kPi * unit(kin));
    }

    for (int fi = 0; fi < cfg.num_frames; ++fi) {
        if (fi > 0) {
            for (auto& g : groups) {
                g.heading += cfg.direction_jitter * std::sqrt(dt) * gauss(kin);
                g.cx += g.speed * dt * std::cos(g.heading);
                g.cy += g.speed * dt * std::sin(g.heading);
            }
            const int spawns = std::poisson_distribution<int>(cfg.group_rate * dt)(kin);
            for (int s = 0; s < spawns && can_spawn(); ++s) {
                const int side = std::uniform_int_distribution<int>(0, 3)(kin);
                const double u = unit(kin);
                const double spread = (unit(kin) - 0.5) * (2.0 * kPi / 3.0);
                // Inward normals: left, right, bottom, top.
                static constexpr double kInward[4] = {0.0, kPi, kPi / 2.0, -kPi / 2.0};
                // Centre placed just inside the border so the whole group enters in one frame.
                const double mg = cfg.group_radius + cfg.member_jitter + 1e-9;
                const double along = mg + (1.0 - 2.0 * mg) * u;
                const double cx = side == 0 ? mg : side == 1 ? 1.0 - mg : along;
                const double cy = side == 2 ? mg : side == 3 ? 1.0 - mg : along;
                make_group(cx, cy, kInward[side] + spread);
            }
        }

        Frame frame;
        frame.index = fi;
        frame.timestamp = fi * dt;
        std::uniform_real_distribution<double> jit(-cfg.member_jitter, cfg.member_jitter);
        for (auto& g : groups) {
            for (auto& p : g.members) {
                if (p.state == State::kGone) continue;
                const double x = g.cx + p.dx + jit(kin);
                const double y = g.cy + p.dy + jit(kin);
                const bool in = detail::inside_arena(x, y);
                if (p.state == State::kPending && in) p.state = State::kActive;
                if (p.state == State::kActive && !in) p.state = State::kGone;
                if (p.state != State::kActive) continue;

                Vector noise(cfg.descriptor_dim);
                for (int c = 0; c < cfg.descriptor_dim; ++c) noise[c] = gauss(app);
                Vector f = cfg.group_feature_corr * g.anchor + (1.0 - cfg.group_feature_corr) * p.individual +
                           (cfg.appearance_noise / std::sqrt(static_cast<double>(cfg.descriptor_dim))) * noise;
                const double norm = f.norm();
                if (norm > 0) f /= norm;

                // Always draw so the occlusion stream stays aligned across q.
                const bool occluded = unit(occ) < cfg.occlusion_dropout;
                if (occluded) continue;
                PedestrianObservation o;
                o.identity = p.id;
                o.x = x;
                o.y = y;
                o.descriptor = std::move(f);
                frame.observations.push_back(std::move(o));
            }
        }
        std::shuffle(frame.observations.begin(), frame.observations.end(), order);
        seq.frames.push_back(std::move(frame));

        // Groups whose center drifted well outside never show members again.
        std::erase_if(groups, [](const Group& g) {
            return g.cx < -0.25 || g.cx > 1.25 || g.cy < -0.25 || g.cy > 1.25;
        });
    }
    return seq;
}

struct DescriptorStats {
    double within_mean = 0.0;
    double between_mean = 0.0;
    long within_pairs = 0;
    long between_pairs = 0;
};

// Mean cosine similarity between distinct pedestrians of one frame, split by
// whether they belong to the same group.
inline DescriptorStats descriptor_stats(const VideoSequence& seq) {
    if (seq.groups.empty()) throw ValidationError("sequence '" + seq.id + "' carries no group metadata");
    DescriptorStats s;
    double within = 0.0, between = 0.0;
    for (const auto& f : seq.frames) {
        for (std::size_t a = 0; a < f.size(); ++a) {
            const auto& oa = f.observations[a];
            if (!oa.identity || !oa.has_descriptor()) continue;
            const auto ga = seq.groups.find(*oa.identity);
            if (ga == seq.groups.end()) continue;
            for (std::size_t b = a + 1; b < f.size(); ++b) {
                const auto& ob = f.observations[b];
                if (!ob.identity || !ob.has_descriptor()) continue;
                const auto gb = seq.groups.find(*ob.identity);
                if (gb == seq.groups.end()) continue;
                const double c = oa.descriptor.dot(ob.descriptor) / (oa.descriptor.norm() * ob.descriptor.norm());
                if (ga->second == gb->second) {
                    within += c;
                    ++s.within_pairs;
                } else {
                    between += c;
                    ++s.between_pairs;
                }
            }
        }
    }
    s.within_mean = s.within_pairs ? within / static_cast<double>(s.within_pairs) : std::nan("");
    s.between_mean = s.between_pairs ? between / static_cast<double>(s.between_pairs) : std::nan("");
    return s;
}

}  // namespace vic
