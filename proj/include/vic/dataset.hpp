#pragma once

// Annotated video sequences, the JSONL frame format, sigma-interval pair
// sampling and identity-derived inflow/outflow labels.

#include "vic/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace vic {

struct PedestrianObservation {
    std::optional<std::int64_t> identity;
    double x = 0.0;
    double y = 0.0;
    Vector descriptor;  ///< empty when the source provides no descriptor

    bool has_descriptor() const { return descriptor.size() > 0; }
};

struct Frame {
    int index = 0;
    double timestamp = 0.0;
    std::vector<PedestrianObservation> observations;

    std::size_t size() const { return observations.size(); }
    bool fully_labeled() const {
        return std::all_of(observations.begin(), observations.end(),
                           [](const auto& o) { return o.identity.has_value(); });
    }
};

struct VideoSequence {
    std::string id;
    std::vector<Frame> frames;
    double fps = 1.0;
    /// identity -> group id; filled by the simulator or a groups sidecar
    std::map<std::int64_t, std::int64_t> groups;

    std::size_t descriptor_dim() const {
        for (const auto& f : frames)
            for (const auto& o : f.observations) return static_cast<std::size_t>(o.descriptor.size());
        return 0;
    }
    bool fully_labeled() const {
        return std::all_of(frames.begin(), frames.end(), [](const Frame& f) { return f.fully_labeled(); });
    }
};

struct FramePairGT {
    int prev_index = 0;
    int curr_index = 0;
    std::vector<std::pair<int, int>> shared_pairs;  ///< (i in prev, j in curr)
    int inflow_count = 0;
    int outflow_count = 0;
};

// Positions into VideoSequence::frames; valid while the sequence is alive.
struct FramePair {
    const Frame* prev = nullptr;
    const Frame* curr = nullptr;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_sequence(const VideoSequence& seq, std::optional<std::size_t> d_in = std::nullopt) {
    if (seq.frames.empty()) throw ValidationError("sequence '" + seq.id + "' has no frames");
    std::optional<bool> with_desc;
    std::size_t dim = 0;
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        const Frame& f = seq.frames[k];
        if (f.index < 0) throw ValidationError("frame index must be non-negative");
        if (k > 0) {
            if (f.index <= seq.frames[k - 1].index)
                throw ValidationError("frame indices must be strictly increasing (frame " + std::to_string(f.index) + ")");
            if (!(f.timestamp > seq.frames[k - 1].timestamp))
                throw ValidationError("non-monotonic timestamp at frame " + std::to_string(f.index));
        }
        std::set<std::int64_t> ids;
        for (const auto& o : f.observations) {
            if (!(o.x >= 0.0 && o.x <= 1.0 && o.y >= 0.0 && o.y <= 1.0))
                throw ValidationError("position outside [0,1]^2 in frame " + std::to_string(f.index));
            if (o.identity) {
                if (*o.identity < 0) throw ValidationError("negative identity in frame " + std::to_string(f.index));
                if (!ids.insert(*o.identity).second)
                    throw ValidationError("identity " + std::to_string(*o.identity) + " appears twice in frame " +
                                          std::to_string(f.index));
            }
            const bool has = o.has_descriptor();
            if (!with_desc) {
                with_desc = has;
                dim = static_cast<std::size_t>(o.descriptor.size());
            } else if (*with_desc != has) {
                throw ValidationError("descriptors must be uniformly present or absent (frame " +
                                      std::to_string(f.index) + ")");
            } else if (has && static_cast<std::size_t>(o.descriptor.size()) != dim) {
                throw ValidationError("inconsistent descriptor length in frame " + std::to_string(f.index));
            }
        }
    }
    if (d_in && with_desc.value_or(false) && dim != *d_in)
        throw ValidationError("descriptor length " + std::to_string(dim) + " does not match d_in=" +
                              std::to_string(*d_in));
}

// ---------------------------------------------------------------------------
// JSONL I/O

inline nlohmann::json frame_to_json(const Frame& f) {
    nlohmann::json peds = nlohmann::json::array();
    for (const auto& o : f.observations) {
        nlohmann::json p;
        p["id"] = o.identity ? nlohmann::json(*o.identity) : nlohmann::json(nullptr);
        p["x"] = o.x;
        p["y"] = o.y;
        if (o.has_descriptor()) {
            p["f"] = std::vector<double>(o.descriptor.data(), o.descriptor.data() + o.descriptor.size());
        } else {
            p["f"] = nullptr;
        }
        peds.push_back(std::move(p));
    }
    return {{"frame", f.index}, {"t", f.timestamp}, {"peds", std::move(peds)}};
}

inline void write_sequence(std::ostream& os, const VideoSequence& seq) {
    for (const auto& f : seq.frames) os << frame_to_json(f).dump() << '\n';
}

inline void save_sequence(const std::filesystem::path& path, const VideoSequence& seq) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    write_sequence(os, seq);
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline VideoSequence parse_sequence(std::istream& is, std::string id,
                                    std::optional<std::size_t> d_in = std::nullopt) {
    VideoSequence seq;
    seq.id = std::move(id);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fail = [&](const std::string& why) {
            throw ParseError(seq.id + ":" + std::to_string(lineno) + ": " + why);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(std::string("malformed JSON (") + e.what() + ")");
        }
        try {
            Frame f;
            f.index = j.at("frame").get<int>();
            f.timestamp = j.at("t").get<double>();
            for (const auto& p : j.at("peds")) {
                PedestrianObservation o;
                if (p.contains("id") && !p["id"].is_null()) o.identity = p["id"].get<std::int64_t>();
                o.x = p.at("x").get<double>();
                o.y = p.at("y").get<double>();
                if (p.contains("f") && !p["f"].is_null()) {
                    const auto v = p["f"].get<std::vector<double>>();
                    o.descriptor = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
                }
                f.observations.push_back(std::move(o));
            }
            seq.frames.push_back(std::move(f));
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("bad frame record (") + e.what() + ")");
        }
    }
    std::stable_sort(seq.frames.begin(), seq.frames.end(),
                     [](const Frame& a, const Frame& b) { return a.index < b.index; });
    if (seq.frames.size() >= 2) {
        const double span = seq.frames.back().timestamp - seq.frames.front().timestamp;
        if (span > 0) seq.fps = static_cast<double>(seq.frames.size() - 1) / span;
    }
    validate_sequence(seq, d_in);
    return seq;
}

inline std::map<std::int64_t, std::int64_t> load_groups_sidecar(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open groups sidecar '" + path.string() + "'");
    std::map<std::int64_t, std::int64_t> out;
    try {
        const auto j = nlohmann::json::parse(is);
        for (const auto& [k, v] : j.at("groups").items()) out[std::stoll(k)] = v.get<std::int64_t>();
    } catch (const std::exception& e) {
        throw ParseError("bad groups sidecar '" + path.string() + "': " + e.what());
    }
    return out;
}

inline void save_groups_sidecar(const std::filesystem::path& path, const std::map<std::int64_t, std::int64_t>& groups) {
    nlohmann::json g = nlohmann::json::object();
    for (const auto& [id, gid] : groups) g[std::to_string(id)] = gid;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << nlohmann::json{{"groups", g}}.dump() << '\n';
}

inline std::filesystem::path groups_sidecar_path(const std::filesystem::path& jsonl) {
    auto p = jsonl;
    p.replace_extension(".groups.json");
    return p;
}

// Loads a JSONL sequence. A "<stem>.groups.json" sidecar next to it is picked
// up when present.
inline VideoSequence load_sequence(const std::filesystem::path& path,
                                   std::optional<std::size_t> d_in = std::nullopt) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    VideoSequence seq = parse_sequence(is, path.stem().string(), d_in);
    if (const auto side = groups_sidecar_path(path); std::filesystem::exists(side))
        seq.groups = load_groups_sidecar(side);
    return seq;
}

// ---------------------------------------------------------------------------
// Sampling

// Positions (into seq.frames) of the frames nearest to t0 + k*sigma. Ties go
// to the earlier frame; a frame selected twice is kept once.
inline std::vector<std::size_t> sample_frame_positions(const VideoSequence& seq, double sigma) {
    if (!(sigma > 0)) throw ConfigError("sigma must be positive");
    std::vector<std::size_t> out;
    if (seq.frames.empty()) return out;
    const double t0 = seq.frames.front().timestamp;
    const double t_last = seq.frames.back().timestamp;
    std::size_t cursor = 0;
    for (long k = 0;; ++k) {
        const double target = t0 + static_cast<double>(k) * sigma;
        if (target > t_last + 1e-9) break;
        while (cursor + 1 < seq.frames.size() &&
               std::abs(seq.frames[cursor + 1].timestamp - target) < std::abs(seq.frames[cursor].timestamp - target))
            ++cursor;
        if (out.empty() || out.back() != cursor) out.push_back(cursor);
    }
    return out;
}

inline std::vector<FramePair> sample_pairs(const VideoSequence& seq, double sigma) {
    const auto pos = sample_frame_positions(seq, sigma);
    std::vector<FramePair> pairs;
    for (std::size_t k = 1; k < pos.size(); ++k) pairs.push_back({&seq.frames[pos[k - 1]], &seq.frames[pos[k]]});
    return pairs;
}

// ---------------------------------------------------------------------------
// Labels

inline FramePairGT derive_flow_labels(const Frame& prev, const Frame& curr) {
    if (!prev.fully_labeled() || !curr.fully_labeled())
        throw LabelingError("frames " + std::to_string(prev.index) + "/" + std::to_string(curr.index) +
                            " lack identity labels; supervised training and evaluation require identities");
    FramePairGT gt;
    gt.prev_index = prev.index;
    gt.curr_index = curr.index;
    std::map<std::int64_t, int> curr_pos;
    for (std::size_t j = 0; j < curr.size(); ++j) curr_pos[*curr.observations[j].identity] = static_cast<int>(j);
    std::set<int> uniq_prev, uniq_curr;
    for (std::size_t i = 0; i < prev.size(); ++i) {
        const auto it = curr_pos.find(*prev.observations[i].identity);
        if (it == curr_pos.end()) continue;
        gt.shared_pairs.emplace_back(static_cast<int>(i), it->second);
        uniq_prev.insert(static_cast<int>(i));
        uniq_curr.insert(it->second);
    }
    gt.inflow_count = static_cast<int>(curr.size()) - static_cast<int>(uniq_curr.size());
    gt.outflow_count = static_cast<int>(prev.size()) - static_cast<int>(uniq_prev.size());
    return gt;
}

struct GroundTruthSummary {
    int unique_total = 0;    ///< distinct identities over the sampled frames
    int pairwise_total = 0;  ///< N_0 + sum of pairwise inflows
    int sampled_frames = 0;
    bool consistent() const { return unique_total == pairwise_total; }
};

inline GroundTruthSummary ground_truth_summary(const VideoSequence& seq, double sigma) {
    const auto pos = sample_frame_positions(seq, sigma);
    GroundTruthSummary s;
    s.sampled_frames = static_cast<int>(pos.size());
    if (pos.empty()) return s;
    std::set<std::int64_t> ids;
    for (std::size_t p : pos) {
        const Frame& f = seq.frames[p];
        if (!f.fully_labeled())
            throw LabelingError("frame " + std::to_string(f.index) + " lacks identity labels");
        for (const auto& o : f.observations) ids.insert(*o.identity);
    }
    s.unique_total = static_cast<int>(ids.size());
    s.pairwise_total = static_cast<int>(seq.frames[pos.front()].size());
    for (std::size_t k = 1; k < pos.size(); ++k)
        s.pairwise_total += derive_flow_labels(seq.frames[pos[k - 1]], seq.frames[pos[k]]).inflow_count;
    return s;
}

// Unique pedestrians over the sampled frames. N_0 + sum of pairwise inflows
// is available from ground_truth_summary for cross-checking; the two differ
// only when a pedestrian disappears and reappears.
inline int ground_truth_total(const VideoSequence& seq, double sigma) {
    return ground_truth_summary(seq, sigma).unique_total;
}

}  // namespace vic
