// vic: simulate | train | eval | ablate | compare

#include "vic/vic.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFormat = "vic-manifest";

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    double sigma = 3.0;
    double tau = 0.5;
    int k = 5;
    std::string count_mode = "dedup";
    bool no_icg = false;
    bool no_ompm = false;
    bool no_kl = false;
    std::optional<int> mlp_depth;
    std::string out = "vic-out";
};

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw vic::IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw vic::ParseError(path.string() + ": " + e.what());
    }
}

// A config file is either a bare config object or a manifest written by an
// earlier run; in the latter case its resolved config is reused verbatim.
json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    json j = read_json(path);
    if (j.value("format", std::string()) == kManifestFormat) return j.at("config");
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw vic::IoError("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw vic::IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const std::string& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw vic::IoError("cannot create output directory '" + out + "'");
    return fs::path(out);
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config, const json& extra = {}) {
    json m{{"format", kManifestFormat}, {"version", 1}, {"command", command}, {"config", config}};
    if (config.contains("seed")) m["seed"] = config["seed"];
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_json(dir / "manifest.json", m);
}

std::vector<fs::path> dataset_files(const std::string& data) {
    std::vector<fs::path> files;
    if (fs::is_regular_file(data)) {
        files.emplace_back(data);
    } else if (fs::is_directory(data)) {
        for (const auto& e : fs::directory_iterator(data))
            if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        throw vic::IoError("dataset path '" + data + "' does not exist");
    }
    if (files.empty()) throw vic::IoError("no .jsonl sequences under '" + data + "'");
    return files;
}

std::vector<vic::VideoSequence> load_dataset(const std::string& data, std::optional<std::size_t> d_in) {
    std::vector<vic::VideoSequence> out;
    for (const auto& f : dataset_files(data)) out.push_back(vic::load_sequence(f, d_in));
    return out;
}

void apply_model_flags(const CommonFlags& f, vic::TrainConfig& tc) {
    if (f.no_icg) tc.icg_on = false;
    if (f.no_ompm) tc.ompm_on = false;
    if (f.no_kl) tc.kl_on = false;
    if (f.mlp_depth) tc.mlp_depth = *f.mlp_depth;
}

vic::EvalOptions eval_options(const CommonFlags& f, const json& cfg, bool oracle) {
    vic::EvalOptions o = cfg.contains("eval") ? cfg.at("eval").get<vic::EvalOptions>() : vic::EvalOptions{};
    o.sigma = f.sigma;
    o.tau = f.tau;
    o.k = f.k;
    o.count_mode = vic::parse_count_mode(f.count_mode);
    o.oracle = oracle;
    o.validate();
    return o;
}

// ---------------------------------------------------------------------------

void cmd_simulate(const CommonFlags& f, const std::string& preset) {
    json cfg = load_config(f.config);
    const fs::path dir = prepare_out(f.out);
    std::vector<vic::SimConfig> sims;
    json resolved;
    if (preset == "benchmark" || preset == "training") {
        vic::BenchmarkOptions bo = cfg.contains("bench") ? cfg.at("bench").get<vic::BenchmarkOptions>()
                                                         : vic::BenchmarkOptions{};
        bo.sigma = f.sigma;
        const std::uint64_t seed = f.seed.value_or(cfg.value("seed", std::uint64_t{0}));
        const int videos = cfg.value("videos", preset == "benchmark" ? bo.videos : 20);
        if (preset == "benchmark") {
            bo.videos = videos;
            sims = vic::benchmark_configs(seed, bo);
        } else {
            sims = vic::training_configs(seed, videos, bo);
        }
        resolved = {{"preset", preset}, {"seed", seed}, {"bench", bo}, {"videos", videos}};
    } else if (preset == "single") {
        vic::SimConfig sc = cfg.contains("sim") ? cfg.at("sim").get<vic::SimConfig>() : cfg.get<vic::SimConfig>();
        if (f.seed) sc.seed = *f.seed;
        sims.push_back(sc);
        resolved = {{"preset", preset}, {"seed", sc.seed}, {"sim", sc}};
    } else {
        throw vic::ConfigError("unknown preset '" + preset + "' (single|benchmark|training)");
    }
    const auto seqs = vic::generate_all(sims);
    json listing = json::array();
    for (std::size_t k = 0; k < seqs.size(); ++k) {
        const auto& s = seqs[k];
        const fs::path file = dir / (s.id + ".jsonl");
        vic::save_sequence(file, s);
        vic::save_groups_sidecar(vic::groups_sidecar_path(file), s.groups);
        listing.push_back({{"id", s.id},
                           {"file", file.filename().string()},
                           {"frames", s.frames.size()},
                           {"unique_total", vic::ground_truth_total(s, f.sigma)},
                           {"sim", sims[k]}});
    }
    write_manifest(dir, "simulate", resolved, {{"sequences", listing}});
    std::cout << "wrote " << seqs.size() << " sequence(s) to " << dir.string() << "\n";
}

void cmd_train(const CommonFlags& f, const std::string& data) {
    json cfg = load_config(f.config);
    vic::ModelConfig mc = cfg.contains("model") ? cfg.at("model").get<vic::ModelConfig>() : vic::ModelConfig{};
    vic::TrainConfig tc = cfg.contains("train") ? cfg.at("train").get<vic::TrainConfig>() : vic::TrainConfig{};
    if (f.seed) tc.seed = *f.seed;
    tc.sigma = f.sigma;
    apply_model_flags(f, tc);
    const std::string data_path = data.empty() ? cfg.value("data", std::string()) : data;
    if (data_path.empty()) throw vic::ConfigError("train needs --data");
    const auto dataset = load_dataset(data_path, static_cast<std::size_t>(mc.d_in));
    const fs::path dir = prepare_out(f.out);

    vic::TrainResult res;
    try {
        res = vic::train(dataset, tc, mc);
    } catch (const vic::DivergedError& e) {
        vic::save_checkpoint(dir / "last_good.json", {e.last_good(), tc, 0, {}});
        throw;
    }
    vic::save_checkpoint(dir / "checkpoint.json", {res.params, tc, res.steps, res.final_eval});
    write_text(dir / "loss.csv", vic::loss_curve_csv(res.curve));
    json resolved{{"model", res.params.config}, {"train", tc}, {"data", data_path}, {"seed", tc.seed}};
    write_manifest(dir, "train", resolved, {{"final_eval", vic::breakdown_json(res.final_eval)}});
    std::cout << std::setprecision(10) << "trained " << res.steps << " steps; final l_total "
              << res.final_eval.l_total << "\n";
}

void cmd_eval(const CommonFlags& f, const std::string& data, const std::string& checkpoint, bool oracle,
              std::optional<double> baseline, bool svg) {
    json cfg = load_config(f.config);
    const std::string data_path = data.empty() ? cfg.value("data", std::string()) : data;
    const std::string ck_path = checkpoint.empty() ? cfg.value("checkpoint", std::string()) : checkpoint;
    if (data_path.empty()) throw vic::ConfigError("eval needs --data");
    const vic::EvalOptions opt = eval_options(f, cfg, oracle);
    const fs::path dir = prepare_out(f.out);

    vic::EvalRun run;
    json resolved{{"data", data_path}, {"eval", opt}};
    if (baseline) {
        const auto dataset = load_dataset(data_path, std::nullopt);
        run = vic::evaluate_o2o(dataset, opt.sigma, *baseline);
        resolved["baseline_threshold"] = *baseline;
    } else if (oracle) {
        const auto dataset = load_dataset(data_path, std::nullopt);
        run = vic::evaluate_model(vic::ModelParams{}, dataset, opt);
    } else {
        if (ck_path.empty()) throw vic::ConfigError("eval needs --checkpoint (or --oracle / --baseline)");
        const vic::Checkpoint ck = vic::load_checkpoint(ck_path);
        const auto dataset = load_dataset(data_path, static_cast<std::size_t>(ck.params.config.d_in));
        run = vic::evaluate_model(ck.params, dataset, opt);
        resolved["checkpoint"] = ck_path;
    }
    write_json(dir / "report.json", vic::report_json(run.report));
    write_text(dir / "report.csv", vic::report_csv(run.report));
    if (svg) write_text(dir / "report.svg", vic::report_svg(run.report));
    write_json(dir / "pairs.json", vic::eval_run_json(run).at("pairs"));
    write_manifest(dir, "eval", resolved);
    std::cout << std::setprecision(10) << "MAE " << run.report.mae << "  MSE " << run.report.mse << "  WRAE "
              << run.report.wrae << "%\n";
}

vic::ExperimentPreset experiment_preset(const CommonFlags& f, const json& cfg) {
    vic::ExperimentPreset p = cfg.empty() ? vic::default_experiment() : cfg.get<vic::ExperimentPreset>();
    p.eval.sigma = f.sigma;
    p.eval.tau = f.tau;
    p.eval.k = f.k;
    p.eval.count_mode = vic::parse_count_mode(f.count_mode);
    p.bench.sigma = f.sigma;
    p.train.sigma = f.sigma;
    apply_model_flags(f, p.train);
    return p;
}

std::vector<std::uint64_t> seed_list(const CommonFlags& f, const json& cfg, int seeds) {
    const std::uint64_t base = f.seed.value_or(cfg.value("seed", std::uint64_t{1}));
    std::vector<std::uint64_t> out;
    for (int s = 0; s < seeds; ++s) out.push_back(base + static_cast<std::uint64_t>(s));
    return out;
}

void cmd_compare(const CommonFlags& f, int seeds) {
    const json cfg = load_config(f.config);
    const vic::ExperimentPreset p = experiment_preset(f, cfg.contains("preset") ? cfg.at("preset") : json::object());
    seeds = cfg.value("seeds", seeds);
    const auto list = seed_list(f, cfg, seeds);
    const fs::path dir = prepare_out(f.out);
    json rows = json::array();
    std::ostringstream csv;
    csv << std::setprecision(17) << "seed,model_wrae,o2o_wrae,o2o_threshold\n";
    double sum_model = 0.0, sum_o2o = 0.0;
    for (const auto seed : list) {
        const auto data = vic::make_seed_data(p, seed);
        const auto row = vic::compare_seed(p, seed, data);
        sum_model += row.model_wrae;
        sum_o2o += row.o2o_wrae;
        rows.push_back({{"seed", seed},
                        {"model_wrae", row.model_wrae},
                        {"o2o_wrae", row.o2o_wrae},
                        {"o2o_threshold", row.o2o_threshold},
                        {"o2o_sweep", row.o2o_sweep}});
        csv << seed << ',' << row.model_wrae << ',' << row.o2o_wrae << ',' << row.o2o_threshold << '\n';
        std::cout << "seed " << seed << ": model " << row.model_wrae << "%  o2o " << row.o2o_wrae << "% (thr "
                  << row.o2o_threshold << ")\n";
    }
    const double n = static_cast<double>(list.size());
    json summary{{"mean_model_wrae", sum_model / n},
                 {"mean_o2o_wrae", sum_o2o / n},
                 {"relative_reduction", 1.0 - sum_model / sum_o2o}};
    write_json(dir / "compare.json", {{"rows", rows}, {"summary", summary}});
    write_text(dir / "compare.csv", csv.str());
    write_manifest(dir, "compare", {{"preset", p}, {"seeds", seeds}, {"seed", list.front()}});
    std::cout << "mean WRAE: model " << sum_model / n << "%  o2o " << sum_o2o / n << "%\n";
}

void cmd_ablate(const CommonFlags& f, int seeds, bool skip_depth) {
    const json cfg = load_config(f.config);
    const vic::ExperimentPreset p = experiment_preset(f, cfg.contains("preset") ? cfg.at("preset") : json::object());
    seeds = cfg.value("seeds", seeds);
    skip_depth = cfg.value("skip_depth", skip_depth);
    const auto list = seed_list(f, cfg, seeds);
    const fs::path dir = prepare_out(f.out);
    std::vector<vic::SeedData> data;
    for (const auto seed : list) data.push_back(vic::make_seed_data(p, seed));

    const auto grid = vic::ablation_grid();
    json grid_rows = json::array();
    std::ostringstream grid_csv;
    grid_csv << std::setprecision(17) << "variant,icg,ompm,kl,mean_wrae\n";
    for (const auto& v : grid) {
        double sum = 0.0;
        json per_seed = json::array();
        for (std::size_t s = 0; s < list.size(); ++s) {
            const double w = vic::variant_wrae(p, list[s], data[s], v.icg_on, v.ompm_on, v.kl_on, p.train.mlp_depth);
            per_seed.push_back(w);
            sum += w;
        }
        const double mean = sum / static_cast<double>(list.size());
        grid_rows.push_back(
            {{"variant", v.name}, {"icg", v.icg_on}, {"ompm", v.ompm_on}, {"kl", v.kl_on}, {"wrae", per_seed}, {"mean_wrae", mean}});
        grid_csv << v.name << ',' << v.icg_on << ',' << v.ompm_on << ',' << v.kl_on << ',' << mean << '\n';
        std::cout << std::left << std::setw(10) << v.name << " WRAE " << mean << "%\n";
    }
    json depth_rows = json::array();
    std::ostringstream depth_csv;
    depth_csv << std::setprecision(17) << "mlp_depth,mean_wrae\n";
    if (!skip_depth) {
        for (int depth = 1; depth <= 5; ++depth) {
            double sum = 0.0;
            for (std::size_t s = 0; s < list.size(); ++s)
                sum += vic::variant_wrae(p, list[s], data[s], p.train.icg_on, p.train.ompm_on, p.train.kl_on, depth);
            const double mean = sum / static_cast<double>(list.size());
            depth_rows.push_back({{"mlp_depth", depth}, {"mean_wrae", mean}});
            depth_csv << depth << ',' << mean << '\n';
            std::cout << "depth " << depth << " WRAE " << mean << "%\n";
        }
    }
    write_json(dir / "ablate.json", {{"grid", grid_rows}, {"depth", depth_rows}});
    write_text(dir / "ablate_grid.csv", grid_csv.str());
    write_text(dir / "ablate_depth.csv", depth_csv.str());
    write_manifest(dir, "ablate", {{"preset", p}, {"seeds", seeds}, {"seed", list.front()}, {"skip_depth", skip_depth}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video individual counting with one-to-many matching"};
    app.require_subcommand(1);
    CommonFlags f;
    std::uint64_t seed_value = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON config file or a manifest from an earlier run");
        sub->add_option("--seed", seed_value, "random seed")->each([&](const std::string&) { f.seed = seed_value; });
        sub->add_option("--sigma", f.sigma, "frame sampling interval in seconds")->capture_default_str();
        sub->add_option("--out", f.out, "output directory")->capture_default_str();
    };
    const auto add_model = [&](CLI::App* sub) {
        sub->add_flag("--no-icg", f.no_icg, "bypass the implicit context generator");
        sub->add_flag("--no-ompm", f.no_ompm, "replace the pairwise MLP with thresholded cosine similarity");
        sub->add_flag("--no-kl", f.no_kl, "drop the histogram KL term");
        sub->add_option("--mlp-depth", f.mlp_depth, "MLP layers (default 3)");
    };
    const auto add_eval = [&](CLI::App* sub) {
        sub->add_option("--tau", f.tau, "match threshold")->capture_default_str();
        sub->add_option("--k", f.k, "maximum group size for decoding")->capture_default_str();
        sub->add_option("--count-mode", f.count_mode, "literal|dedup")
            ->check(CLI::IsMember({"literal", "dedup"}))
            ->capture_default_str();
    };

    std::string preset = "single";
    auto* sim = app.add_subcommand("simulate", "generate synthetic labelled sequences");
    add_common(sim);
    sim->add_option("--preset", preset, "single|benchmark|training")->capture_default_str();

    std::string data;
    auto* trn = app.add_subcommand("train", "train a model on labelled sequences");
    add_common(trn);
    add_model(trn);
    trn->add_option("--data", data, "directory of .jsonl sequences or a single file");

    std::string checkpoint;
    bool oracle = false, svg = false;
    std::optional<double> baseline;
    auto* ev = app.add_subcommand("eval", "count pedestrians and report metrics");
    add_common(ev);
    add_eval(ev);
    ev->add_option("--data", data, "directory of .jsonl sequences or a single file");
    ev->add_option("--checkpoint", checkpoint, "checkpoint written by train");
    ev->add_flag("--oracle", oracle, "report ground truth as the prediction");
    ev->add_option("--baseline", baseline, "evaluate the Hungarian O2O baseline at this cosine threshold");
    ev->add_flag("--svg", svg, "also write report.svg");

    int seeds = 5;
    bool skip_depth = false;
    auto* cmp = app.add_subcommand("compare", "trained model vs tuned Hungarian baseline on the benchmark preset");
    add_common(cmp);
    add_model(cmp);
    add_eval(cmp);
    cmp->add_option("--seeds", seeds, "number of consecutive seeds")->capture_default_str();

    auto* abl = app.add_subcommand("ablate", "component grid and MLP depth sweep on the benchmark preset");
    add_common(abl);
    add_model(abl);
    add_eval(abl);
    abl->add_option("--seeds", seeds, "number of consecutive seeds")->capture_default_str();
    abl->add_flag("--skip-depth", skip_depth, "run the component grid only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(vic::ExitCode::kUsage);
    }

    try {
        if (sim->parsed()) cmd_simulate(f, preset);
        if (trn->parsed()) cmd_train(f, data);
        if (ev->parsed()) cmd_eval(f, data, checkpoint, oracle, baseline, svg);
        if (cmp->parsed()) cmd_compare(f, seeds);
        if (abl->parsed()) cmd_ablate(f, seeds, skip_depth);
    } catch (const vic::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const json::exception& e) {
        std::cerr << "error: malformed config: " << e.what() << "\n";
        return static_cast<int>(vic::ExitCode::kValidation);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(vic::ExitCode::kIo);
    }
    return 0;
}
