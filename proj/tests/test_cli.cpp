#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const char* e = std::getenv("VIC_CLI");
        if (!e || !fs::exists(e)) GTEST_SKIP() << "VIC_CLI not set";
        exe_ = e;
        dir_ = fs::temp_directory_path() /
               ("vic-cli-" + std::to_string(::getpid()) + "-" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override {
        if (!dir_.empty()) fs::remove_all(dir_);
    }

    int run(const std::string& args) {
        const std::string cmd = "\"" + exe_ + "\" " + args + " > \"" + (dir_ / "log.txt").string() + "\" 2>&1";
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
    std::string log() const { return read(dir_ / "log.txt"); }
    static std::string read(const fs::path& p) {
        std::ifstream is(p);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }
    fs::path write(const std::string& name, const std::string& text) {
        std::ofstream(dir_ / name) << text;
        return dir_ / name;
    }
    std::string q(const fs::path& p) const { return "\"" + p.string() + "\""; }

    // Small labelled dataset with the descriptor width of the small model below.
    fs::path simulate() {
        const auto cfg = write("sim.json", R"({"num_frames": 16, "initial_groups": 3, "group_rate": 0.3, "descriptor_dim": 8})");
        EXPECT_EQ(run("simulate --preset single --seed 5 --config " + q(cfg) + " --out " + q(dir_ / "data")), 0) << log();
        return dir_ / "data";
    }
    fs::path small_train_config() {
        return write("train.json", R"({"model": {"d_in": 8, "d_pe": 8, "d": 16, "heads": 2, "layers": 1, "n_max": 64,
                                      "mlp_hidden": 8}, "train": {"epochs": 2, "batch_pairs": 2}})");
    }

    std::string exe_;
    fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("simulate --no-such-flag"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, InvalidConfigExitsTwo) {
    const auto cfg = write("bad.json", R"({"num_frames": 0})");
    EXPECT_EQ(run("simulate --preset single --config " + q(cfg) + " --out " + q(dir_ / "o")), 2);
    const auto junk = write("junk.json", "{not json");
    EXPECT_EQ(run("simulate --preset single --config " + q(junk) + " --out " + q(dir_ / "o")), 2);
    EXPECT_EQ(run("eval --oracle --data " + q(simulate()) + " --tau 1.5 --out " + q(dir_ / "o")), 2);
}

TEST_F(Cli, MissingFilesExitThree) {
    EXPECT_EQ(run("eval --oracle --data " + q(dir_ / "nowhere") + " --out " + q(dir_ / "o")), 3);
    EXPECT_EQ(run("simulate --config " + q(dir_ / "missing.json") + " --out " + q(dir_ / "o")), 3);
}

TEST_F(Cli, CheckpointVersionMismatchExitsFive) {
    const auto data = simulate();
    const auto ck = write("ck.json", R"({"format": "vic-checkpoint", "version": 2})");
    EXPECT_EQ(run("eval --data " + q(data) + " --checkpoint " + q(ck) + " --out " + q(dir_ / "o")), 5);
}

TEST_F(Cli, OracleEvalHasZeroError) {
    const auto data = simulate();
    ASSERT_EQ(run("eval --oracle --data " + q(data) + " --out " + q(dir_ / "ev")), 0) << log();
    const auto rep = nlohmann::json::parse(read(dir_ / "ev" / "report.json"));
    EXPECT_EQ(rep["wrae"].get<double>(), 0.0);
    EXPECT_EQ(rep["mae"].get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(dir_ / "ev" / "manifest.json"));
}

TEST_F(Cli, SimulateWritesLoadableSequences) {
    const auto data = simulate();
    const auto man = nlohmann::json::parse(read(data / "manifest.json"));
    ASSERT_EQ(man["sequences"].size(), 1u);
    const auto file = data / man["sequences"][0]["file"].get<std::string>();
    EXPECT_TRUE(fs::exists(file));
    std::ifstream is(file);
    std::string line;
    int frames = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++frames;
    EXPECT_EQ(frames, 16);
}

TEST_F(Cli, NoKlTrainingWritesZeroKlColumn) {
    const auto data = simulate();
    ASSERT_EQ(run("train --no-kl --config " + q(small_train_config()) + " --data " + q(data) + " --out " +
                  q(dir_ / "tr")),
              0)
        << log();
    std::ifstream is(dir_ / "tr" / "loss.csv");
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "epoch,l_ot,l_cls,l_kl,l_total");
    int rows = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string cell;
        for (int c = 0; c < 4; ++c) std::getline(ss, cell, ',');
        EXPECT_EQ(std::stod(cell), 0.0);
        ++rows;
    }
    EXPECT_EQ(rows, 2);
    ASSERT_EQ(run("eval --data " + q(data) + " --checkpoint " + q(dir_ / "tr" / "checkpoint.json") + " --out " +
                  q(dir_ / "ev")),
              0)
        << log();
    EXPECT_TRUE(fs::exists(dir_ / "ev" / "pairs.json"));
}
