// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs of the atlasgs executable on a tiny configuration.

#include "atlasgs/io.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "atlasgs_cli_tests";

const char *kTinyVae =
    " --vae-set latent_tokens=4 dim=16 latent_dim=4 patches=8 heads=2 frequencies=4"
    " decoder_hidden=16 input_points=64 input_views=0 views=2 image_width=16 image_height=16 grid=2";

struct CliRun {
    int code = -1;
    std::string output;
};

CliRun run(const std::string &args, const std::string &env = "") {
    static int counter = 0;
    fs::create_directories(kRoot);
    const fs::path log = kRoot / ("log_" + std::to_string(counter++) + ".txt");
    const std::string cmd = env + " " + ATLASGS_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh(const std::string &name) {
    fs::remove_all(kRoot / name);
    return kRoot / name;
}

/// A tiny dataset shared by the training tests.
const fs::path &dataset() {
    static const fs::path dir = [] {
        fs::path d = fresh("data");
        CliRun r = run("datagen --out " + d.string() +
                    " --shapes 1 --classes sphere,box --points 256 --teacher 256 --width 16 --height 16 --seed 3");
        EXPECT_EQ(r.code, 0) << r.output;
        return d;
    }();
    return dir;
}

/// A tiny trained VAE + LDM pair shared by the generation tests.
const fs::path &trained_run() {
    static const fs::path dir = [] {
        fs::path d = fresh("trained");
        CliRun v = run("train-vae --data " + dataset().string() + " --out " + (d / "vae").string() +
                    " --stage1-steps 4 --stage2-steps 2" + kTinyVae);
        EXPECT_EQ(v.code, 0) << v.output;
        CliRun l = run("train-ldm --vae " + (d / "vae" / "vae_last.atlg").string() + " --data " +
                    dataset().string() + " --out " + (d / "ldm").string() +
                    " --steps 5 --ldm-set dim=16 heads=2");
        EXPECT_EQ(l.code, 0) << l.output;
        return d;
    }();
    return dir;
}

std::vector<std::string> csv_rows(const fs::path &p) {
    std::ifstream in(p);
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    return rows;
}

double csv_field(const std::string &header, const std::string &row, const std::string &name) {
    auto split = [](const std::string &s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string f;
        while (std::getline(ss, f, ',')) out.push_back(f);
        return out;
    };
    auto h = split(header), r = split(row);
    for (std::size_t i = 0; i < h.size(); ++i)
        if (h[i] == name) return std::stod(r[i]);
    ADD_FAILURE() << "no column " << name;
    return 0.0;
}

} // namespace

TEST(Cli, DatagenCountsAndDeterminism) {
    fs::path a = fresh("dg_a"), b = fresh("dg_b");
    const std::string flags = " --shapes 2 --classes sphere,torus --seed 7 --points 128 --teacher 128 --width 12 --height 12";
    CliRun ra = run("datagen --out " + a.string() + flags);
    CliRun rb = run("datagen --out " + b.string() + flags);
    ASSERT_EQ(ra.code, 0) << ra.output;
    ASSERT_EQ(rb.code, 0) << rb.output;
    std::size_t dirs = 0;
    for (const auto &e : fs::directory_iterator(a)) dirs += e.is_directory();
    EXPECT_EQ(dirs, 4u);
    for (const auto &e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a);
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    }
    EXPECT_NE(ra.output.find("[effective config]"), std::string::npos);
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run("datagen --out " + fresh("dg0").string() + " --shapes 0").code, 1);
    EXPECT_EQ(run("no-such-command").code, 1);
    EXPECT_EQ(run("").code, 1);
}

TEST(Cli, StageTwoResumeWithoutStageOneCheckpoint) {
    fs::path out = fresh("no_stage1");
    CliRun r = run("train-vae --data " + dataset().string() + " --out " + out.string() +
                " --stage 2 --resume" + kTinyVae);
    EXPECT_EQ(r.code, 1) << r.output;
    EXPECT_NE(r.output.find("stage"), std::string::npos);
}

TEST(Cli, MissingInputsAreDataErrors) {
    EXPECT_EQ(run("train-vae --data " + (kRoot / "nope").string() + " --out " + fresh("x").string()).code, 2);
    EXPECT_EQ(run("generate --vae /nonexistent.atlg --ldm /nonexistent.atlg --out " + fresh("g").string()).code, 2);
}

TEST(Cli, MetricsRowsEqualEpochs) {
    fs::path out = fresh("metrics");
    CliRun r = run("train-vae --data " + dataset().string() + " --out " + out.string() +
                " --stage1-steps 6 --stage2-steps 4" + kTinyVae);
    ASSERT_EQ(r.code, 0) << r.output;
    auto rows = csv_rows(out / "metrics_vae.csv");
    // 2 shapes: 3 epochs in stage 1, 2 in stage 2
    EXPECT_EQ(rows.size(), 1u + 5u);
    EXPECT_TRUE(fs::exists(out / "vae_stage1.atlg"));
    EXPECT_TRUE(fs::exists(out / "vae_stage2.atlg"));
}

TEST(Cli, ResumeIsContinuous) {
    fs::path ref = fresh("resume_ref"), cut = fresh("resume_cut");
    const std::string common = " --data " + dataset().string() + " --stage 1 --stage1-steps 12" + kTinyVae;
    ASSERT_EQ(run("train-vae --out " + ref.string() + common).code, 0);
    CliRun first = run("train-vae --out " + cut.string() + common + " --stop-after 6");
    ASSERT_EQ(first.code, 0) << first.output;
    CliRun second = run("train-vae --out " + cut.string() + common + " --resume");
    ASSERT_EQ(second.code, 0) << second.output;
    auto a = csv_rows(ref / "metrics_vae.csv"), b = csv_rows(cut / "metrics_vae.csv");
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 1; i < a.size(); ++i) {
        const double la = csv_field(a[0], a[i], "loss_total"), lb = csv_field(b[0], b[i], "loss_total");
        EXPECT_NEAR(la, lb, 0.05 * la) << "epoch row " << i;
    }
}

TEST(Cli, GenerateCountsParametersAndDeterminism) {
    const fs::path &d = trained_run();
    const std::string base = "generate --vae " + (d / "vae" / "vae_last.atlg").string() + " --ldm " +
                             (d / "ldm" / "ldm_last.atlg").string() + " --steps 4 --views 2 --seed 11";
    fs::path g2 = fresh("gen2"), g7 = fresh("gen7"), g7b = fresh("gen7b");
    CliRun r2 = run(base + " --alpha 2 --out " + g2.string());
    CliRun r7 = run(base + " --alpha 7 --out " + g7.string());
    CliRun r7b = run(base + " --alpha 7 --out " + g7b.string());
    ASSERT_EQ(r2.code, 0) << r2.output;
    ASSERT_EQ(r7.code, 0) << r7.output;
    std::regex re("parameters loaded: ([0-9]+)");
    std::smatch m2, m7;
    ASSERT_TRUE(std::regex_search(r2.output, m2, re));
    ASSERT_TRUE(std::regex_search(r7.output, m7, re));
    EXPECT_EQ(m2[1], m7[1]);
    EXPECT_EQ(atlasgs::ply_vertex_count(g2 / "sample_000.ply"), 8u * 4u);
    EXPECT_EQ(atlasgs::ply_vertex_count(g7 / "sample_000.ply"), 8u * 49u);
    EXPECT_EQ(slurp(g7 / "sample_000.ply"), slurp(g7b / "sample_000.ply"));
    bool ppm = false;
    for (const auto &e : fs::directory_iterator(g7)) ppm |= e.path().extension() == ".ppm";
    EXPECT_TRUE(ppm);
}

TEST(Cli, RenderExportAndEval) {
    const fs::path &d = trained_run();
    const std::string vae = (d / "vae" / "vae_last.atlg").string();
    fs::path ex = fresh("export");
    CliRun e = run("export-ply --vae " + vae + " --data " + dataset().string() + " --out " + ex.string());
    ASSERT_EQ(e.code, 0) << e.output;
    fs::path ply;
    for (const auto &f : fs::directory_iterator(ex))
        if (f.path().extension() == ".ply") ply = f.path();
    ASSERT_FALSE(ply.empty());
    fs::path rd = fresh("render");
    CliRun r = run("render --ply " + ply.string() + " --out " + rd.string() + " --views 3 --width 24 --height 24");
    ASSERT_EQ(r.code, 0) << r.output;
    std::size_t images = 0;
    for (const auto &f : fs::directory_iterator(rd)) images += f.path().extension() == ".ppm";
    EXPECT_EQ(images, 3u);
    fs::path report = kRoot / "eval.json";
    CliRun ev = run("eval --vae " + vae + " --data " + dataset().string() + " --report " + report.string());
    ASSERT_EQ(ev.code, 0) << ev.output;
    auto j = nlohmann::json::parse(slurp(report));
    EXPECT_TRUE(j.dump().find("chamfer") != std::string::npos);
}

TEST(Cli, DatasetIsNotMutated) {
    const fs::path &data = dataset();
    std::vector<std::pair<fs::path, fs::file_time_type>> before;
    for (const auto &e : fs::recursive_directory_iterator(data))
        if (e.is_regular_file()) before.emplace_back(e.path(), fs::last_write_time(e.path()));
    trained_run();
    run("eval --vae " + (trained_run() / "vae" / "vae_last.atlg").string() + " --data " + data.string());
    std::size_t now = 0;
    for (const auto &e : fs::recursive_directory_iterator(data)) now += e.is_regular_file();
    EXPECT_EQ(now, before.size());
    for (const auto &[p, t] : before) EXPECT_EQ(fs::last_write_time(p), t) << p;
}

TEST(Cli, CheckPassesAndNegativeControlFails) {
    fs::path report = kRoot / "check.json";
    CliRun ok = run("check --instances 2 --report " + report.string());
    EXPECT_EQ(ok.code, 0) << ok.output;
    auto j = nlohmann::json::parse(slurp(report));
    EXPECT_TRUE(j.at("passed").get<bool>());
    for (const auto &c : j.at("checks")) {
        EXPECT_TRUE(c.contains("name") && c.contains("max_error") && c.contains("threshold"));
    }
    EXPECT_EQ(run("check --instances 1 --inject-sign-error").code, 3);
}

TEST(Cli, EnvironmentAndConfigFilePrecedence) {
    fs::path a = fresh("env_a");
    CliRun r = run("datagen --out " + a.string() + " --shapes 1 --classes sphere --points 64 --teacher 64 --width 8 --height 8",
                "ATLASG_SEED=42");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("seed=42"), std::string::npos);
    fs::path cfg = kRoot / "run.ini";
    std::ofstream(cfg) << "seed=9\n";
    CliRun c = run("--config " + cfg.string() + " datagen --out " + fresh("env_b").string() +
                    " --shapes 1 --classes sphere --points 64 --teacher 64 --width 8 --height 8",
                "ATLASG_SEED=42");
    ASSERT_EQ(c.code, 0) << c.output;
    EXPECT_NE(c.output.find("seed=9"), std::string::npos);
    CliRun f = run("--config " + cfg.string() + " --seed 5 datagen --out " + fresh("env_c").string() +
                    " --shapes 1 --classes sphere --points 64 --teacher 64 --width 8 --height 8");
    ASSERT_EQ(f.code, 0) << f.output;
    EXPECT_NE(f.output.find("seed=5"), std::string::npos);
}
