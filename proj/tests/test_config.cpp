#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "longfpca/config.hpp"
#include "longfpca/errors.hpp"

using namespace longfpca;
namespace fs = std::filesystem;

namespace {

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const fs::path& path) {
    std::ifstream in(path);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("longfpca_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write_config(const std::string& body) {
        const auto path = dir_ / "run.ini";
        std::ofstream(path) << body;
        return path;
    }

    int run(const std::string& args) {
        const std::string cmd = std::string(LONGFPCA_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                                " 2> " + (dir_ / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string out() const { return slurp(dir_ / "stdout.txt"); }
    std::string err() const { return slurp(dir_ / "stderr.txt"); }

    fs::path dir_;
};

const char* kSmallStudy = R"([scenario]
study = 1
subjects = 60
train = 30
replicates = 10
seed = 5
roster = LMM_quad, FPCA_fve90

[dropout]
mechanism = mcar
rate = 0.3
calibration_pool = 2000
)";

}  // namespace

// ---------------------------------------------------------------------------
// INI parsing

TEST(Ini, ParsesSectionsCommentsAndWhitespace) {
    const auto doc = IniDocument::parse("# header\n[scenario]\n  spacing = 3  # inline\n\n[dropout]\nrate=0.6\n", "a.ini");
    ASSERT_EQ(doc.entries().size(), 2u);
    EXPECT_EQ(doc.entries().at("scenario.spacing").value, "3");
    EXPECT_EQ(doc.entries().at("scenario.spacing").origin, "a.ini:3");
    EXPECT_EQ(doc.entries().at("dropout.rate").value, "0.6");
}

TEST(Ini, MalformedLinesCarryFileAndLine) {
    EXPECT_NE(message_of([] { IniDocument::parse("[scenario]\nspacing\n", "b.ini"); }).find("b.ini:2"), std::string::npos);
    EXPECT_NE(message_of([] { IniDocument::parse("spacing = 2\n", "c.ini"); }).find("c.ini:1"), std::string::npos);
    EXPECT_NE(message_of([] { IniDocument::parse("[scenario\n", "d.ini"); }).find("d.ini:1"), std::string::npos);
    const auto dup = message_of([] { IniDocument::parse("[s]\na = 1\na = 2\n", "e.ini"); });
    EXPECT_NE(dup.find("e.ini:3"), std::string::npos);
    EXPECT_NE(dup.find("e.ini:2"), std::string::npos);
}

TEST(Ini, MissingFileIsIoError) { EXPECT_THROW(IniDocument::load("/nonexistent/x.ini"), IoError); }

// ---------------------------------------------------------------------------
// Run configuration

TEST(RunConfig, DefaultsAreValid) {
    const auto cfg = build_run_config(IniDocument{});
    EXPECT_EQ(cfg.scenario.study, 1);
    EXPECT_EQ(cfg.scenario.subjects(), 700u);
    EXPECT_EQ(cfg.fit.method, FitMethod::fpca);
}

TEST(RunConfig, UnknownKeyIsRejectedWithOrigin) {
    const auto doc = IniDocument::parse("[scenario]\nspacingg = 2\n", "f.ini");
    const auto msg = message_of([&] { build_run_config(doc); });
    EXPECT_NE(msg.find("f.ini:2"), std::string::npos);
    EXPECT_NE(msg.find("scenario.spacingg"), std::string::npos);
}

TEST(RunConfig, InvalidMechanismNamesTheField) {
    const auto doc = IniDocument::parse("[dropout]\nmechanism = sometimes\n", "g.ini");
    const auto msg = message_of([&] { build_run_config(doc); });
    EXPECT_NE(msg.find("dropout.mechanism"), std::string::npos);
    EXPECT_NE(msg.find("g.ini:2"), std::string::npos);
}

TEST(RunConfig, OutOfRangeValueNamesTheField) {
    const auto doc = IniDocument::parse("[dropout]\nrate = 1.5\n", "h.ini");
    const auto msg = message_of([&] { build_run_config(doc); });
    EXPECT_NE(msg.find("dropout.rate"), std::string::npos);
    EXPECT_NE(msg.find("h.ini:2"), std::string::npos);
    EXPECT_NE(message_of([] { build_run_config(IniDocument::parse("[scenario]\nspacing = abc\n", "i.ini")); })
                  .find("scenario.spacing"),
              std::string::npos);
}

TEST(RunConfig, OverridesReplaceFileValues) {
    auto doc = IniDocument::parse("[scenario]\nspacing = 2\n[dropout]\nmechanism = mcar\n", "j.ini");
    doc.apply_override("scenario.spacing=3");
    doc.apply_override("dropout.mechanism = increasing_mnar");
    doc.apply_override("scenario.roster=LMM_cub,reference");
    const auto cfg = build_run_config(doc);
    EXPECT_EQ(cfg.scenario.spacing, 3.0);
    EXPECT_EQ(cfg.scenario.mechanism, DropoutMechanism::increasing_mnar);
    EXPECT_EQ(cfg.scenario.roster, (std::vector<ModelKind>{ModelKind::lmm_cub, ModelKind::reference}));
    EXPECT_THROW(doc.apply_override("spacing=3"), ConfigError);
    EXPECT_THROW(doc.apply_override("scenario.spacing"), ConfigError);
}

TEST(RunConfig, FitSection) {
    const auto doc = IniDocument::parse(
        "[fit]\nmethod = lmm\nbasis = bspline\nknots = 3\nknot_strategy = equidistant\nboundary = 0 12\n", "k.ini");
    const auto cfg = build_run_config(doc);
    EXPECT_EQ(cfg.fit.method, FitMethod::lmm);
    EXPECT_EQ(cfg.fit.basis, BasisKind::bspline);
    EXPECT_EQ(cfg.fit.knots, 3);
    EXPECT_EQ(cfg.fit.knot_strategy, KnotStrategy::equidistant);
    ASSERT_TRUE(cfg.fit.boundary.has_value());
    EXPECT_EQ(cfg.fit.boundary->second, 12.0);
    EXPECT_THROW(build_run_config(IniDocument::parse("[fit]\nfve = 0\n", "l.ini")), ConfigError);
}

TEST(RunConfig, KnownKeysAreAccepted) {
    EXPECT_GT(known_config_keys().size(), 20u);
    for (const auto& key : known_config_keys()) EXPECT_NE(key.find('.'), std::string::npos) << key;
}

// ---------------------------------------------------------------------------
// Command line

TEST_F(CliTest, SimulateWritesThreeFiles) {
    const auto cfg = write_config("[scenario]\nsubjects = 40\ntrain = 20\n[dropout]\nrate = 0.3\ncalibration_pool = 2000\n");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir_ / "sim").string()), 0) << err();
    for (const char* name : {"complete.csv", "observed.csv", "mask.csv"}) EXPECT_TRUE(fs::exists(dir_ / "sim" / name));
    EXPECT_EQ(slurp(dir_ / "sim" / "complete.csv").substr(0, 22), "subject_id,time,value\n");
    EXPECT_LT(line_count(dir_ / "sim" / "observed.csv"), line_count(dir_ / "sim" / "complete.csv"));
    EXPECT_NE(out().find("achieved dropout rate"), std::string::npos);
}

TEST_F(CliTest, FitFpcaAndLmm) {
    const auto cfg = write_config("[scenario]\nsubjects = 80\ntrain = 40\n[dropout]\nrate = 0\n");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + dir_.string()), 0) << err();
    const auto data = (dir_ / "complete.csv").string();

    ASSERT_EQ(run("fit --config " + cfg.string() + " --method fpca --data " + data + " --out " + (dir_ / "f").string()),
              0)
        << err();
    EXPECT_NE(out().find("fpca: K = "), std::string::npos);
    EXPECT_EQ(out().find("K = 0"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir_ / "f" / "model.txt"));
    EXPECT_TRUE(fs::exists(dir_ / "f" / "fitted.csv"));

    const int code = run("fit --config " + cfg.string() + " --method lmm --set fit.basis=natural_cubic --data " + data +
                         " --out " + (dir_ / "l").string());
    EXPECT_TRUE(code == 0 || code == 1) << err();
    EXPECT_NE(out().find("basis = natural_cubic, p = 4"), std::string::npos) << out();
}

TEST_F(CliTest, MissingDataFileFails) {
    const auto cfg = write_config("[scenario]\nstudy = 1\n");
    const int code = run("fit --config " + cfg.string() + " --data " + (dir_ / "absent.csv").string());
    EXPECT_NE(code, 0);
    EXPECT_NE(err().find("absent.csv"), std::string::npos);
}

TEST_F(CliTest, BadConfigFails) {
    const auto cfg = write_config("[dropout]\nmechanism = sometimes\n");
    EXPECT_NE(run("simulate --config " + cfg.string()), 0);
    EXPECT_NE(err().find("dropout.mechanism"), std::string::npos);
}

TEST_F(CliTest, StudyWritesOneRowPerReplicateAndModel) {
    const auto cfg = write_config(kSmallStudy);
    const auto a = dir_ / "a";
    const int code = run("study --config " + cfg.string() + " --threads 2 --out " + a.string());
    ASSERT_TRUE(code == 0 || code == 1) << err();
    EXPECT_EQ(line_count(a / "replicates.csv"), 1u + 10u * 2u);
    EXPECT_EQ(line_count(a / "summary.csv"), 1u + 2u * 4u);

    const auto b = dir_ / "b";
    run("study --config " + cfg.string() + " --threads 1 --out " + b.string());
    EXPECT_EQ(slurp(a / "replicates.csv"), slurp(b / "replicates.csv"));
    EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
}
