// Runs the fst binary and checks its exit codes.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "fst/common.hpp"
#include "fst/testing.hpp"

namespace fst {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
protected:
    fs::path root = fs::temp_directory_path() / ("fst_cli_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    void SetUp() override {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    void TearDown() override { fs::remove_all(root); }

    std::string tiny_args() const {
        std::string args;
        for (const auto& o : testing::tiny_run_overrides((root / "out").string())) args += " --set '" + o + "'";
        return args;
    }

    /// Exit status of `fst <args>`, with output captured in root/log.txt.
    int fst(const std::string& args) const {
        std::string cmd = std::string(FST_CLI_PATH) + " " + args + " > " + (root / "log.txt").string() + " 2>&1";
        int status = std::system(cmd.c_str());
        if (status == -1 || !WIFEXITED(status)) return -1;
        return WEXITSTATUS(status);
    }

    std::string log() const { return read_file(root / "log.txt"); }
};

TEST_F(Cli, PrintConfigSucceeds) {
    EXPECT_EQ(fst("prepare --print-config --set training.epochs=4"), 0) << log();
    EXPECT_NE(log().find("\"epochs\": 4"), std::string::npos) << log();
    EXPECT_EQ(fst("--help"), 0);
}

TEST_F(Cli, ValidationErrorsExitWithOne) {
    EXPECT_EQ(fst("prepare --set training.momentum=2"), 1) << log();
    EXPECT_NE(log().find("training.momentum"), std::string::npos) << log();
    EXPECT_EQ(fst("prepare --set nosuch.key=1"), 1) << log();
    EXPECT_EQ(fst("launch"), 1) << log();
    EXPECT_EQ(fst(""), 1) << log();
    EXPECT_EQ(fst("prepare --threads many"), 1) << log();
    EXPECT_EQ(fst("optimize --w-m soon" + tiny_args()), 1) << log();
    write_file(root / "bad.json", "{");
    EXPECT_EQ(fst("prepare --config " + (root / "bad.json").string()), 1) << log();
}

TEST_F(Cli, MissingOrCorruptArtifactsExitWithTwo) {
    auto args = tiny_args();
    EXPECT_EQ(fst("train" + args), 2) << log();
    EXPECT_NE(log().find("fst prepare"), std::string::npos) << log();
    ASSERT_EQ(fst("prepare" + args), 0) << log();
    EXPECT_EQ(fst("evaluate" + args), 2) << log();

    ASSERT_EQ(fst("train" + args), 0) << log();
    write_file(root / "out/train/sampler.csv", "cell,cluster\n");
    EXPECT_EQ(fst("optimize" + args), 2) << log();
    EXPECT_NE(log().find("sampler.csv"), std::string::npos) << log();
    EXPECT_EQ(fst("train --force" + args), 0) << log();
    EXPECT_EQ(fst("optimize" + args), 0) << log();
    EXPECT_EQ(fst("execute --n 9 --w-m 1" + args), 2) << log();
    EXPECT_NE(log().find("fst optimize --n 9 --w-m 1"), std::string::npos) << log();
}

TEST_F(Cli, FullTinyRunSucceedsAndReportsUpToDate) {
    auto args = tiny_args();
    ASSERT_EQ(fst("run --threads 2" + args), 0) << log();
    EXPECT_TRUE(fs::exists(root / "out/report/summary.md"));
    ASSERT_EQ(fst("evaluate" + args), 0) << log();
    EXPECT_NE(log().find("evaluate: up to date"), std::string::npos) << log();
}

TEST_F(Cli, NumericalFailureExitsWithThree) {
    // A temperature this small overflows the attention logits.
    auto args = tiny_args() + " --set network.temperature=1e-310";
    ASSERT_EQ(fst("prepare" + args), 0) << log();
    EXPECT_EQ(fst("train" + args), 3) << log();
    EXPECT_NE(log().find("non-finite"), std::string::npos) << log();
}

}  // namespace
}  // namespace fst
