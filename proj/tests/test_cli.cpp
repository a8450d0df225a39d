/*
 * Copyright 2026 The HCL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// End-to-end runs of the command-line tool on the tiny fixture dataset.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = HCL_FIXTURE_DIR;

struct Outcome {
    int code = -1;
    std::string output; // stdout and stderr interleaved
};

class Cli : public ::testing::Test {
protected:
    fs::path out;

    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        out = fs::temp_directory_path() / (std::string("hcl_cli_") + info->name());
        fs::remove_all(out);
        fs::create_directories(out);
    }

    void TearDown() override { fs::remove_all(out); }

    Outcome run(const std::string& args) const
    {
        const fs::path log = out / "cmd.log";
        const std::string cmd = std::string(HCL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        Outcome r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.output = read(log);
        return r;
    }

    // Small MLP on the tiny fixture set.
    std::string quick(const std::string& command, const std::string& extra = "") const
    {
        return command + " --data-dir " + (kFixtures / "tiny").string() + " --out-dir " + (out / "runs").string()
               + " --model mlp --set mlp.hidden=16,12 --max-epochs 3 --patience 3 --batch-size 16 --lr 0.05 "
               + extra;
    }

    fs::path only_dir(const std::string& prefix) const
    {
        fs::path found;
        int n = 0;
        for (const auto& e : fs::directory_iterator(out / "runs"))
            if (e.path().filename().string().rfind(prefix, 0) == 0) {
                found = e.path();
                ++n;
            }
        EXPECT_EQ(n, 1) << "run directories with prefix " << prefix;
        return found;
    }

    static std::string read(const fs::path& p)
    {
        std::ifstream is(p);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    static std::vector<std::string> lines(const fs::path& p)
    {
        std::vector<std::string> v;
        std::ifstream is(p);
        for (std::string l; std::getline(is, l);)
            v.push_back(l);
        return v;
    }

    static std::map<std::string, std::string> summary(const fs::path& p)
    {
        std::map<std::string, std::string> m;
        for (const auto& l : lines(p)) {
            const auto c = l.find(": ");
            if (c != std::string::npos)
                m[l.substr(0, c)] = l.substr(c + 2);
        }
        return m;
    }

    static std::vector<std::string> fields(const std::string& line)
    {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');)
            f.push_back(x);
        return f;
    }
};

} // namespace

TEST_F(Cli, TrainWritesArtifacts)
{
    auto r = run(quick("train"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto dir = only_dir("train-");
    for (const char* f : {"metrics.csv", "checkpoint.bin", "last.bin", "summary.txt", "config.txt"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto m = lines(dir / "metrics.csv");
    ASSERT_EQ(m.size(), 4u);
    EXPECT_EQ(m[0], "epoch,train_total,train_final,train_head0,train_head1,val_loss,val_accuracy,val_head0_accuracy,"
                    "val_head1_accuracy");
    auto s = summary(dir / "summary.txt");
    EXPECT_EQ(s["vanilla_equivalent"], "no");
    EXPECT_EQ(s["heads"], "2");
    EXPECT_EQ(s["test_samples"], "40");
}

TEST_F(Cli, ZeroLambdasAreVanillaEquivalent)
{
    auto r = run(quick("train", "--lambdas 0,0"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(summary(only_dir("train-") / "summary.txt")["vanilla_equivalent"], "yes");
}

TEST_F(Cli, MissingDatasetDirectory)
{
    auto r = run(quick("train", "--dataset fashion-mnist"));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find((kFixtures / "tiny" / "fashion-mnist").string()), std::string::npos) << r.output;
}

TEST_F(Cli, UsageAndConfigErrors)
{
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("fly").code, 2);
    EXPECT_EQ(run(quick("train", "--set nonsense=1")).code, 2);
    EXPECT_EQ(run(quick("train", "--lr 0.5 --set grid.lr=0.5")).code, 2);
    EXPECT_EQ(run("eval").code, 2); // --checkpoint is required
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, EvalAndCorruptCheckpoint)
{
    ASSERT_EQ(run(quick("train")).code, 0);
    const auto ck = only_dir("train-") / "checkpoint.bin";
    auto r = run("eval --checkpoint " + ck.string() + " --split val");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("samples: 10"), std::string::npos) << r.output;

    std::string bytes = read(ck);
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(out / "bad.bin", std::ios::binary) << bytes;
    EXPECT_EQ(run("eval --checkpoint " + (out / "bad.bin").string()).code, 2);
}

TEST_F(Cli, GdvProfileOneRowPerLayerAndDeterministic)
{
    ASSERT_EQ(run(quick("train")).code, 0);
    const auto ck = only_dir("train-") / "checkpoint.bin";
    auto r = run("gdv --checkpoint " + ck.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto csv = only_dir("gdv-") / "gdv.csv";
    const auto first = lines(csv);
    ASSERT_EQ(first.size(), 1u + 3u); // header + one row per layer
    EXPECT_EQ(first[0], "layer_index,layer_kind,gdv,D,n_points");
    ASSERT_EQ(run("gdv --checkpoint " + ck.string()).code, 0);
    EXPECT_EQ(lines(csv), first);

    ASSERT_EQ(run("gdv --split both --checkpoint " + ck.string()).code, 0);
    const auto dir = only_dir("gdv-");
    EXPECT_TRUE(fs::exists(dir / "gdv_train.csv"));
    EXPECT_TRUE(fs::exists(dir / "gdv_test.csv"));
}

TEST_F(Cli, InputShapeMismatchIsAConfigError)
{
    ASSERT_EQ(run(quick("train")).code, 0);
    const auto ck = only_dir("train-") / "checkpoint.bin";
    // Synthetic CIFAR-10 directory built from one real record.
    const auto rec = read(kFixtures / "cifar10_one.bin");
    const auto cdir = out / "cifar" / "cifar-10-batches-bin";
    fs::create_directories(cdir);
    std::string many;
    for (int i = 0; i < 10; ++i)
        many += rec;
    for (const char* f : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                          "data_batch_5.bin", "test_batch.bin"})
        std::ofstream(cdir / f, std::ios::binary) << many;
    auto r = run("gdv --checkpoint " + ck.string() + " --dataset cifar10 --data-dir " + (out / "cifar").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("expects input"), std::string::npos) << r.output;
}

TEST_F(Cli, CompareWithZeroLambdasHasNoDelta)
{
    auto r = run(quick("compare", "--lambdas 0"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto dir = only_dir("compare-");
    const auto csv = lines(dir / "compare.csv");
    ASSERT_EQ(csv.size(), 4u);
    for (std::size_t i = 1; i < csv.size(); ++i) {
        const auto f = fields(csv[i]);
        ASSERT_EQ(f.size(), 5u);
        EXPECT_EQ(std::stod(f[4]), 0.0) << csv[i];
    }
    const auto txt = lines(dir / "compare.txt");
    ASSERT_FALSE(txt.empty());
    EXPECT_EQ(std::stod(fields(txt.back())[1]), 0.0);
    EXPECT_TRUE(fs::exists(dir / "vanilla" / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(dir / "hcl" / "checkpoint.bin"));
}

TEST_F(Cli, GridRowsAndBestConfigReproduces)
{
    auto r = run(quick("grid", "--set grid.lr=0.001,0.05 --set 'grid.lambdas=0.1;1'"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto dir = only_dir("grid-");
    const auto csv = lines(dir / "grid.csv");
    ASSERT_EQ(csv.size(), 1u + 4u);
    std::string best_acc;
    for (std::size_t i = 1; i < csv.size(); ++i)
        if (fields(csv[i])[0] == "1")
            best_acc = fields(csv[i])[3];
    ASSERT_FALSE(best_acc.empty());

    auto t = run("train --config " + (dir / "best_config.txt").string());
    ASSERT_EQ(t.code, 0) << t.output;
    EXPECT_EQ(summary(only_dir("train-") / "summary.txt")["best_val_accuracy"], best_acc);
}

TEST_F(Cli, GridRejectsLambdaVectorOfWrongLength)
{
    auto r = run(quick("grid", "--set grid.lambdas=0.1,0.2,0.3"));
    EXPECT_EQ(r.code, 2);
}
