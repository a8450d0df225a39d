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

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "hcl/trainer.hpp"

using namespace hcl;

namespace {

const std::filesystem::path kTiny = std::filesystem::path(HCL_FIXTURE_DIR) / "tiny/mnist";

TrainVal tiny_split()
{
    auto ds = load_idx_dir(kTiny, Split::Train, "tiny");
    RngStream r(1, StreamId::Shuffle);
    return split_validation(ds, 0.25, r);
}

NetworkSpec tiny_mlp()
{
    return mlp_spec({1, 28, 28}, {16, 12}, 10, Activation::Tanh);
}

HclModel<float> tiny_hcl(std::vector<double> lambdas)
{
    RngStream hr(1, StreamId::HeadInit);
    return attach_heads(make_vanilla<float>(tiny_mlp(), 1), {0, 1}, 10, hr, std::move(lambdas));
}

TrainConfig quick(int epochs)
{
    TrainConfig c;
    c.lr = 0.01;
    c.max_epochs = epochs;
    c.patience = epochs;
    c.batch_size = 16;
    return c;
}

// Feeds a scripted validation-loss sequence through the stopping loop.
struct Scripted {
    std::vector<double> losses;
    std::vector<int> bests;
    bool finished = false;

    FitReport run(int max_epochs, int patience)
    {
        return early_stopping_loop(
            max_epochs, patience,
            [&](int e) {
                EpochRow r;
                r.epoch = e;
                r.val_loss = losses.at(static_cast<std::size_t>(e - 1));
                r.val_accuracy = 1.0 / r.val_loss;
                return r;
            },
            [&](int e) { bests.push_back(e); }, [&] { finished = true; });
    }
};

} // namespace

TEST(Sgd, PlainStep)
{
    auto p = Tensor<double>::vector({1.0});
    Tensor<double> v({1});
    sgd_step(p, Tensor<double>::vector({2.0}), v, 0.1, 0.0);
    EXPECT_DOUBLE_EQ(p[0], 0.8);
}

TEST(Sgd, ZeroGradientLeavesParameter)
{
    auto p = Tensor<double>::vector({1.5, -2.0});
    Tensor<double> v({2});
    sgd_step(p, Tensor<double>({2}), v, 0.5, 0.9);
    EXPECT_EQ(p, Tensor<double>::vector({1.5, -2.0}));
}

TEST(Sgd, MomentumAccumulates)
{
    // v1 = 1, p = 0 - 1 = -1; v2 = 0.9 + 1 = 1.9, p = -1 - 1.9 = -2.9
    auto p = Tensor<double>::vector({0.0});
    Tensor<double> v({1});
    const auto g = Tensor<double>::vector({1.0});
    sgd_step(p, g, v, 1.0, 0.9);
    sgd_step(p, g, v, 1.0, 0.9);
    EXPECT_NEAR(p[0], -2.9, 1e-15);
    EXPECT_THROW(sgd_step(p, Tensor<double>({2}), v, 1.0, 0.9), DimensionError);
}

TEST(EarlyStop, StopsAfterPatienceAndRestoresBest)
{
    Scripted s{{5, 4, 3, 3.5, 2, 2.1, 2.2, 2.3, 2.4, 1.0}};
    auto r = s.run(10, 3);
    EXPECT_EQ(r.best_epoch, 5);
    EXPECT_EQ(r.rows.size(), 8u);
    EXPECT_EQ(r.stop_reason, "patience");
    EXPECT_EQ(s.bests, (std::vector<int>{1, 2, 3, 5}));
    EXPECT_TRUE(s.finished);
    EXPECT_DOUBLE_EQ(r.best_val_loss, 2.0);
    EXPECT_DOUBLE_EQ(r.best_val_accuracy, 0.5);
}

TEST(EarlyStop, EqualLossIsNotAnImprovement)
{
    Scripted s{{1, 1, 1, 1}};
    auto r = s.run(4, 2);
    EXPECT_EQ(r.best_epoch, 1);
    EXPECT_EQ(r.rows.size(), 3u);
}

TEST(EarlyStop, PatienceAtLeastMaxRunsEveryEpoch)
{
    Scripted s{{5, 6, 7, 8, 9}};
    auto r = s.run(5, 5);
    EXPECT_EQ(r.rows.size(), 5u);
    EXPECT_EQ(r.stop_reason, "max_epochs");
    EXPECT_EQ(r.best_epoch, 1);
}

TEST(Lambdas, BroadcastAndMismatch)
{
    auto m = tiny_hcl({0.5, 0.5});
    apply_lambdas(m, {0.2});
    EXPECT_EQ(m.lambdas, (std::vector<double>{0.2, 0.2}));
    apply_lambdas(m, {0.1, 0.3});
    EXPECT_EQ(m.lambdas, (std::vector<double>{0.1, 0.3}));
    EXPECT_THROW(apply_lambdas(m, {0.1, 0.2, 0.3}), ArgumentError);
    auto v = make_vanilla<float>(tiny_mlp(), 1);
    apply_lambdas(v, {0.1, 0.2, 0.3}); // inert without heads
    EXPECT_TRUE(v.lambdas.empty());
}

TEST(Fit, ZeroLambdaTrajectoryMatchesVanilla)
{
    auto tv = tiny_split();
    std::vector<HclModel<float>> a, b;
    FitOptions<float> oa, ob;
    oa.on_model = [&](int, const HclModel<float>& m) { a.push_back(strip_heads(m)); };
    ob.on_model = [&](int, const HclModel<float>& m) { b.push_back(m); };
    auto ra = fit(tiny_hcl({0.0, 0.0}), tv.train, tv.val, quick(3), oa);
    auto rb = fit(make_vanilla<float>(tiny_mlp(), 1), tv.train, tv.val, quick(3), ob);
    ASSERT_EQ(a.size(), 3u);
    ASSERT_EQ(b.size(), 3u);
    for (std::size_t e = 0; e < 3; ++e)
        EXPECT_TRUE(a[e].params == b[e].params) << "epoch " << e + 1;
    for (std::size_t e = 0; e < 3; ++e)
        EXPECT_EQ(ra.report.rows[e].val_loss, rb.report.rows[e].val_loss);
}

TEST(Fit, NonZeroLambdaChangesTrajectory)
{
    auto tv = tiny_split();
    auto ra = fit(tiny_hcl({0.5, 0.5}), tv.train, tv.val, quick(2));
    auto rb = fit(make_vanilla<float>(tiny_mlp(), 1), tv.train, tv.val, quick(2));
    EXPECT_NE(ra.last.params, rb.last.params);
}

TEST(Fit, DeterministicAndLearns)
{
    auto tv = tiny_split();
    auto cfg = quick(15);
    cfg.lr = 0.05;
    auto r1 = fit(tiny_hcl({0.3, 0.3}), tv.train, tv.val, cfg);
    auto r2 = fit(tiny_hcl({0.3, 0.3}), tv.train, tv.val, cfg);
    EXPECT_EQ(r1.best, r2.best);
    EXPECT_LT(r1.report.rows.back().train_final, r1.report.rows.front().train_final);
    EXPECT_GT(r1.report.best_val_accuracy, 0.5);
    // Best parameters reproduce the reported best validation loss.
    EXPECT_NEAR(evaluate(r1.best, tv.val).loss, r1.report.best_val_loss, 1e-12);
}

TEST(Fit, RejectsBadConfig)
{
    auto tv = tiny_split();
    auto cfg = quick(1);
    cfg.lr = 0;
    EXPECT_THROW(fit(tiny_hcl({}), tv.train, tv.val, cfg), ConfigError);
    cfg = quick(1);
    cfg.lambdas = {-1};
    EXPECT_THROW(fit(tiny_hcl({}), tv.train, tv.val, cfg), ConfigError);
}

TEST(Evaluate, OneHotInputsOnIdentityNetwork)
{
    NetworkSpec spec({3}, {Dense{3, 3, Activation::Identity}});
    auto m = make_vanilla<float>(spec, 1);
    m.params[0].weight = Tensor<float>::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    m.params[0].bias.fill(0);
    Dataset ds;
    ds.num_classes = 3;
    ds.images = Tensor<float>({7, 3});
    for (int i = 0; i < 7; ++i) {
        ds.labels.push_back(i % 3);
        ds.images[static_cast<std::size_t>(i * 3 + i % 3)] = 1.0f;
    }
    EXPECT_DOUBLE_EQ(evaluate(m, ds, 2).accuracy, 1.0);
    // Zero logits: every prediction is class 0.
    m.params[0].weight.fill(0);
    EXPECT_DOUBLE_EQ(evaluate(m, ds, 2).accuracy, 3.0 / 7.0);
}

TEST(Evaluate, HeadsDoNotAffectFinalAccuracy)
{
    auto tv = tiny_split();
    auto m = tiny_hcl({1.0, 1.0});
    const auto a = evaluate(m, tv.val), b = evaluate(strip_heads(m), tv.val);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.head_accuracy.size(), 2u);
}

TEST(Grid, SingleCell)
{
    auto tv = tiny_split();
    GridSpec g{{1e-2}, {{0.5}}};
    auto res = grid_search<float>(g, [] { return tiny_hcl({}); }, tv.train, tv.val, quick(2));
    ASSERT_EQ(res.rows.size(), 1u);
    EXPECT_EQ(res.best().lr, 1e-2);
    EXPECT_EQ(res.rows[0].epochs_run, 2);
}

TEST(Grid, FullProductRankedAndReproducible)
{
    auto tv = tiny_split();
    GridSpec g{{1e-3, 1e-2}, {{0.1}, {0.5}, {1.0}}};
    std::size_t seen = 0;
    auto build = [] { return tiny_hcl({}); };
    auto res = grid_search<float>(g, build, tv.train, tv.val, quick(3), [&](const GridRow&) { ++seen; });
    ASSERT_EQ(res.rows.size(), 6u);
    EXPECT_EQ(seen, 6u);
    for (std::size_t i = 1; i < res.ranked.size(); ++i) {
        const auto& p = res.rows[res.ranked[i - 1]];
        const auto& q = res.rows[res.ranked[i]];
        EXPECT_GE(p.val_accuracy, q.val_accuracy);
    }
    // Re-running the winning cell reproduces its validation accuracy.
    auto cfg = quick(3);
    cfg.lr = res.best().lr;
    cfg.lambdas = res.best().lambdas;
    EXPECT_EQ(fit(build(), tv.train, tv.val, cfg).report.best_val_accuracy, res.best().val_accuracy);
}

TEST(Grid, LambdasInertForVanilla)
{
    auto tv = tiny_split();
    GridSpec g{{1e-2}, {{0.1}, {1.0}}};
    auto res = grid_search<float>(g, [] { return make_vanilla<float>(tiny_mlp(), 1); }, tv.train, tv.val, quick(2));
    EXPECT_EQ(res.rows[0].val_loss, res.rows[1].val_loss);
}

TEST(Grid, RankingRules)
{
    std::vector<GridRow> rows(4);
    rows[0].lr = 0.1;
    rows[0].diverged = true;
    rows[0].val_accuracy = 1.0;
    rows[1].lr = 0.01;
    rows[1].val_accuracy = 0.8;
    rows[1].val_loss = 0.5;
    rows[2].lr = 0.001;
    rows[2].val_accuracy = 0.8;
    rows[2].val_loss = 0.4;
    rows[3].lr = 0.0001;
    rows[3].val_accuracy = 0.8;
    rows[3].val_loss = 0.4;
    EXPECT_EQ(rank_grid(rows), (std::vector<std::size_t>{3, 2, 1, 0}));
}

TEST(Grid, DivergenceIsRecordedNotFatal)
{
    auto tv = tiny_split();
    for (auto& v : tv.train.images.span())
        v *= 1e18f;
    GridSpec g{{1e-1}, {{1.0}}};
    NetworkSpec spec({1, 28, 28}, {Dense{784, 32, Activation::Identity}, Dense{32, 10}});
    auto res = grid_search<float>(g, [&] { return make_vanilla<float>(spec, 1); }, tv.train, tv.val, quick(3));
    ASSERT_EQ(res.rows.size(), 1u);
    EXPECT_TRUE(res.rows[0].diverged);
    EXPECT_EQ(res.rows[0].stop_reason, "diverged");
    EXPECT_THROW(grid_search<float>(GridSpec{{0.5}, {{1.0}}}, [&] { return make_vanilla<float>(spec, 1); },
                                    tv.train, tv.val, quick(1)),
                 ConfigError);
}
