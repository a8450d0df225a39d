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

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "hcl/hcl.hpp"

using namespace hcl;

namespace {

NetworkSpec small_lenet()
{
    return lenet5_spec(5, {{1, 12, 12}, 2, 3, 4, 6, 3, Activation::Tanh});
}

} // namespace

TEST(AttachHeads, EmptyListIsVanilla)
{
    auto v = make_vanilla<float>(small_lenet(), 1);
    RngStream hr(1, StreamId::HeadInit);
    auto m = attach_heads(v, {}, 5, hr);
    EXPECT_TRUE(m.is_vanilla());
    EXPECT_EQ(m, v);
}

TEST(AttachHeads, EveryHiddenLayerOfLeNet)
{
    auto spec = lenet5_spec(10);
    auto v = make_vanilla<float>(spec, 1);
    RngStream hr(1, StreamId::HeadInit);
    auto m = attach_heads(v, hidden_layers(spec), 10, hr);
    EXPECT_EQ(m.heads.size(), spec.size() - 1);
    EXPECT_EQ(m.heads.size(), 6u);
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
        EXPECT_EQ(m.heads[i].layer, i);
        EXPECT_EQ(m.heads[i].weight.shape(), (Shape{shape_size(spec.output_shape(i)), 10}));
        EXPECT_NEAR(m.lambdas[i], 1.0 / 6.0, 1e-15);
    }
    // Backbone untouched.
    EXPECT_EQ(m.params, v.params);
}

TEST(AttachHeads, ContractViolations)
{
    auto spec = small_lenet();
    auto v = make_vanilla<float>(spec, 1);
    RngStream hr(1, StreamId::HeadInit);
    EXPECT_THROW(attach_heads(v, {6}, 5, hr), ArgumentError);   // final classifier
    EXPECT_THROW(attach_heads(v, {9}, 5, hr), ArgumentError);   // out of range
    EXPECT_THROW(attach_heads(v, {1, 1}, 5, hr), ArgumentError); // duplicate
    EXPECT_THROW(attach_heads(v, {1}, 1, hr), ArgumentError);    // too few classes
    EXPECT_THROW(attach_heads(v, {1, 2}, 5, hr, {0.5}), ArgumentError);
    EXPECT_THROW(attach_heads(v, {1}, 5, hr, {-0.5}), ArgumentError);
}

TEST(AttachHeads, HeadStreamIsolatedFromBackbone)
{
    // Head weights depend only on the head-init stream.
    auto spec = small_lenet();
    RngStream a(7, StreamId::HeadInit), b(7, StreamId::HeadInit);
    auto m1 = attach_heads(make_vanilla<float>(spec, 1), {2, 4}, 5, a);
    auto m2 = attach_heads(make_vanilla<float>(spec, 99), {2, 4}, 5, b);
    EXPECT_EQ(m1.heads, m2.heads);
    EXPECT_NE(m1.params, m2.params);
}

TEST(HclForward, ZeroHeadsGiveUniformSoftmax)
{
    auto spec = small_lenet();
    RngStream hr(1, StreamId::HeadInit);
    auto m = attach_heads(make_vanilla<double>(spec, 1), hidden_layers(spec), 5, hr);
    for (auto& h : m.heads) {
        h.weight.fill(0);
        h.bias.fill(0);
    }
    auto [x, y] = hcl::testing::random_batch(spec, 4, 1);
    auto out = hcl_forward(m, x, Mode::Eval);
    auto loss = hcl_loss<double>(out.head_logits, out.final_logits(), y, m.lambdas);
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
        for (double v : out.head_logits[i].span())
            EXPECT_EQ(v, 0.0);
        EXPECT_NEAR(loss.per_head_loss[i], std::log(5.0), 1e-12);
    }
}

TEST(HclForward, NoHeadsMatchesVanillaBitForBit)
{
    auto spec = small_lenet();
    auto v = make_vanilla<float>(spec, 4);
    Tensor<float> x({3, 1, 12, 12}, 0.3f);
    auto out = hcl_forward(v, x, Mode::Eval);
    EXPECT_TRUE(out.head_logits.empty());
    EXPECT_EQ(out.final_logits(), forward(spec, v.params, x, Mode::Eval).logits());
}

TEST(HclForward, IdentityHeadOnIdentityBackbone)
{
    NetworkSpec spec({2}, {Dense{2, 2, Activation::Identity}, Dense{2, 2, Activation::Identity}});
    auto m = make_vanilla<double>(spec, 1);
    m.params[0].weight = Tensor<double>::matrix({{1, 0}, {0, 1}});
    RngStream hr(1, StreamId::HeadInit);
    m = attach_heads(m, {0}, 2, hr);
    m.heads[0].weight = Tensor<double>::matrix({{1, 0}, {0, 1}});
    m.heads[0].bias.fill(0);
    auto out = hcl_forward(m, Tensor<double>::matrix({{3, 7}}), Mode::Eval);
    EXPECT_EQ(out.head_logits[0], Tensor<double>::matrix({{3, 7}}));
}

TEST(HclForward, HeadsNeverFeedForward)
{
    auto spec = small_lenet();
    RngStream hr(1, StreamId::HeadInit);
    auto m = attach_heads(make_vanilla<double>(spec, 1), hidden_layers(spec), 5, hr);
    auto [x, y] = hcl::testing::random_batch(spec, 2, 3);
    auto before = hcl_forward(m, x, Mode::Eval);
    for (auto& h : m.heads)
        h.weight.fill(123.0);
    auto after = hcl_forward(m, x, Mode::Eval);
    for (std::size_t l = 0; l < spec.size(); ++l)
        EXPECT_EQ(before.trace.per_layer[l], after.trace.per_layer[l]);
}

TEST(HclLoss, ZeroLambdasReduceToFinal)
{
    auto f = Tensor<double>::matrix({{1, 2, 0.5}, {0, 0, 3}});
    auto h = Tensor<double>::matrix({{4, 0, 0}, {1, 1, 1}});
    const std::vector<int> y{1, 2};
    const std::vector<Tensor<double>> heads{h, h};
    const std::vector<double> lam{0, 0};
    auto r = hcl_loss<double>(heads, f, y, lam);
    EXPECT_EQ(r.total, r.final_loss);
    EXPECT_EQ(r.final_loss, softmax_cross_entropy(f, std::span<const int>(y)).loss);
}

TEST(HclLoss, HalfWeightedCopiesDoubleTheLoss)
{
    auto f = Tensor<double>::matrix({{1, 2, 0.5}, {0, 0, 3}});
    const std::vector<int> y{1, 0};
    const std::vector<Tensor<double>> heads{f, f};
    const std::vector<double> lam{0.5, 0.5};
    auto r = hcl_loss<double>(heads, f, y, lam);
    EXPECT_NEAR(r.total, 2.0 * r.final_loss, 1e-15);
    // Recomposition from the parts.
    EXPECT_NEAR(r.total, r.final_loss + 0.5 * r.per_head_loss[0] + 0.5 * r.per_head_loss[1], 1e-6 * r.total);
}

TEST(HclLoss, Errors)
{
    auto f = Tensor<double>::matrix({{1, 2}});
    const std::vector<int> y{0};
    const std::vector<Tensor<double>> heads{f, f};
    EXPECT_THROW(hcl_loss<double>(heads, f, y, std::vector<double>{1.0}), ArgumentError);
    EXPECT_THROW(hcl_loss<double>(heads, f, y, std::vector<double>{1.0, -1.0}), ArgumentError);
}

TEST(HclLoss, AccuracyTiesGoToLowestClass)
{
    auto f = Tensor<double>({4, 3});
    const std::vector<int> y{0, 1, 2, 0};
    EXPECT_DOUBLE_EQ(accuracy(f, std::span<const int>(y)), 0.5);
}

TEST(HclBackward, ZeroLambdasBitIdenticalToVanilla)
{
    auto spec = small_lenet();
    auto v = make_vanilla<float>(spec, 2);
    RngStream hr(2, StreamId::HeadInit);
    auto m = attach_heads(v, hidden_layers(spec), 5, hr, std::vector<double>(6, 0.0));
    Tensor<float> x({4, 1, 12, 12});
    RngStream r(1, StreamId::Augment);
    for (auto& e : x.span())
        e = static_cast<float>(r.uniform());
    const std::vector<int> y{0, 1, 2, 3};
    auto gm = hcl_backward(m, hcl_forward(m, x, Mode::Train), std::span<const int>(y));
    auto gv = hcl_backward(v, hcl_forward(v, x, Mode::Train), std::span<const int>(y));
    EXPECT_EQ(gm.backbone, gv.backbone);
    EXPECT_EQ(gm.dinput, gv.dinput);
}

TEST(HclBackward, DoublingLambdaDoublesHeadGradient)
{
    auto spec = small_lenet();
    auto base = make_vanilla<double>(spec, 3);
    RngStream h1(3, StreamId::HeadInit), h2(3, StreamId::HeadInit), h0(3, StreamId::HeadInit);
    const std::vector<std::size_t> layers{1, 3, 5};
    auto m1 = attach_heads(base, layers, 5, h1, {0.2, 0.3, 0.4});
    auto m2 = attach_heads(base, layers, 5, h2, {0.4, 0.6, 0.8});
    auto m0 = attach_heads(base, layers, 5, h0, {0.0, 0.0, 0.0});
    auto [x, y] = hcl::testing::random_batch(spec, 3, 9);
    auto g1 = hcl_backward(m1, hcl_forward(m1, x, Mode::Eval), std::span<const int>(y));
    auto g2 = hcl_backward(m2, hcl_forward(m2, x, Mode::Eval), std::span<const int>(y));
    auto g0 = hcl_backward(m0, hcl_forward(m0, x, Mode::Eval), std::span<const int>(y));
    for (std::size_t h = 0; h < layers.size(); ++h)
        for (std::size_t k = 0; k < g1.heads[h].weight.size(); ++k)
            EXPECT_EQ(g2.heads[h].weight[k], 2.0 * g1.heads[h].weight[k]);
    // Backbone gradient is affine in lambda: g(2l) - g(0) == 2 (g(l) - g(0)).
    for (std::size_t l = 0; l < spec.size(); ++l) {
        if (g1.backbone[l].empty())
            continue;
        for (std::size_t k = 0; k < g1.backbone[l].weight.size(); ++k) {
            const double d1 = g1.backbone[l].weight[k] - g0.backbone[l].weight[k];
            const double d2 = g2.backbone[l].weight[k] - g0.backbone[l].weight[k];
            EXPECT_NEAR(d2, 2.0 * d1, 1e-12);
        }
    }
}

TEST(StripHeads, RoundTripAndEquivalence)
{
    auto spec = small_lenet();
    auto v = make_vanilla<float>(spec, 5);
    RngStream hr(5, StreamId::HeadInit);
    auto m = attach_heads(v, hidden_layers(spec), 5, hr);
    auto s = strip_heads(m);
    EXPECT_EQ(s, v);
    Tensor<float> x({6, 1, 12, 12}, 0.7f);
    EXPECT_EQ(hcl_forward(s, x, Mode::Eval).final_logits(), hcl_forward(m, x, Mode::Eval).final_logits());
}
