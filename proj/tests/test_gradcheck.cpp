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

#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace hcl;

class GradCheck : public ::testing::TestWithParam<std::size_t> { };

TEST_P(GradCheck, AnalyticMatchesCentralDifference)
{
    const auto c = hcl::testing::gradcheck_cases().at(GetParam());
    SCOPED_TRACE(c.name);
    for (std::uint64_t seed : {1u, 2u}) {
        auto [x, y] = hcl::testing::random_batch(c.spec, c.batch, seed + 10);
        auto r = hcl::testing::gradcheck(hcl::testing::with_all_heads(c.spec, seed), x, y, seed);
        EXPECT_LT(r.max_rel_err, hcl::testing::kGradTol) << "seed " << seed << " worst " << r.worst;
        EXPECT_GT(r.checked, 0u);
        // Kink-straddling probes are excluded from scoring; keep them rare.
        EXPECT_LE(r.kinks * 100, r.checked + r.kinks) << "seed " << seed;
    }
}

TEST_P(GradCheck, VanillaBackboneAlsoMatches)
{
    const auto c = hcl::testing::gradcheck_cases().at(GetParam());
    auto [x, y] = hcl::testing::random_batch(c.spec, c.batch, 5);
    auto r = hcl::testing::gradcheck(make_vanilla<double>(c.spec, 3), x, y, 3);
    EXPECT_LT(r.max_rel_err, hcl::testing::kGradTol) << c.name << " worst " << r.worst;
    EXPECT_LE(r.kinks * 100, r.checked + r.kinks) << c.name;
}

INSTANTIATE_TEST_SUITE_P(Layers, GradCheck, ::testing::Range<std::size_t>(0, hcl::testing::gradcheck_cases().size()),
                         [](const auto& info) { return hcl::testing::gradcheck_cases().at(info.param).name; });

TEST(GradCheckOracle, FlagsProbesAcrossAReluKink)
{
    // One ReLU unit whose pre-activation is 0.5e-5 from zero: perturbing its
    // bias by +-1e-5 crosses the kink and must be excluded, not scored.
    NetworkSpec spec({1}, {Dense{1, 1, Activation::Relu}, Dense{1, 2}});
    auto m = make_vanilla<double>(spec, 1);
    m.params[0].weight[0] = 1.0;
    m.params[0].bias[0] = 0.0;
    auto r = hcl::testing::gradcheck(m, Tensor<double>({1, 1}, -0.5e-5), {0});
    EXPECT_GE(r.kinks, 2u); // the bias and the input both cross
    EXPECT_LT(r.max_rel_err, hcl::testing::kGradTol);
}

TEST(GradCheckOracle, DetectsAWrongGradient)
{
    // Sanity of the oracle itself: a corrupted analytic gradient is caught.
    NetworkSpec spec({3}, {Dense{3, 2, Activation::Tanh}, Dense{2, 2}});
    auto m = make_vanilla<double>(spec, 1);
    auto [x, y] = hcl::testing::random_batch(spec, 2, 1);
    RngStream rng(1, StreamId::Dropout);
    auto g = hcl_backward(m, hcl_forward(m, x, Mode::Train, &rng), std::span<const int>(y));
    const double loss = hcl::testing::composite_loss(m, x, y, 1);
    m.params[0].weight[0] += 1e-5;
    const double up = hcl::testing::composite_loss(m, x, y, 1);
    m.params[0].weight[0] -= 2e-5;
    const double down = hcl::testing::composite_loss(m, x, y, 1);
    const double fd = (up - down) / 2e-5;
    EXPECT_LT(hcl::testing::rel_err(g.backbone[0].weight[0], fd), 1e-4);
    EXPECT_GT(hcl::testing::rel_err(1.01 * g.backbone[0].weight[0], fd), 1e-3);
    EXPECT_TRUE(std::isfinite(loss));
}
