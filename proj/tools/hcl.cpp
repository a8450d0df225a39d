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

// hcl: train, evaluate and profile networks with hidden classification heads.
//
//   hcl train   [--config FILE] [options]
//   hcl compare [--config FILE] [options]   vanilla vs. heads, same seeds
//   hcl grid    [--config FILE] [options]   lr x lambda search on validation
//   hcl eval    --checkpoint FILE [--split train|val|test]
//   hcl gdv     --checkpoint FILE [--split train|test|both] [--raw]
//
// Exit codes: 0 ok, 2 bad config or usage, 3 data problem, 4 divergence.

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "hcl/experiment.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    Overrides direct; // filled by typed flags, applied after --set
};

void add_common(CLI::App* sub, CommonFlags& f)
{
    auto flag = [&f, sub](const std::string& name, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(
            name, [&f, key](const std::string& v) { f.direct.emplace_back(key, v); }, help);
    };
    flag("--data-dir", "data_dir", "dataset root");
    flag("--out-dir", "out_dir", "artifact root");
    flag("--seed", "seed", "master seed");
    flag("--train-limit", "train_limit", "use at most N training samples (0 = all)");
    flag("--test-limit", "test_limit", "use at most N test samples (0 = all)");
    flag("--dataset", "dataset", "mnist | fashion-mnist | cifar10 | cifar100");
    sub->add_option("--set", f.sets, "override any config key, as key=value")->take_all();
}

void add_training(CLI::App* sub, CommonFlags& f)
{
    sub->add_option("--config", f.config, "key = value config file");
    auto flag = [&f, sub](const std::string& name, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(
            name, [&f, key](const std::string& v) { f.direct.emplace_back(key, v); }, help);
    };
    flag("--model", "model", "mlp | lenet5 | hinton");
    flag("--heads", "heads", "all | none | comma-separated layer indices");
    flag("--lambdas", "lambdas", "comma-separated head weights");
    flag("--lr", "lr", "learning rate");
    flag("--max-epochs", "max_epochs", "epoch budget");
    flag("--patience", "patience", "early stopping patience");
    flag("--batch-size", "batch_size", "mini-batch size");
}

Overrides collect(const CommonFlags& f)
{
    Overrides out;
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw hcl::ConfigError("--set expects key=value, got '" + s + "'");
        out.emplace_back(hcl::detail::trim(s.substr(0, eq)), s.substr(eq + 1));
    }
    out.insert(out.end(), f.direct.begin(), f.direct.end());
    return out;
}

hcl::ExperimentConfig training_config(const CommonFlags& f)
{
    auto cfg = f.config.empty() ? hcl::ExperimentConfig{} : hcl::ExperimentConfig::load(f.config);
    for (const auto& [k, v] : collect(f))
        cfg.set(k, v);
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hidden classification layers: training and separability profiling"};
    app.require_subcommand(1);

    CommonFlags train_f, compare_f, grid_f, eval_f, gdv_f;
    auto* train = app.add_subcommand("train", "train one model and write checkpoint, metrics and summary");
    add_common(train, train_f);
    add_training(train, train_f);
    auto* compare = app.add_subcommand("compare", "train vanilla and head-augmented models with equal seeds");
    add_common(compare, compare_f);
    add_training(compare, compare_f);
    auto* grid = app.add_subcommand("grid", "learning rate and lambda grid search on validation accuracy");
    add_common(grid, grid_f);
    add_training(grid, grid_f);

    std::string eval_ckpt, eval_split = "test";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, eval_f);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--split", eval_split, "train | val | test")
        ->check(CLI::IsMember({"train", "val", "test"}));

    std::string gdv_ckpt, gdv_split = "test";
    bool gdv_raw = false;
    auto* gdv = app.add_subcommand("gdv", "per-layer separability profile of a checkpoint");
    add_common(gdv, gdv_f);
    gdv->add_option("--checkpoint", gdv_ckpt, "checkpoint file")->required();
    gdv->add_option("--split", gdv_split, "train | test | both")
        ->check(CLI::IsMember({"train", "test", "both"}));
    gdv->add_flag("--raw", gdv_raw, "skip the per-dimension z-scoring");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return hcl::cli::kUsage;
    }

    return hcl::cli::run_guarded([&] {
        if (train->parsed())
            hcl::cli::cmd_train(training_config(train_f));
        else if (compare->parsed())
            hcl::cli::cmd_compare(training_config(compare_f));
        else if (grid->parsed())
            hcl::cli::cmd_grid(training_config(grid_f));
        else if (eval->parsed())
            hcl::cli::cmd_eval(eval_ckpt, collect(eval_f), eval_split);
        else if (gdv->parsed())
            hcl::cli::cmd_gdv(gdv_ckpt, collect(gdv_f), gdv_split, gdv_raw);
    });
}
