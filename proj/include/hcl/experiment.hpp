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

// Experiment commands behind the `hcl` CLI. Each command writes its
// artifacts under <out_dir>/<command>-<run id>/ and reports failures as
// exceptions that map onto stable exit codes.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <string>

#include "hcl/checkpoint.hpp"
#include "hcl/config.hpp"
#include "hcl/gdv.hpp"

namespace hcl::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kDivergence = 4, kInternal = 1 };

struct ExperimentData {
    Dataset train; // after the validation split
    Dataset val;
    Dataset test;
};

inline fs::path dataset_dir(const ExperimentConfig& cfg)
{
    static const std::map<std::string, std::string> sub{{"mnist", "mnist"},
                                                       {"fashion-mnist", "fashion-mnist"},
                                                       {"cifar10", "cifar-10-batches-bin"},
                                                       {"cifar100", "cifar-100-binary"}};
    return fs::path(cfg.data_dir) / sub.at(cfg.dataset);
}

inline ExperimentData load_experiment_data(const ExperimentConfig& cfg)
{
    const fs::path dir = dataset_dir(cfg);
    if (!fs::is_directory(dir))
        throw DataError("dataset directory not found: " + dir.string());
    Dataset train, test;
    if (cfg.dataset == "mnist" || cfg.dataset == "fashion-mnist") {
        train = load_idx_dir(dir, Split::Train, cfg.dataset);
        test = load_idx_dir(dir, Split::Test, cfg.dataset);
    } else {
        auto tt = load_cifar(dir, cfg.dataset == "cifar10" ? CifarVariant::Cifar10 : CifarVariant::Cifar100);
        train = std::move(tt.train);
        test = std::move(tt.test);
    }
    train = take_limit(train, cfg.train_limit, cfg.seed);
    test = take_limit(test, cfg.test_limit, cfg.seed);
    RngStream split_rng(cfg.seed, StreamId::Shuffle);
    auto tv = split_validation(train, cfg.val_fraction, split_rng);
    ExperimentData d{std::move(tv.train), std::move(tv.val), std::move(test)};
    if (cfg.standardize) {
        const auto st = channel_stats(d.train);
        standardize(d.train, st);
        standardize(d.val, st);
        standardize(d.test, st);
    }
    return d;
}

inline NetworkSpec build_spec(const ExperimentConfig& cfg, const Shape& input_shape, std::size_t num_classes)
{
    if (cfg.model == "mlp")
        return mlp_spec(input_shape, cfg.mlp_hidden, num_classes, parse_activation(cfg.mlp_activation));
    if (cfg.model == "lenet5") {
        LeNetOptions o;
        o.input_shape = input_shape;
        o.conv1 = cfg.lenet_widths[0];
        o.conv2 = cfg.lenet_widths[1];
        o.conv3 = cfg.lenet_widths[2];
        o.hidden = cfg.lenet_hidden;
        o.activation = parse_activation(cfg.lenet_activation);
        return lenet5_spec(num_classes, o);
    }
    HintonOptions o;
    o.conv1 = cfg.hinton_widths[0];
    o.conv2 = cfg.hinton_widths[1];
    o.conv3 = cfg.hinton_widths[2];
    o.dropout = cfg.hinton_dropout;
    o.activation = parse_activation(cfg.hinton_activation);
    return hinton_spec(num_classes, input_shape, o);
}

inline std::vector<std::size_t> head_layers(const ExperimentConfig& cfg, const NetworkSpec& spec)
{
    if (cfg.heads == "none")
        return {};
    if (cfg.heads == "all")
        return hidden_layers(spec);
    return detail::parse_sizes("heads", cfg.heads);
}

// Backbone from the backbone-init stream, heads from the head-init stream.
inline HclModel<float> build_model(const ExperimentConfig& cfg, const Shape& input_shape, std::size_t num_classes)
{
    const NetworkSpec spec = build_spec(cfg, input_shape, num_classes);
    auto model = make_vanilla<float>(spec, cfg.seed);
    const auto layers = head_layers(cfg, spec);
    if (layers.empty())
        return model;
    RngStream head_rng(cfg.seed, StreamId::HeadInit);
    try {
        model = attach_heads(std::move(model), layers, num_classes, head_rng);
        apply_lambdas(model, cfg.lambdas);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return model;
}

inline fs::path run_dir(const ExperimentConfig& cfg, const std::string& command)
{
    fs::path p = fs::path(cfg.out_dir) / (command + "-" + cfg.run_id());
    fs::create_directories(p);
    return p;
}

inline void write_text(const fs::path& p, const std::string& s)
{
    std::ofstream os(p, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write " + p.string());
    os << s;
}

inline std::string fmt(double v, int prec = 6)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
    fs::path dir;
    FitReport report;
    HclModel<float> model; // best-epoch parameters
    EvalResult test;
    bool vanilla_equivalent = false;
};

// Appends one CSV row per epoch and flushes, so a crashed run keeps its rows.
class MetricsWriter {
public:
    MetricsWriter(const fs::path& path, std::size_t heads)
      : m_os(path, std::ios::trunc)
    {
        m_os << "epoch,train_total,train_final";
        for (std::size_t h = 0; h < heads; ++h)
            m_os << ",train_head" << h;
        m_os << ",val_loss,val_accuracy";
        for (std::size_t h = 0; h < heads; ++h)
            m_os << ",val_head" << h << "_accuracy";
        m_os << '\n' << std::flush;
    }

    void append(const EpochRow& r)
    {
        m_os << r.epoch << ',' << fmt(r.train_total, 8) << ',' << fmt(r.train_final, 8);
        for (double v : r.train_head_loss)
            m_os << ',' << fmt(v, 8);
        m_os << ',' << fmt(r.val_loss, 8) << ',' << fmt(r.val_accuracy, 6);
        for (double v : r.val_head_accuracy)
            m_os << ',' << fmt(v, 6);
        m_os << '\n' << std::flush;
    }

private:
    std::ofstream m_os;
};

inline TrainOutcome train_in_dir(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& dir,
                                 std::ostream& log)
{
    auto model = build_model(cfg, data.train.sample_shape(), data.train.num_classes);
    MetricsWriter metrics(dir / "metrics.csv", model.heads.size());
    FitOptions<float> opt;
    opt.on_epoch = [&](const EpochRow& r) {
        metrics.append(r);
        log << "epoch " << r.epoch << "  train " << fmt(r.train_total, 4) << "  val_loss " << fmt(r.val_loss, 4)
            << "  val_acc " << fmt(r.val_accuracy, 4) << '\n';
    };
    auto fr = fit(model, data.train, data.val, cfg.train_config(), opt);
    // checkpoint.bin holds the selected (best-epoch) model; last.bin the
    // final-epoch model, which is what a resumed run continues from.
    save_checkpoint(dir / "checkpoint.bin", fr.best, &fr.state, cfg.to_text());
    save_checkpoint(dir / "last.bin", fr.last, &fr.state, cfg.to_text());
    TrainOutcome out{dir, fr.report, fr.best, evaluate(fr.best, data.test), false};
    out.vanilla_equivalent = fr.best.is_vanilla() || fr.best.lambdas_all_zero();

    std::ostringstream s;
    s << "run_id: " << cfg.run_id() << '\n'
      << "model: " << cfg.model << '\n'
      << "dataset: " << cfg.dataset << '\n'
      << "seed: " << cfg.seed << '\n'
      << "heads: " << fr.best.heads.size() << '\n'
      << "lambdas: " << detail::join(fr.best.lambdas) << '\n'
      << "vanilla_equivalent: " << (out.vanilla_equivalent ? "yes" : "no") << '\n'
      << "train_samples: " << data.train.size() << '\n'
      << "val_samples: " << data.val.size() << '\n'
      << "test_samples: " << data.test.size() << '\n'
      << "epochs_run: " << fr.report.rows.size() << '\n'
      << "best_epoch: " << fr.report.best_epoch << '\n'
      << "stop_reason: " << fr.report.stop_reason << '\n'
      << "best_val_loss: " << fmt(fr.report.best_val_loss, 8) << '\n'
      << "best_val_accuracy: " << fmt(fr.report.best_val_accuracy, 6) << '\n'
      << "test_accuracy: " << fmt(out.test.accuracy, 6) << '\n'
      << "test_loss: " << fmt(out.test.loss, 8) << '\n';
    for (std::size_t h = 0; h < out.test.head_accuracy.size(); ++h)
        s << "test_head" << h << "_layer" << fr.best.heads[h].layer << "_accuracy: "
          << fmt(out.test.head_accuracy[h], 6) << '\n';
    s << "wall_seconds: " << fmt(fr.report.wall_seconds, 2) << '\n';
    write_text(dir / "summary.txt", s.str());
    return out;
}

inline TrainOutcome cmd_train(const ExperimentConfig& cfg, std::ostream& log = std::cout)
{
    cfg.validate();
    const auto data = load_experiment_data(cfg);
    const auto dir = run_dir(cfg, "train");
    write_text(dir / "config.txt", cfg.to_text());
    auto out = train_in_dir(cfg, data, dir, log);
    log << "test accuracy " << fmt(out.test.accuracy, 4) << "  (" << dir.string() << ")\n";
    return out;
}

// ---------------------------------------------------------------------------
// eval / gdv
// ---------------------------------------------------------------------------

// Checkpoint's embedded config with the caller's overrides applied on top.
inline ExperimentConfig config_from_checkpoint(const Checkpoint& ck, const std::vector<std::pair<std::string, std::string>>& overrides)
{
    ExperimentConfig cfg = ExperimentConfig::parse(ck.config_text);
    for (const auto& [k, v] : overrides)
        cfg.set(k, v);
    cfg.validate();
    return cfg;
}

inline void check_input_shape(const HclModel<float>& model, const Dataset& ds)
{
    if (model.spec.input_shape() != ds.sample_shape())
        throw ConfigError("checkpoint expects input " + shape_str(model.spec.input_shape()) + " but dataset '"
                          + ds.name + "' has " + shape_str(ds.sample_shape()));
    if (model.spec.num_classes() != ds.num_classes)
        throw ConfigError("checkpoint has " + std::to_string(model.spec.num_classes()) + " classes, dataset has "
                          + std::to_string(ds.num_classes));
}

struct EvalOutcome {
    fs::path dir;
    EvalResult result;
};

inline EvalOutcome cmd_eval(const fs::path& checkpoint, const std::vector<std::pair<std::string, std::string>>& overrides,
                            const std::string& split, std::ostream& log = std::cout)
{
    const auto ck = load_checkpoint(checkpoint);
    const auto cfg = config_from_checkpoint(ck, overrides);
    const auto data = load_experiment_data(cfg);
    const Dataset& ds = split == "train" ? data.train : split == "val" ? data.val : data.test;
    check_input_shape(ck.model, ds);
    EvalOutcome out{run_dir(cfg, "eval"), evaluate(ck.model, ds)};
    std::ostringstream s;
    s << "split: " << split << "\nsamples: " << ds.size() << "\naccuracy: " << fmt(out.result.accuracy, 6)
      << "\nloss: " << fmt(out.result.loss, 8) << '\n';
    for (std::size_t h = 0; h < out.result.head_accuracy.size(); ++h)
        s << "head" << h << "_accuracy: " << fmt(out.result.head_accuracy[h], 6) << '\n';
    write_text(out.dir / "eval.txt", s.str());
    log << s.str();
    return out;
}

struct GdvOutcome {
    fs::path dir;
    std::vector<std::pair<std::string, GdvReport>> reports; // (split, report)
};

// split: "train", "test" or "both". A single split writes gdv.csv; "both"
// writes gdv_train.csv and gdv_test.csv.
inline GdvOutcome cmd_gdv(const fs::path& checkpoint, const std::vector<std::pair<std::string, std::string>>& overrides,
                          const std::string& split, bool raw, std::ostream& log = std::cout)
{
    if (split != "train" && split != "test" && split != "both")
        throw ConfigError("gdv: split must be train, test or both");
    const auto ck = load_checkpoint(checkpoint);
    auto cfg = config_from_checkpoint(ck, overrides);
    cfg.gdv_raw = cfg.gdv_raw || raw;
    const auto data = load_experiment_data(cfg);
    check_input_shape(ck.model, data.test);
    GdvOutcome out{run_dir(cfg, "gdv"), {}};
    GdvOptions opt;
    opt.normalize = !cfg.gdv_raw;
    opt.max_per_class = cfg.gdv_max_per_class;
    opt.seed = cfg.seed;
    for (const std::string s : {"train", "test"}) {
        if (split != "both" && split != s)
            continue;
        const Dataset& ds = s == "train" ? data.train : data.test;
        auto rep = gdv_profile(ck.model, ds.images, std::span<const int>(ds.labels), opt);
        const auto file = split == "both" ? out.dir / ("gdv_" + s + ".csv") : out.dir / "gdv.csv";
        std::ofstream os(file, std::ios::trunc);
        write_gdv_csv(os, rep);
        for (const auto& r : rep.per_layer)
            log << s << " layer " << r.layer_index << " (" << r.layer_kind << ")  GDV " << fmt(r.gdv, 4) << '\n';
        out.reports.emplace_back(s, std::move(rep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareOutcome {
    fs::path dir;
    TrainOutcome vanilla;
    TrainOutcome hcl;
    GdvReport gdv_vanilla;
    GdvReport gdv_hcl;
    double accuracy_delta = 0; // hcl - vanilla
};

inline CompareOutcome cmd_compare(const ExperimentConfig& cfg, std::ostream& log = std::cout)
{
    cfg.validate();
    const auto data = load_experiment_data(cfg);
    const auto dir = run_dir(cfg, "compare");
    write_text(dir / "config.txt", cfg.to_text());
    ExperimentConfig vcfg = cfg;
    vcfg.heads = "none";
    fs::create_directories(dir / "vanilla");
    fs::create_directories(dir / "hcl");
    log << "== vanilla\n";
    auto v = train_in_dir(vcfg, data, dir / "vanilla", log);
    log << "== hcl\n";
    auto h = train_in_dir(cfg, data, dir / "hcl", log);

    GdvOptions opt;
    opt.normalize = !cfg.gdv_raw;
    opt.max_per_class = cfg.gdv_max_per_class;
    opt.seed = cfg.seed;
    auto gv = gdv_profile(v.model, data.test.images, std::span<const int>(data.test.labels), opt);
    auto gh = gdv_profile(h.model, data.test.images, std::span<const int>(data.test.labels), opt);

    CompareOutcome out{dir, std::move(v), std::move(h), std::move(gv), std::move(gh), 0.0};
    out.accuracy_delta = out.hcl.test.accuracy - out.vanilla.test.accuracy;

    std::ofstream csv(dir / "compare.csv", std::ios::trunc);
    csv << "layer_index,layer_kind,gdv_vanilla,gdv_hcl,gdv_delta\n";
    for (std::size_t l = 0; l < out.gdv_vanilla.per_layer.size(); ++l) {
        const auto& a = out.gdv_vanilla.per_layer[l];
        const auto& b = out.gdv_hcl.per_layer[l];
        csv << a.layer_index << ',' << a.layer_kind << ',' << fmt(a.gdv, 10) << ',' << fmt(b.gdv, 10) << ','
            << fmt(b.gdv - a.gdv, 10) << '\n';
    }

    std::ostringstream s;
    s << "run,seed,heads,lambdas,test_accuracy,best_epoch,stop_reason\n"
      << "vanilla," << vcfg.seed << ",0,," << fmt(out.vanilla.test.accuracy, 6) << ','
      << out.vanilla.report.best_epoch << ',' << out.vanilla.report.stop_reason << '\n'
      << "hcl," << cfg.seed << ',' << out.hcl.model.heads.size() << ',' << detail::join(out.hcl.model.lambdas, ";")
      << ',' << fmt(out.hcl.test.accuracy, 6) << ',' << out.hcl.report.best_epoch << ','
      << out.hcl.report.stop_reason << '\n'
      << "accuracy_delta," << fmt(out.accuracy_delta, 6) << '\n';
    write_text(dir / "compare.txt", s.str());
    log << s.str();
    return out;
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

struct GridOutcome {
    fs::path dir;
    GridResult result;
    ExperimentConfig best;
};

inline GridOutcome cmd_grid(const ExperimentConfig& cfg, std::ostream& log = std::cout)
{
    cfg.validate();
    const auto data = load_experiment_data(cfg);
    const auto dir = run_dir(cfg, "grid");
    write_text(dir / "config.txt", cfg.to_text());
    auto build = [&] { return build_model(cfg, data.train.sample_shape(), data.train.num_classes); };
    // Validate every lambda vector against the head count before training.
    {
        auto probe = build();
        for (const auto& l : cfg.grid_lambdas)
            try {
                apply_lambdas(probe, l);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("grid.lambdas: ") + e.what());
            }
    }
    auto res = grid_search<float>(cfg.grid_spec(), build, data.train, data.val, cfg.train_config(),
                                  [&](const GridRow& r) {
                                      log << "lr " << detail::fmt_double(r.lr) << "  lambdas "
                                          << detail::join(r.lambdas, ";") << "  val_acc " << fmt(r.val_accuracy, 4)
                                          << (r.diverged ? "  (diverged)" : "") << '\n';
                                  });
    std::vector<std::size_t> rank_of(res.rows.size());
    for (std::size_t r = 0; r < res.ranked.size(); ++r)
        rank_of[res.ranked[r]] = r + 1;
    std::ofstream csv(dir / "grid.csv", std::ios::trunc);
    csv << "rank,lr,lambdas,val_accuracy,val_loss,best_epoch,epochs_run,stop_reason\n";
    for (std::size_t i = 0; i < res.rows.size(); ++i) {
        const auto& r = res.rows[i];
        csv << rank_of[i] << ',' << detail::fmt_double(r.lr) << ',' << detail::join(r.lambdas, ";") << ','
            << fmt(r.val_accuracy, 6) << ',' << fmt(r.val_loss, 8) << ',' << r.best_epoch << ',' << r.epochs_run
            << ',' << r.stop_reason << '\n';
    }
    ExperimentConfig best = cfg;
    best.lr = res.best().lr;
    best.lambdas = res.best().lambdas;
    write_text(dir / "best_config.txt", best.to_text());
    log << "best: lr " << detail::fmt_double(best.lr) << "  lambdas " << detail::join(best.lambdas, ";")
        << "  val_acc " << fmt(res.best().val_accuracy, 4) << '\n';
    return GridOutcome{dir, std::move(res), std::move(best)};
}

// Maps exceptions onto exit codes: 2 config/usage, 3 data, 4 divergence.
inline int run_guarded(const std::function<void()>& body, std::ostream& err = std::cerr)
{
    try {
        body();
        return kOk;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kInternal;
    }
}

} // namespace hcl::cli
