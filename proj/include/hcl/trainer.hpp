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

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hcl/data.hpp"
#include "hcl/hcl.hpp"

namespace hcl {

struct TrainConfig {
    double lr = 0.01;
    int max_epochs = 1000; // ME
    int patience = 200;    // PE
    std::size_t batch_size = 128;
    double momentum = 0.9;
    // One weight per head, or a single value broadcast to every head. Empty
    // keeps whatever the model carries.
    std::vector<double> lambdas;
    std::uint64_t seed = 1;
    bool augment = false;
    AugmentOptions augment_options;

    void validate() const
    {
        if (!(lr > 0.0) || !std::isfinite(lr))
            throw ConfigError("lr must be > 0");
        if (max_epochs < 1)
            throw ConfigError("max_epochs must be >= 1");
        if (patience < 1)
            throw ConfigError("patience must be >= 1");
        if (batch_size < 1)
            throw ConfigError("batch_size must be >= 1");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("momentum must lie in [0, 1)");
        for (double l : lambdas)
            if (!(l >= 0.0) || !std::isfinite(l))
                throw ConfigError("lambdas must be finite and >= 0");
    }
};

struct GridSpec {
    std::vector<double> lr_values{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<std::vector<double>> lambda_combinations{{1.0}};

    void validate() const
    {
        if (lr_values.empty())
            throw ConfigError("grid: no lr values");
        for (double lr : lr_values)
            if (!(lr >= 1e-5 && lr <= 1e-1))
                throw ConfigError("grid: lr " + std::to_string(lr) + " outside [1e-5, 1e-1]");
        if (lambda_combinations.empty())
            throw ConfigError("grid: no lambda combinations");
        for (const auto& v : lambda_combinations)
            for (double l : v)
                if (!(l >= 0.0))
                    throw ConfigError("grid: negative lambda");
    }
};

// Sets model lambdas from a per-head list or a single broadcast value.
// Models without heads ignore lambdas.
template <Scalar T>
void apply_lambdas(HclModel<T>& model, const std::vector<double>& lambdas)
{
    if (model.heads.empty() || lambdas.empty())
        return;
    if (lambdas.size() == 1)
        model.lambdas.assign(model.heads.size(), lambdas[0]);
    else if (lambdas.size() == model.heads.size())
        model.lambdas = lambdas;
    else
        throw ArgumentError("apply_lambdas: " + std::to_string(lambdas.size()) + " lambdas for "
                            + std::to_string(model.heads.size()) + " heads");
    model.validate();
}

// ---------------------------------------------------------------------------
// SGD with momentum: v <- momentum * v + g; theta <- theta - lr * v
// ---------------------------------------------------------------------------

template <Scalar T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr, double momentum)
{
    if (param.shape() != grad.shape() || param.shape() != velocity.shape())
        throw DimensionError("sgd_step: shape mismatch " + shape_str(param.shape()) + ", "
                             + shape_str(grad.shape()) + ", " + shape_str(velocity.shape()));
    const T m = static_cast<T>(momentum);
    const T a = static_cast<T>(lr);
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = m * velocity[i] + grad[i];
        param[i] -= a * velocity[i];
    }
}

template <Scalar T>
void sgd_step(LayerParams<T>& p, const LayerParams<T>& g, LayerParams<T>& v, double lr, double momentum)
{
    if (p.empty())
        return;
    sgd_step(p.weight, g.weight, v.weight, lr, momentum);
    sgd_step(p.bias, g.bias, v.bias, lr, momentum);
}

template <Scalar T>
struct Velocity {
    ParamSet<T> backbone;
    std::vector<LayerParams<T>> heads;

    static Velocity zeros_for(const HclModel<T>& m)
    {
        Velocity v{m.params.zeros_like(), {}};
        for (const auto& h : m.heads)
            v.heads.push_back({Tensor<T>(h.weight.shape()), Tensor<T>(h.bias.shape())});
        return v;
    }

    friend bool operator==(const Velocity&, const Velocity&) = default;
};

template <Scalar T>
void sgd_step(HclModel<T>& model, const HclGradients<T>& g, Velocity<T>& v, double lr, double momentum)
{
    for (std::size_t i = 0; i < model.params.size(); ++i)
        sgd_step(model.params[i], g.backbone[i], v.backbone[i], lr, momentum);
    for (std::size_t i = 0; i < model.heads.size(); ++i) {
        LayerParams<T> hp{model.heads[i].weight, model.heads[i].bias};
        sgd_step(hp, g.heads[i], v.heads[i], lr, momentum);
        model.heads[i].weight = std::move(hp.weight);
        model.heads[i].bias = std::move(hp.bias);
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy = 0;
    double loss = 0;
    std::vector<double> head_accuracy;
    std::vector<double> head_loss;
    std::size_t n = 0;
};

template <Scalar T>
std::size_t hits(const Tensor<T>& logits, const std::vector<int>& labels)
{
    const auto pred = argmax_rows(logits);
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        n += pred[i] == labels[i];
    return n;
}

// Accuracy is argmax(final logits) == label with ties to the lowest class.
template <Scalar T>
EvalResult evaluate(const HclModel<T>& model, const Dataset& ds, std::size_t batch_size = 500)
{
    EvalResult r;
    r.n = ds.size();
    r.head_accuracy.assign(model.heads.size(), 0.0);
    r.head_loss.assign(model.heads.size(), 0.0);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i)
            idx.push_back(i);
        auto batch = gather<T>(ds, idx);
        auto out = hcl_forward(model, batch.images, Mode::Eval);
        const double w = static_cast<double>(idx.size());
        r.loss += w * softmax_cross_entropy(out.final_logits(), std::span<const int>(batch.labels)).loss;
        r.accuracy += static_cast<double>(hits(out.final_logits(), batch.labels));
        for (std::size_t h = 0; h < model.heads.size(); ++h) {
            r.head_loss[h] += w * softmax_cross_entropy(out.head_logits[h], std::span<const int>(batch.labels)).loss;
            r.head_accuracy[h] += static_cast<double>(hits(out.head_logits[h], batch.labels));
        }
    }
    const double n = static_cast<double>(ds.size());
    r.loss /= n;
    r.accuracy /= n;
    for (auto& v : r.head_loss)
        v /= n;
    for (auto& v : r.head_accuracy)
        v /= n;
    return r;
}

// ---------------------------------------------------------------------------
// Early stopping. Epochs are 1-based; training stops once `patience`
// consecutive epochs pass without a strictly lower validation loss, or at
// max_epochs.
// ---------------------------------------------------------------------------

struct EpochRow {
    int epoch = 0;
    double train_total = 0;
    double train_final = 0;
    std::vector<double> train_head_loss;
    double val_loss = 0;
    double val_accuracy = 0;
    std::vector<double> val_head_accuracy;
};

struct FitReport {
    std::vector<EpochRow> rows;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    double best_val_accuracy = 0;
    std::string stop_reason;
    double wall_seconds = 0;
};

class EarlyStopping {
public:
    explicit EarlyStopping(int patience, int best_epoch = 0,
                           double best_loss = std::numeric_limits<double>::infinity())
      : m_patience(patience), m_best_epoch(best_epoch), m_best(best_loss)
    { }

    // Returns true when `loss` is a new best.
    bool observe(int epoch, double loss)
    {
        if (loss < m_best) {
            m_best = loss;
            m_best_epoch = epoch;
            return true;
        }
        return false;
    }

    bool should_stop(int epoch) const { return epoch - m_best_epoch >= m_patience; }
    int best_epoch() const { return m_best_epoch; }
    double best_loss() const { return m_best; }

private:
    int m_patience;
    int m_best_epoch;
    double m_best;
};

// Drives epochs start_epoch+1 .. max_epochs. `run_epoch(e)` trains one
// epoch and returns its row; `on_best(e)` snapshots parameters; `on_finish()`
// runs once when the loop ends (restoring the snapshot, typically). A resumed
// loop passes the stopper state it had reached.
inline FitReport early_stopping_loop(int max_epochs, int patience, const std::function<EpochRow(int)>& run_epoch,
                                     const std::function<void(int)>& on_best, const std::function<void()>& on_finish,
                                     int start_epoch = 0, std::optional<EarlyStopping> resumed = std::nullopt)
{
    EarlyStopping stopper = resumed ? *resumed : EarlyStopping(patience);
    FitReport report;
    report.stop_reason = "max_epochs";
    for (int e = start_epoch + 1; e <= max_epochs; ++e) {
        EpochRow row = run_epoch(e);
        report.rows.push_back(row);
        if (stopper.observe(e, row.val_loss)) {
            report.best_val_accuracy = row.val_accuracy;
            on_best(e);
        }
        if (e < max_epochs && stopper.should_stop(e)) {
            report.stop_reason = "patience";
            break;
        }
    }
    report.best_epoch = stopper.best_epoch();
    report.best_val_loss = stopper.best_loss();
    on_finish();
    return report;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

template <Scalar T>
struct TrainState {
    int epoch = 0; // completed epochs
    Velocity<T> velocity;
    RngStream dropout{0, StreamId::Dropout};
    RngStream augment{0, StreamId::Augment};
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();

    static TrainState fresh(const HclModel<T>& m, std::uint64_t seed)
    {
        return TrainState{0, Velocity<T>::zeros_for(m), RngStream(seed, StreamId::Dropout),
                          RngStream(seed, StreamId::Augment)};
    }
};

template <Scalar T>
struct FitResult {
    FitReport report;
    HclModel<T> best;  // parameters of the best validation epoch
    HclModel<T> last;  // parameters after the final epoch
    TrainState<T> state;
};

template <Scalar T>
struct FitOptions {
    std::function<void(const EpochRow&)> on_epoch;
    // Observes the model after each epoch (tests use this to compare
    // trajectories).
    std::function<void(int, const HclModel<T>&)> on_model;
    std::optional<TrainState<T>> resume;
};

template <Scalar T>
EpochRow train_epoch(HclModel<T>& model, const Dataset& train, const TrainConfig& cfg, TrainState<T>& st, int epoch)
{
    EpochRow row;
    row.epoch = epoch;
    row.train_head_loss.assign(model.heads.size(), 0.0);
    const auto batches = batch_iter(train.size(), cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    for (const auto& idx : batches) {
        auto fb = gather<float>(train, idx);
        if (cfg.augment)
            fb.images = augment(fb.images, st.augment, cfg.augment_options);
        Tensor<T> images;
        if constexpr (std::is_same_v<T, float>)
            images = std::move(fb.images);
        else
            images = fb.images.template cast<T>();
        const std::span<const int> labels(fb.labels);
        auto out = hcl_forward(model, images, Mode::Train, &st.dropout);
        auto loss = hcl_loss<T>(out.head_logits, out.final_logits(), labels, model.lambdas);
        if (!std::isfinite(loss.total))
            throw DivergenceError(epoch, "training diverged: non-finite loss at epoch " + std::to_string(epoch));
        auto grads = hcl_backward(model, out, labels);
        sgd_step(model, grads, st.velocity, cfg.lr, cfg.momentum);
        const double w = static_cast<double>(idx.size());
        row.train_total += w * loss.total;
        row.train_final += w * loss.final_loss;
        for (std::size_t h = 0; h < model.heads.size(); ++h)
            row.train_head_loss[h] += w * loss.per_head_loss[h];
    }
    const double n = static_cast<double>(train.size());
    row.train_total /= n;
    row.train_final /= n;
    for (auto& v : row.train_head_loss)
        v /= n;
    return row;
}

// Trains on `train`, monitors the final head's loss on `val`, stops by
// patience or max_epochs and returns the best-epoch parameters.
template <Scalar T>
FitResult<T> fit(HclModel<T> model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                 const FitOptions<T>& opt = {})
{
    cfg.validate();
    apply_lambdas(model, cfg.lambdas);
    model.validate();
    if (train.size() == 0 || val.size() == 0)
        throw ArgumentError("fit: empty train or validation split");

    const auto t0 = std::chrono::steady_clock::now();
    TrainState<T> st = opt.resume ? *opt.resume : TrainState<T>::fresh(model, cfg.seed);
    HclModel<T> best = model;
    const int start = st.epoch;
    double last_val = 0;

    auto run_epoch = [&](int e) {
        EpochRow row = train_epoch(model, train, cfg, st, e);
        const auto ev = evaluate(model, val);
        if (!std::isfinite(ev.loss))
            throw DivergenceError(e, "training diverged: non-finite validation loss at epoch " + std::to_string(e));
        row.val_loss = ev.loss;
        row.val_accuracy = ev.accuracy;
        row.val_head_accuracy = ev.head_accuracy;
        last_val = ev.loss;
        st.epoch = e;
        if (opt.on_epoch)
            opt.on_epoch(row);
        if (opt.on_model)
            opt.on_model(e, model);
        return row;
    };
    HclModel<T> last;
    auto report = early_stopping_loop(
        cfg.max_epochs, cfg.patience, run_epoch,
        [&](int e) {
            best = model;
            st.best_epoch = e;
            st.best_val_loss = last_val;
        },
        [&] { last = model; }, start,
        start > 0 ? std::optional(EarlyStopping(cfg.patience, st.best_epoch, st.best_val_loss)) : std::nullopt);
    st.best_val_loss = report.best_val_loss;
    if (report.best_epoch == 0)
        best = last;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return FitResult<T>{std::move(report), std::move(best), std::move(last), std::move(st)};
}

// ---------------------------------------------------------------------------
// Grid search over (lr, lambda vector)
// ---------------------------------------------------------------------------

struct GridRow {
    double lr = 0;
    std::vector<double> lambdas;
    double val_accuracy = 0;
    double val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_run = 0;
    std::string stop_reason;
    bool diverged = false;
    std::string error;
};

struct GridResult {
    std::vector<GridRow> rows;       // grid order
    std::vector<std::size_t> ranked; // indices into rows, best first

    const GridRow& best() const { return rows.at(ranked.front()); }
};

// Ranking: higher val accuracy, then lower val loss, then lower lr;
// diverged cells last.
inline std::vector<std::size_t> rank_grid(const std::vector<GridRow>& rows)
{
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = rows[a];
        const auto& y = rows[b];
        if (x.diverged != y.diverged)
            return !x.diverged;
        if (x.val_accuracy != y.val_accuracy)
            return x.val_accuracy > y.val_accuracy;
        if (x.val_loss != y.val_loss)
            return x.val_loss < y.val_loss;
        return x.lr < y.lr;
    });
    return order;
}

// `build` must return a freshly initialised model (same seeds every call).
template <Scalar T>
GridResult grid_search(const GridSpec& grid, const std::function<HclModel<T>()>& build, const Dataset& train,
                       const Dataset& val, const TrainConfig& base,
                       const std::function<void(const GridRow&)>& on_cell = {})
{
    grid.validate();
    GridResult res;
    for (double lr : grid.lr_values)
        for (const auto& lambdas : grid.lambda_combinations) {
            TrainConfig cfg = base;
            cfg.lr = lr;
            cfg.lambdas = lambdas;
            GridRow row;
            row.lr = lr;
            row.lambdas = lambdas;
            try {
                auto r = fit(build(), train, val, cfg);
                row.val_accuracy = r.report.best_val_accuracy;
                row.val_loss = r.report.best_val_loss;
                row.best_epoch = r.report.best_epoch;
                row.epochs_run = static_cast<int>(r.report.rows.size());
                row.stop_reason = r.report.stop_reason;
            } catch (const DivergenceError& e) {
                row.diverged = true;
                row.stop_reason = "diverged";
                row.error = e.what();
                row.epochs_run = e.epoch();
            } catch (const NumericError& e) {
                row.diverged = true;
                row.stop_reason = "diverged";
                row.error = e.what();
            }
            if (on_cell)
                on_cell(row);
            res.rows.push_back(std::move(row));
        }
    res.ranked = rank_grid(res.rows);
    return res;
}

} // namespace hcl
