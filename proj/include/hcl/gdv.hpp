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

// Generalized Discrimination Value: a separability score for labeled point
// clouds. With points z-scored per dimension to standard deviation 0.5,
//
//   GDV = (1/sqrt(D)) * ( (1/C) sum_c intra(c) - 2/(C(C-1)) sum_{c<m} inter(c,m) )
//
// where intra is the mean pairwise Euclidean distance inside class c and
// inter the mean distance across classes c and m. Shuffled labels give ~0,
// perfectly separated classes give -1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hcl/hcl.hpp"

namespace hcl {

struct LabeledRepresentation {
    Tensor<double> points; // N x D
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t n() const { return points.dim(0); }
    std::size_t d() const { return points.size() / points.dim(0); }

    void validate() const
    {
        if (points.rank() != 2)
            throw DimensionError("LabeledRepresentation: points must be N x D");
        if (points.dim(0) < 2)
            throw ArgumentError("LabeledRepresentation: need at least 2 points");
        if (labels.size() != points.dim(0))
            throw DimensionError("LabeledRepresentation: label count does not match point count");
        std::vector<std::size_t> count(num_classes, 0);
        for (int y : labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
                throw ArgumentError("LabeledRepresentation: label " + std::to_string(y) + " out of range");
            ++count[static_cast<std::size_t>(y)];
        }
        for (std::size_t c = 0; c < num_classes; ++c)
            if (count[c] == 0)
                throw ArgumentError("LabeledRepresentation: class " + std::to_string(c) + " has no points");
    }
};

// Per-dimension shift to mean 0 and scale to (population) std 0.5. Constant
// dimensions become zeros.
inline Tensor<double> normalize_for_gdv(const Tensor<double>& points)
{
    if (points.rank() != 2 || points.dim(0) < 2)
        throw ArgumentError("normalize_for_gdv: need an N x D matrix with N >= 2");
    const std::size_t N = points.dim(0), D = points.dim(1);
    Tensor<double> out(points.shape());
    for (std::size_t d = 0; d < D; ++d) {
        double mean = 0;
        for (std::size_t i = 0; i < N; ++i)
            mean += points[i * D + d];
        mean /= static_cast<double>(N);
        double var = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const double dev = points[i * D + d] - mean;
            var += dev * dev;
        }
        const double sd = std::sqrt(var / static_cast<double>(N));
        if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
            for (std::size_t i = 0; i < N; ++i)
                out[i * D + d] = 0.0;
            continue;
        }
        const double scale = 0.5 / sd;
        for (std::size_t i = 0; i < N; ++i)
            out[i * D + d] = (points[i * D + d] - mean) * scale;
    }
    return out;
}

namespace detail {

using GdvMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Sum of distances over unordered distinct pairs within a (rows x D) block.
inline double intra_sum(const GdvMat& a)
{
    double s = 0;
    for (Eigen::Index i = 1; i < a.rows(); ++i)
        s += (a.topRows(i).rowwise() - a.row(i)).rowwise().norm().sum();
    return s;
}

inline double inter_sum(const GdvMat& a, const GdvMat& b)
{
    double s = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        s += (b.rowwise() - a.row(i)).rowwise().norm().sum();
    return s;
}

inline GdvMat to_mat(const Tensor<double>& t)
{
    if (t.rank() != 2)
        throw DimensionError("gdv: expects an N x D matrix");
    return Eigen::Map<const GdvMat>(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                                    static_cast<Eigen::Index>(t.dim(1)));
}

} // namespace detail

// Mean distance over the N(N-1)/2 unordered pairs of one class; 0 for a
// singleton.
inline double mean_intra(const Tensor<double>& class_points)
{
    const std::size_t n = class_points.dim(0);
    if (n < 2)
        return 0.0;
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    return detail::intra_sum(detail::to_mat(class_points)) / pairs;
}

// Mean distance over all N_c * N_m cross pairs.
inline double mean_inter(const Tensor<double>& a, const Tensor<double>& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("mean_inter: class point sets must share dimensionality");
    const double pairs = static_cast<double>(a.dim(0)) * static_cast<double>(b.dim(0));
    return detail::inter_sum(detail::to_mat(a), detail::to_mat(b)) / pairs;
}

struct GdvResult {
    double gdv = 0;
    std::vector<double> mean_intra;                           // per class
    std::vector<double> mean_inter;                           // per pair c < m, row-major
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // class indices of mean_inter
    std::size_t dims = 0;
    std::size_t n_points = 0;
};

inline GdvResult gdv_detail(const LabeledRepresentation& rep, bool normalize = true)
{
    rep.validate();
    const std::size_t C = rep.num_classes;
    if (C < 2)
        throw ArgumentError("gdv: need at least 2 classes");
    const std::size_t N = rep.n(), D = rep.d();
    const Tensor<double> pts = normalize ? normalize_for_gdv(rep.points) : rep.points;

    std::vector<std::vector<std::size_t>> members(C);
    for (std::size_t i = 0; i < N; ++i)
        members[static_cast<std::size_t>(rep.labels[i])].push_back(i);
    std::vector<detail::GdvMat> blocks(C);
    for (std::size_t c = 0; c < C; ++c) {
        blocks[c].resize(static_cast<Eigen::Index>(members[c].size()), static_cast<Eigen::Index>(D));
        for (std::size_t r = 0; r < members[c].size(); ++r)
            for (std::size_t d = 0; d < D; ++d)
                blocks[c](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = pts[members[c][r] * D + d];
    }

    GdvResult res;
    res.dims = D;
    res.n_points = N;
    double intra_total = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double n = static_cast<double>(members[c].size());
        const double v = members[c].size() < 2 ? 0.0 : detail::intra_sum(blocks[c]) / (n * (n - 1) / 2.0);
        res.mean_intra.push_back(v);
        intra_total += v;
    }
    double inter_total = 0;
    for (std::size_t c = 0; c + 1 < C; ++c)
        for (std::size_t m = c + 1; m < C; ++m) {
            const double v = detail::inter_sum(blocks[c], blocks[m])
                           / (static_cast<double>(members[c].size()) * static_cast<double>(members[m].size()));
            res.mean_inter.push_back(v);
            res.pairs.emplace_back(c, m);
            inter_total += v;
        }
    const double Cd = static_cast<double>(C);
    res.gdv = (intra_total / Cd - 2.0 / (Cd * (Cd - 1.0)) * inter_total) / std::sqrt(static_cast<double>(D));
    return res;
}

inline double gdv(const LabeledRepresentation& rep, bool normalize = true)
{
    return gdv_detail(rep, normalize).gdv;
}

// ---------------------------------------------------------------------------
// Per-layer profile of a model over a labeled set
// ---------------------------------------------------------------------------

struct GdvLayerRecord {
    std::size_t layer_index = 0;
    std::string layer_kind;
    double gdv = 0;
    std::size_t dims = 0;
    std::size_t n_points = 0;
    std::vector<double> mean_intra;
    std::vector<double> mean_inter;
};

struct GdvReport {
    std::vector<GdvLayerRecord> per_layer;
};

struct GdvOptions {
    bool normalize = true;
    std::size_t max_per_class = 2000;
    std::uint64_t seed = 0;
    std::size_t batch_size = 256;
    std::vector<std::size_t> layers; // empty = every layer
};

// Seeded per-class subsample (at most `max_per_class` each), in original order.
inline std::vector<std::size_t> gdv_subsample(std::span<const int> labels, std::size_t max_per_class,
                                              std::uint64_t seed)
{
    int max_label = -1;
    for (int y : labels)
        max_label = std::max(max_label, y);
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i)
        members[static_cast<std::size_t>(labels[i])].push_back(i);
    RngStream rng(seed, StreamId::Subsample);
    std::vector<std::size_t> keep;
    for (auto& m : members) {
        if (m.size() > max_per_class) {
            rng.shuffle(m.begin(), m.end());
            m.resize(max_per_class);
        }
        keep.insert(keep.end(), m.begin(), m.end());
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

// One GDV per backbone layer, on the flattened eval-mode output z_i.
template <Scalar T>
GdvReport gdv_profile(const HclModel<T>& model, const Tensor<float>& images, std::span<const int> labels,
                      const GdvOptions& opt = {})
{
    if (images.dim(0) != labels.size())
        throw DimensionError("gdv_profile: image and label counts differ");
    const auto keep = gdv_subsample(labels, opt.max_per_class, opt.seed);

    // Compact class ids to those present; GDV is invariant under relabeling.
    std::vector<int> remap;
    std::vector<int> kept_labels;
    for (auto i : keep) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= remap.size())
            remap.resize(y + 1, -1);
        if (remap[y] < 0)
            remap[y] = 0;
    }
    int next = 0;
    for (auto& r : remap)
        if (r >= 0)
            r = next++;
    for (auto i : keep)
        kept_labels.push_back(remap[static_cast<std::size_t>(labels[i])]);

    const std::size_t N = keep.size();
    const std::size_t L = model.spec.size();
    const std::size_t per_image = images.size() / images.dim(0);
    std::vector<char> wanted(L, opt.layers.empty() ? 1 : 0);
    for (auto l : opt.layers) {
        if (l >= L)
            throw ArgumentError("gdv_profile: layer " + std::to_string(l) + " out of range");
        wanted[l] = 1;
    }
    std::vector<std::size_t> dims(L);
    std::vector<std::vector<double>> reps(L);
    for (std::size_t l = 0; l < L; ++l) {
        dims[l] = shape_size(model.spec.output_shape(l));
        if (wanted[l])
            reps[l].reserve(N * dims[l]);
    }
    for (std::size_t start = 0; start < N; start += opt.batch_size) {
        const std::size_t B = std::min(opt.batch_size, N - start);
        Shape s = images.shape();
        s[0] = B;
        Tensor<T> batch(s);
        for (std::size_t b = 0; b < B; ++b)
            std::copy_n(images.data() + keep[start + b] * per_image, per_image, batch.data() + b * per_image);
        auto trace = forward(model.spec, model.params, batch, Mode::Eval);
        for (std::size_t l = 0; l < L; ++l)
            if (wanted[l])
                reps[l].insert(reps[l].end(), trace.per_layer[l].span().begin(), trace.per_layer[l].span().end());
    }

    GdvReport report;
    for (std::size_t l = 0; l < L; ++l) {
        if (!wanted[l])
            continue;
        LabeledRepresentation rep{Tensor<double>({N, dims[l]}, std::move(reps[l])), kept_labels,
                                  static_cast<std::size_t>(next)};
        auto r = gdv_detail(rep, opt.normalize);
        report.per_layer.push_back({l, layer_kind(model.spec.layer(l)), r.gdv, r.dims, r.n_points,
                                    std::move(r.mean_intra), std::move(r.mean_inter)});
    }
    return report;
}

inline void write_gdv_csv(std::ostream& os, const GdvReport& report)
{
    os << "layer_index,layer_kind,gdv,D,n_points\n";
    char buf[64];
    for (const auto& r : report.per_layer) {
        std::snprintf(buf, sizeof buf, "%.10f", r.gdv);
        os << r.layer_index << ',' << r.layer_kind << ',' << buf << ',' << r.dims << ',' << r.n_points << '\n';
    }
}

} // namespace hcl
