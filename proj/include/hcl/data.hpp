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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "hcl/tensor.hpp"

namespace hcl {

namespace fs = std::filesystem;

enum class Split { Train, Val, Test };

inline std::string to_string(Split s)
{
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "train";
}

// Images are N x C x H x W with pixels in [0, 1].
struct Dataset {
    std::string name;
    Tensor<float> images;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    Split split = Split::Train;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
    std::size_t sample_size() const { return images.size() / images.dim(0); }
};

// Rows `indices` of `ds`, in the given order.
inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices)
{
    if (indices.empty())
        throw ArgumentError("subset: empty index list");
    Dataset out{ds.name, {}, {}, ds.num_classes, ds.split};
    Shape s = ds.images.shape();
    s[0] = indices.size();
    std::vector<float> pix(shape_size(s));
    const std::size_t per = ds.sample_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= ds.size())
            throw ArgumentError("subset: index out of range");
        std::copy_n(ds.images.data() + indices[i] * per, per, pix.data() + i * per);
        out.labels.push_back(ds.labels[indices[i]]);
    }
    out.images = Tensor<float>(std::move(s), std::move(pix));
    return out;
}

namespace detail {

inline std::vector<unsigned char> read_file(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    if (!is)
        throw DataError("cannot open " + p.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off)
{
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8)
         | std::uint32_t{b[off + 3]};
}

} // namespace detail

// IDX pair: images magic 0x00000803 (u8, N x rows x cols), labels magic
// 0x00000801 (u8, N). Pixels scaled by 1/255.
inline Dataset load_idx(const fs::path& images_path, const fs::path& labels_path, const std::string& name = "idx",
                        Split split = Split::Train)
{
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    if (img.size() < 16 || detail::be32(img, 0) != 0x00000803)
        throw DataError(images_path.string() + ": bad IDX image magic");
    if (lab.size() < 8 || detail::be32(lab, 0) != 0x00000801)
        throw DataError(labels_path.string() + ": bad IDX label magic");
    const std::size_t n = detail::be32(img, 4);
    const std::size_t rows = detail::be32(img, 8);
    const std::size_t cols = detail::be32(img, 12);
    const std::size_t nl = detail::be32(lab, 4);
    if (n != nl)
        throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
    if (n == 0 || rows == 0 || cols == 0)
        throw DataError(images_path.string() + ": empty IDX file");
    if (img.size() < 16 + n * rows * cols)
        throw DataError(images_path.string() + ": truncated IDX image file");
    if (lab.size() < 8 + n)
        throw DataError(labels_path.string() + ": truncated IDX label file");

    Dataset ds;
    ds.name = name;
    ds.split = split;
    std::vector<float> pix(n * rows * cols);
    for (std::size_t i = 0; i < pix.size(); ++i)
        pix[i] = static_cast<float>(img[16 + i]) / 255.0f;
    ds.images = Tensor<float>({n, 1, rows, cols}, std::move(pix));
    int max_label = 0;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = std::max(10, max_label + 1);
    return ds;
}

// Directory holding the four upstream IDX files (MNIST and Fashion-MNIST
// share names).
inline Dataset load_idx_dir(const fs::path& dir, Split split, const std::string& name)
{
    const std::string prefix = split == Split::Test ? "t10k" : "train";
    return load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), name, split);
}

enum class CifarVariant { Cifar10, Cifar100 };

namespace detail {

inline void append_cifar(const fs::path& p, CifarVariant v, Dataset& ds, std::vector<float>& pix)
{
    if (!fs::exists(p))
        throw DataError("missing CIFAR batch file " + p.string());
    const auto bytes = read_file(p);
    const std::size_t label_bytes = v == CifarVariant::Cifar10 ? 1 : 2;
    const std::size_t record = label_bytes + 3072;
    if (bytes.empty() || bytes.size() % record != 0)
        throw DataError(p.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of the "
                        + std::to_string(record) + "-byte record");
    for (std::size_t off = 0; off < bytes.size(); off += record) {
        // CIFAR-100 records carry (coarse, fine); the fine label is used.
        const int y = bytes[off + label_bytes - 1];
        if (static_cast<std::size_t>(y) >= ds.num_classes)
            throw DataError(p.string() + ": label " + std::to_string(y) + " out of range");
        ds.labels.push_back(y);
        for (std::size_t k = 0; k < 3072; ++k)
            pix.push_back(static_cast<float>(bytes[off + label_bytes + k]) / 255.0f);
    }
}

inline Dataset load_cifar_files(const std::vector<fs::path>& files, CifarVariant v, Split split)
{
    Dataset ds;
    ds.name = v == CifarVariant::Cifar10 ? "cifar10" : "cifar100";
    ds.num_classes = v == CifarVariant::Cifar10 ? 10 : 100;
    ds.split = split;
    std::vector<float> pix;
    for (const auto& f : files)
        append_cifar(f, v, ds, pix);
    ds.images = Tensor<float>({ds.labels.size(), 3, 32, 32}, std::move(pix));
    return ds;
}

} // namespace detail

struct TrainTest {
    Dataset train;
    Dataset test;
};

// Binary-version batches: cifar10 = data_batch_{1..5}.bin + test_batch.bin
// (3073-byte records), cifar100 = train.bin + test.bin (3074-byte records).
// Pixels are channel-major R, G, B planes of 32x32.
inline TrainTest load_cifar(const fs::path& dir, CifarVariant v)
{
    std::vector<fs::path> train_files;
    fs::path test_file;
    if (v == CifarVariant::Cifar10) {
        for (int i = 1; i <= 5; ++i)
            train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        test_file = dir / "test_batch.bin";
    } else {
        train_files.push_back(dir / "train.bin");
        test_file = dir / "test.bin";
    }
    return {detail::load_cifar_files(train_files, v, Split::Train),
            detail::load_cifar_files({test_file}, v, Split::Test)};
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class CropMode { Uniform, Corners };

struct AugmentOptions {
    std::size_t pad = 4;
    bool flip = true;
    CropMode crop = CropMode::Uniform;
};

// One C x H x W image: zero-pad by `pad`, crop H x W at (dy, dx) of the
// padded image, optionally mirror horizontally.
inline void augment_image(const float* src, float* dst, std::size_t C, std::size_t H, std::size_t W,
                          std::size_t pad, std::size_t dy, std::size_t dx, bool flip)
{
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const auto sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
                const auto sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
                float v = 0.0f;
                if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) && sx < static_cast<std::ptrdiff_t>(W))
                    v = src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
                const std::size_t ox = flip ? W - 1 - x : x;
                dst[(c * H + y) * W + ox] = v;
            }
}

inline Tensor<float> augment(const Tensor<float>& batch, RngStream& rng, const AugmentOptions& opt = {})
{
    if (batch.rank() != 4)
        throw DimensionError("augment: expects B x C x H x W");
    const std::size_t B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    const std::size_t span = 2 * opt.pad;
    Tensor<float> out(batch.shape());
    const std::size_t per = C * H * W;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t dy = 0, dx = 0;
        if (opt.crop == CropMode::Uniform) {
            dy = rng.index(span + 1);
            dx = rng.index(span + 1);
        } else {
            dy = rng.bernoulli(0.5) ? span : 0;
            dx = rng.bernoulli(0.5) ? span : 0;
        }
        const bool flip = opt.flip && rng.bernoulli(0.5);
        augment_image(batch.data() + b * per, out.data() + b * per, C, H, W, opt.pad, dy, dx, flip);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting and batching
// ---------------------------------------------------------------------------

struct TrainVal {
    Dataset train;
    Dataset val;
};

// Stratified: class c gives max(1, floor(fraction * N_c)) samples to val.
// Both parts keep the original sample order.
inline TrainVal split_validation(const Dataset& ds, double fraction, RngStream& rng)
{
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ArgumentError("split_validation: fraction must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> members(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<char> to_val(ds.size(), 0);
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto& m = members[c];
        if (m.empty())
            continue;
        if (m.size() < 2)
            throw ArgumentError("split_validation: class " + std::to_string(c) + " has fewer than 2 samples");
        rng.shuffle(m.begin(), m.end());
        const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(m.size())));
        for (std::size_t j = 0; j < k; ++j)
            to_val[m[j]] = 1;
    }
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (to_val[i] ? va : tr).push_back(i);
    TrainVal out{subset(ds, tr), subset(ds, va)};
    out.val.split = Split::Val;
    return out;
}

// Seeded shuffle, keep the first `limit` samples, restore original order.
inline Dataset take_limit(const Dataset& ds, std::size_t limit, std::uint64_t seed)
{
    if (limit == 0 || limit >= ds.size())
        return ds;
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    RngStream rng(seed, StreamId::Shuffle);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return subset(ds, idx);
}

// Index batches for one epoch: a permutation drawn from seed ^ epoch, cut
// into batch_size pieces with a final short batch.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                        std::uint64_t epoch)
{
    if (batch_size == 0)
        throw ArgumentError("batch_iter: batch_size must be >= 1");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i)
        perm[i] = i;
    RngStream rng(seed ^ epoch, StreamId::Shuffle);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size)
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    return batches;
}

template <Scalar T>
struct Batch {
    Tensor<T> images;
    std::vector<int> labels;
};

template <Scalar T>
Batch<T> gather(const Dataset& ds, std::span<const std::size_t> indices)
{
    Shape s = ds.images.shape();
    s[0] = indices.size();
    Batch<T> b{Tensor<T>(s), {}};
    const std::size_t per = ds.sample_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(ds.images.data() + indices[i] * per, per, b.images.data() + i * per);
        b.labels.push_back(ds.labels[indices[i]]);
    }
    return b;
}

// Per-channel mean/std, computed on a training split.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

inline ChannelStats channel_stats(const Dataset& ds)
{
    const std::size_t N = ds.images.dim(0), C = ds.images.dim(1);
    const std::size_t hw = ds.sample_size() / C;
    ChannelStats st{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0, s2 = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const float* p = ds.images.data() + (i * C + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                s += p[k];
                s2 += static_cast<double>(p[k]) * p[k];
            }
        }
        const double n = static_cast<double>(N * hw);
        st.mean[c] = s / n;
        st.stddev[c] = std::sqrt(std::max(0.0, s2 / n - st.mean[c] * st.mean[c]));
    }
    return st;
}

inline void standardize(Dataset& ds, const ChannelStats& st)
{
    const std::size_t N = ds.images.dim(0), C = ds.images.dim(1);
    const std::size_t hw = ds.sample_size() / C;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            float* p = ds.images.data() + (i * C + c) * hw;
            const auto m = static_cast<float>(st.mean[c]);
            const auto s = static_cast<float>(st.stddev[c] > 0 ? st.stddev[c] : 1.0);
            for (std::size_t k = 0; k < hw; ++k)
                p[k] = (p[k] - m) / s;
        }
}

} // namespace hcl
