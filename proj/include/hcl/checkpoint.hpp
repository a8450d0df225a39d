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

// Checkpoint layout:
//
//   "HCLC" | u16 version | u32 crc32(payload) | u64 payload length | payload
//
// payload:
//   string config text, string network spec text,
//   u32 layer count, per layer: u8 has_params [, HCLT weight, HCLT bias],
//   u32 head count, per head: u32 layer, f64 lambda, HCLT weight, HCLT bias,
//   u8 has_state [, u32 epoch, u32 best_epoch, f64 best_val_loss,
//                  velocity blocks (same layout as params and heads),
//                  u32 rng count, per rng: u64 seed, u32 stream id, u64 counter]
//
// All integers little-endian; tensors in the HCLT format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <zlib.h>

#include "hcl/trainer.hpp"

namespace hcl {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string config_text;
    HclModel<float> model;
    std::optional<TrainState<float>> state;
};

namespace detail {

inline void put_params(std::ostream& os, const ParamSet<float>& p)
{
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.size()));
    for (const auto& l : p.layers) {
        io::put_u8(os, l.empty() ? 0 : 1);
        if (!l.empty()) {
            write_tensor(os, l.weight);
            write_tensor(os, l.bias);
        }
    }
}

inline ParamSet<float> get_params(std::istream& is)
{
    ParamSet<float> p;
    const auto n = io::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        LayerParams<float> l;
        if (io::get_le<std::uint8_t>(is)) {
            l.weight = read_tensor<float>(is);
            l.bias = read_tensor<float>(is);
        }
        p.layers.push_back(std::move(l));
    }
    return p;
}

inline std::uint32_t crc(const std::string& s)
{
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

} // namespace detail

inline std::string serialize_checkpoint(const HclModel<float>& model, const TrainState<float>* state,
                                        const std::string& config_text)
{
    std::ostringstream pl(std::ios::binary);
    io::put_string(pl, config_text);
    io::put_string(pl, model.spec.to_text());
    detail::put_params(pl, model.params);
    io::put_le<std::uint32_t>(pl, static_cast<std::uint32_t>(model.heads.size()));
    for (std::size_t i = 0; i < model.heads.size(); ++i) {
        io::put_le<std::uint32_t>(pl, static_cast<std::uint32_t>(model.heads[i].layer));
        io::put_f64(pl, model.lambdas.at(i));
        write_tensor(pl, model.heads[i].weight);
        write_tensor(pl, model.heads[i].bias);
    }
    io::put_u8(pl, state ? 1 : 0);
    if (state) {
        io::put_le<std::uint32_t>(pl, static_cast<std::uint32_t>(state->epoch));
        io::put_le<std::uint32_t>(pl, static_cast<std::uint32_t>(state->best_epoch));
        io::put_f64(pl, state->best_val_loss);
        detail::put_params(pl, state->velocity.backbone);
        io::put_le<std::uint32_t>(pl, static_cast<std::uint32_t>(state->velocity.heads.size()));
        for (const auto& h : state->velocity.heads) {
            write_tensor(pl, h.weight);
            write_tensor(pl, h.bias);
        }
        io::put_le<std::uint32_t>(pl, 2);
        for (const RngStream* r : {&state->dropout, &state->augment}) {
            io::put_le<std::uint64_t>(pl, r->seed());
            io::put_le<std::uint32_t>(pl, static_cast<std::uint32_t>(r->id()));
            io::put_le<std::uint64_t>(pl, r->counter());
        }
    }
    const std::string payload = pl.str();
    std::ostringstream os(std::ios::binary);
    os.write("HCLC", 4);
    io::put_le<std::uint16_t>(os, kCheckpointVersion);
    io::put_le<std::uint32_t>(os, detail::crc(payload));
    io::put_le<std::uint64_t>(os, payload.size());
    os << payload;
    return os.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes)
{
    std::istringstream is(bytes, std::ios::binary);
    char magic[4];
    io::get_bytes(is, magic, 4);
    if (std::string(magic, 4) != "HCLC")
        throw FormatError("checkpoint: bad magic");
    const auto version = io::get_le<std::uint16_t>(is);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto sum = io::get_le<std::uint32_t>(is);
    const auto len = io::get_le<std::uint64_t>(is);
    const std::size_t header = 4 + 2 + 4 + 8;
    if (bytes.size() != header + len)
        throw FormatError("checkpoint: length mismatch (truncated or padded file)");
    const std::string payload = bytes.substr(header);
    if (detail::crc(payload) != sum)
        throw FormatError("checkpoint: checksum mismatch");

    std::istringstream pl(payload, std::ios::binary);
    Checkpoint ck;
    ck.config_text = io::get_string(pl);
    ck.model.spec = NetworkSpec::from_text(io::get_string(pl));
    ck.model.params = detail::get_params(pl);
    const auto nh = io::get_le<std::uint32_t>(pl);
    for (std::uint32_t i = 0; i < nh; ++i) {
        Head<float> h;
        h.layer = io::get_le<std::uint32_t>(pl);
        ck.model.lambdas.push_back(io::get_f64(pl));
        h.weight = read_tensor<float>(pl);
        h.bias = read_tensor<float>(pl);
        ck.model.heads.push_back(std::move(h));
    }
    if (io::get_le<std::uint8_t>(pl)) {
        TrainState<float> st;
        st.epoch = static_cast<int>(io::get_le<std::uint32_t>(pl));
        st.best_epoch = static_cast<int>(io::get_le<std::uint32_t>(pl));
        st.best_val_loss = io::get_f64(pl);
        st.velocity.backbone = detail::get_params(pl);
        const auto nv = io::get_le<std::uint32_t>(pl);
        for (std::uint32_t i = 0; i < nv; ++i) {
            LayerParams<float> v;
            v.weight = read_tensor<float>(pl);
            v.bias = read_tensor<float>(pl);
            st.velocity.heads.push_back(std::move(v));
        }
        const auto nr = io::get_le<std::uint32_t>(pl);
        if (nr != 2)
            throw FormatError("checkpoint: expected 2 rng streams");
        std::vector<RngStream> rngs;
        for (std::uint32_t i = 0; i < nr; ++i) {
            const auto seed = io::get_le<std::uint64_t>(pl);
            const auto id = io::get_le<std::uint32_t>(pl);
            const auto counter = io::get_le<std::uint64_t>(pl);
            rngs.emplace_back(seed, static_cast<StreamId>(id), counter);
        }
        st.dropout = rngs[0];
        st.augment = rngs[1];
        ck.state = std::move(st);
    }
    // Parameter shapes must agree with the spec they claim to belong to.
    if (ck.model.params.size() != ck.model.spec.size())
        throw FormatError("checkpoint: parameter layers do not match network spec");
    try {
        ck.model.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return ck;
}

// Written to a temporary file and renamed into place.
inline void save_checkpoint(const std::filesystem::path& path, const HclModel<float>& model,
                            const TrainState<float>* state, const std::string& config_text)
{
    const std::string bytes = serialize_checkpoint(model, state, config_text);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw FormatError("cannot write " + tmp.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os)
            throw FormatError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace hcl
