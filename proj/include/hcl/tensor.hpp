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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "hcl/errors.hpp"

namespace hcl {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// RngStream
//
// Counter-based generator: the n-th draw is SplitMix64 evaluated at
// key + n * golden, where key mixes (seed, stream_id). Two streams with the
// same (seed, id) are identical; streams never share state.
// ---------------------------------------------------------------------------

enum class StreamId : std::uint32_t {
    BackboneInit = 0,
    HeadInit = 1,
    Shuffle = 2,
    Augment = 3,
    Dropout = 4,
    Subsample = 5,
};

class RngStream {
public:
    RngStream(std::uint64_t seed, StreamId id, std::uint64_t counter = 0)
      : m_seed(seed), m_id(id), m_counter(counter),
        m_key(mix(seed ^ mix(0x5851F42D4C957F2DULL + static_cast<std::uint64_t>(id))))
    { }

    std::uint64_t next_u64()
    {
        return mix(m_key + (m_counter++) * kGolden);
    }

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform()
    {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi)
    {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n)
    {
        if (n == 0)
            throw ArgumentError("RngStream::index: empty range");
        auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return std::min(i, n - 1);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal()
    {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0)
            u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename It>
    void shuffle(It first, It last)
    {
        auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i)
            std::iter_swap(first + (i - 1), first + index(i));
    }

    std::uint64_t seed() const { return m_seed; }
    StreamId id() const { return m_id; }
    std::uint64_t counter() const { return m_counter; }

    friend bool operator==(const RngStream& a, const RngStream& b)
    {
        return a.m_seed == b.m_seed && a.m_id == b.m_id && a.m_counter == b.m_counter;
    }

private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t mix(std::uint64_t z)
    {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t m_seed;
    StreamId m_id;
    std::uint64_t m_counter;
    std::uint64_t m_key;
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Scalar T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
      : m_shape(std::move(shape)), m_data(shape_size(m_shape), fill)
    {
        check_extents();
    }

    Tensor(Shape shape, std::vector<T> data)
      : m_shape(std::move(shape)), m_data(std::move(data))
    {
        check_extents();
        if (m_data.size() != shape_size(m_shape))
            throw DimensionError("Tensor: data length " + std::to_string(m_data.size())
                                 + " does not match shape " + shape_str(m_shape));
    }

    static Tensor vector(std::initializer_list<T> values)
    {
        return Tensor({values.size()}, std::vector<T>(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows)
    {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c)
                throw DimensionError("Tensor::matrix: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    const Shape& shape() const { return m_shape; }
    std::size_t rank() const { return m_shape.size(); }
    std::size_t size() const { return m_data.size(); }
    std::size_t dim(std::size_t i) const { return m_shape.at(i); }
    bool empty() const { return m_data.empty(); }

    Shape strides() const
    {
        Shape s(m_shape.size(), 1);
        for (std::size_t i = m_shape.size(); i-- > 1;)
            s[i - 1] = s[i] * m_shape[i];
        return s;
    }

    T* data() { return m_data.data(); }
    const T* data() const { return m_data.data(); }
    std::span<T> span() { return m_data; }
    std::span<const T> span() const { return m_data; }
    const std::vector<T>& values() const { return m_data; }

    T& operator[](std::size_t i) { return m_data[i]; }
    const T& operator[](std::size_t i) const { return m_data[i]; }

    template <typename... I>
    T& at(I... idx) { return m_data[offset({static_cast<std::size_t>(idx)...})]; }
    template <typename... I>
    const T& at(I... idx) const { return m_data[offset({static_cast<std::size_t>(idx)...})]; }

    // Same buffer, new extents with identical element count.
    Tensor reshaped(Shape shape) const &
    {
        Tensor t = *this;
        t.reshape(std::move(shape));
        return t;
    }

    Tensor reshaped(Shape shape) &&
    {
        reshape(std::move(shape));
        return std::move(*this);
    }

    void reshape(Shape shape)
    {
        if (shape_size(shape) != m_data.size())
            throw DimensionError("reshape " + shape_str(m_shape) + " -> " + shape_str(shape));
        m_shape = std::move(shape);
    }

    void fill(T v) { std::fill(m_data.begin(), m_data.end(), v); }

    bool all_finite() const
    {
        return std::all_of(m_data.begin(), m_data.end(), [](T v) { return std::isfinite(v); });
    }

    template <Scalar U>
    Tensor<U> cast() const
    {
        std::vector<U> out(m_data.begin(), m_data.end());
        return Tensor<U>(m_shape, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        if (a.m_shape != b.m_shape)
            return false;
        // Bitwise equality, so -0 != +0 and NaN payloads compare exactly.
        return a.m_data.size() == b.m_data.size()
            && std::memcmp(a.m_data.data(), b.m_data.data(), a.m_data.size() * sizeof(T)) == 0;
    }

private:
    void check_extents() const
    {
        for (auto e : m_shape)
            if (e == 0)
                throw DimensionError("Tensor: zero extent in shape " + shape_str(m_shape));
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const
    {
        if (idx.size() != m_shape.size())
            throw DimensionError("Tensor::at: rank mismatch");
        std::size_t off = 0;
        std::size_t i = 0;
        for (auto v : idx) {
            if (v >= m_shape[i])
                throw DimensionError("Tensor::at: index out of range");
            off = off * m_shape[i] + v;
            ++i;
        }
        return off;
    }

    Shape m_shape;
    std::vector<T> m_data;
};

template <Scalar T>
void require_finite(const Tensor<T>& t, const std::string& where)
{
    if (!t.all_finite())
        throw NumericError(where + ": non-finite value");
}

// ---------------------------------------------------------------------------
// Dense linear algebra. The GEMM kernels are Eigen maps over row-major
// buffers; everything above them works on flat spans.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// c (m x n) [+]= op(a) * op(b); a is m x k (or k x m when trans_a), b is
// k x n (or n x k when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate)
{
    auto M = static_cast<Eigen::Index>(m);
    auto N = static_cast<Eigen::Index>(n);
    auto K = static_cast<Eigen::Index>(k);
    MapMat<T> C(c, M, N);
    if (!accumulate)
        C.setZero();
    if (!trans_a && !trans_b)
        C.noalias() += CMapMat<T>(a, M, K) * CMapMat<T>(b, K, N);
    else if (trans_a && !trans_b)
        C.noalias() += CMapMat<T>(a, K, M).transpose() * CMapMat<T>(b, K, N);
    else if (!trans_a && trans_b)
        C.noalias() += CMapMat<T>(a, M, K) * CMapMat<T>(b, N, K).transpose();
    else
        C.noalias() += CMapMat<T>(a, K, M).transpose() * CMapMat<T>(b, N, K).transpose();
}

} // namespace detail

template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and "
                             + shape_str(b.shape()));
    Tensor<T> c({a.dim(0), b.dim(1)});
    detail::gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), c.data(), false);
    require_finite(c, "matmul");
    return c;
}

enum class ElemOp { Add, Sub, Mul, Div, Max };

namespace detail {

template <typename T>
T apply(ElemOp op, T x, T y)
{
    switch (op) {
    case ElemOp::Add: return x + y;
    case ElemOp::Sub: return x - y;
    case ElemOp::Mul: return x * y;
    case ElemOp::Div:
        if (y == T(0))
            throw NumericError("elementwise: division by zero");
        return x / y;
    case ElemOp::Max: return std::max(x, y);
    }
    return x;
}

} // namespace detail

template <Scalar T>
Tensor<T> elementwise(ElemOp op, const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("elementwise: shape mismatch " + shape_str(a.shape()) + " vs "
                             + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = detail::apply(op, a[i], b[i]);
    require_finite(out, "elementwise");
    return out;
}

template <Scalar T>
Tensor<T> elementwise(ElemOp op, const Tensor<T>& a, T scalar)
{
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = detail::apply(op, a[i], scalar);
    require_finite(out, "elementwise");
    return out;
}

// Glorot-style uniform init on [-b, b], b = sqrt(6 / (fan_in + fan_out)).
template <Scalar T>
Tensor<T> init_uniform_fan(const Shape& shape, std::size_t fan_in, std::size_t fan_out, RngStream& rng)
{
    if (fan_in == 0 || fan_out == 0)
        throw ArgumentError("init_uniform_fan: fan_in and fan_out must be >= 1");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(shape);
    for (auto& v : t.span())
        v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

// ---------------------------------------------------------------------------
// Binary format: "HCLT", u8 dtype (0=f32, 1=f64), u8 rank, u64 LE extents,
// raw LE element bytes.
// ---------------------------------------------------------------------------

namespace io {

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

template <typename U>
void put_le(std::ostream& os, U v)
{
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i)
        os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

inline void get_bytes(std::istream& is, void* dst, std::size_t n)
{
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FormatError("unexpected end of stream");
}

template <typename U>
U get_le(std::istream& is)
{
    static_assert(std::is_integral_v<U>);
    unsigned char buf[sizeof(U)];
    get_bytes(is, buf, sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<U>(v);
}

inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

inline void put_string(std::ostream& os, const std::string& s)
{
    put_le<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is)
{
    auto n = get_le<std::uint64_t>(is);
    if (n > (std::uint64_t{1} << 32))
        throw FormatError("string length out of range");
    std::string s(n, '\0');
    get_bytes(is, s.data(), n);
    return s;
}

} // namespace io

template <Scalar T>
constexpr std::uint8_t dtype_tag()
{
    return std::is_same_v<T, float> ? 0 : 1;
}

template <Scalar T>
void write_tensor(std::ostream& os, const Tensor<T>& t)
{
    os.write("HCLT", 4);
    io::put_u8(os, dtype_tag<T>());
    io::put_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape())
        io::put_le<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <Scalar T>
Tensor<T> read_tensor(std::istream& is)
{
    char magic[4];
    io::get_bytes(is, magic, 4);
    if (std::memcmp(magic, "HCLT", 4) != 0)
        throw FormatError("tensor: bad magic");
    std::uint8_t tag = 0;
    io::get_bytes(is, &tag, 1);
    if (tag != dtype_tag<T>())
        throw FormatError("tensor: dtype tag " + std::to_string(tag) + " does not match requested type");
    std::uint8_t rank = 0;
    io::get_bytes(is, &rank, 1);
    if (rank == 0)
        throw FormatError("tensor: rank 0");
    Shape shape(rank);
    for (auto& e : shape) {
        e = io::get_le<std::uint64_t>(is);
        if (e == 0 || e > (std::uint64_t{1} << 40))
            throw FormatError("tensor: extent out of range");
    }
    std::vector<T> data(shape_size(shape));
    io::get_bytes(is, data.data(), data.size() * sizeof(T));
    return Tensor<T>(std::move(shape), std::move(data));
}

template <Scalar T>
std::string to_bytes(const Tensor<T>& t)
{
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    return os.str();
}

template <Scalar T>
Tensor<T> from_bytes(const std::string& bytes)
{
    std::istringstream is(bytes, std::ios::binary);
    return read_tensor<T>(is);
}

} // namespace hcl
