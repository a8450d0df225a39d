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

#include <stdexcept>
#include <string>

namespace hcl {

// Shape contract violations (mismatched extents, bad ranks).
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite values, division by zero.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or missing dataset files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint magic/version/checksum failures.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int epoch, const std::string& what)
      : std::runtime_error(what), m_epoch(epoch)
    { }

    int epoch() const { return m_epoch; }

private:
    int m_epoch;
};

} // namespace hcl
