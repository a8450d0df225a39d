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

// Experiment configuration: a flat "key = value" document. Lines starting
// with '#' are comments. Every key can be overridden from the command line
// and to_text() emits every key, so any config (including the best cell of a
// grid) can be replayed.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hcl/trainer.hpp"

namespace hcl {

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        out.push_back(trim(cur));
    return out;
}

inline double parse_double(const std::string& key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos == v.size())
            return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline long long parse_int(const std::string& key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        long long d = std::stoll(v, &pos);
        if (pos == v.size())
            return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v)
{
    std::vector<double> out;
    if (trim(v).empty())
        return out;
    for (const auto& t : split(v, ','))
        out.push_back(parse_double(key, t));
    return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v)
{
    std::vector<std::size_t> out;
    if (trim(v).empty())
        return out;
    for (const auto& t : split(v, ',')) {
        const auto x = parse_int(key, t);
        if (x < 0)
            throw ConfigError(key + ": negative value");
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

inline std::string fmt_double(double d)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    // Prefer the shortest text that round-trips.
    for (int prec = 1; prec <= 17; ++prec) {
        char s[40];
        std::snprintf(s, sizeof s, "%.*g", prec, d);
        if (std::stod(s) == d)
            return s;
    }
    return buf;
}

template <typename V>
std::string join(const std::vector<V>& v, const char* sep = ",")
{
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i)
            os << sep;
        if constexpr (std::is_floating_point_v<V>)
            os << fmt_double(v[i]);
        else
            os << v[i];
    }
    return os.str();
}

} // namespace detail

struct ExperimentConfig {
    std::string model = "lenet5"; // mlp | lenet5 | hinton
    std::string dataset = "mnist"; // mnist | fashion-mnist | cifar10 | cifar100
    std::string data_dir = "data";
    std::string out_dir = "runs";
    std::uint64_t seed = 1;

    // Optimisation
    double lr = 0.01;
    int max_epochs = 1000;
    int patience = 200;
    std::size_t batch_size = 128;
    double momentum = 0.9;
    double val_fraction = 0.1;

    // Hidden classification heads: "all", "none", or a layer index list.
    std::string heads = "all";
    std::vector<double> lambdas;

    // Data handling
    bool augment = false;
    // auto: flip for CIFAR only, since digits are not mirror-invariant.
    std::string flip = "auto"; // auto | true | false
    std::string crop_mode = "uniform"; // uniform | corners
    std::size_t pad = 4;
    bool standardize = false;
    std::size_t train_limit = 0; // 0 = everything
    std::size_t test_limit = 0;

    // Architectures
    std::vector<std::size_t> mlp_hidden{128};
    std::string mlp_activation = "relu";
    std::vector<std::size_t> lenet_widths{6, 16, 120};
    std::size_t lenet_hidden = 84;
    std::string lenet_activation = "tanh";
    std::vector<std::size_t> hinton_widths{64, 64, 128};
    double hinton_dropout = 0.5;
    std::string hinton_activation = "relu";

    // Grid search
    std::vector<double> grid_lr{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<std::vector<double>> grid_lambdas{{0.1}, {0.5}, {1.0}};

    // GDV profiling
    std::size_t gdv_max_per_class = 2000;
    bool gdv_raw = false;

    void set(const std::string& key, const std::string& raw)
    {
        using namespace detail;
        const std::string v = trim(raw);
        auto positive_size = [&](const std::string& k) {
            auto x = parse_int(k, v);
            if (x < 0)
                throw ConfigError(k + ": must be >= 0");
            return static_cast<std::size_t>(x);
        };
        if (key == "model") model = v;
        else if (key == "dataset") dataset = v;
        else if (key == "data_dir") data_dir = v;
        else if (key == "out_dir") out_dir = v;
        else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, v));
        else if (key == "lr") lr = parse_double(key, v);
        else if (key == "max_epochs") max_epochs = static_cast<int>(parse_int(key, v));
        else if (key == "patience") patience = static_cast<int>(parse_int(key, v));
        else if (key == "batch_size") batch_size = positive_size(key);
        else if (key == "momentum") momentum = parse_double(key, v);
        else if (key == "val_fraction") val_fraction = parse_double(key, v);
        else if (key == "heads") heads = v;
        else if (key == "lambdas") lambdas = parse_doubles(key, v);
        else if (key == "augment") augment = parse_bool(key, v);
        else if (key == "flip") flip = v == "auto" ? v : (parse_bool(key, v) ? "true" : "false");
        else if (key == "crop_mode") crop_mode = v;
        else if (key == "pad") pad = positive_size(key);
        else if (key == "standardize") standardize = parse_bool(key, v);
        else if (key == "train_limit") train_limit = positive_size(key);
        else if (key == "test_limit") test_limit = positive_size(key);
        else if (key == "mlp.hidden") mlp_hidden = parse_sizes(key, v);
        else if (key == "mlp.activation") mlp_activation = v;
        else if (key == "lenet.widths") lenet_widths = parse_sizes(key, v);
        else if (key == "lenet.hidden") lenet_hidden = positive_size(key);
        else if (key == "lenet.activation") lenet_activation = v;
        else if (key == "hinton.widths") hinton_widths = parse_sizes(key, v);
        else if (key == "hinton.dropout") hinton_dropout = parse_double(key, v);
        else if (key == "hinton.activation") hinton_activation = v;
        else if (key == "grid.lr") grid_lr = parse_doubles(key, v);
        else if (key == "grid.lambdas") {
            grid_lambdas.clear();
            for (const auto& part : split(v, ';'))
                grid_lambdas.push_back(parse_doubles(key, part));
        }
        else if (key == "gdv.max_per_class") gdv_max_per_class = positive_size(key);
        else if (key == "gdv.raw") gdv_raw = parse_bool(key, v);
        else
            throw ConfigError("unknown config key '" + key + "'");
    }

    static ExperimentConfig parse(const std::string& text)
    {
        ExperimentConfig c;
        std::istringstream is(text);
        std::string line;
        int n = 0;
        while (std::getline(is, line)) {
            ++n;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#')
                continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
            c.set(detail::trim(t.substr(0, eq)), t.substr(eq + 1));
        }
        return c;
    }

    static ExperimentConfig load(const std::string& path)
    {
        std::ifstream is(path);
        if (!is)
            throw ConfigError("cannot read config file " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str());
    }

    std::string to_text() const
    {
        using detail::fmt_double;
        using detail::join;
        std::ostringstream os;
        auto b = [](bool x) { return x ? "true" : "false"; };
        os << "model = " << model << '\n'
           << "dataset = " << dataset << '\n'
           << "data_dir = " << data_dir << '\n'
           << "out_dir = " << out_dir << '\n'
           << "seed = " << seed << '\n'
           << "lr = " << fmt_double(lr) << '\n'
           << "max_epochs = " << max_epochs << '\n'
           << "patience = " << patience << '\n'
           << "batch_size = " << batch_size << '\n'
           << "momentum = " << fmt_double(momentum) << '\n'
           << "val_fraction = " << fmt_double(val_fraction) << '\n'
           << "heads = " << heads << '\n'
           << "lambdas = " << join(lambdas) << '\n'
           << "augment = " << b(augment) << '\n'
           << "flip = " << flip << '\n'
           << "crop_mode = " << crop_mode << '\n'
           << "pad = " << pad << '\n'
           << "standardize = " << b(standardize) << '\n'
           << "train_limit = " << train_limit << '\n'
           << "test_limit = " << test_limit << '\n'
           << "mlp.hidden = " << join(mlp_hidden) << '\n'
           << "mlp.activation = " << mlp_activation << '\n'
           << "lenet.widths = " << join(lenet_widths) << '\n'
           << "lenet.hidden = " << lenet_hidden << '\n'
           << "lenet.activation = " << lenet_activation << '\n'
           << "hinton.widths = " << join(hinton_widths) << '\n'
           << "hinton.dropout = " << fmt_double(hinton_dropout) << '\n'
           << "hinton.activation = " << hinton_activation << '\n'
           << "grid.lr = " << join(grid_lr) << '\n';
        os << "grid.lambdas = ";
        for (std::size_t i = 0; i < grid_lambdas.size(); ++i)
            os << (i ? ";" : "") << join(grid_lambdas[i]);
        os << '\n'
           << "gdv.max_per_class = " << gdv_max_per_class << '\n'
           << "gdv.raw = " << b(gdv_raw) << '\n';
        return os.str();
    }

    TrainConfig train_config() const
    {
        TrainConfig t;
        t.lr = lr;
        t.max_epochs = max_epochs;
        t.patience = patience;
        t.batch_size = batch_size;
        t.momentum = momentum;
        t.lambdas = lambdas;
        t.seed = seed;
        t.augment = augment;
        t.augment_options.pad = pad;
        t.augment_options.flip = flip_enabled();
        t.augment_options.crop = crop_mode == "corners" ? CropMode::Corners : CropMode::Uniform;
        return t;
    }

    bool flip_enabled() const
    {
        return flip == "true" || (flip == "auto" && dataset.rfind("cifar", 0) == 0);
    }

    GridSpec grid_spec() const { return GridSpec{grid_lr, grid_lambdas}; }

    void validate() const
    {
        auto one_of = [](const std::string& key, const std::string& v, std::initializer_list<const char*> ok) {
            for (const char* o : ok)
                if (v == o)
                    return;
            throw ConfigError(key + ": unsupported value '" + v + "'");
        };
        one_of("model", model, {"mlp", "lenet5", "hinton"});
        one_of("dataset", dataset, {"mnist", "fashion-mnist", "cifar10", "cifar100"});
        one_of("crop_mode", crop_mode, {"uniform", "corners"});
        for (const auto* a : {&mlp_activation, &lenet_activation, &hinton_activation})
            one_of("activation", *a, {"relu", "tanh", "identity"});
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw ConfigError("val_fraction must lie in (0, 1)");
        if (heads != "all" && heads != "none")
            detail::parse_sizes("heads", heads);
        if (lenet_widths.size() != 3)
            throw ConfigError("lenet.widths needs 3 values");
        if (hinton_widths.size() != 3)
            throw ConfigError("hinton.widths needs 3 values");
        if (!(hinton_dropout >= 0.0 && hinton_dropout < 1.0))
            throw ConfigError("hinton.dropout must lie in [0, 1)");
        if (gdv_max_per_class < 2)
            throw ConfigError("gdv.max_per_class must be >= 2");
        train_config().validate();
        grid_spec().validate();
    }

    // Stable 64-bit FNV-1a of the canonical text, as 16 hex digits.
    std::string run_id() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : to_text()) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

} // namespace hcl
