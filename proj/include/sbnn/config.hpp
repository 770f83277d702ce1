#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "sbnn/constrained_weights.hpp"
#include "sbnn/dataset.hpp"
#include "sbnn/error.hpp"
#include "sbnn/freeze.hpp"

namespace sbnn {

inline BinMode bin_mode_from_string(const std::string& s) {
    if (s == "soft") return BinMode::Soft;
    if (s == "hard_ste") return BinMode::HardSTE;
    if (s == "hard_ste_alpha") return BinMode::HardSTEWithAlpha;
    throw ConfigError("unknown mode: " + s);
}

inline InputMode input_mode_from_string(const std::string& s) {
    if (s == "median") return InputMode::MedianBinarize;
    if (s == "int8") return InputMode::Int8;
    throw ConfigError("unknown input_mode: " + s);
}

inline const char* to_string(InputMode m) {
    return m == InputMode::MedianBinarize ? "median" : "int8";
}

// Flat `key = value` run configuration; `#` starts a comment.
struct RunConfig {
    std::string arch = "dense(16) bn act dense(16) bn act dense(2) softmax";
    std::string dataset_path = "seed=7,n=1000";
    DatasetFormat dataset_format = DatasetFormat::SyntheticBlobs;
    int epochs = 30;
    int batch_size = 128;
    float nu_start = 1.0f;
    float nu_end = 1000.0f;
    BinMode mode = BinMode::Soft;
    bool use_alpha_fold = false;
    InputMode input_mode = InputMode::Int8;
    uint32_t seed = 1;
    std::string out_dir = "out";
    float lr = 1e-3f;
    float lr_decay = 0.95f;
    float val_fraction = 0.2f;
    bool augment = false;
    int hist_every = 0;
    int checkpoint_every = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(nu_start > 0.0f) || nu_end < nu_start)
            throw ConfigError("schedule endpoints must satisfy 0 < start <= end");
        if (val_fraction < 0.0f || val_fraction >= 1.0f)
            throw ConfigError("val_fraction must be in [0,1)");
        if (!(lr > 0.0f) || !(lr_decay > 0.0f))
            throw ConfigError("lr and lr_decay must be positive");
    }

    bool operator==(const RunConfig&) const = default;
};

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto as_bool = [&](const std::string& v) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw ConfigError(key + ": expected boolean, got " + v);
        };
        try {
            if (key == "arch") c.arch = val;
            else if (key == "dataset") c.dataset_path = val;
            else if (key == "dataset_format")
                c.dataset_format = dataset_format_from_string(val);
            else if (key == "epochs") c.epochs = std::stoi(val);
            else if (key == "batch_size") c.batch_size = std::stoi(val);
            else if (key == "nu_start") c.nu_start = std::stof(val);
            else if (key == "nu_end") c.nu_end = std::stof(val);
            else if (key == "mode") c.mode = bin_mode_from_string(val);
            else if (key == "use_alpha_fold") c.use_alpha_fold = as_bool(val);
            else if (key == "input_mode") c.input_mode = input_mode_from_string(val);
            else if (key == "seed") c.seed = static_cast<uint32_t>(std::stoul(val));
            else if (key == "out_dir") c.out_dir = val;
            else if (key == "lr") c.lr = std::stof(val);
            else if (key == "lr_decay") c.lr_decay = std::stof(val);
            else if (key == "val_fraction") c.val_fraction = std::stof(val);
            else if (key == "augment") c.augment = as_bool(val);
            else if (key == "hist_every") c.hist_every = std::stoi(val);
            else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(val);
            else throw ConfigError("unknown key: " + key);
        } catch (const std::invalid_argument&) {
            throw ConfigError("line " + std::to_string(line_no) +
                              ": bad value for " + key);
        }
    }
    c.validate();
    return c;
}

namespace detail {

inline std::string fmt_float(float v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream out;
    out << "arch = " << c.arch << "\n";
    out << "dataset = " << c.dataset_path << "\n";
    out << "dataset_format = " << to_string(c.dataset_format) << "\n";
    out << "epochs = " << c.epochs << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "nu_start = " << detail::fmt_float(c.nu_start) << "\n";
    out << "nu_end = " << detail::fmt_float(c.nu_end) << "\n";
    out << "mode = " << to_string(c.mode) << "\n";
    out << "use_alpha_fold = " << (c.use_alpha_fold ? "true" : "false") << "\n";
    out << "input_mode = " << to_string(c.input_mode) << "\n";
    out << "seed = " << c.seed << "\n";
    out << "out_dir = " << c.out_dir << "\n";
    out << "lr = " << detail::fmt_float(c.lr) << "\n";
    out << "lr_decay = " << detail::fmt_float(c.lr_decay) << "\n";
    out << "val_fraction = " << detail::fmt_float(c.val_fraction) << "\n";
    out << "augment = " << (c.augment ? "true" : "false") << "\n";
    out << "hist_every = " << c.hist_every << "\n";
    out << "checkpoint_every = " << c.checkpoint_every << "\n";
    return out.str();
}

}  // namespace sbnn
