#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "nasvit/mixprocessing.hpp"
#include "nasvit/model.hpp"

namespace nasvit {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 42;

    void validate() const;
};

struct AugmentConfig {
    bool enabled = true;
    double hflip_prob = 0.5;
    double rotation_max_deg = 10.0;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double brightness_delta_max = 0.1;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SplitConfig {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
    std::uint64_t seed = 1234;

    void validate() const;
};

/// Everything a run needs; every field has a default and a config-file key.
struct RunConfig {
    PreprocessConfig preprocess;
    ModelConfig model;
    TrainConfig train;
    AugmentConfig augment;
    SplitConfig split;
    std::size_t workers = 2;
    std::string data_dir;
    std::string output_dir;

    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;  // throws ConfigError on bad values
};

/// All keys in serialisation order.
const std::vector<ConfigKey>& config_keys();

/**
 * Parses `key = value` lines on top of the defaults. '#' starts a comment,
 * blank lines are ignored. Unknown keys, missing '=' and bad values raise
 * ConfigError naming the line number.
 */
RunConfig parse_config(std::string_view text, std::string_view origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Every key, one per line, in config_keys() order. parse_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& cfg);

/// Key list with defaults, for --help output.
std::string config_help();

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

const char* optimizer_name(OptimizerKind kind);

}  // namespace nasvit
