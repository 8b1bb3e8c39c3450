#include "nasvit/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace nasvit {

const char* optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    // 0 is accepted as a null update (useful for checks); negative rates are not.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must be in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
}

void AugmentConfig::validate() const {
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("augment.hflip_prob must be in [0, 1]");
    if (!(rotation_max_deg >= 0.0 && rotation_max_deg <= 180.0)) {
        throw ConfigError("augment.rotation_max_deg must be in [0, 180]");
    }
    if (!(scale_min > 0.0 && scale_min <= 1.0 && scale_max >= 1.0)) {
        throw ConfigError(fmt::format("augment scale range [{}, {}] must satisfy 0 < min <= 1 <= max", scale_min,
                                      scale_max));
    }
    if (!(brightness_delta_max >= 0.0 && brightness_delta_max <= 1.0)) {
        throw ConfigError("augment.brightness_delta_max must be in [0, 1]");
    }
}

void SplitConfig::validate() const {
    if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw ConfigError("split fractions must all be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError(fmt::format("split fractions sum to {}, expected 1", train + val + test));
    }
}

void RunConfig::validate() const {
    preprocess.validate();
    model.validate();
    train.validate();
    augment.validate();
    split.validate();
    if (workers < 1) throw ConfigError("data.workers must be >= 1");
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(fmt::format("'{}' is not a valid number", v));
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(out)) throw ConfigError(fmt::format("'{}' is not finite", v));
    }
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(fmt::format("'{}' is not a boolean", v));
}

// Member access goes through small lambdas so nested structs work without pointer-to-member chains.
template <typename T, typename Access>
ConfigKey make_key(std::string name, std::string help, Access access) {
    ConfigKey k;
    k.name = std::move(name);
    k.help = std::move(help);
    k.get = [access](const RunConfig& c) {
        const T& v = access(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<T, bool>) {
            return std::string(v ? "true" : "false");
        } else {
            return fmt::format("{}", v);
        }
    };
    k.set = [access](RunConfig& c, std::string_view v) {
        T& field = access(c);
        if constexpr (std::is_same_v<T, bool>) {
            field = parse_bool(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
            field = std::string(v);
        } else {
            field = parse_number<T>(v);
        }
    };
    return k;
}

#define NASVIT_KEY(T, name, help, expr) make_key<T>(name, help, [](RunConfig& c) -> T& { return expr; })

ConfigKey stage_key(Stage stage) {
    ConfigKey k;
    k.name = fmt::format("preprocess.{}.enabled", stage_name(stage));
    k.help = fmt::format("run the {} stage", stage_name(stage));
    k.get = [stage](const RunConfig& c) { return std::string(c.preprocess.enabled(stage) ? "true" : "false"); };
    k.set = [stage](RunConfig& c, std::string_view v) { c.preprocess.set_enabled(stage, parse_bool(v)); };
    return k;
}

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> keys;
    keys.push_back(NASVIT_KEY(std::string, "data.root", "dataset directory (one subdirectory per class)", c.data_dir));
    keys.push_back(NASVIT_KEY(std::string, "output.dir", "directory for run artifacts", c.output_dir));
    keys.push_back(NASVIT_KEY(double, "data.train_fraction", "train share per class", c.split.train));
    keys.push_back(NASVIT_KEY(double, "data.val_fraction", "validation share per class", c.split.val));
    keys.push_back(NASVIT_KEY(double, "data.test_fraction", "test share per class", c.split.test));
    keys.push_back(NASVIT_KEY(std::uint64_t, "data.split_seed", "seed of the stratified split", c.split.seed));
    keys.push_back(NASVIT_KEY(std::size_t, "data.workers", "threads preparing samples", c.workers));

    keys.push_back(stage_key(Stage::wavelet));
    keys.push_back(NASVIT_KEY(float, "preprocess.wavelet.detail_gain", "gain on Haar detail bands",
                              c.preprocess.wavelet_detail_gain));
    keys.push_back(stage_key(Stage::clahe));
    keys.push_back(NASVIT_KEY(std::size_t, "preprocess.clahe.tile_rows", "CLAHE tile grid rows",
                              c.preprocess.clahe_tile_rows));
    keys.push_back(NASVIT_KEY(std::size_t, "preprocess.clahe.tile_cols", "CLAHE tile grid columns",
                              c.preprocess.clahe_tile_cols));
    keys.push_back(NASVIT_KEY(float, "preprocess.clahe.clip", "CLAHE clip limit (multiple of the mean bin count)",
                              c.preprocess.clahe_clip));
    keys.push_back(stage_key(Stage::fourier));
    keys.push_back(NASVIT_KEY(float, "preprocess.fourier.band_low", "lower radial frequency kept (Nyquist = 0.5)",
                              c.preprocess.band_low));
    keys.push_back(NASVIT_KEY(float, "preprocess.fourier.band_high", "upper radial frequency kept",
                              c.preprocess.band_high));
    keys.push_back(stage_key(Stage::bilateral));
    keys.push_back(NASVIT_KEY(float, "preprocess.bilateral.sigma_spatial", "spatial sigma in pixels",
                              c.preprocess.bilateral_sigma_spatial));
    keys.push_back(NASVIT_KEY(float, "preprocess.bilateral.sigma_range", "intensity sigma",
                              c.preprocess.bilateral_sigma_range));
    keys.push_back(stage_key(Stage::morphology));
    keys.push_back(NASVIT_KEY(std::size_t, "preprocess.morphology.se_radius", "closing disk radius",
                              c.preprocess.morph_se_radius));
    keys.push_back(NASVIT_KEY(float, "preprocess.morphology.blend_alpha", "weight of the unmasked image",
                              c.preprocess.morph_blend_alpha));

    keys.push_back(NASVIT_KEY(bool, "augment.enabled", "augment training samples", c.augment.enabled));
    keys.push_back(NASVIT_KEY(double, "augment.hflip_prob", "horizontal flip probability", c.augment.hflip_prob));
    keys.push_back(NASVIT_KEY(double, "augment.rotation_max_deg", "max absolute rotation in degrees",
                              c.augment.rotation_max_deg));
    keys.push_back(NASVIT_KEY(double, "augment.scale_min", "lower zoom factor", c.augment.scale_min));
    keys.push_back(NASVIT_KEY(double, "augment.scale_max", "upper zoom factor", c.augment.scale_max));
    keys.push_back(NASVIT_KEY(double, "augment.brightness_delta_max", "max absolute brightness shift",
                              c.augment.brightness_delta_max));
    keys.push_back(NASVIT_KEY(std::uint64_t, "augment.seed", "augmentation seed", c.augment.seed));

    keys.push_back(NASVIT_KEY(std::size_t, "model.image_size", "square model input size", c.model.image_size));
    keys.push_back(NASVIT_KEY(std::size_t, "nasnet.stem_channels", "stem output channels",
                              c.model.nasnet.stem_channels));
    keys.push_back(NASVIT_KEY(std::size_t, "nasnet.cells_per_stage", "normal cells per stage",
                              c.model.nasnet.cells_per_stage));
    keys.push_back(NASVIT_KEY(std::size_t, "nasnet.num_stages", "stages (reductions = stages - 1)",
                              c.model.nasnet.num_stages));
    keys.push_back(NASVIT_KEY(std::size_t, "vit.patch_size", "square patch side", c.model.vit.patch_size));
    keys.push_back(NASVIT_KEY(std::size_t, "vit.embed_dim", "token width", c.model.vit.embed_dim));
    keys.push_back(NASVIT_KEY(std::size_t, "vit.num_layers", "encoder layers", c.model.vit.num_layers));
    keys.push_back(NASVIT_KEY(std::size_t, "vit.num_heads", "attention heads", c.model.vit.num_heads));
    keys.push_back(NASVIT_KEY(std::size_t, "vit.ffn_dim", "feed-forward hidden width", c.model.vit.ffn_dim));
    keys.push_back(NASVIT_KEY(double, "vit.dropout_rate", "dropout after attention and FFN", c.model.vit.dropout_rate));
    keys.push_back(NASVIT_KEY(std::size_t, "fusion.dim", "shared projection width", c.model.fusion.fusion_dim));
    keys.push_back(NASVIT_KEY(std::size_t, "fusion.mlp_hidden", "classifier hidden units", c.model.fusion.mlp_hidden));
    keys.push_back(NASVIT_KEY(std::size_t, "fusion.num_classes", "output classes (fixed at 5)",
                              c.model.fusion.num_classes));
    keys.push_back(NASVIT_KEY(double, "fusion.dropout_rate", "classifier dropout", c.model.fusion.dropout_rate));

    keys.push_back(NASVIT_KEY(std::size_t, "train.epochs", "training epochs", c.train.epochs));
    keys.push_back(NASVIT_KEY(std::size_t, "train.batch_size", "samples per optimizer step", c.train.batch_size));
    keys.push_back(NASVIT_KEY(double, "train.learning_rate", "step size", c.train.learning_rate));
    {
        ConfigKey k;
        k.name = "train.optimizer";
        k.help = "adam or sgd";
        k.get = [](const RunConfig& c) { return std::string(optimizer_name(c.train.optimizer)); };
        k.set = [](RunConfig& c, std::string_view v) {
            if (v == "adam") {
                c.train.optimizer = OptimizerKind::adam;
            } else if (v == "sgd") {
                c.train.optimizer = OptimizerKind::sgd;
            } else {
                throw ConfigError(fmt::format("unknown optimizer '{}' (adam, sgd)", v));
            }
        };
        keys.push_back(std::move(k));
    }
    keys.push_back(NASVIT_KEY(double, "train.adam_beta1", "Adam first-moment decay", c.train.adam_beta1));
    keys.push_back(NASVIT_KEY(double, "train.adam_beta2", "Adam second-moment decay", c.train.adam_beta2));
    keys.push_back(NASVIT_KEY(double, "train.adam_epsilon", "Adam denominator floor", c.train.adam_epsilon));
    keys.push_back(NASVIT_KEY(double, "train.weight_decay", "L2 penalty added to gradients", c.train.weight_decay));
    keys.push_back(NASVIT_KEY(std::uint64_t, "train.seed", "init, shuffling and dropout seed", c.train.seed));
    return keys;
}

#undef NASVIT_KEY

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

RunConfig parse_config(std::string_view text, std::string_view origin) {
    RunConfig cfg;
    const auto& keys = config_keys();
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = text.find('\n', pos);
        std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", origin, line_no, line));
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const ConfigKey* match = nullptr;
        for (const auto& k : keys) {
            if (k.name == key) {
                match = &k;
                break;
            }
        }
        if (!match) throw ConfigError(fmt::format("{}:{}: unknown key '{}'", origin, line_no, key));
        try {
            match->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}:{}: {}: {}", origin, line_no, key, e.what()));
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", origin, e.what()));
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read config {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string to_config_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) out += fmt::format("{} = {}\n", k.name, k.get(cfg));
    return out;
}

std::string config_help() {
    const RunConfig defaults;
    std::string out = "Config keys (key = value, '#' comments):\n";
    for (const auto& k : config_keys()) {
        const auto def = k.get(defaults);
        out += fmt::format("  {:<36} {} (default: {})\n", k.name, k.help, def.empty() ? "\"\"" : def);
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace nasvit
