#include "nasvit/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "nasvit/autograd.hpp"

namespace nasvit {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::seed_seq make_seq(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    auto params = allocate_params<float>(cfg);
    auto named = params.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        auto values = t.mutable_data();
        double stddev = 0.0;
        if (name == "vit.positions") {
            stddev = 0.02;
        } else if (ends_with(name, ".weight")) {
            const double fan_in = static_cast<double>(t.numel() / t.dim(0));
            stddev = std::sqrt(2.0 / fan_in);
        } else if (ends_with(name, ".gamma")) {
            std::fill(values.begin(), values.end(), 1.0f);
            continue;
        } else {
            std::fill(values.begin(), values.end(), 0.0f);
            continue;
        }
        auto seq = make_seq(seed, i, 0x1417);
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : values) v = static_cast<float>(dist(rng));
    }
    return params;
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        if (cfg_.optimizer == OptimizerKind::adam) v_.emplace_back(p.numel(), 0.0);
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
    ++t_;
    const double lr = cfg_.learning_rate;
    const double b1 = cfg_.adam_beta1;
    const double b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        const auto grad = p.grad();
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * values[i];
            if (cfg_.optimizer == OptimizerKind::sgd) {
                values[i] = static_cast<float>(values[i] - lr * g);
                continue;
            }
            double& m = m_[k][i];
            double& v = v_[k][i];
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            const double mhat = m / c1;
            const double vhat = v / c2;
            values[i] = static_cast<float>(values[i] - lr * mhat / (std::sqrt(vhat) + cfg_.adam_epsilon));
        }
    }
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_loss,val_accuracy,val_macro_f1\n";
    for (const auto& r : history) {
        out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.epoch, r.train_loss, r.val_loss, r.val_accuracy,
                           r.val_macro_f1);
    }
    return out;
}

BatchOptions batch_options(const RunConfig& cfg, Split split) {
    BatchOptions o;
    o.batch_size = cfg.train.batch_size;
    o.image_size = cfg.model.image_size;
    o.preprocess = cfg.preprocess;
    if (split == Split::train && cfg.augment.enabled) o.augment = cfg.augment;
    o.shuffle_seed = cfg.train.seed;
    o.workers = cfg.workers;
    return o;
}

EvalOutcome evaluate(const ModelConfig& cfg, const ModelParams& params, const DatasetManifest& manifest, Split split,
                     const BatchOptions& options, SampleCache* cache) {
    BatchOptions opts = options;
    opts.augment.reset();
    BatchStream stream(manifest, split, opts, cache);
    stream.start_epoch(0);
    EvalOutcome out;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    double loss_sum = 0.0;
    Batch batch;
    while (stream.next(batch)) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto probs = model_forward(batch.images[i], cfg, params, ForwardMode{});
            loss_sum += cross_entropy_loss(probs.data(), batch.labels[i]);
            auto cp = to_class_probs(probs);
            pairs.emplace_back(batch.labels[i], cp.predicted_class);
            out.predictions.push_back(std::move(cp));
            out.sample_indices.push_back(batch.sample_indices[i]);
        }
    }
    out.confusion = confusion(pairs, manifest.class_names.size(), manifest.class_names);
    out.report = metrics(out.confusion);
    out.mean_loss = pairs.empty() ? 0.0 : loss_sum / static_cast<double>(pairs.size());
    return out;
}

double train_step(const ModelConfig& cfg, const ModelParams& params, Optimizer& opt, const Batch& batch,
                  std::mt19937_64& dropout_rng) {
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        ForwardMode mode{true, &dropout_rng};
        std::vector<Tensor> losses;
        losses.reserve(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            losses.push_back(cross_entropy(model_forward(batch.images[i], cfg, params, mode), batch.labels[i]));
        }
        loss = mean_of(losses);
    }
    const double value = loss.item();
    if (!std::isfinite(value)) return value;
    opt.zero_grad();
    backward(loss, tape);
    opt.step();
    return value;
}

TrainResult train(const RunConfig& cfg, const DatasetManifest& manifest, ModelParams params,
                  const std::function<void(const EpochRecord&)>& on_epoch, SampleCache* cache) {
    cfg.validate();
    check_params(cfg.model, params);
    if (manifest.indices(Split::train).empty()) throw InputError("train split is empty");
    if (manifest.indices(Split::val).empty()) throw InputError("validation split is empty");

    std::vector<Tensor> leaves;
    for (auto& [name, t] : params.named()) {
        t.set_requires_grad(true);
        leaves.push_back(t);
    }
    Optimizer opt(cfg.train, leaves);
    BatchStream stream(manifest, Split::train, batch_options(cfg, Split::train), cache);
    const BatchOptions val_options = batch_options(cfg, Split::val);

    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        stream.start_epoch(epoch);
        Batch batch;
        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::size_t batch_no = 0;
        while (stream.next(batch)) {
            ++batch_no;
            auto seq = make_seq(cfg.train.seed, epoch, batch_no, 0xd40f);
            std::mt19937_64 rng(seq);
            const double loss = train_step(cfg.model, params, opt, batch, rng);
            if (!std::isfinite(loss)) {
                throw NumericError(fmt::format("non-finite loss {} at epoch {} batch {}", loss, epoch, batch_no));
            }
            loss_sum += loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        const auto val = evaluate(cfg.model, params, manifest, Split::val, val_options, cache);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), val.mean_loss, val.report.accuracy,
                        val.report.macro_f1};
        result.history.push_back(rec);
        if (epoch == 1 || rec.val_macro_f1 > result.best_val_macro_f1) {
            result.best = clone_params(cfg.model, params);
            result.best_epoch = epoch;
            result.best_val_macro_f1 = rec.val_macro_f1;
            result.best_val_accuracy = rec.val_accuracy;
        }
        if (on_epoch) on_epoch(rec);
    }
    for (auto& t : leaves) {
        t.zero_grad();
        t.set_requires_grad(false);
    }
    result.last = clone_params(cfg.model, params);
    return result;
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'N', 'V', 'I', 'T'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_le(out, bits);
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(fmt::format("checkpoint truncated at offset {}: need {} bytes for {}, have {}", pos_, n,
                                          what, remaining()));
        }
    }

    template <typename U>
    U le(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    float f32() {
        const auto bits = le<std::uint32_t>("tensor values");
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_config_text(const Checkpoint& c) {
    std::string text = to_config_text(c.config);
    text += fmt::format("checkpoint.epoch = {}\n", c.epoch);
    text += fmt::format("checkpoint.val_macro_f1 = {}\n", c.val_macro_f1);
    text += fmt::format("checkpoint.val_accuracy = {}\n", c.val_accuracy);
    return text;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
    std::vector<std::uint8_t> out;
    out.reserve(checkpoint_size(c));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const auto text = checkpoint_config_text(c);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    const auto named = c.params.named();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : t.data()) put_f32(out, v);
    }
    return out;
}

std::size_t checkpoint_size(const Checkpoint& c) {
    std::size_t total = 4 + 4 + 4 + checkpoint_config_text(c).size() + 4;
    for (const auto& [name, t] : c.params.named()) total += 2 + name.size() + 1 + 4 * t.rank() + 4 * t.numel();
    return total;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const auto magic = r.text(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic at offset 0");
    const auto version_offset = r.offset();
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError(fmt::format("unsupported checkpoint version {} at offset {} (expected {})", version,
                                      version_offset, kCheckpointVersion));
    }
    const auto text_len = r.le<std::uint32_t>("config length");
    const auto text_offset = r.offset();
    const auto text = r.text(text_len, "config block");

    Checkpoint c;
    std::string run_text;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("checkpoint.", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError(fmt::format("bad config line at offset {}", text_offset));
            const auto key = line.substr(0, line.find_first_of(" =", 0));
            const auto value = line.substr(line.find_first_not_of(' ', eq + 1));
            try {
                if (key == "checkpoint.epoch") {
                    c.epoch = std::stoull(value);
                } else if (key == "checkpoint.val_macro_f1") {
                    c.val_macro_f1 = std::stod(value);
                } else if (key == "checkpoint.val_accuracy") {
                    c.val_accuracy = std::stod(value);
                } else {
                    throw FormatError("unknown key " + key);
                }
            } catch (const std::exception& e) {
                throw FormatError(fmt::format("config block at offset {}: {}: {}", text_offset, key, e.what()));
            }
        } else {
            run_text += line;
            run_text += '\n';
        }
    }
    try {
        c.config = parse_config(run_text, "checkpoint config");
    } catch (const ConfigError& e) {
        throw FormatError(fmt::format("config block at offset {}: {}", text_offset, e.what()));
    }

    c.params = allocate_params<float>(c.config.model);
    auto expected = c.params.named();
    const auto count_offset = r.offset();
    const auto count = r.le<std::uint32_t>("tensor count");
    if (count != expected.size()) {
        throw FormatError(fmt::format("offset {}: {} tensors, config implies {}", count_offset, count, expected.size()));
    }
    for (auto& [name, t] : expected) {
        const auto record_offset = r.offset();
        const auto name_len = r.le<std::uint16_t>("tensor name length");
        const auto got_name = r.text(name_len, "tensor name");
        if (got_name != name) {
            throw FormatError(fmt::format("offset {}: tensor '{}' where '{}' was expected", record_offset, got_name,
                                          name));
        }
        const auto rank = r.le<std::uint8_t>("tensor rank");
        Shape shape;
        for (std::size_t d = 0; d < rank; ++d) shape.push_back(r.le<std::uint32_t>("tensor dims"));
        if (shape != t.shape()) {
            throw FormatError(fmt::format("offset {}: tensor '{}' has shape {}, config implies {}", record_offset, name,
                                          shape_to_string(shape), shape_to_string(t.shape())));
        }
        r.need(4 * t.numel(), "tensor values");
        for (auto& v : t.mutable_data()) v = r.f32();
    }
    if (r.remaining() != 0) {
        throw FormatError(fmt::format("{} trailing bytes at offset {}", r.remaining(), r.offset()));
    }
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(c);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write checkpoint {}", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("write failed for checkpoint {}", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read checkpoint {}", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace nasvit
