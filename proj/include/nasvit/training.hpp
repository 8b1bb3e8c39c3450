#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nasvit/config.hpp"
#include "nasvit/dataset.hpp"
#include "nasvit/fusion.hpp"
#include "nasvit/metrics.hpp"
#include "nasvit/model.hpp"

namespace nasvit {

/**
 * Seeded initialisation: weights ~ N(0, 2/fan_in) with fan_in = numel / rows,
 * positional table ~ N(0, 0.02²), layer-norm gains 1, everything else 0.
 * Tensor i draws from its own stream seeded by (seed, i).
 */
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
BasicModelParams<T> clone_params(const ModelConfig& cfg, const BasicModelParams<T>& p) {
    return cast_params<T>(cfg, p);
}

/// Adam or SGD over a fixed parameter list; state is kept in double precision.
class Optimizer {
  public:
    Optimizer(const TrainConfig& cfg, std::vector<Tensor> params);

    /// Applies one update from the accumulated gradients (missing gradients count as zero).
    void step();
    void zero_grad();
    std::size_t steps_taken() const { return t_; }

  private:
    TrainConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
};

/// epoch,train_loss,val_loss,val_accuracy,val_macro_f1
std::string history_csv(const std::vector<EpochRecord>& history);

struct EvalOutcome {
    ConfusionMatrix confusion;
    EvalReport report;
    double mean_loss = 0.0;
    std::vector<ClassProbs> predictions;  // split order
    std::vector<std::size_t> sample_indices;
};

/// Inference over one split (no augmentation, no dropout).
EvalOutcome evaluate(const ModelConfig& cfg, const ModelParams& params, const DatasetManifest& manifest, Split split,
                     const BatchOptions& options, SampleCache* cache = nullptr);

struct TrainResult {
    ModelParams best;
    std::size_t best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    double best_val_accuracy = 0.0;
    ModelParams last;
    std::vector<EpochRecord> history;
};

/// Mean cross-entropy of one batch, backward and one optimizer step. Returns the loss.
double train_step(const ModelConfig& cfg, const ModelParams& params, Optimizer& opt, const Batch& batch,
                  std::mt19937_64& dropout_rng);

/**
 * Supervised loop over cfg.train.epochs, starting from `params` (modified in place).
 * The returned best parameters maximise validation macro-F1; ties keep the earlier epoch.
 * A non-finite batch loss raises NumericError with the epoch and batch number.
 */
TrainResult train(const RunConfig& cfg, const DatasetManifest& manifest, ModelParams params,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}, SampleCache* cache = nullptr);

BatchOptions batch_options(const RunConfig& cfg, Split split);

// ---- checkpoint -----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;
    ModelParams params;
    std::size_t epoch = 0;
    double val_macro_f1 = 0.0;
    double val_accuracy = 0.0;
};

/// Config block text: the run config followed by checkpoint.* keys.
std::string checkpoint_config_text(const Checkpoint& c);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
/// Validates magic, version, config and every tensor name/shape; FormatError names the byte offset.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Byte size predicted from the layout: header + config block + per-tensor records.
std::size_t checkpoint_size(const Checkpoint& c);

}  // namespace nasvit
