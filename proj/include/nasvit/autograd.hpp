#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "nasvit/tensor.hpp"

namespace nasvit {

/**
 * Ordered record of differentiable operations.
 *
 * Operations are appended in execution order, so every entry's inputs were
 * produced by an earlier entry (or are leaves). backward() walks the entries
 * in reverse and then clears the tape.
 *
 * A tape only records while it is the active tape of the current thread (see
 * TapeScope) and only for operations that have at least one input requiring
 * gradients.
 */
template <typename T>
class BasicTape {
  public:
    struct Entry {
        std::vector<std::shared_ptr<detail::TensorNode<T>>> inputs;
        std::shared_ptr<detail::TensorNode<T>> output;
        std::function<void()> backward_rule;
    };

    void record(Entry entry) { entries_.push_back(std::move(entry)); }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<Entry>& entries() const { return entries_; }
    void clear() { entries_.clear(); }

    static BasicTape* active();

  private:
    template <typename U>
    friend class BasicTapeScope;
    std::vector<Entry> entries_;
};

/// Makes a tape the active one for the current thread until destruction.
template <typename T>
class BasicTapeScope {
  public:
    explicit BasicTapeScope(BasicTape<T>& tape);
    ~BasicTapeScope();
    BasicTapeScope(const BasicTapeScope&) = delete;
    BasicTapeScope& operator=(const BasicTapeScope&) = delete;

  private:
    BasicTape<T>* previous_;
};

using Tape = BasicTape<float>;
using TapeScope = BasicTapeScope<float>;
using Tape64 = BasicTape<double>;
using TapeScope64 = BasicTapeScope<double>;

/**
 * While alive, collects the activation pattern (input > 0) of every relu
 * evaluated on this thread. Two evaluations with different patterns lie on
 * different linear pieces, so a central difference between them spans a kink.
 */
class ReluPatternRecorder {
  public:
    ReluPatternRecorder();
    ~ReluPatternRecorder();
    ReluPatternRecorder(const ReluPatternRecorder&) = delete;
    ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;

    const std::vector<std::uint8_t>& pattern() const { return pattern_; }

  private:
    std::vector<std::uint8_t> pattern_;
    std::vector<std::uint8_t>* previous_;
};

namespace detail {
std::vector<std::uint8_t>*& relu_pattern_sink();
}

/// Reverse pass from a single-element loss; consumes the tape.
template <typename T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape);

// ---- operations -----------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

/// x[m×in] (or x[in]) times weight[out×in] transposed, plus bias[out] when non-empty.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// Softmax over the last axis (rank 1 or 2), max-subtracted.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(1e-5));

/**
 * 2-D cross-correlation of input[C_in×H×W] with weight[C_out×(C_in/groups)×k×k].
 * bias[C_out] is optional (pass an empty tensor).
 */
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding, std::size_t groups);

/// [C×H×W] -> [C], per-channel spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// [N×d] -> [d], mean over rows.
template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t start, std::size_t count);

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts);

/// [C×H×W] -> [N×(C·p·p)]; patches in row-major grid order, each flattened channel-major then row-major.
template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& x, std::size_t patch);

/// Inverted dropout; identity when rate == 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, std::mt19937_64& rng);

/// Sum of all elements, as a single-element tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// Mean of single-element tensors.
template <typename T>
BasicTensor<T> mean_of(const std::vector<BasicTensor<T>>& scalars);

/// -log(max(probs[target], 1e-12)) as a single-element tensor.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& probs, std::size_t target_class);

inline constexpr double kLogClampFloor = 1e-12;

/// Plain-value version of cross_entropy.
double cross_entropy_loss(std::span<const float> probs, std::size_t target_class);

/**
 * Central-difference gradient of f at x, evaluated in 64-bit.
 * Each coordinate is perturbed by ±h independently.
 */
Tensor64 finite_difference_gradient(const std::function<double(const Tensor64&)>& f, const Tensor64& x,
                                    double h = 1e-3);

/// max_i |a_i - b_i| / max(|a_i|, floor)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6);

}  // namespace nasvit
