#include "nasvit/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace nasvit {

namespace {

template <typename T>
thread_local BasicTape<T>* g_active_tape = nullptr;

template <typename T>
using NodePtr = std::shared_ptr<detail::TensorNode<T>>;

template <typename T>
std::vector<T>& grad_of(const NodePtr<T>& node) {
    if (node->grad.empty()) node->grad.assign(node->data.size(), T(0));
    return node->grad;
}

template <typename T>
bool wants_grad(const NodePtr<T>& node) {
    return node->requires_grad;
}

/// Appends an entry when a tape is active and some input requires gradients.
template <typename T>
void record(BasicTensor<T>& out, std::vector<NodePtr<T>> inputs, std::function<void()> rule) {
    BasicTape<T>* tape = BasicTape<T>::active();
    if (tape == nullptr) return;
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) { return n->requires_grad; });
    if (!any) return;
    out.set_requires_grad(true);
    out.node()->on_tape = true;
    tape->record({std::move(inputs), out.node(), std::move(rule)});
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(fmt::format("{}: expected rank {}, got {}", op, rank, shape_to_string(t.shape())));
    }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(
            fmt::format("{}: shape mismatch {} vs {}", op, shape_to_string(a.shape()), shape_to_string(b.shape())));
    }
}

}  // namespace

template <typename T>
BasicTape<T>* BasicTape<T>::active() {
    return g_active_tape<T>;
}

template <typename T>
BasicTapeScope<T>::BasicTapeScope(BasicTape<T>& tape) : previous_(g_active_tape<T>) {
    g_active_tape<T> = &tape;
}

template <typename T>
BasicTapeScope<T>::~BasicTapeScope() {
    g_active_tape<T> = previous_;
}

template <typename T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape) {
    if (loss.numel() != 1) {
        throw ContractError("backward needs a single-element loss, got shape " + shape_to_string(loss.shape()));
    }
    auto root = loss.node();
    const auto& entries = tape.entries();
    bool reachable = !root->on_tape && root->requires_grad;
    for (const auto& e : entries) reachable = reachable || e.output == root;
    if (!reachable) throw ContractError("backward: loss was not produced on this tape");

    grad_of<T>(root)[0] += T(1);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // not on a path to the loss
        it->backward_rule();
    }
    // Intermediate buffers are no longer needed; leaves keep theirs.
    for (const auto& e : entries) {
        if (e.output != root) e.output->grad.clear();
    }
    root->grad.clear();
    tape.clear();
}

// ---- linear algebra ---------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError(
            fmt::format("matmul: cannot multiply {} by {}", shape_to_string(a.shape()), shape_to_string(b.shape())));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> c(m * n, T(0));
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * B[p * n + j];
        }
    BasicTensor<T> out({m, n}, std::move(c));
    auto an = a.node(), bn = b.node(), on = out.node();
    record<T>(out, {an, bn}, [an, bn, on, m, k, n] {
        const auto& g = on->grad;
        if (wants_grad<T>(an)) {
            auto& ga = grad_of<T>(an);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T s = 0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn->data[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (wants_grad<T>(bn)) {
            auto& gb = grad_of<T>(bn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = an->data[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<T> v(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = a[i * c + j];
    BasicTensor<T> out({c, r}, std::move(v));
    auto an = a.node(), on = out.node();
    record<T>(out, {an}, [an, on, r, c] {
        auto& ga = grad_of<T>(an);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += on->grad[j * r + i];
    });
    return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    require_rank(weight, 2, "linear weight");
    const bool vector_input = x.rank() == 1;
    if (!vector_input && x.rank() != 2) {
        throw ShapeError("linear: input must be rank 1 or 2, got " + shape_to_string(x.shape()));
    }
    const std::size_t m = vector_input ? 1 : x.dim(0);
    const std::size_t in = vector_input ? x.dim(0) : x.dim(1);
    const std::size_t out_dim = weight.dim(0);
    if (weight.dim(1) != in) {
        throw ShapeError(fmt::format("linear: input {} does not match weight {}", shape_to_string(x.shape()),
                                     shape_to_string(weight.shape())));
    }
    const bool has_bias = !bias.empty();
    if (has_bias && bias.shape() != Shape{out_dim}) {
        throw ShapeError(fmt::format("linear: bias {} does not match weight {}", shape_to_string(bias.shape()),
                                     shape_to_string(weight.shape())));
    }
    std::vector<T> y(m * out_dim);
    auto X = x.data();
    auto W = weight.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
            T s = has_bias ? bias[o] : T(0);
            const T* wr = &W[o * in];
            const T* xr = &X[i * in];
            for (std::size_t j = 0; j < in; ++j) s += xr[j] * wr[j];
            y[i * out_dim + o] = s;
        }
    BasicTensor<T> out(vector_input ? Shape{out_dim} : Shape{m, out_dim}, std::move(y));
    auto xn = x.node(), wn = weight.node(), on = out.node();
    std::vector<NodePtr<T>> inputs{xn, wn};
    NodePtr<T> bn = has_bias ? bias.node() : nullptr;
    if (bn) inputs.push_back(bn);
    record<T>(out, std::move(inputs), [xn, wn, bn, on, m, in, out_dim] {
        const auto& g = on->grad;
        if (wants_grad<T>(xn)) {
            auto& gx = grad_of<T>(xn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const T go = g[i * out_dim + o];
                    const T* wr = &wn->data[o * in];
                    for (std::size_t j = 0; j < in; ++j) gx[i * in + j] += go * wr[j];
                }
        }
        if (wants_grad<T>(wn)) {
            auto& gw = grad_of<T>(wn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const T go = g[i * out_dim + o];
                    const T* xr = &xn->data[i * in];
                    for (std::size_t j = 0; j < in; ++j) gw[o * in + j] += go * xr[j];
                }
        }
        if (bn && wants_grad<T>(bn)) {
            auto& gb = grad_of<T>(bn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[i * out_dim + o];
        }
    });
    return out;
}

// ---- elementwise --------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    BasicTensor<T> out(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node(), on = out.node();
    record<T>(out, {an, bn}, [an, bn, on] {
        for (const auto& n : {an, bn}) {
            if (!wants_grad<T>(n)) continue;
            auto& g = grad_of<T>(n);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    BasicTensor<T> out(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node(), on = out.node();
    record<T>(out, {an, bn}, [an, bn, on] {
        if (wants_grad<T>(an)) {
            auto& g = grad_of<T>(an);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->data[i];
        }
        if (wants_grad<T>(bn)) {
            auto& g = grad_of<T>(bn);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->data[i];
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * factor;
    BasicTensor<T> out(a.shape(), std::move(v));
    auto an = a.node(), on = out.node();
    record<T>(out, {an}, [an, on, factor] {
        auto& g = grad_of<T>(an);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * factor;
    });
    return out;
}

std::vector<std::uint8_t>*& detail::relu_pattern_sink() {
    thread_local std::vector<std::uint8_t>* sink = nullptr;
    return sink;
}

ReluPatternRecorder::ReluPatternRecorder() : previous_(detail::relu_pattern_sink()) {
    detail::relu_pattern_sink() = &pattern_;
}

ReluPatternRecorder::~ReluPatternRecorder() { detail::relu_pattern_sink() = previous_; }

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    std::vector<T> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > T(0) ? x[i] : T(0);
    if (auto* sink = detail::relu_pattern_sink()) {
        for (std::size_t i = 0; i < v.size(); ++i) sink->push_back(x[i] > T(0) ? 1 : 0);
    }
    BasicTensor<T> out(x.shape(), std::move(v));
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on] {
        auto& g = grad_of<T>(xn);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->data[i] > T(0)) g[i] += on->grad[i];
    });
    return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
    if (logits.rank() != 1 && logits.rank() != 2) {
        throw ShapeError("softmax: expected rank 1 or 2, got " + shape_to_string(logits.shape()));
    }
    const std::size_t cols = logits.shape().back();
    const std::size_t rows = logits.numel() / cols;
    std::vector<T> y(logits.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = &logits.data()[r * cols];
        T* o = &y[r * cols];
        T mx = *std::max_element(in, in + cols);
        // Accumulate in double so the row sums to 1 within float rounding.
        double total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) o[c] = static_cast<T>(std::exp(static_cast<double>(in[c] - mx)) / total);
    }
    BasicTensor<T> out(logits.shape(), std::move(y));
    auto xn = logits.node(), on = out.node();
    record<T>(out, {xn}, [xn, on, rows, cols] {
        auto& g = grad_of<T>(xn);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yo = &on->data[r * cols];
            const T* go = &on->grad[r * cols];
            T dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += yo[c] * go[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += yo[c] * (go[c] - dot);
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: empty input");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError(fmt::format("layer_norm: last dim {} vs gamma {} / beta {}", d, shape_to_string(gamma.shape()),
                                     shape_to_string(beta.shape())));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<T> y(x.numel()), xhat(x.numel()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = &x.data()[r * d];
        T mean = 0;
        for (std::size_t i = 0; i < d; ++i) mean += in[i];
        mean /= T(d);
        T var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (in[i] - mean) * is;
            y[r * d + i] = xhat[r * d + i] * gamma[i] + beta[i];
        }
    }
    BasicTensor<T> out(x.shape(), std::move(y));
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    record<T>(out, {xn, gn, bn},
              [xn, gn, bn, on, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                  const auto& g = on->grad;
                  if (wants_grad<T>(gn)) {
                      auto& gg = grad_of<T>(gn);
                      for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
                  }
                  if (wants_grad<T>(bn)) {
                      auto& gb = grad_of<T>(bn);
                      for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
                  }
                  if (wants_grad<T>(xn)) {
                      auto& gx = grad_of<T>(xn);
                      std::vector<T> dxhat(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                          T s1 = 0, s2 = 0;
                          for (std::size_t i = 0; i < d; ++i) {
                              dxhat[i] = g[r * d + i] * gn->data[i];
                              s1 += dxhat[i];
                              s2 += dxhat[i] * xhat[r * d + i];
                          }
                          for (std::size_t i = 0; i < d; ++i) {
                              gx[r * d + i] +=
                                  inv_std[r] / T(d) * (T(d) * dxhat[i] - s1 - xhat[r * d + i] * s2);
                          }
                      }
                  }
              });
    return out;
}

// ---- convolution / pooling --------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding, std::size_t groups) {
    require_rank(input, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = weight.dim(0), cpg = weight.dim(1), k = weight.dim(2);
    if (groups == 0 || stride == 0) throw ShapeError("conv2d: groups and stride must be positive");
    if (weight.dim(3) != k || k % 2 == 0) {
        throw ShapeError("conv2d: kernel must be square with odd size, got " + shape_to_string(weight.shape()));
    }
    if (cin % groups != 0 || cout % groups != 0 || cpg != cin / groups) {
        throw ShapeError(fmt::format("conv2d: input {} and weight {} incompatible with groups={}",
                                     shape_to_string(input.shape()), shape_to_string(weight.shape()), groups));
    }
    if (h + 2 * padding < k || w + 2 * padding < k) {
        throw ShapeError(fmt::format("conv2d: empty output for input {} kernel {} padding {}",
                                     shape_to_string(input.shape()), k, padding));
    }
    const bool has_bias = !bias.empty();
    if (has_bias && bias.shape() != Shape{cout}) {
        throw ShapeError("conv2d: bias shape " + shape_to_string(bias.shape()));
    }
    const std::size_t oh = (h + 2 * padding - k) / stride + 1;
    const std::size_t ow = (w + 2 * padding - k) / stride + 1;
    const std::size_t opg = cout / groups;

    // Valid output range along one axis for kernel offset kk: in = o*stride + kk - padding in [0, n).
    auto valid_range = [stride, padding](std::size_t kk, std::size_t n, std::size_t on) {
        std::ptrdiff_t lo = 0;
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(padding);
        while (lo < static_cast<std::ptrdiff_t>(on) && lo * static_cast<std::ptrdiff_t>(stride) + shift < 0) ++lo;
        std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(on);
        while (hi > lo && (hi - 1) * static_cast<std::ptrdiff_t>(stride) + shift >= static_cast<std::ptrdiff_t>(n)) --hi;
        return std::pair<std::size_t, std::size_t>(lo, hi);
    };

    std::vector<T> out_v(cout * oh * ow, T(0));
    auto X = input.data();
    auto W = weight.data();
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const std::size_t g = oc / opg;
        T* o = &out_v[oc * oh * ow];
        if (has_bias) std::fill(o, o + oh * ow, bias[oc]);
        for (std::size_t icg = 0; icg < cpg; ++icg) {
            const std::size_t ic = g * cpg + icg;
            const T* xin = &X[ic * h * w];
            for (std::size_t ky = 0; ky < k; ++ky) {
                auto [y0, y1] = valid_range(ky, h, oh);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    auto [x0, x1] = valid_range(kx, w, ow);
                    const T wv = W[((oc * cpg + icg) * k + ky) * k + kx];
                    if (wv == T(0)) continue;
                    for (std::size_t oy = y0; oy < y1; ++oy) {
                        const std::size_t iy = oy * stride + ky - padding;
                        const T* row = &xin[iy * w];
                        T* orow = &o[oy * ow];
                        for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * row[ox * stride + kx - padding];
                    }
                }
            }
        }
    }
    BasicTensor<T> out({cout, oh, ow}, std::move(out_v));
    auto xn = input.node(), wn = weight.node(), on = out.node();
    std::vector<NodePtr<T>> inputs{xn, wn};
    NodePtr<T> bn = has_bias ? bias.node() : nullptr;
    if (bn) inputs.push_back(bn);
    record<T>(out, std::move(inputs), [=] {
        const auto& go = on->grad;
        const bool gx_on = wants_grad<T>(xn), gw_on = wants_grad<T>(wn);
        std::vector<T>* gx = gx_on ? &grad_of<T>(xn) : nullptr;
        std::vector<T>* gw = gw_on ? &grad_of<T>(wn) : nullptr;
        for (std::size_t oc = 0; oc < cout; ++oc) {
            const std::size_t g = oc / opg;
            const T* gro = &go[oc * oh * ow];
            for (std::size_t icg = 0; icg < cpg; ++icg) {
                const std::size_t ic = g * cpg + icg;
                const T* xin = &xn->data[ic * h * w];
                for (std::size_t ky = 0; ky < k; ++ky) {
                    auto [y0, y1] = valid_range(ky, h, oh);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        auto [x0, x1] = valid_range(kx, w, ow);
                        const std::size_t widx = ((oc * cpg + icg) * k + ky) * k + kx;
                        const T wv = wn->data[widx];
                        T acc = 0;
                        for (std::size_t oy = y0; oy < y1; ++oy) {
                            const std::size_t iy = oy * stride + ky - padding;
                            for (std::size_t ox = x0; ox < x1; ++ox) {
                                const std::size_t ix = ox * stride + kx - padding;
                                const T gv = gro[oy * ow + ox];
                                acc += gv * xin[iy * w + ix];
                                if (gx_on) (*gx)[(ic * h + iy) * w + ix] += gv * wv;
                            }
                        }
                        if (gw_on) (*gw)[widx] += acc;
                    }
                }
            }
        }
        if (bn && wants_grad<T>(bn)) {
            auto& gb = grad_of<T>(bn);
            for (std::size_t oc = 0; oc < cout; ++oc) {
                T s = 0;
                for (std::size_t i = 0; i < oh * ow; ++i) s += go[oc * oh * ow + i];
                gb[oc] += s;
            }
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
    require_rank(x, 3, "global_avg_pool");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<T> v(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += x[ch * hw + i];
        v[ch] = s / T(hw);
    }
    BasicTensor<T> out({c}, std::move(v));
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on, c, hw] {
        auto& g = grad_of<T>(xn);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T gv = on->grad[ch] / T(hw);
            for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += gv;
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& x) {
    require_rank(x, 2, "mean_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> v(d, T(0));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) v[i] += x[r * d + i];
    for (auto& e : v) e /= T(n);
    BasicTensor<T> out({d}, std::move(v));
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on, n, d] {
        auto& g = grad_of<T>(xn);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t i = 0; i < d; ++i) g[r * d + i] += on->grad[i] / T(n);
    });
    return out;
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t start, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (count == 0 || start + count > cols) {
        throw ShapeError(fmt::format("slice_cols: [{}, {}) outside {}", start, start + count, shape_to_string(x.shape())));
    }
    std::vector<T> v(rows * count);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) v[r * count + c] = x[r * cols + start + c];
    BasicTensor<T> out({rows, count}, std::move(v));
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on, rows, cols, start, count] {
        auto& g = grad_of<T>(xn);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < count; ++c) g[r * cols + start + c] += on->grad[r * count + c];
    });
    return out;
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = parts.front().dim(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch " + shape_to_string(p.shape()));
        cols += p.dim(1);
    }
    std::vector<T> v(rows * cols);
    std::size_t offset = 0;
    std::vector<NodePtr<T>> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const std::size_t pc = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pc; ++c) v[r * cols + offset + c] = p[r * pc + c];
        offset += pc;
        nodes.push_back(p.node());
        widths.push_back(pc);
    }
    BasicTensor<T> out({rows, cols}, std::move(v));
    auto on = out.node();
    record<T>(out, nodes, [nodes, widths, on, rows, cols] {
        std::size_t off = 0;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
            const std::size_t pc = widths[p];
            if (wants_grad<T>(nodes[p])) {
                auto& g = grad_of<T>(nodes[p]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += on->grad[r * cols + off + c];
            }
            off += pc;
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& x, std::size_t patch) {
    require_rank(x, 3, "patchify");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ShapeError(fmt::format("patchify: {} not divisible by patch {}", shape_to_string(x.shape()), patch));
    }
    const std::size_t gh = h / patch, gw = w / patch, n = gh * gw, len = c * patch * patch;
    // index map: token element -> source offset
    std::vector<std::size_t> src(n * len);
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            const std::size_t row = py * gw + px;
            std::size_t e = 0;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t yy = 0; yy < patch; ++yy)
                    for (std::size_t xx = 0; xx < patch; ++xx)
                        src[row * len + e++] = (ch * h + py * patch + yy) * w + px * patch + xx;
        }
    std::vector<T> v(n * len);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[src[i]];
    BasicTensor<T> out({n, len}, std::move(v));
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on, src = std::move(src)] {
        auto& g = grad_of<T>(xn);
        for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += on->grad[i];
    });
    return out;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError(fmt::format("dropout rate {} outside [0, 1)", rate));
    if (rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const T kept_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? kept_scale : T(0);
    std::vector<T> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * mask[i];
    BasicTensor<T> out(x.shape(), std::move(v));
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on, mask = std::move(mask)] {
        auto& g = grad_of<T>(xn);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * mask[i];
    });
    return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T s = 0;
    for (auto v : x.data()) s += v;
    auto out = BasicTensor<T>::scalar(s);
    auto xn = x.node(), on = out.node();
    record<T>(out, {xn}, [xn, on] {
        auto& g = grad_of<T>(xn);
        for (auto& e : g) e += on->grad[0];
    });
    return out;
}

template <typename T>
BasicTensor<T> mean_of(const std::vector<BasicTensor<T>>& scalars) {
    if (scalars.empty()) throw ContractError("mean_of: no inputs");
    T s = 0;
    std::vector<NodePtr<T>> nodes;
    for (const auto& t : scalars) {
        if (t.numel() != 1) throw ShapeError("mean_of: expected single-element tensors");
        s += t[0];
        nodes.push_back(t.node());
    }
    const T n = T(scalars.size());
    auto out = BasicTensor<T>::scalar(s / n);
    auto on = out.node();
    record<T>(out, nodes, [nodes, on, n] {
        for (const auto& node : nodes)
            if (wants_grad<T>(node)) grad_of<T>(node)[0] += on->grad[0] / n;
    });
    return out;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& probs, std::size_t target_class) {
    require_rank(probs, 1, "cross_entropy");
    if (target_class >= probs.numel()) {
        throw IndexError(fmt::format("cross_entropy: target class {} out of range for {} classes", target_class,
                                     probs.numel()));
    }
    const T p = probs[target_class];
    const bool clamped = static_cast<double>(p) < kLogClampFloor;
    const double pc = clamped ? kLogClampFloor : static_cast<double>(p);
    auto out = BasicTensor<T>::scalar(static_cast<T>(-std::log(pc)));
    auto pn = probs.node(), on = out.node();
    record<T>(out, {pn}, [pn, on, target_class, clamped] {
        if (clamped) return;
        grad_of<T>(pn)[target_class] -= on->grad[0] / pn->data[target_class];
    });
    return out;
}

double cross_entropy_loss(std::span<const float> probs, std::size_t target_class) {
    if (target_class >= probs.size()) {
        throw IndexError(fmt::format("cross_entropy_loss: target class {} out of range for {} classes", target_class,
                                     probs.size()));
    }
    return -std::log(std::max(static_cast<double>(probs[target_class]), kLogClampFloor));
}

Tensor64 finite_difference_gradient(const std::function<double(const Tensor64&)>& f, const Tensor64& x, double h) {
    Tensor64 probe = x.clone();
    probe.set_requires_grad(false);
    std::vector<double> g(x.numel());
    auto values = probe.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double orig = values[i];
        values[i] = orig + h;
        const double fp = f(probe);
        values[i] = orig - h;
        const double fm = f(probe);
        values[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor64(x.shape(), std::move(g));
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max(std::abs(analytic[i]), floor);
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

#define NASVIT_INSTANTIATE_OPS(T)                                                                                     \
    template class BasicTape<T>;                                                                                      \
    template class BasicTapeScope<T>;                                                                                 \
    template void backward<T>(const BasicTensor<T>&, BasicTape<T>&);                                                  \
    template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                                                      \
    template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);           \
    template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                                       \
    template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> softmax<T>(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T);    \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,            \
                                      std::size_t, std::size_t, std::size_t);                                         \
    template BasicTensor<T> global_avg_pool<T>(const BasicTensor<T>&);                                                \
    template BasicTensor<T> mean_rows<T>(const BasicTensor<T>&);                                                      \
    template BasicTensor<T> slice_cols<T>(const BasicTensor<T>&, std::size_t, std::size_t);                           \
    template BasicTensor<T> concat_cols<T>(const std::vector<BasicTensor<T>>&);                                       \
    template BasicTensor<T> patchify<T>(const BasicTensor<T>&, std::size_t);                                          \
    template BasicTensor<T> dropout<T>(const BasicTensor<T>&, double, std::mt19937_64&);                              \
    template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> mean_of<T>(const std::vector<BasicTensor<T>>&);                                           \
    template BasicTensor<T> cross_entropy<T>(const BasicTensor<T>&, std::size_t);

NASVIT_INSTANTIATE_OPS(float)
NASVIT_INSTANTIATE_OPS(double)

#undef NASVIT_INSTANTIATE_OPS

}  // namespace nasvit
