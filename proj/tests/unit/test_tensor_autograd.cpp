#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "nasvit/autograd.hpp"

using namespace nasvit;

namespace {

using Op = std::function<Tensor64(const std::vector<Tensor64>&)>;

// Reduces an arbitrary output to a scalar with a fixed random projection so
// every output coordinate contributes to the checked gradient.
Tensor64 project_scalar(const Tensor64& y, std::uint64_t seed) {
    if (y.numel() == 1) return y;
    std::mt19937_64 rng(seed ^ 0xabcdefULL);
    auto r = randn<double>(y.shape(), 1.0, rng);
    return sum(mul(y, r));
}

// Worst per-coordinate |a - n| / max(|a|, 1e-6) over all inputs.
double op_grad_error(const Op& op, std::vector<Tensor64> inputs, std::uint64_t seed, double h = 1e-3) {
    for (auto& t : inputs) t.set_requires_grad(true);
    Tape64 tape;
    Tensor64 loss;
    {
        TapeScope64 scope(tape);
        loss = project_scalar(op(inputs), seed);
    }
    backward(loss, tape);

    double worst = 0.0;
    for (auto& t : inputs) {
        const auto analytic = t.grad();
        auto values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            const double fp = project_scalar(op(inputs), seed).item();
            values[i] = orig - h;
            const double fm = project_scalar(op(inputs), seed).item();
            values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]), 1e-6));
        }
    }
    return worst;
}

Tensor64 rnd(const Shape& s, std::mt19937_64& rng) { return randn<double>(s, 1.0, rng); }

// Values kept at least 0.1 away from zero so relu probes never cross the kink.
Tensor64 away_from_zero(const Shape& s, std::mt19937_64& rng) {
    auto t = rand_uniform<double>(s, 0.1, 1.0, rng);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.mutable_data()) v = sign(rng) ? v : -v;
    return t;
}

void check_op(const std::string& name, const std::function<std::vector<Tensor64>(std::mt19937_64&)>& make, const Op& op) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        const double err = op_grad_error(op, make(rng), seed);
        INFO(name << " seed " << seed << " rel error " << err);
        CHECK(err < 1e-3);
    }
}

std::vector<float> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.dim(1) == 3);
    CHECK_THROWS_AS(t.dim(2), IndexError);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.item(), ContractError);

    auto alias = t;
    CHECK(alias.same_storage(t));
    auto copy = t.clone();
    CHECK_FALSE(copy.same_storage(t));
    copy.mutable_data()[0] = 9.0f;
    CHECK(t[0] == 1.5f);
}

TEST_CASE("matmul examples") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    CHECK(vals(matmul(a, eye)) == vals(a));

    std::mt19937_64 rng(3);
    auto a34 = randn<float>({3, 4}, 1.0, rng);
    auto z = matmul(a34, Tensor({4, 2}));
    CHECK(z.shape() == Shape{3, 2});
    for (auto v : z.data()) CHECK(v == 0.0f);

    Tensor b({2, 2}, {5, 6, 7, 8});
    CHECK(vals(matmul(a, b)) == std::vector<float>{19, 22, 43, 50});
}

TEST_CASE("matmul shape error names both shapes") {
    try {
        matmul(Tensor({2, 3}), Tensor({4, 5}));
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("conv2d examples") {
    std::mt19937_64 rng(5);
    auto x = randn<float>({2, 5, 5}, 1.0, rng);

    Tensor ident({2, 2, 1, 1}, {1, 0, 0, 1});
    CHECK(vals(conv2d(x, ident, Tensor{}, 1, 0, 1)) == vals(x));

    auto zero = conv2d(x, Tensor({3, 2, 3, 3}), Tensor{}, 1, 1, 1);
    CHECK(zero.shape() == Shape{3, 5, 5});
    for (auto v : zero.data()) CHECK(v == 0.0f);

    const float c = 0.37f;
    auto constant = conv2d(Tensor({1, 6, 6}, c), Tensor({1, 1, 3, 3}, 1.0f), Tensor{}, 1, 0, 1);
    CHECK(constant.shape() == Shape{1, 4, 4});
    for (auto v : constant.data()) CHECK(v == doctest::Approx(9.0 * c).epsilon(1e-6));

    // stride and padding arithmetic: floor((7 + 2 - 3) / 2) + 1 = 4
    CHECK(conv2d(Tensor({1, 7, 7}), Tensor({1, 1, 3, 3}), Tensor{}, 2, 1, 1).shape() == Shape{1, 4, 4});
}

TEST_CASE("conv2d errors") {
    CHECK_THROWS_AS(conv2d(Tensor({3, 4, 4}), Tensor({2, 1, 3, 3}), Tensor{}, 1, 1, 2), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor{}, 1, 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 2, 2}), Tensor{}, 1, 0, 1), ShapeError);
}

TEST_CASE("depthwise then pointwise equals a brute-force separable convolution") {
    std::mt19937_64 rng(11);
    const std::size_t C = 5, H = 8, W = 8, Co = 4;
    auto x = randn<float>({C, H, W}, 1.0, rng);
    auto dw = randn<float>({C, 1, 3, 3}, 1.0, rng);
    auto dwb = randn<float>({C}, 1.0, rng);
    auto pw = randn<float>({Co, C, 1, 1}, 1.0, rng);
    auto pwb = randn<float>({Co}, 1.0, rng);
    auto got = conv2d(conv2d(x, dw, dwb, 1, 1, C), pw, pwb, 1, 0, 1);

    std::vector<double> mid(C * H * W);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                double s = dwb[c];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long yy = static_cast<long>(y) + dy, xc = static_cast<long>(xx) + dx;
                        if (yy < 0 || xc < 0 || yy >= long(H) || xc >= long(W)) continue;
                        s += double(x[(c * H + yy) * W + xc]) * dw[c * 9 + (dy + 1) * 3 + (dx + 1)];
                    }
                mid[(c * H + y) * W + xx] = s;
            }
    double worst = 0.0;
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t p = 0; p < H * W; ++p) {
            double s = pwb[o];
            for (std::size_t c = 0; c < C; ++c) s += double(pw[o * C + c]) * mid[c * H * W + p];
            worst = std::max(worst, std::abs(s - got[o * H * W + p]));
        }
    CHECK(worst < 1e-5);
}

TEST_CASE("relu examples") {
    CHECK(vals(relu(Tensor({3}, {-1, 0, 2}))) == std::vector<float>{0, 0, 2});
    CHECK(vals(relu(Tensor({4}, -3.0f))) == std::vector<float>(4, 0.0f));
    Tensor pos({3}, {0, 1, 5});
    CHECK(vals(relu(pos)) == vals(pos));
}

TEST_CASE("softmax examples and properties") {
    const auto uniform = softmax(Tensor({5}));
    for (auto v : uniform.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-7));

    // high-precision oracle
    const long double e10 = std::exp(10.0L);
    const long double z = e10 + 2.0L;
    auto s = softmax(Tensor({3}, {10, 0, 0}));
    CHECK(std::abs(s[0] - static_cast<double>(e10 / z)) < 1e-7);
    CHECK(std::abs(s[1] - static_cast<double>(1.0L / z)) < 1e-9);
    CHECK(std::abs(s[0] - 0.99991) < 1e-5);
    CHECK(std::abs(s[1] - 0.000045) < 1e-6);

    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = randn<float>({7}, 5.0, rng);
        auto shifted = x.clone();
        for (auto& v : shifted.mutable_data()) v += 3.25f;
        auto a = softmax(x), b = softmax(shifted);
        double total = 0.0;
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(a[i] > 0.0f);
            CHECK(std::abs(a[i] - b[i]) < 1e-6);
            total += a[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-6);
    }

    // rows of a matrix are independent distributions; large logits stay finite
    auto m = softmax(Tensor({2, 3}, {1000, 0, -1000, 1, 1, 1}));
    CHECK(m[0] == doctest::Approx(1.0));
    CHECK(m[3] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("layer_norm examples") {
    Tensor gamma({3}, 1.0f), beta({3}, 0.0f);
    const auto flat = layer_norm(Tensor({3}, 4.0f), gamma, beta);
    for (auto v : flat.data()) CHECK(v == 0.0f);

    auto y = layer_norm(Tensor({3}, {1, 2, 3}), gamma, beta);
    const double expect = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(y[2] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(std::abs(y[2] - 1.2247) < 1e-4);

    std::mt19937_64 rng(4);
    auto x = randn<float>({6, 8}, 3.0, rng);
    auto b = randn<float>({8}, 1.0, rng);
    auto out = layer_norm(x, Tensor({8}, 1.0f), Tensor({8}, 0.0f));
    for (std::size_t r = 0; r < 6; ++r) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 8; ++i) mean += out[r * 8 + i];
        CHECK(std::abs(mean / 8.0) < 1e-5);
    }
    // with gamma = 1 the per-axis mean of the output is the mean of beta
    auto shifted = layer_norm(x, Tensor({8}, 1.0f), b);
    double beta_mean = 0.0;
    for (auto v : b.data()) beta_mean += v;
    beta_mean /= 8.0;
    for (std::size_t r = 0; r < 6; ++r) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 8; ++i) mean += shifted[r * 8 + i];
        CHECK(std::abs(mean / 8.0 - beta_mean) < 1e-5);
    }
    CHECK_THROWS_AS(layer_norm(x, Tensor({7}), Tensor({7})), ShapeError);
}

TEST_CASE("global_avg_pool examples") {
    CHECK(vals(global_avg_pool(Tensor({2, 3, 3}, 0.75f))) == std::vector<float>{0.75f, 0.75f});
    CHECK(global_avg_pool(Tensor({1, 2, 2}, {1, 2, 3, 4}))[0] == 2.5f);

    std::mt19937_64 rng(8);
    auto x = randn<float>({3, 4, 4}, 1.0, rng);
    auto permuted = x.clone();
    auto data = permuted.mutable_data();
    for (std::size_t c = 0; c < 3; ++c) std::shuffle(data.begin() + c * 16, data.begin() + (c + 1) * 16, rng);
    auto a = global_avg_pool(x), b = global_avg_pool(permuted);
    for (std::size_t c = 0; c < 3; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-6));
}

TEST_CASE("cross entropy examples") {
    const std::vector<float> one_hot{0, 0, 1, 0, 0};
    CHECK(cross_entropy_loss(one_hot, 2) == 0.0);
    const std::vector<float> uniform(5, 0.2f);
    CHECK(cross_entropy_loss(uniform, 3) == doctest::Approx(std::log(5.0)).epsilon(1e-6));
    const std::vector<float> p{0.7f, 0.2f, 0.1f};
    CHECK(std::abs(cross_entropy_loss(p, 0) - 0.35667) < 1e-5);
    CHECK_THROWS_AS(cross_entropy_loss(p, 3), IndexError);
    CHECK_THROWS_AS(cross_entropy(Tensor({3}, 0.3f), 5), IndexError);

    // clamped, never infinite
    const std::vector<float> zero_target{1, 0, 0};
    CHECK(cross_entropy_loss(zero_target, 1) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("backward simple rules") {
    std::mt19937_64 rng(2);
    auto x = randn<float>({4}, 1.0, rng).set_requires_grad();
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = sum(x);
    }
    backward(loss, tape);
    CHECK(x.grad() == std::vector<float>(4, 1.0f));
    CHECK(tape.empty());

    auto a = randn<float>({5}, 1.0, rng).set_requires_grad();
    auto b = randn<float>({5}, 1.0, rng).set_requires_grad();
    {
        TapeScope scope(tape);
        loss = sum(mul(a, b));
    }
    backward(loss, tape);
    CHECK(a.grad() == vals(b));
    CHECK(b.grad() == vals(a));
}

TEST_CASE("backward contract") {
    auto x = Tensor({3}, 1.0f).set_requires_grad();
    Tape tape;
    Tensor y;
    {
        TapeScope scope(tape);
        y = scale(x, 2.0f);
    }
    CHECK_THROWS_AS(backward(y, tape), ContractError);
}

TEST_CASE("tape records only ops that need gradients, in topological order") {
    Tape tape;
    auto leaf = Tensor({2}, 1.0f).set_requires_grad();
    auto constant = Tensor({2}, 2.0f);
    {
        TapeScope scope(tape);
        auto c = add(constant, constant);
        CHECK(tape.size() == 0);
        auto d = mul(leaf, c);
        auto e = relu(d);
        auto s = sum(e);
        CHECK(tape.size() == 3);
    }
    // no active tape: nothing is recorded
    auto f = add(leaf, leaf);
    CHECK(tape.size() == 3);
    const auto& entries = tape.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (const auto& in : entries[i].inputs) {
            if (!in->on_tape) continue;
            bool earlier = false;
            for (std::size_t j = 0; j < i; ++j) earlier |= entries[j].output == in;
            CHECK(earlier);
        }
    }
}

TEST_CASE("a leaf used twice accumulates both paths exactly once") {
    auto x = Tensor({3}, {1, 2, 3}).set_requires_grad();
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = sum(add(mul(x, x), scale(x, 3.0f)));
    }
    backward(loss, tape);
    CHECK(x.grad() == std::vector<float>{5, 7, 9});
}

TEST_CASE("finite difference oracle examples") {
    auto square_sum = [](const Tensor64& t) {
        double s = 0;
        for (auto v : t.data()) s += v * v;
        return s;
    };
    auto g = finite_difference_gradient(square_sum, Tensor64({2}, {1.0, 2.0}));
    CHECK(std::abs(g[0] - 2.0) < 1e-6);
    CHECK(std::abs(g[1] - 4.0) < 1e-6);
    auto zero = finite_difference_gradient([](const Tensor64&) { return 3.0; }, Tensor64({3}, 0.5));
    for (auto v : zero.data()) CHECK(v == 0.0);

    const std::vector<double> a{1.0, 0.0}, n{1.0005, 1e-9};
    CHECK(max_relative_error(a, n) == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("per-op gradients agree with central differences") {
    check_op("matmul", [](auto& r) { return std::vector{rnd({3, 4}, r), rnd({4, 2}, r)}; },
             [](const auto& in) { return matmul(in[0], in[1]); });
    check_op("transpose", [](auto& r) { return std::vector{rnd({3, 4}, r)}; },
             [](const auto& in) { return transpose(in[0]); });
    check_op("linear", [](auto& r) { return std::vector{rnd({3, 4}, r), rnd({2, 4}, r), rnd({2}, r)}; },
             [](const auto& in) { return linear(in[0], in[1], in[2]); });
    check_op("linear vector", [](auto& r) { return std::vector{rnd({4}, r), rnd({3, 4}, r), rnd({3}, r)}; },
             [](const auto& in) { return linear(in[0], in[1], in[2]); });
    check_op("add", [](auto& r) { return std::vector{rnd({2, 3}, r), rnd({2, 3}, r)}; },
             [](const auto& in) { return add(in[0], in[1]); });
    check_op("mul", [](auto& r) { return std::vector{rnd({6}, r), rnd({6}, r)}; },
             [](const auto& in) { return mul(in[0], in[1]); });
    check_op("scale", [](auto& r) { return std::vector{rnd({6}, r)}; },
             [](const auto& in) { return scale(in[0], -0.7); });
    check_op("relu", [](auto& r) { return std::vector{away_from_zero({10}, r)}; },
             [](const auto& in) { return relu(in[0]); });
    check_op("softmax", [](auto& r) { return std::vector{rnd({5}, r)}; },
             [](const auto& in) { return softmax(in[0]); });
    check_op("softmax rows", [](auto& r) { return std::vector{rnd({3, 4}, r)}; },
             [](const auto& in) { return softmax(in[0]); });
    check_op("layer_norm", [](auto& r) { return std::vector{rnd({3, 5}, r), rnd({5}, r), rnd({5}, r)}; },
             [](const auto& in) { return layer_norm(in[0], in[1], in[2]); });
    check_op("conv2d", [](auto& r) { return std::vector{rnd({2, 5, 5}, r), rnd({3, 2, 3, 3}, r), rnd({3}, r)}; },
             [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1, 1); });
    check_op("conv2d depthwise stride 2",
             [](auto& r) { return std::vector{rnd({3, 6, 6}, r), rnd({3, 1, 3, 3}, r), rnd({3}, r)}; },
             [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1, 3); });
    check_op("conv2d grouped", [](auto& r) { return std::vector{rnd({4, 4, 4}, r), rnd({2, 2, 3, 3}, r)}; },
             [](const auto& in) { return conv2d(in[0], in[1], Tensor64{}, 1, 0, 2); });
    check_op("global_avg_pool", [](auto& r) { return std::vector{rnd({3, 4, 5}, r)}; },
             [](const auto& in) { return global_avg_pool(in[0]); });
    check_op("mean_rows", [](auto& r) { return std::vector{rnd({4, 3}, r)}; },
             [](const auto& in) { return mean_rows(in[0]); });
    check_op("slice_cols", [](auto& r) { return std::vector{rnd({3, 6}, r)}; },
             [](const auto& in) { return slice_cols(in[0], 2, 3); });
    check_op("concat_cols", [](auto& r) { return std::vector{rnd({3, 2}, r), rnd({3, 4}, r)}; },
             [](const auto& in) { return concat_cols(std::vector{in[0], in[1]}); });
    check_op("patchify", [](auto& r) { return std::vector{rnd({2, 4, 4}, r)}; },
             [](const auto& in) { return patchify(in[0], 2); });
    check_op("dropout", [](auto& r) { return std::vector{rnd({12}, r)}; },
             [](const auto& in) {
                 std::mt19937_64 mask_rng(99);
                 return dropout(in[0], 0.3, mask_rng);
             });
    check_op("mean_of", [](auto& r) { return std::vector{rnd({1}, r), rnd({1}, r), rnd({1}, r)}; },
             [](const auto& in) { return mean_of(std::vector{mul(in[0], in[1]), in[2]}); });
    check_op("cross_entropy of softmax", [](auto& r) { return std::vector{rnd({5}, r)}; },
             [](const auto& in) { return cross_entropy(softmax(in[0]), 2); });
    check_op("composite", [](auto& r) { return std::vector{rnd({4, 3}, r), rnd({3, 3}, r), rnd({3}, r)}; },
             [](const auto& in) { return softmax(layer_norm(linear(in[0], in[1], in[2]), in[2], in[2])); });
}

TEST_CASE("patchify ordering") {
    // pixel value encodes its patch index
    Tensor x({2, 4, 4});
    auto d = x.mutable_data();
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t xx = 0; xx < 4; ++xx) d[(c * 4 + y) * 4 + xx] = float((y / 2) * 2 + xx / 2);
    auto p = patchify(x, 2);
    CHECK(p.shape() == Shape{4, 8});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j) CHECK(p[i * 8 + j] == float(i));
    CHECK_THROWS_AS(patchify(Tensor({1, 5, 4}), 2), ShapeError);
}

TEST_CASE("dropout") {
    std::mt19937_64 rng(1);
    Tensor x({1000}, 1.0f);
    CHECK(dropout(x, 0.0, rng).same_storage(x));
    auto y = dropout(x, 0.25, rng);
    std::size_t kept = 0;
    for (auto v : y.data()) {
        CHECK((v == 0.0f || std::abs(v - 1.0f / 0.75f) < 1e-6));
        kept += v != 0.0f;
    }
    CHECK(kept > 680);
    CHECK(kept < 820);
    CHECK_THROWS_AS(dropout(x, 1.0, rng), ContractError);
}

TEST_CASE("forward ops are bitwise deterministic and finite") {
    std::mt19937_64 rng(21);
    auto x = randn<float>({3, 8, 8}, 2.0, rng);
    auto w = randn<float>({4, 3, 3, 3}, 1.0, rng);
    auto run = [&] {
        auto y = relu(conv2d(x, w, Tensor{}, 1, 1, 1));
        auto tokens = patchify(y, 4);
        auto g = Tensor({tokens.dim(1)}, 1.0f);
        return softmax(layer_norm(tokens, g, Tensor({tokens.dim(1)})));
    };
    auto a = run(), b = run();
    CHECK(vals(a) == vals(b));
    for (auto v : a.data()) CHECK(std::isfinite(v));
}
