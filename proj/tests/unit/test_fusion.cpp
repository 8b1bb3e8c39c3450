#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "nasvit/fusion.hpp"
#include "nasvit/model.hpp"
#include "nasvit/training.hpp"

using namespace nasvit;
using namespace nasvit::testing;

namespace {

std::vector<float> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

FusionParams head_params(std::size_t d, std::size_t hidden) {
    FusionParams p;
    p.hidden = {Tensor({hidden, d}), Tensor({hidden})};
    p.output = {Tensor({kNumClasses, hidden}), Tensor({kNumClasses})};
    return p;
}

}  // namespace

TEST_CASE("project examples") {
    LinearParams<float> p{Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor({3})};
    Tensor f({3}, {0.5f, -2.0f, 7.0f});
    CHECK(vals(project(f, p)) == vals(f));

    LinearParams<float> z{Tensor({4, 3}), Tensor({4}, {1, 2, 3, 4})};
    CHECK(vals(project(f, z)) == std::vector<float>{1, 2, 3, 4});

    LinearParams<float> w{Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), Tensor({3}, {0.5f, 0, -1})};
    auto y = project(Tensor({2}, {1, -1}), w);
    CHECK(vals(y) == std::vector<float>{-0.5f, -1.0f, -2.0f});

    CHECK_THROWS_AS(project(Tensor({4}), w), ShapeError);
}

TEST_CASE("fuse identities") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto v = randn<float>({64}, 3.0, rng);
        const auto u = randn<float>({64}, 3.0, rng);
        CHECK(vals(fuse(Tensor({64}, 1.0f), v)) == vals(v));
        CHECK(vals(fuse(v, Tensor({64}, 1.0f))) == vals(v));
        const auto zero = fuse(Tensor({64}), v);
        for (auto x : zero.values()) CHECK(x == 0.0f);
        CHECK(vals(fuse(u, v)) == vals(fuse(v, u)));
    }
    CHECK(vals(fuse(Tensor({3}, {1, 2, 3}), Tensor({3}, {4, 5, 6}))) == std::vector<float>{4, 10, 18});
    CHECK_THROWS_AS(fuse(Tensor({3}), Tensor({4})), ShapeError);
}

TEST_CASE("mlp head") {
    FusionConfig cfg;
    cfg.fusion_dim = 4;
    cfg.mlp_hidden = 3;
    auto p = head_params(4, 3);
    const Tensor f({4}, {0.3f, -1.0f, 2.0f, 0.1f});
    const auto uniform = mlp_head(f, p, cfg, ForwardMode{});
    for (auto v : uniform.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-7));
    CHECK(to_class_probs(uniform).predicted_class == 0);

    // A constant added to every output bias leaves the distribution unchanged.
    std::mt19937_64 rng(2);
    p.hidden.weight = randn<float>({3, 4}, 1.0, rng);
    p.output.weight = randn<float>({5, 3}, 1.0, rng);
    p.output.bias = randn<float>({5}, 1.0, rng);
    const auto base = mlp_head(f, p, cfg, ForwardMode{});
    for (auto& b : p.output.bias.mutable_data()) b += 5.0f;
    const auto shifted = mlp_head(f, p, cfg, ForwardMode{});
    for (std::size_t i = 0; i < 5; ++i) CHECK(shifted[i] == doctest::Approx(base[i]).epsilon(1e-6));

    // hidden = relu([1·1 - 1·2, 0.5·1 + 0.5·2]) = [0, 1.5]; logits = [0, 1.5, -1.5, 0, 3]
    FusionConfig small = cfg;
    small.fusion_dim = 2;
    small.mlp_hidden = 2;
    auto q = head_params(2, 2);
    q.hidden.weight = Tensor({2, 2}, {1, -1, 0.5f, 0.5f});
    q.output.weight = Tensor({5, 2}, {1, 0, 0, 1, 0, -1, 3, 0, 0, 2});
    const auto probs = mlp_head(Tensor({2}, {1, 2}), q, small, ForwardMode{});
    const std::vector<double> logits = {0, 1.5, -1.5, 0, 3};
    double z = 0;
    for (auto l : logits) z += std::exp(l);
    for (std::size_t i = 0; i < 5; ++i) CHECK(probs[i] == doctest::Approx(std::exp(logits[i]) / z).epsilon(1e-6));
    CHECK(to_class_probs(probs).predicted_class == 4);
}

TEST_CASE("argmax ties go to the lowest index") {
    const std::vector<float> a = {0.1f, 0.4f, 0.4f, 0.1f};
    CHECK(argmax(std::span<const float>(a)) == 1);
    const std::vector<double> b = {2.0, 2.0};
    CHECK(argmax(std::span<const double>(b)) == 0);
    CHECK_THROWS_AS(argmax(std::span<const float>()), ShapeError);
}

TEST_CASE("model forward") {
    ModelConfig cfg = gradcheck_model_config();
    auto params = init_params(cfg, 3);
    std::mt19937_64 rng(3);
    const auto x = randn<float>({3, 32, 32}, 1.0, rng);
    const auto a = model_forward(x, cfg, params, ForwardMode{});
    const auto b = model_forward(x, cfg, params, ForwardMode{});
    CHECK(vals(a) == vals(b));
    REQUIRE(a.shape() == Shape{5});
    double s = 0;
    for (auto v : a.values()) {
        CHECK(v >= 0.0f);
        s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);

    // With a zero nasnet projection the fused vector is bias_n ⊙ project_vit(f_v).
    auto zeroed = clone_params(cfg, params);
    for (auto& v : zeroed.fusion.project_nasnet.weight.mutable_data()) v = 0.0f;
    std::mt19937_64 brng(4);
    zeroed.fusion.project_nasnet.bias = randn<float>({cfg.fusion.fusion_dim}, 1.0, brng);
    const auto fv = project(vit_forward(x, cfg.vit, zeroed.vit, ForwardMode{}), zeroed.fusion.project_vit);
    const auto expect = mlp_head(mul(zeroed.fusion.project_nasnet.bias, fv), zeroed.fusion, cfg.fusion, ForwardMode{});
    CHECK(vals(model_forward(x, cfg, zeroed, ForwardMode{})) == vals(expect));

    const auto cp = predict(x, cfg, params);
    CHECK(cp.probabilities == vals(a));
    CHECK(cp.predicted_class == argmax(a.data()));
}

TEST_CASE("model trace follows the documented schedule") {
    ModelConfig cfg;
    auto params = init_params(cfg, 5);
    ForwardTrace trace;
    model_forward(Tensor({3, 224, 224}, 0.1f), cfg, params, ForwardMode{}, &trace);
    auto find = [&](const std::string& name) {
        for (const auto& [n, s] : trace.steps)
            if (n == name) return s;
        FAIL("missing trace step " << name);
        return Shape{};
    };
    CHECK(find("input") == Shape{3, 224, 224});
    CHECK(find("nasnet.stem") == Shape{16, 112, 112});
    CHECK(find("nasnet.stage0.reduction") == Shape{32, 56, 56});
    CHECK(find("nasnet.stage1.reduction") == Shape{64, 28, 28});
    CHECK(find("nasnet.features") == Shape{64});
    CHECK(find("vit.patches") == Shape{196, 768});
    CHECK(find("vit.tokens") == Shape{196, 64});
    CHECK(find("vit.features") == Shape{64});
    CHECK(find("fusion.ensemble") == Shape{64});
    CHECK(find("fusion.probs") == Shape{5});
}

TEST_CASE("parameter validation") {
    ModelConfig cfg = gradcheck_model_config();
    auto params = init_params(cfg, 6);
    CHECK_NOTHROW(check_params(cfg, params));
    params.fusion.hidden.weight = Tensor({3, 3});
    CHECK_THROWS_WITH_AS(check_params(cfg, params), doctest::Contains("fusion.hidden.weight"), ShapeError);

    FusionConfig f;
    f.num_classes = 4;
    CHECK_THROWS_AS(f.validate(), ConfigError);
    f = FusionConfig{};
    f.dropout_rate = 1.0;
    CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("end-to-end gradients of the fusion and head parameters") {
    const auto cfg = gradcheck_model_config();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (const auto& c : check_model_gradients(cfg, seed, 1e-3, 200)) {
            if (c.name.rfind("fusion.", 0) != 0) continue;
            INFO(c.name << " seed " << seed << " worst coordinate " << c.max_rel_error);
            CHECK(c.checked > 0);
            CHECK(c.tensor_rel_error() < 1e-3);
        }
    }
}
