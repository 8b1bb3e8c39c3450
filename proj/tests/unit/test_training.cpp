#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "gradcheck.hpp"
#include "nasvit/training.hpp"
#include "synthetic.hpp"

using namespace nasvit;
using namespace nasvit::testing;
namespace fs = std::filesystem;

namespace {

struct ToyData {
    RunConfig cfg;
    DatasetManifest manifest;
};

const ToyData& toy_data() {
    static const ToyData data = [] {
        ToyData d;
        d.cfg = toy_run_config();
        const auto root = fresh_dir("training_textures");
        write_texture_dataset(root, 20, 32, 11);
        d.manifest = stratified_split(scan_directory(root), d.cfg.split);
        return d;
    }();
    return data;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    const auto na = a.named(), nb = b.named();
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i) {
        if (na[i].first != nb[i].first || na[i].second.values() != nb[i].second.values()) return false;
    }
    return true;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("init params") {
    ModelConfig cfg;
    const auto a = init_params(cfg, 9);
    const auto b = init_params(cfg, 9);
    CHECK(params_equal(a, b));
    CHECK_FALSE(params_equal(a, init_params(cfg, 10)));

    for (const auto& [name, t] : a.named()) {
        INFO(name);
        const bool is_bias = name.size() > 5 && name.substr(name.size() - 5) == ".bias";
        const bool is_beta = name.size() > 5 && name.substr(name.size() - 5) == ".beta";
        if (is_bias || is_beta) {
            for (auto v : t.values()) CHECK(v == 0.0f);
        }
        const bool is_weight = name.size() > 7 && name.substr(name.size() - 7) == ".weight";
        if (is_weight && t.numel() >= 1000) {
            double sq = 0;
            for (auto v : t.values()) sq += double(v) * v;
            const double sd = std::sqrt(sq / double(t.numel()));
            const double expect = std::sqrt(2.0 / double(t.numel() / t.dim(0)));
            CHECK(std::abs(sd / expect - 1.0) < 0.1);
        }
        if (name == "vit.positions") {
            double sq = 0;
            for (auto v : t.values()) sq += double(v) * v;
            CHECK(std::abs(std::sqrt(sq / double(t.numel())) / 0.02 - 1.0) < 0.1);
        }
    }
    CHECK_NOTHROW(check_params(cfg, a));
}

TEST_CASE("adam step is bounded by the learning rate") {
    TrainConfig tc;
    tc.learning_rate = 0.01;
    std::mt19937_64 rng(1);
    Tensor p = randn<float>({500}, 1.0, rng);
    const auto before = p.values();
    Optimizer opt(tc, {p});
    const auto g = randn<float>({500}, 5.0, rng);
    std::copy(g.data().begin(), g.data().end(), p.grad_buffer().begin());
    opt.step();
    for (std::size_t i = 0; i < 500; ++i) CHECK(std::abs(p[i] - before[i]) <= tc.learning_rate * (1 + 1e-5) + 1e-7);

    // A constant gradient gives steps of exactly the learning rate.
    Tensor q({4}, {0, 0, 0, 0});
    Optimizer opt2(tc, {q});
    for (int step = 0; step < 10; ++step) {
        const auto prev = q.values();
        opt2.zero_grad();
        for (auto& v : q.grad_buffer()) v = 3.0f;
        opt2.step();
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(q[i] - prev[i]) <= tc.learning_rate * (1 + 1e-5));
    }
    CHECK(opt2.steps_taken() == 10);
}

TEST_CASE("sgd step") {
    TrainConfig tc;
    tc.optimizer = OptimizerKind::sgd;
    tc.learning_rate = 0.5;
    Tensor p({2}, {1.0f, -1.0f});
    Optimizer opt(tc, {p});
    p.grad_buffer()[0] = 2.0f;
    opt.step();
    CHECK(p[0] == 0.0f);
    CHECK(p[1] == -1.0f);
}

TEST_CASE("learning rate zero leaves parameters unchanged") {
    auto cfg = toy_data().cfg;
    cfg.train.learning_rate = 0.0;
    cfg.train.epochs = 1;
    const auto start = init_params(cfg.model, 3);
    const auto result = train(cfg, toy_data().manifest, clone_params(cfg.model, start));
    CHECK(params_equal(result.last, start));
    REQUIRE(result.history.size() == 1);
    CHECK(std::isfinite(result.history[0].train_loss));
}

TEST_CASE("training is deterministic") {
    auto cfg = toy_data().cfg;
    cfg.train.epochs = 3;
    const auto a = train(cfg, toy_data().manifest, init_params(cfg.model, 4));
    const auto b = train(cfg, toy_data().manifest, init_params(cfg.model, 4));
    CHECK(history_csv(a.history) == history_csv(b.history));
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(params_equal(a.last, b.last));
    CHECK(params_equal(a.best, b.best));
}

TEST_CASE("training loss trend and best tracking") {
    auto cfg = toy_data().cfg;
    cfg.train.epochs = 60;
    std::size_t callbacks = 0;
    const auto r = train(cfg, toy_data().manifest, init_params(cfg.model, 5), [&](const EpochRecord&) { ++callbacks; });
    CHECK(callbacks == 60);
    REQUIRE(r.history.size() == 60);

    // Mean loss over consecutive 20-epoch windows.
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < 3; ++w) {
        double s = 0;
        for (std::size_t e = 0; e < 20; ++e) s += r.history[w * 20 + e].train_loss;
        INFO("window " << w << " mean loss " << s / 20);
        CHECK(s / 20 <= prev);
        prev = s / 20;
    }

    CHECK(r.best_val_macro_f1 >= r.history.back().val_macro_f1);
    double best = -1;
    std::size_t best_epoch = 0;
    for (const auto& h : r.history) {
        if (h.val_macro_f1 > best) {
            best = h.val_macro_f1;
            best_epoch = h.epoch;
        }
    }
    CHECK(r.best_epoch == best_epoch);
    CHECK(r.best_val_macro_f1 == best);
}

TEST_CASE("history csv") {
    std::vector<EpochRecord> h = {{1, 1.5, 1.25, 0.5, 0.4}, {2, 1.0, 0.75, 0.625, 0.6}};
    CHECK(history_csv(h) ==
          "epoch,train_loss,val_loss,val_accuracy,val_macro_f1\n"
          "1,1.500000,1.250000,0.500000,0.400000\n"
          "2,1.000000,0.750000,0.625000,0.600000\n");
}

TEST_CASE("non-finite loss aborts with context") {
    auto cfg = toy_data().cfg;
    cfg.train.epochs = 2;
    auto params = init_params(cfg.model, 6);
    params.fusion.output.bias.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train(cfg, toy_data().manifest, params), doctest::Contains("epoch 1 batch 1"), NumericError);
}

TEST_CASE("empty splits are rejected") {
    auto cfg = toy_data().cfg;
    auto m = toy_data().manifest;
    for (auto& s : m.samples)
        if (s.split == Split::val) s.split = Split::train;
    CHECK_THROWS_AS(train(cfg, m, init_params(cfg.model, 1)), InputError);
}

TEST_CASE("checkpoint round trip") {
    const auto& data = toy_data();
    Checkpoint c;
    c.config = data.cfg;
    c.params = init_params(data.cfg.model, 7);
    c.epoch = 12;
    c.val_macro_f1 = 0.8125;
    c.val_accuracy = 0.875;
    const auto dir = fresh_dir("checkpoint_rt");
    save_checkpoint(c, dir / "model.nvit");
    const auto loaded = load_checkpoint(dir / "model.nvit");
    CHECK(params_equal(loaded.params, c.params));
    CHECK(loaded.epoch == 12);
    CHECK(loaded.val_macro_f1 == 0.8125);
    CHECK(loaded.val_accuracy == 0.875);
    CHECK(to_config_text(loaded.config) == to_config_text(c.config));

    std::mt19937_64 rng(7);
    for (int i = 0; i < 4; ++i) {
        const auto x = randn<float>({3, 32, 32}, 1.0, rng);
        const auto a = model_forward(x, c.config.model, c.params, ForwardMode{});
        const auto b = model_forward(x, loaded.config.model, loaded.params, ForwardMode{});
        CHECK(a.values() == b.values());
    }

    const auto bytes = read_bytes(dir / "model.nvit");
    REQUIRE(bytes.size() > 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NVIT");
    CHECK(bytes[4] == kCheckpointVersion);
    CHECK(serialize_checkpoint(loaded) == bytes);
}

TEST_CASE("damaged checkpoints raise format errors naming the offset") {
    Checkpoint c;
    c.config = toy_data().cfg;
    c.params = init_params(c.config.model, 8);
    const auto bytes = serialize_checkpoint(c);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{11}, std::size_t{40},
                            bytes.size() / 2, bytes.size() - 1}) {
        INFO("cut at " << cut);
        const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_WITH_AS(deserialize_checkpoint(part), doctest::Contains("offset"), FormatError);
    }
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad_magic), doctest::Contains("magic"), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad_version), doctest::Contains("version"), FormatError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize_checkpoint(trailing), FormatError);

    const auto dir = fresh_dir("checkpoint_bad");
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.nvit"), IoError);
}

TEST_CASE("checkpoint size formula matches the file for the default config") {
    Checkpoint c;
    c.params = init_params(c.config.model, 1);
    const auto dir = fresh_dir("checkpoint_size");
    save_checkpoint(c, dir / "default.nvit");
    std::size_t expect = 4 + 4 + 4 + checkpoint_config_text(c).size() + 4;
    for (const auto& [name, t] : c.params.named()) expect += 2 + name.size() + 1 + 4 * t.rank() + 4 * t.numel();
    CHECK(fs::file_size(dir / "default.nvit") == expect);
    CHECK(checkpoint_size(c) == expect);
}
