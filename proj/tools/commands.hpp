#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

namespace nasvit::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfigError = 2, kIoError = 3, kNumericError = 4 };

struct PreprocessArgs {
    std::string in_dir;
    std::string out_dir;
    std::string config;
};

struct TrainArgs {
    std::string data_dir;
    std::string config;
    std::string out_dir;
};

struct EvalArgs {
    std::string data_dir;
    std::string checkpoint;
    std::string out_dir;
    std::string split = "test";
};

struct PredictArgs {
    std::string image;
    std::string checkpoint;
};

struct BenchArgs {
    std::string config;
    std::size_t iterations = 10;
    std::string image;
};

struct InitArgs {
    std::string config;
    std::string out;
    bool zero = false;
    std::optional<std::uint64_t> seed;
};

int cmd_preprocess(const PreprocessArgs& a);
int cmd_train(const TrainArgs& a);
int cmd_eval(const EvalArgs& a);
int cmd_predict(const PredictArgs& a);
int cmd_bench(const BenchArgs& a);
int cmd_init_checkpoint(const InitArgs& a);

}  // namespace nasvit::cli
