#include <CLI11.hpp>

#include "commands.hpp"
#include "nasvit/config.hpp"

using namespace nasvit::cli;

int main(int argc, char** argv) {
    CLI::App app{"nasvit: MixProcessing enhancement and a hybrid convolution/transformer lung image classifier"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 ok, 2 config error, 3 I/O error, 4 non-finite loss.");
    const std::string keys = nasvit::config_help();

    PreprocessArgs pre;
    auto* p = app.add_subcommand("preprocess", "Apply MixProcessing to every image of a directory");
    p->add_option("--in", pre.in_dir, "input image directory (searched recursively)")->required();
    p->add_option("--out", pre.out_dir, "output directory (PNG files plus index.csv)")->required();
    p->add_option("--config", pre.config, "config file (key = value)");
    p->footer(keys);

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train from random initialisation and keep the best validation checkpoint");
    t->add_option("--data", tr.data_dir, "dataset root with one subdirectory per class");
    t->add_option("--config", tr.config, "config file (key = value)");
    t->add_option("--out", tr.out_dir, "output directory");
    t->footer(keys);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on one split and write reports");
    e->add_option("--data", ev.data_dir, "dataset root")->required();
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    e->add_option("--out", ev.out_dir, "report directory")->required();
    e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
    e->footer(keys);

    PredictArgs pr;
    auto* d = app.add_subcommand("predict", "Classify one image");
    d->add_option("--image", pr.image, "PNG or JPEG file")->required();
    d->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
    d->footer(keys);

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "Stage throughput, forward latency, parameter count and checkpoint size");
    b->add_option("--config", be.config, "config file (key = value)");
    b->add_option("--iterations", be.iterations, "repetitions per measurement")->capture_default_str();
    b->add_option("--image", be.image, "image to benchmark with (default: synthetic)");
    b->footer(keys);

    InitArgs in;
    std::uint64_t seed = 0;
    auto* i = app.add_subcommand("init-checkpoint", "Write an untrained checkpoint");
    i->add_option("--config", in.config, "config file (key = value)");
    i->add_option("--out", in.out, "checkpoint path")->required();
    i->add_flag("--zero", in.zero, "all parameters zero (uniform predictions)");
    auto* seed_opt = i->add_option("--seed", seed, "initialisation seed (default: train.seed)");
    i->footer(keys);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    if (*p) return cmd_preprocess(pre);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*d) return cmd_predict(pr);
    if (*b) return cmd_bench(be);
    if (*i) {
        if (seed_opt->count() > 0) in.seed = seed;
        return cmd_init_checkpoint(in);
    }
    return kUsage;
}
