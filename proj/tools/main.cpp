#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vssmseg/bench.hpp"
#include "vssmseg/config.hpp"
#include "vssmseg/data.hpp"
#include "vssmseg/net.hpp"
#include "vssmseg/serialize.hpp"
#include "vssmseg/stats.hpp"
#include "vssmseg/train.hpp"

namespace {

using namespace vssmseg;

int cmd_gen_data(int64_t n, int64_t size, uint64_t seed, const std::string& out) {
    data::Dataset ds = data::gen_synthetic(n, size, size, seed);
    data::save_dataset(out, ds, seed);
    std::printf("wrote %lld samples (%lldx%lld) to %s\n", static_cast<long long>(n),
                static_cast<long long>(size), static_cast<long long>(size), out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    RunConfig rc = parse_run_config(config_path);
    if (rc.data_dir.empty()) throw ValueError("train: config must set 'data = <dir>'");
    data::Dataset all = data::load_dataset(rc.data_dir);
    if (all.empty()) throw ValueError("train: dataset is empty");
    size_t val_n = static_cast<size_t>(static_cast<double>(all.size()) * rc.val_fraction);
    if (val_n == 0) val_n = 1;
    if (val_n >= all.size()) throw ValueError("train: val_fraction leaves no training samples");
    data::Dataset train_set(all.begin(), all.end() - static_cast<long>(val_n));
    data::Dataset val_set(all.end() - static_cast<long>(val_n), all.end());

    std::filesystem::create_directories(out_dir);
    std::ofstream cfg_echo(out_dir + "/model.cfg");
    cfg_echo << render_run_config(rc);
    cfg_echo.close();

    auto res = train::run_training(rc.train, rc.model, train_set, val_set, out_dir);
    std::printf("best val DSC %.6f at epoch %lld\n", res.best_val_dsc,
                static_cast<long long>(res.best_epoch));
    std::printf("checkpoint: %s\nmetrics: %s\n", res.checkpoint_path.c_str(),
                res.metrics_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, std::string config_path) {
    if (config_path.empty())
        config_path = (std::filesystem::path(ckpt).parent_path() / "model.cfg").string();
    RunConfig rc = parse_run_config(config_path);
    net::Model<float> model(rc.model, rc.train.seed);
    model.load_named(io::load_checkpoint<float>(ckpt));
    data::Dataset ds = data::load_dataset(data_dir);
    auto ev = train::evaluate(model, ds);
    std::printf("samples,loss,miou,dsc,acc,sen,spe\n");
    std::printf("%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", ds.size(), ev.loss, ev.m.miou, ev.m.dsc,
                ev.m.acc, ev.m.sen, ev.m.spe);
    return 0;
}

int cmd_stats(const std::string& config_path) {
    RunConfig rc = parse_run_config(config_path);
    auto rep = stats::compute_stats(rc.model);
    std::fputs(stats::format_stats_table(rep).c_str(), stdout);
    std::fputs("\n", stdout);
    std::fputs(stats::format_stats_csv(rep).c_str(), stdout);
    return 0;
}

int cmd_bench(const std::string& mode, uint64_t seed) {
    auto rows = bench::run_bench(mode, seed);
    std::fputs(bench::format_bench_csv(rows).c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"state-space segmentation toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic ellipse dataset");
    int64_t n = 32, size = 64;
    uint64_t seed = 0;
    std::string out = "dataset";
    gen->add_option("--n", n, "number of samples");
    gen->add_option("--size", size, "square image size (divisible by 32)");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train a model from a config file");
    std::string config_path, out_dir = "run";
    tr->add_option("--config", config_path, "key = value config file")->required();
    tr->add_option("--out", out_dir, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ckpt, data_dir, eval_cfg;
    ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--config", eval_cfg, "config file (default: model.cfg next to the checkpoint)");

    auto* st = app.add_subcommand("stats", "print parameter and FLOP counts");
    std::string stats_cfg;
    st->add_option("--config", stats_cfg, "config file")->required();

    auto* be = app.add_subcommand("bench", "sequence-kernel benchmark CSV");
    std::string mode = "recurrent";
    uint64_t bench_seed = 0;
    be->add_option("--mode", mode, "recurrent or conv")->required();
    be->add_option("--seed", bench_seed, "instance seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_gen_data(n, size, seed, out);
        if (*tr) return cmd_train(config_path, out_dir);
        if (*ev) return cmd_eval(ckpt, data_dir, eval_cfg);
        if (*st) return cmd_stats(stats_cfg);
        if (*be) return cmd_bench(mode, bench_seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
