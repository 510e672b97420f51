#pragma once

#include <string>
#include <vector>

#include "vssmseg/config.hpp"
#include "vssmseg/data.hpp"
#include "vssmseg/metrics.hpp"
#include "vssmseg/net.hpp"

namespace vssmseg::train {

struct EvalResult {
    double loss = 0;
    metrics::Metrics m;
};

struct TrainResult {
    double best_val_dsc = -1.0;
    int64_t best_epoch = -1;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Worker cap from VSSMSEG_THREADS (default 1, minimum 1).
int worker_threads();

// Forward-only pass over a dataset; per-sample results are reduced in index
// order so the outcome does not depend on the worker count.
EvalResult evaluate(const net::Model<float>& model, const data::Dataset& ds);

// Full training loop: per-epoch cosine schedule, AdamW, augmentation,
// train/val metrics appended to <out_dir>/metrics.csv, best-DSC checkpoint
// written to <out_dir>/best.ckpt. Deterministic per (seed, config, platform).
TrainResult run_training(const TrainConfig& tc, const ModelConfig& mc,
                         const data::Dataset& train_set, const data::Dataset& val_set,
                         const std::string& out_dir);

}  // namespace vssmseg::train
