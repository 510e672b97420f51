#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vssmseg/model_config.hpp"

namespace vssmseg {

struct TrainConfig {
    int64_t epochs = 50;
    int64_t batch_size = 8;
    double lr_init = 1e-3;
    double lr_min = 1e-5;
    int64_t t_max = 50;
    double weight_decay = 0.01;
    uint64_t seed = 0;
    bool augment_flip_h = true;
    bool augment_flip_v = true;
    bool augment_rot90 = true;

    void validate() const {
        if (epochs < 1) throw ValueError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be >= 1");
        if (!(lr_min <= lr_init)) throw ValueError("TrainConfig: lr_min must be <= lr_init");
        if (t_max < 1) throw ValueError("TrainConfig: t_max must be >= 1");
        if (weight_decay < 0) throw ValueError("TrainConfig: weight_decay must be >= 0");
    }
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;
    double val_fraction = 0.25;
};

// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Typed view of a config file. Unknown keys are hard errors.
RunConfig parse_run_config(const std::string& path);
RunConfig run_config_from_map(const std::map<std::string, std::string>& kv);

// Canonical echo of a config, parseable by parse_run_config.
std::string render_run_config(const RunConfig& rc);

}  // namespace vssmseg
