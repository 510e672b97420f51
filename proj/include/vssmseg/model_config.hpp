#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "vssmseg/error.hpp"

namespace vssmseg {

// Architecture hyperparameters. The encoder has four stages with channels
// [C, 2C, 4C, 8C] at spatial H/4 .. H/32; stage i applies depths[i] VSS
// blocks, stages 2-4 are preceded by a 2x strided-conv patch merge.
struct ModelConfig {
    int64_t base_channels = 16;
    std::array<int, 4> depths = {1, 1, 2, 1};
    int64_t state_dim = 8;
    int64_t sdi_channels = 16;
    int64_t input_h = 64;
    int64_t input_w = 64;
    bool deep_supervision = true;
    int64_t num_classes = 1;

    void validate() const {
        if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0)
            throw ValueError("ModelConfig: input size " + std::to_string(input_h) + "x" +
                             std::to_string(input_w) + " must be divisible by 32");
        for (int d : depths)
            if (d < 1) throw ValueError("ModelConfig: stage depths must be >= 1");
        if (base_channels < 2 || base_channels % 2 != 0)
            throw ValueError("ModelConfig: base_channels must be a positive even number");
        if (state_dim < 1) throw ValueError("ModelConfig: state_dim must be >= 1");
        if (sdi_channels < 1) throw ValueError("ModelConfig: sdi_channels must be >= 1");
        if (num_classes != 1)
            throw ValueError("ModelConfig: only binary masks are supported (num_classes = 1)");
    }

    int64_t stage_channels(int stage) const { return base_channels << stage; }  // stage 0..3

    // Inner scan width: 3C/2. Reconciles the parameter budget of the full
    // configuration against the reference totals.
    int64_t inner_dim(int stage) const { return stage_channels(stage) * 3 / 2; }

    // Rank of the factorized delta projection.
    int64_t dt_rank(int stage) const { return (stage_channels(stage) + 15) / 16; }

    int64_t cbam_hidden(int stage) const {
        int64_t c = stage_channels(stage);
        return c / 16 > 0 ? c / 16 : 1;
    }

    int64_t stage_h(int stage) const { return input_h >> (stage + 2); }
    int64_t stage_w(int stage) const { return input_w >> (stage + 2); }
};

}  // namespace vssmseg
