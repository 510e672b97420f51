#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vssmseg/model_config.hpp"

namespace vssmseg::stats {

// Conventions: multiply-accumulates count as 2 FLOPs for linear, conv and
// scan work; elementwise ops (activations, adds, gates, interpolation taps)
// count once. Counts are analytic, no execution involved.

long long linear_params(long long din, long long dout, bool bias);
long long linear_flops(long long rows, long long din, long long dout, bool bias);
long long conv2d_params(long long cout, long long cin_g, long long kh, long long kw, bool bias);
long long conv2d_flops(long long batch, long long cout, long long out_h, long long out_w,
                       long long cin_g, long long kh, long long kw, bool bias);
// One selective-scan direction over a length-L sequence with D channels and
// N states: the per-step discretization, state update and readout.
long long scan_core_flops(long long L, long long D, long long N);

struct ModelStats {
    long long param_count = 0;
    long long flops = 0;
};

struct StatRow {
    std::string name;
    long long params = 0;
    long long flops = 0;
};

struct StatsReport {
    std::vector<StatRow> rows;
    ModelStats totals;
};

// Per-component breakdown for batch 1 at the config input size.
StatsReport compute_stats(const ModelConfig& cfg);

// Aligned table plus a CSV block, both written to the returned string.
std::string format_stats_table(const StatsReport& report);
std::string format_stats_csv(const StatsReport& report);

}  // namespace vssmseg::stats
