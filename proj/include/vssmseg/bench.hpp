#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vssmseg::bench {

struct BenchRow {
    std::string mode;
    int64_t L, N, D;
    long long wall_ns;
    double max_abs_err;  // recurrent vs convolutional, same inputs
};

// mode is "recurrent" or "conv". Sweeps a fixed (L, N, D) grid of random
// time-invariant instances; err is measured against the other mode.
std::vector<BenchRow> run_bench(const std::string& mode, uint64_t seed);

// Header line plus one "mode,L,N,D,wall_ns,max_abs_err" row each.
std::string format_bench_csv(const std::vector<BenchRow>& rows);

}  // namespace vssmseg::bench
