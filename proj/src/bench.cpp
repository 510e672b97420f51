#include "vssmseg/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "vssmseg/rng.hpp"
#include "vssmseg/ssm.hpp"

namespace vssmseg::bench {

namespace {

struct Instance {
    ssm::DiscreteSsm<double> d;
    std::vector<double> c;
    std::vector<double> x;
};

Instance make_instance(Rng& rng, int64_t L, int64_t N) {
    ssm::SsmParams<double> p;
    p.a_log.resize(static_cast<size_t>(N));
    p.b.resize(static_cast<size_t>(N));
    p.c.resize(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
        p.a_log[static_cast<size_t>(i)] = rng.uniform(-3.0, 1.0);
        p.b[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
        p.c[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
    }
    p.delta = {std::exp(rng.uniform(std::log(1e-3), std::log(1.0)))};
    Instance inst;
    inst.d = ssm::discretize_zoh(p);
    inst.c = p.c;
    inst.x.resize(static_cast<size_t>(L));
    for (auto& v : inst.x) v = rng.uniform(-1.0, 1.0);
    return inst;
}

}  // namespace

std::vector<BenchRow> run_bench(const std::string& mode, uint64_t seed) {
    if (mode != "recurrent" && mode != "conv")
        throw ValueError("bench: mode must be 'recurrent' or 'conv', got '" + mode + "'");
    const int64_t Ls[] = {16, 64, 256, 1024};
    const int64_t Ns[] = {4, 16};
    const int64_t Ds[] = {1, 8};
    std::vector<BenchRow> rows;
    Rng rng(Rng::mix(seed, 0xbe9c4));
    for (int64_t L : Ls) {
        for (int64_t N : Ns) {
            for (int64_t D : Ds) {
                std::vector<Instance> channels;
                channels.reserve(static_cast<size_t>(D));
                for (int64_t d = 0; d < D; ++d) channels.push_back(make_instance(rng, L, N));

                auto run_mode = [&](bool recurrent) {
                    std::vector<std::vector<double>> ys;
                    ys.reserve(channels.size());
                    for (const auto& ch : channels)
                        ys.push_back(recurrent ? ssm::scan_recurrent(ch.d, ch.c, ch.x)
                                               : ssm::scan_convolutional(ch.d, ch.c, ch.x));
                    return ys;
                };
                bool rec = mode == "recurrent";
                run_mode(rec);  // warmup
                auto t0 = std::chrono::steady_clock::now();
                auto ys = run_mode(rec);
                auto t1 = std::chrono::steady_clock::now();
                auto other = run_mode(!rec);
                double err = 0;
                for (size_t ci = 0; ci < ys.size(); ++ci)
                    for (size_t i = 0; i < ys[ci].size(); ++i)
                        err = std::max(err, std::abs(ys[ci][i] - other[ci][i]));
                rows.push_back(
                    {mode, L, N, D,
                     std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count(), err});
            }
        }
    }
    return rows;
}

std::string format_bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "mode,L,N,D,wall_ns,max_abs_err\n";
    for (const auto& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s,%lld,%lld,%lld,%lld,%.3e\n", r.mode.c_str(),
                      static_cast<long long>(r.L), static_cast<long long>(r.N),
                      static_cast<long long>(r.D), r.wall_ns, r.max_abs_err);
        os << line;
    }
    return os.str();
}

}  // namespace vssmseg::bench
