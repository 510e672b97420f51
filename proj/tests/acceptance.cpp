// Acceptance suite: one test case per criterion, each printing a single
// PASS/FAIL line with the measured numbers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "support/checks.hpp"
#include "vssmseg/data.hpp"
#include "vssmseg/loss.hpp"
#include "vssmseg/metrics.hpp"
#include "vssmseg/net.hpp"
#include "vssmseg/sdi.hpp"
#include "vssmseg/serialize.hpp"
#include "vssmseg/ss2d.hpp"
#include "vssmseg/ssm.hpp"
#include "vssmseg/stats.hpp"
#include "vssmseg/train.hpp"
#include "vssmseg/vss_block.hpp"

using namespace vssmseg;
using testsupport::check_gradients;
using testsupport::check_gradients_slice;
using testsupport::rand_tensor;

namespace {

void report(int criterion, bool pass, const char* fmt, ...) {
    std::printf("[criterion %d] %s - ", criterion, pass ? "PASS" : "FAIL");
    va_list args;
    va_start(args, fmt);
    std::vprintf(fmt, args);
    va_end(args);
    std::printf("\n");
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::duration<double>>(
               std::chrono::steady_clock::now() - t0)
        .count();
}

ModelConfig full_config(std::array<int, 4> depths = {2, 2, 9, 2}, bool ds = true) {
    ModelConfig cfg;
    cfg.base_channels = 96;
    cfg.depths = depths;
    cfg.state_dim = 16;
    cfg.sdi_channels = 96;
    cfg.input_h = cfg.input_w = 256;
    cfg.deep_supervision = ds;
    return cfg;
}

ssm::SelectiveScanWeights<double> random_scan_weights(Rng& rng, int64_t D, int64_t N, int64_t R) {
    ssm::SelectiveScanWeights<double> w;
    w.a_log = rand_tensor(rng, {D, N}, -2.0, 0.5);
    w.d_skip = rand_tensor(rng, {D}, -1.0, 1.0);
    w.w_dt_in = rand_tensor(rng, {D, R}, -0.5, 0.5);
    w.w_dt_out = rand_tensor(rng, {R, D}, -0.5, 0.5);
    w.b_dt = rand_tensor(rng, {D}, -1.5, 0.5);
    w.w_b = rand_tensor(rng, {D, N}, -0.5, 0.5);
    w.b_b = rand_tensor(rng, {N}, -0.5, 0.5);
    w.w_c = rand_tensor(rng, {D, N}, -0.5, 0.5);
    w.b_c = rand_tensor(rng, {N}, -0.5, 0.5);
    return w;
}

}  // namespace

TEST_CASE("criterion 1: kernel duality, recurrent vs convolutional") {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(0xACC1);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        int64_t L = 1 + rng.uniform_int(64);
        int64_t N = 1 + rng.uniform_int(16);
        ssm::SsmParams<double> p;
        for (int64_t i = 0; i < N; ++i) {
            p.a_log.push_back(rng.uniform(-3.0, 1.0));
            p.b.push_back(rng.uniform(-1.0, 1.0));
            p.c.push_back(rng.uniform(-1.0, 1.0));
        }
        p.delta = {std::exp(rng.uniform(std::log(1e-3), std::log(1.0)))};
        auto d = ssm::discretize_zoh(p);
        std::vector<double> x(static_cast<size_t>(L));
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        auto yr = ssm::scan_recurrent(d, p.c, x);
        auto yc = ssm::scan_convolutional(d, p.c, x);
        for (int64_t t = 0; t < L; ++t)
            worst = std::max(worst,
                             std::abs(yr[static_cast<size_t>(t)] - yc[static_cast<size_t>(t)]));
    }
    double secs = seconds_since(t0);
    bool pass = worst < 1e-10 && secs < 10.0;
    report(1, pass, "1000 instances, max |recurrent - convolutional| = %.3e (< 1e-10), %.2f s (< 10 s)",
           worst, secs);
    CHECK(worst < 1e-10);
    CHECK(secs < 10.0);
}

TEST_CASE("criterion 2: zero-order-hold discretization vs 30-term series oracle") {
    Rng rng(0xACC2);
    double worst = 0.0;
    int fallback_cases = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        double a_log = rng.uniform(std::log(1e-6), std::log(3.0));
        double a = -std::exp(a_log);
        double delta = std::exp(rng.uniform(std::log(1e-8), std::log(1.0)));
        if (std::abs(delta * a) > 4.0) delta = 4.0 / std::abs(a);  // series oracle validity
        if (trial % 10 == 0) {
            delta = (1e-13 / std::abs(a)) * rng.uniform(0.01, 1.0);  // fallback branch
            ++fallback_cases;
        }
        double b = rng.uniform(-2.0, 2.0);
        ssm::SsmParams<double> p;
        p.a_log = {a_log};
        p.b = {b};
        p.c = {1.0};
        p.delta = {delta};
        auto d = ssm::discretize_zoh(p);
        // oracle: abar = sum u^k/k!, bbar = delta*b*sum u^k/(k+1)!
        double u = delta * a, abar = 0.0, sb = 0.0, term = 1.0;
        for (int k = 0; k < 30; ++k) {
            abar += term;
            sb += term / static_cast<double>(k + 1);
            term *= u / static_cast<double>(k + 1);
        }
        worst = std::max(worst, std::abs(d.a_bar[0] - abar));
        worst = std::max(worst, std::abs(d.b_bar[0] - delta * b * sb));
    }
    bool pass = worst < 1e-12;
    report(2, pass, "10000 scalars (%d fallback cases |dA| < 1e-12), max error = %.3e (< 1e-12)",
           fallback_cases, worst);
    CHECK(worst < 1e-12);
}

TEST_CASE("criterion 3: gradient suite, op level and end to end") {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(0xACC3);
    double worst_op = 0.0;
    auto track = [&](const char*, testsupport::GradCheckResult r) {
        worst_op = std::max(worst_op, r.max_rel_err);
    };

    {  // linear
        Tensor<double> x = rand_tensor(rng, {2, 3, 4}), w = rand_tensor(rng, {4, 5});
        Tensor<double> b = rand_tensor(rng, {5});
        track("linear", check_gradients({&x, &w, &b}, [&] {
                  auto y = ops::linear(x, w, std::optional<Tensor<double>>(b));
                  return ops::sum(ops::mul(y, y));
              }));
    }
    {  // conv2d with stride, padding, groups
        Tensor<double> x = rand_tensor(rng, {2, 4, 5, 6}), k = rand_tensor(rng, {6, 2, 3, 3});
        Tensor<double> b = rand_tensor(rng, {6});
        track("conv2d", check_gradients({&x, &k, &b}, [&] {
                  auto y = ops::conv2d(x, k, std::optional<Tensor<double>>(b), 2, 1, 2);
                  return ops::sum(ops::mul(y, y));
              }));
    }
    {  // activations
        Tensor<double> x = rand_tensor(rng, {17});
        track("silu", check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::silu(x), ops::silu(x))); }));
        track("relu", check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::relu(x), x)); }));
        track("sigmoid", check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::sigmoid(x), x)); }));
    }
    {  // layer_norm
        Tensor<double> x = rand_tensor(rng, {4, 6}), g = rand_tensor(rng, {6}, 0.5, 1.5);
        Tensor<double> b = rand_tensor(rng, {6});
        track("layer_norm", check_gradients({&x, &g, &b}, [&] {
                  auto y = ops::layer_norm(x, g, b);
                  return ops::sum(ops::mul(y, y));
              }));
    }
    {  // resampling
        Tensor<double> x = rand_tensor(rng, {1, 2, 3, 4});
        track("bilinear_up", check_gradients({&x}, [&] {
                  auto y = ops::bilinear_resize(x, 6, 7);
                  return ops::sum(ops::mul(y, y));
              }));
        track("bilinear_down", check_gradients({&x}, [&] {
                  auto y = ops::bilinear_resize(x, 2, 3);
                  return ops::sum(ops::mul(y, y));
              }));
        Tensor<double> x2 = rand_tensor(rng, {1, 2, 6, 5});
        track("adaptive_pool", check_gradients({&x2}, [&] {
                  auto y = ops::adaptive_avg_pool2d(x2, 3, 2);
                  return ops::sum(ops::mul(y, y));
              }));
    }
    {  // broadcast arithmetic, layout, pooling reductions
        Tensor<double> a = rand_tensor(rng, {2, 3, 4}), b = rand_tensor(rng, {3, 1});
        track("add", check_gradients({&a, &b}, [&] {
                  auto y = ops::add(a, b);
                  return ops::sum(ops::mul(y, y));
              }));
        track("mul", check_gradients({&a, &b}, [&] { return ops::sum(ops::mul(a, b)); }));
        Tensor<double> x = rand_tensor(rng, {2, 3, 3, 3});
        track("gmp", check_gradients({&x}, [&] {
                  auto y = ops::global_max_pool2d(x);
                  return ops::sum(ops::mul(y, y));
              }));
        track("cmean", check_gradients({&x}, [&] {
                  auto y = ops::channel_mean(x);
                  return ops::sum(ops::mul(y, y));
              }));
        track("cmax", check_gradients({&x}, [&] {
                  auto y = ops::channel_max(x);
                  return ops::sum(ops::mul(y, y));
              }));
        track("permute+reshape+concat", check_gradients({&a}, [&] {
                  auto p = ops::permute(a, {1, 0, 2});
                  auto c = ops::concat(p, p, 2);
                  auto r = ops::reshape(c, Shape{3, 16});
                  return ops::scale(ops::sum(ops::mul(r, r)), 0.5);
              }));
    }
    {  // selective scan
        auto w = random_scan_weights(rng, 2, 4, 2);
        Tensor<double> x = rand_tensor(rng, {1, 6, 2});
        std::vector<Tensor<double>*> leaves = {&x,          &w.a_log, &w.d_skip, &w.w_dt_in,
                                               &w.w_dt_out, &w.b_dt,  &w.w_b,    &w.b_b,
                                               &w.w_c,      &w.b_c};
        track("selective_scan", check_gradients(leaves, [&] {
                  auto y = ssm::selective_scan(x, w);
                  return ops::sum(ops::mul(y, y));
              }));
    }
    {  // bce+dice loss
        Tensor<double> z = rand_tensor(rng, {2, 1, 3, 3});
        std::vector<double> yv(18);
        for (auto& v : yv) v = rng.coin() ? 1.0 : 0.0;
        Tensor<double> y(Shape{2, 1, 3, 3}, std::move(yv));
        track("bce_dice", check_gradients({&z}, [&] { return loss::bce_dice_loss(z, y); }));
    }
    {  // full VSS block
        vss::VssBlockParams<double> p;
        int64_t C = 4, D = 4, N = 2, R = 1;
        p.in_w = rand_tensor(rng, {C, D}, -0.4, 0.4);
        p.in_b = rand_tensor(rng, {D}, -0.1, 0.1);
        p.gate_w = rand_tensor(rng, {C, D}, -0.4, 0.4);
        p.gate_b = rand_tensor(rng, {D}, -0.1, 0.1);
        p.dw_w = rand_tensor(rng, {D, 1, 3, 3}, -0.3, 0.3);
        p.dw_b = rand_tensor(rng, {D}, -0.1, 0.1);
        for (auto& dw : p.scan.dir) dw = random_scan_weights(rng, D, N, R);
        p.norm_gamma = rand_tensor(rng, {D}, 0.5, 1.5);
        p.norm_beta = rand_tensor(rng, {D}, -0.2, 0.2);
        p.out_w = rand_tensor(rng, {D, C}, -0.4, 0.4);
        p.out_b = rand_tensor(rng, {C}, -0.1, 0.1);
        Tensor<double> x = rand_tensor(rng, {1, 4, 4, C}, -1.0, 1.0);
        std::vector<Tensor<double>*> leaves = {&x,      &p.in_w,       &p.in_b,      &p.gate_w,
                                               &p.gate_b, &p.dw_w,     &p.dw_b,      &p.norm_gamma,
                                               &p.norm_beta, &p.out_w, &p.out_b};
        for (auto& dw : p.scan.dir)
            for (auto* t : {&dw.a_log, &dw.d_skip, &dw.w_dt_in, &dw.w_dt_out, &dw.b_dt, &dw.w_b,
                            &dw.b_b, &dw.w_c, &dw.b_c})
                leaves.push_back(t);
        track("vss_forward", check_gradients(leaves, [&] {
                  auto y = vss::vss_forward(x, p);
                  return ops::sum(ops::mul(y, y));
              }));
    }
    double worst_sdi = 0.0;
    {  // SDI over a 4-level pyramid
        sdi::FeaturePyramid<double> pyr;
        for (int i = 0; i < 4; ++i)
            pyr.levels.push_back(rand_tensor(rng, {1, 2LL << i, 8 >> i, 8 >> i}, -1.0, 1.0));
        sdi::SdiParams<double> p;
        std::vector<Tensor<double>*> leaves;
        for (auto& l : pyr.levels) leaves.push_back(&l);
        for (int i = 0; i < 4; ++i) {
            int64_t ci = 2LL << i;
            int64_t hidden = std::max<int64_t>(1, ci / 16);
            auto& a = p.attn[static_cast<size_t>(i)];
            a.mlp1_w = rand_tensor(rng, {ci, hidden}, -0.5, 0.5);
            a.mlp1_b = rand_tensor(rng, {hidden}, -0.1, 0.1);
            a.mlp2_w = rand_tensor(rng, {hidden, ci}, -0.5, 0.5);
            a.mlp2_b = rand_tensor(rng, {ci}, -0.1, 0.1);
            a.sp_w = rand_tensor(rng, {1, 2, 7, 7}, -0.2, 0.2);
            a.sp_b = rand_tensor(rng, {1}, -0.1, 0.1);
            p.align_w[static_cast<size_t>(i)] = rand_tensor(rng, {2, ci, 1, 1}, -0.4, 0.4);
            p.align_b[static_cast<size_t>(i)] = rand_tensor(rng, {2}, -0.1, 0.1);
            for (auto* t : {&a.mlp1_w, &a.mlp1_b, &a.mlp2_w, &a.mlp2_b, &a.sp_w, &a.sp_b})
                leaves.push_back(t);
            leaves.push_back(&p.align_w[static_cast<size_t>(i)]);
            leaves.push_back(&p.align_b[static_cast<size_t>(i)]);
        }
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                p.smooth_w[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    rand_tensor(rng, {2, 2, 3, 3}, -0.3, 0.3);
                p.smooth_b[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    rand_tensor(rng, {2}, -0.1, 0.1);
                leaves.push_back(&p.smooth_w[static_cast<size_t>(i)][static_cast<size_t>(j)]);
                leaves.push_back(&p.smooth_b[static_cast<size_t>(i)][static_cast<size_t>(j)]);
            }
        auto r = check_gradients(leaves, [&] {
            auto f5 = sdi::sdi_forward(pyr, p);
            Tensor<double> acc;
            for (int i = 0; i < 4; ++i) {
                auto s = ops::sum(ops::mul(f5.levels[static_cast<size_t>(i)],
                                           f5.levels[static_cast<size_t>(i)]));
                acc = i == 0 ? s : ops::add(acc, s);
            }
            return acc;
        });
        worst_sdi = r.max_rel_err;
        worst_op = std::max(worst_op, r.max_rel_err);
    }

    // end-to-end micro model, 10-parameter slice
    double e2e = 0.0;
    {
        ModelConfig cfg;
        cfg.base_channels = 8;
        cfg.depths = {1, 1, 1, 1};
        cfg.state_dim = 4;
        cfg.sdi_channels = 8;
        cfg.input_h = cfg.input_w = 32;
        net::Model<double> model(cfg, 0xACC3);
        Tensor<double> x = Tensor<double>::zeros(Shape{1, 3, 32, 32});
        for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(0.1, 0.9);
        std::vector<double> yv(static_cast<size_t>(32 * 32));
        for (auto& v : yv) v = rng.coin() ? 1.0 : 0.0;
        Tensor<double> target(Shape{1, 1, 32, 32}, std::move(yv));
        std::vector<Tensor<double>*> leaves;
        for (auto& [name, p] : model.params()) leaves.push_back(p);
        const char* picks[] = {"embed.w",
                               "enc1.block0.in_proj.w",
                               "enc2.block0.scan.dir1.a_log",
                               "enc3.block0.scan.dir2.b_dt",
                               "enc4.block0.out_proj.w",
                               "enc1.block0.scan.dir0.d_skip",
                               "sdi.attn2.mlp1.w",
                               "sdi.smooth13.w",
                               "dec.stage1.conv.w",
                               "dec.head.w"};
        std::vector<std::pair<Tensor<double>*, int64_t>> slots;
        for (const char* name : picks)
            for (auto& [n, p] : model.params())
                if (n == name) slots.emplace_back(p, p->numel() / 2);
        auto r = check_gradients_slice(leaves, slots, [&] {
            auto heads = model.forward(x);
            Tensor<double> acc;
            for (size_t h = 0; h < heads.size(); ++h) {
                auto l = loss::bce_dice_loss(heads[h], target);
                acc = h == 0 ? l : ops::add(acc, l);
            }
            return ops::scale(acc, 1.0 / static_cast<double>(heads.size()));
        });
        e2e = r.max_rel_err;
    }
    double secs = seconds_since(t0);
    bool pass = worst_op < 1e-5 && e2e < 1e-4 && secs < 300.0;
    report(3, pass,
           "op-level max rel err = %.3e (< 1e-5, sdi %.3e), end-to-end = %.3e (< 1e-4), %.1f s (< 300 s)",
           worst_op, worst_sdi, e2e, secs);
    CHECK(worst_op < 1e-5);
    CHECK(e2e < 1e-4);
    CHECK(secs < 300.0);
}

TEST_CASE("criterion 4: shape contract at (1,3,256,256), C=96, depths [2,2,9,2]") {
    ModelConfig cfg = full_config();
    net::Model<float> model(cfg, 0xACC4);
    Tensor<float> x = Tensor<float>::full(Shape{1, 3, 256, 256}, 0.5f);
    auto pyr = model.encode(x);
    bool ok = pyr.levels.size() == 4;
    const Shape expect[4] = {{1, 96, 64, 64}, {1, 192, 32, 32}, {1, 384, 16, 16}, {1, 768, 8, 8}};
    for (int i = 0; i < 4 && ok; ++i) ok = pyr.levels[static_cast<size_t>(i)].shape() == expect[i];
    auto f5 = model.fuse(pyr);
    for (int i = 0; i < 4 && ok; ++i)
        ok = f5.levels[static_cast<size_t>(i)].shape() ==
             Shape{1, cfg.sdi_channels, 64 >> i, 64 >> i};
    auto heads = model.decode(f5);
    ok = ok && heads[0].shape() == Shape{1, 1, 256, 256};
    report(4, ok,
           "encoder (96,64,64)/(192,32,32)/(384,16,16)/(768,8,8), sdi (96,64,64)..(96,8,8), "
           "logits (1,1,256,256)");
    CHECK(ok);
    REQUIRE(pyr.levels.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(pyr.levels[static_cast<size_t>(i)].shape() == expect[i]);
    for (int i = 0; i < 4; ++i)
        CHECK(f5.levels[static_cast<size_t>(i)].shape() ==
              Shape{1, cfg.sdi_channels, 64 >> i, 64 >> i});
    CHECK(heads[0].shape() == Shape{1, 1, 256, 256});
}

TEST_CASE("criterion 5: model statistics against the reference totals") {
    ModelConfig cfg = full_config();
    auto rep = stats::compute_stats(cfg);
    net::Model<float> model(cfg, 0xACC5);
    long long registry_params = net::count_params(model);
    bool counters_exact = stats::linear_params(3, 4, true) == 16 &&
                          stats::conv2d_flops(1, 1, 8, 8, 1, 1, 1, false) == 128 &&
                          registry_params == rep.totals.param_count;

    const double ref_params = 17.91e6, ref_flops = 4.40e9;
    double p = static_cast<double>(rep.totals.param_count);
    double f = static_cast<double>(rep.totals.flops);
    bool params_ok = p >= 0.9 * ref_params && p <= 1.1 * ref_params;
    bool flops_ok = f >= 0.85 * ref_flops && f <= 1.15 * ref_flops;

    // written reconciliation of the architectural interpretation
    std::printf(
        "[criterion 5] reconciliation: stage channels [96,192,384,768] at H/4..H/32 (stage list, "
        "not 2^i*C); inner scan width 3C/2 with delta-projection rank ceil(C/16), N=16; sdi width "
        "c=96; decoder = 3 x (bilinear up + add + 3x3 conv + SiLU) with 1x1 heads; patch embed "
        "4x4 conv, merges 2x2 strided conv; counting convention: linear/conv/scan MACs x2, "
        "elementwise x1, scan core 6 MACs per (step, channel, state).\n");
    std::fputs(stats::format_stats_table(rep).c_str(), stdout);
    report(5, params_ok && flops_ok && counters_exact,
           "params %.3fM vs 17.91M +-10%% [%s], flops %.3fG vs 4.40G +-15%% [%s], exact small-case "
           "counters [%s]",
           p / 1e6, params_ok ? "ok" : "out", f / 1e9, flops_ok ? "ok" : "out",
           counters_exact ? "ok" : "broken");
    CHECK(counters_exact);
    CHECK(params_ok);
    // Unattainable alongside the parameter window: the parameter floor alone
    // forces > 10 GFLOPs at this input size under the stated convention. Left
    // red deliberately rather than weakening the check.
    CHECK(flops_ok);
}

TEST_CASE("criterion 6: confusion/metrics vs brute-force oracle, DSC identity") {
    Rng rng(0xACC6);
    bool all_exact = true;
    double worst_identity = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> pv(16), yv(16);
        for (auto& v : pv) v = rng.uniform();
        for (auto& v : yv) v = rng.coin() ? 1.0 : 0.0;
        Tensor<double> p(Shape{16}, std::vector<double>(pv));
        Tensor<double> y(Shape{16}, std::vector<double>(yv));
        auto c = metrics::confusion(p, y);
        long long tp = 0, fp = 0, tn = 0, fn = 0;
        for (int i = 0; i < 16; ++i) {
            bool pred = pv[static_cast<size_t>(i)] >= 0.5;
            bool pos = yv[static_cast<size_t>(i)] == 1.0;
            tp += pred && pos;
            fp += pred && !pos;
            fn += !pred && pos;
            tn += !pred && !pos;
        }
        if (c.tp != tp || c.fp != fp || c.tn != tn || c.fn != fn) all_exact = false;
        auto m = metrics::metrics_from(c);
        worst_identity = std::max(worst_identity, std::abs(m.dsc - 2.0 * m.miou / (1.0 + m.miou)));
    }
    bool pass = all_exact && worst_identity < 1e-12;
    report(6, pass, "1000 random 16-pixel masks exact [%s], |DSC - 2mIoU/(1+mIoU)| max = %.3e (< 1e-12)",
           all_exact ? "ok" : "mismatch", worst_identity);
    CHECK(all_exact);
    CHECK(worst_identity < 1e-12);
}

TEST_CASE("criterion 7: synthetic end-to-end at desk scale, deterministic") {
    namespace fs = std::filesystem;
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig mc;
    mc.base_channels = 16;
    mc.depths = {1, 1, 2, 1};
    mc.state_dim = 8;
    mc.sdi_channels = 16;
    mc.input_h = mc.input_w = 64;
    TrainConfig tc;
    tc.epochs = 100;  // 16 train samples / batch 8 = 2 steps per epoch -> 200 optimizer steps
    tc.batch_size = 8;
    tc.seed = 42;

    auto ds = data::gen_synthetic(24, 64, 64, 42);
    data::Dataset train_set(ds.begin(), ds.begin() + 16);
    data::Dataset val_set(ds.begin() + 16, ds.end());

    auto dir1 = fs::temp_directory_path() / "vss_acc7_run1";
    auto dir2 = fs::temp_directory_path() / "vss_acc7_run2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    auto r1 = train::run_training(tc, mc, train_set, val_set, dir1.string());
    auto r2 = train::run_training(tc, mc, train_set, val_set, dir2.string());
    double secs = seconds_since(t0);

    auto read_file = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    bool bitwise = read_file(dir1.string() + "/metrics.csv") == read_file(dir2.string() + "/metrics.csv") &&
                   read_file(r1.checkpoint_path) == read_file(r2.checkpoint_path);
    bool dsc_ok = r1.best_val_dsc >= 0.85;
    bool time_ok = secs < 1800.0;
    report(7, dsc_ok && time_ok && bitwise,
           "desk config, 200 steps, seed 42: held-out DSC %.4f (>= 0.85), both runs %.0f s (< 1800 s), "
           "rerun bitwise identical [%s]",
           r1.best_val_dsc, secs, bitwise ? "yes" : "NO");
    CHECK(dsc_ok);
    CHECK(time_ok);
    CHECK(bitwise);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("criterion 8: ablation axis, depth configs x deep supervision") {
    bool all_ok = true;
    for (auto depths : {std::array<int, 4>{2, 2, 2, 2}, std::array<int, 4>{2, 2, 9, 2},
                        std::array<int, 4>{2, 2, 27, 2}}) {
        for (bool ds : {true, false}) {
            ModelConfig cfg = full_config(depths, ds);
            net::Model<float> model(cfg, 0xACC8);
            Tensor<float> x = Tensor<float>::full(Shape{1, 3, 256, 256}, 0.5f);
            auto pyr = model.encode(x);
            const Shape expect[4] = {
                {1, 96, 64, 64}, {1, 192, 32, 32}, {1, 384, 16, 16}, {1, 768, 8, 8}};
            bool ok = pyr.levels.size() == 4;
            for (int i = 0; i < 4 && ok; ++i)
                ok = pyr.levels[static_cast<size_t>(i)].shape() == expect[i];
            auto heads = model.decode(model.fuse(pyr));
            ok = ok && heads.size() == (ds ? 2u : 1u);
            ok = ok && heads[0].shape() == Shape{1, 1, 256, 256};
            if (!ok) all_ok = false;
            CHECK(ok);
        }
    }
    // deep supervision toggles exactly the 2-head vs 1-head loss composition
    {
        ModelConfig mc;
        mc.base_channels = 8;
        mc.depths = {1, 1, 1, 1};
        mc.state_dim = 4;
        mc.sdi_channels = 8;
        mc.input_h = mc.input_w = 32;
        auto sample = data::gen_synthetic(1, 32, 32, 88)[0];
        Tensor<float> img(Shape{1, 3, 32, 32}, std::vector<float>(sample.image.vec()));
        Tensor<float> msk(Shape{1, 1, 32, 32}, std::vector<float>(sample.mask.vec()));
        mc.deep_supervision = true;
        net::Model<float> m2(mc, 3);
        auto h2 = m2.forward(img);
        double l0 = loss::bce_dice_loss(h2[0], msk).item();
        double l1 = loss::bce_dice_loss(h2[1], msk).item();
        double combined =
            ops::scale(ops::add(loss::bce_dice_loss(h2[0], msk), loss::bce_dice_loss(h2[1], msk)),
                       0.5f)
                .item();
        bool comp_ok = h2.size() == 2 && std::abs(combined - 0.5 * (l0 + l1)) < 1e-6;
        mc.deep_supervision = false;
        net::Model<float> m1(mc, 3);
        comp_ok = comp_ok && m1.forward(img).size() == 1;
        if (!comp_ok) all_ok = false;
        CHECK(comp_ok);
    }
    report(8, all_ok,
           "[2,2,2,2]/[2,2,9,2]/[2,2,27,2] x {ds on, ds off} all construct, forward, and meet the "
           "shape contract; loss composition is mean-of-2-heads vs single head");
}

TEST_CASE("criterion 9: checkpoint round-trip and corruption diagnostics") {
    namespace fs = std::filesystem;
    ModelConfig cfg;
    cfg.base_channels = 16;
    cfg.depths = {1, 1, 2, 1};
    cfg.state_dim = 8;
    cfg.sdi_channels = 16;
    cfg.input_h = cfg.input_w = 64;
    net::Model<float> model(cfg, 0xACC9);
    Rng rng(0xACC9);
    Tensor<float> x = Tensor<float>::zeros(Shape{1, 3, 64, 64});
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(rng.uniform());
    auto before = model.forward(x);

    auto path = (fs::temp_directory_path() / "vss_acc9.ckpt").string();
    io::save_checkpoint(path, model.named_params());
    net::Model<float> reloaded(cfg, 1);
    reloaded.load_named(io::load_checkpoint<float>(path));
    auto after = reloaded.forward(x);
    bool bitwise = before.size() == after.size();
    for (size_t h = 0; h < before.size() && bitwise; ++h) bitwise = before[h].vec() == after[h].vec();

    bool magic_diag = false, version_diag = false;
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("ZZCK", 4);
    }
    try {
        io::load_checkpoint<float>(path);
    } catch (const IoError& e) {
        magic_diag = std::string(e.what()).find("magic") != std::string::npos;
    }
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("VMCK", 4);
        char v = 7;
        f.write(&v, 1);
    }
    try {
        io::load_checkpoint<float>(path);
    } catch (const IoError& e) {
        version_diag = std::string(e.what()).find("version") != std::string::npos;
    }
    fs::remove(path);
    bool pass = bitwise && magic_diag && version_diag;
    report(9, pass, "save->load->forward bitwise [%s], corrupted magic/version diagnosed [%s/%s]",
           bitwise ? "yes" : "NO", magic_diag ? "yes" : "NO", version_diag ? "yes" : "NO");
    CHECK(bitwise);
    CHECK(magic_diag);
    CHECK(version_diag);
}
