#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/checks.hpp"
#include "vssmseg/loss.hpp"
#include "vssmseg/metrics.hpp"

using namespace vssmseg;
using testsupport::check_gradients;
using testsupport::rand_tensor;

TEST_CASE("bce_dice_loss: perfect hard match has (near) zero dice") {
    // logits strongly saturated toward the mask
    Tensor<double> y(Shape{1, 1, 2, 2}, {1, 0, 1, 0});
    Tensor<double> z(Shape{1, 1, 2, 2}, {30, -30, 30, -30});
    double dice_only = loss::bce_dice_loss(z, y, 0.0, 1.0).item();
    CHECK(dice_only == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("bce_dice_loss: y=1 everywhere, p=0.5 gives bce = ln 2") {
    Tensor<double> y = Tensor<double>::full(Shape{2, 1, 2, 2}, 1.0);
    Tensor<double> z = Tensor<double>::zeros(Shape{2, 1, 2, 2});
    double bce_only = loss::bce_dice_loss(z, y, 1.0, 0.0).item();
    CHECK(bce_only == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce_dice_loss: |X|=|Y|=2 overlap 1, hard masks, no smoothing -> dice 0.5") {
    Tensor<double> y(Shape{4}, {1, 1, 0, 0});
    Tensor<double> z(Shape{4}, {30, -30, 30, -30});  // prediction selects pixels 0 and 2
    double dice = loss::bce_dice_loss(z, y, 0.0, 1.0, /*smooth=*/0.0).item();
    CHECK(dice == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("bce_dice_loss: non-binary target is a contract error, shapes must match") {
    Tensor<double> y(Shape{2}, {0.5, 1.0});
    Tensor<double> z = Tensor<double>::zeros(Shape{2});
    CHECK_THROWS_AS(loss::bce_dice_loss(z, y), ContractError);
    Tensor<double> y2 = Tensor<double>::zeros(Shape{3});
    CHECK_THROWS_AS(loss::bce_dice_loss(z, y2), ShapeError);
}

TEST_CASE("bce_dice_loss: nonnegative, zero only near a perfect match") {
    Rng rng(401);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> z = rand_tensor(rng, {8}, -3.0, 3.0);
        std::vector<double> yv(8);
        for (auto& v : yv) v = rng.coin() ? 1.0 : 0.0;
        Tensor<double> y(Shape{8}, std::move(yv));
        double l = loss::bce_dice_loss(z, y).item();
        CHECK(l >= 0.0);
        CHECK(l > 1e-6);  // random logits cannot be a perfect match
    }
}

TEST_CASE("bce_dice_loss: gradient vs finite differences") {
    Rng rng(409);
    Tensor<double> z = rand_tensor(rng, {2, 1, 3, 3}, -2.0, 2.0);
    std::vector<double> yv(18);
    for (auto& v : yv) v = rng.coin() ? 1.0 : 0.0;
    Tensor<double> y(Shape{2, 1, 3, 3}, std::move(yv));
    auto r = check_gradients({&z}, [&] { return loss::bce_dice_loss(z, y, 1.0, 1.0); });
    CHECK(r.max_rel_err < 1e-5);
    // and with non-default weights
    auto r2 = check_gradients({&z}, [&] { return loss::bce_dice_loss(z, y, 0.7, 1.3); });
    CHECK(r2.max_rel_err < 1e-5);
}

TEST_CASE("confusion: perfect, all-positive, and tie handling") {
    Tensor<double> y(Shape{4}, {1, 0, 1, 0});
    Tensor<double> p(Shape{4}, {0.9, 0.1, 0.8, 0.2});
    auto c = metrics::confusion(p, y);
    CHECK(c.tp == 2);
    CHECK(c.tn == 2);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);

    Tensor<double> allpos(Shape{4}, {0.9, 0.9, 0.9, 0.9});
    Tensor<double> neg = Tensor<double>::zeros(Shape{4});
    auto c2 = metrics::confusion(allpos, neg);
    CHECK(c2.tn == 0);
    CHECK(c2.fp == 4);

    Tensor<double> ties(Shape{2}, {0.5, 0.5});
    Tensor<double> yt(Shape{2}, {1, 0});
    auto c3 = metrics::confusion(ties, yt);  // ties count positive
    CHECK(c3.tp == 1);
    CHECK(c3.fp == 1);
}

namespace {
// pixel-by-pixel brute-force oracle
metrics::ConfusionCounts oracle_counts(const std::vector<double>& p, const std::vector<double>& y,
                                       double thr) {
    metrics::ConfusionCounts c;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] >= thr && y[i] == 1.0) c.tp++;
        if (p[i] >= thr && y[i] == 0.0) c.fp++;
        if (p[i] < thr && y[i] == 1.0) c.fn++;
        if (p[i] < thr && y[i] == 0.0) c.tn++;
    }
    return c;
}
}  // namespace

TEST_CASE("confusion + metrics: match the brute-force oracle on random 16-pixel masks") {
    Rng rng(419);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> pv(16), yv(16);
        for (auto& v : pv) v = rng.uniform();
        for (auto& v : yv) v = rng.coin() ? 1.0 : 0.0;
        Tensor<double> p(Shape{16}, std::vector<double>(pv));
        Tensor<double> y(Shape{16}, std::vector<double>(yv));
        auto c = metrics::confusion(p, y);
        auto o = oracle_counts(pv, yv, 0.5);
        CHECK(c.tp == o.tp);
        CHECK(c.fp == o.fp);
        CHECK(c.tn == o.tn);
        CHECK(c.fn == o.fn);
        CHECK(c.total() == 16);

        auto m = metrics::metrics_from(c);
        // DSC = 2 mIoU / (1 + mIoU), exactly
        CHECK(std::abs(m.dsc - 2.0 * m.miou / (1.0 + m.miou)) < 1e-12);
        CHECK(m.dsc >= m.miou);
        for (double v : {m.miou, m.dsc, m.acc, m.sen, m.spe, m.miou_two_class}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("metrics: direct substitution tp=fp=fn=tn=1 and perfect case") {
    metrics::ConfusionCounts c{1, 1, 1, 1};
    auto m = metrics::metrics_from(c);
    CHECK(m.miou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(m.dsc == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.acc == doctest::Approx(0.5).epsilon(1e-15));

    metrics::ConfusionCounts perfect{7, 0, 9, 0};
    auto mp = metrics::metrics_from(perfect);
    CHECK(mp.miou == 1.0);
    CHECK(mp.dsc == 1.0);
    CHECK(mp.acc == 1.0);
    CHECK(mp.sen == 1.0);
    CHECK(mp.spe == 1.0);
    CHECK(mp.miou_two_class == 1.0);
}
