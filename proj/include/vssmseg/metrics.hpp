#pragma once

#include <cstdint>

#include "vssmseg/tensor.hpp"

namespace vssmseg::metrics {

struct ConfusionCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    long long total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

// Threshold predictions against a {0,1} mask; ties (p == threshold) count as
// positive.
template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred_probs, const Tensor<T>& target,
                          double threshold = 0.5) {
    if (pred_probs.shape() != target.shape())
        throw ShapeError("confusion: predictions " + shape_str(pred_probs.shape()) +
                         " vs target " + shape_str(target.shape()));
    ConfusionCounts c;
    const auto& pv = pred_probs.vec();
    const auto& yv = target.vec();
    for (size_t i = 0; i < pv.size(); ++i) {
        bool pred = static_cast<double>(pv[i]) >= threshold;
        bool pos = yv[i] != T(0);
        if (pred && pos)
            ++c.tp;
        else if (pred && !pos)
            ++c.fp;
        else if (!pred && pos)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

struct Metrics {
    double miou = 0;  // foreground IoU
    double dsc = 0;
    double acc = 0;
    double sen = 0;
    double spe = 0;
    double miou_two_class = 0;  // mean of foreground and background IoU
};

// Empty denominators yield 1.0 by convention.
inline Metrics metrics_from(const ConfusionCounts& c) {
    if (c.total() <= 0) throw ValueError("metrics_from: empty confusion counts");
    auto ratio = [](long long num, long long den) {
        return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    Metrics m;
    m.miou = ratio(c.tp, c.tp + c.fp + c.fn);
    m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    m.sen = ratio(c.tp, c.tp + c.fn);
    m.spe = ratio(c.tn, c.tn + c.fp);
    double iou_bg = ratio(c.tn, c.tn + c.fn + c.fp);
    m.miou_two_class = 0.5 * (m.miou + iou_bg);
    return m;
}

}  // namespace vssmseg::metrics
