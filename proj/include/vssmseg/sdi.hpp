#pragma once

#include <array>
#include <string>
#include <vector>

#include "vssmseg/ops.hpp"
#include "vssmseg/tensor.hpp"

// Semantics-and-detail infusion: attention-refine each pyramid level, align
// channels to a common width, resize every level to each target level,
// smooth, and fuse with an elementwise product.
namespace vssmseg::sdi {

// Ordered coarsening pyramid, level i at spatial H/2^{i+1} x W/2^{i+1}.
template <typename T>
struct FeaturePyramid {
    std::vector<Tensor<T>> levels;
};

// CBAM: channel gate from a shared MLP over average- and max-pooled
// descriptors, then a spatial gate from a 7x7 conv over the channelwise
// mean/max maps.
template <typename T>
struct CbamParams {
    Tensor<T> mlp1_w, mlp1_b;  // C -> C/r
    Tensor<T> mlp2_w, mlp2_b;  // C/r -> C
    Tensor<T> sp_w, sp_b;      // 7x7 conv, 2 -> 1
};

template <typename T>
Tensor<T> cbam(const Tensor<T>& x, const CbamParams<T>& p) {
    if (x.rank() != 4) throw ShapeError("cbam: expected NCHW, got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1);

    auto mlp = [&](const Tensor<T>& pooled) {  // [B,C,1,1] -> [B,C]
        Tensor<T> v = ops::reshape(pooled, Shape{B, C});
        v = ops::linear(v, p.mlp1_w, std::optional<Tensor<T>>(p.mlp1_b));
        v = ops::relu(v);
        return ops::linear(v, p.mlp2_w, std::optional<Tensor<T>>(p.mlp2_b));
    };
    Tensor<T> ch_avg = mlp(ops::adaptive_avg_pool2d(x, 1, 1));
    Tensor<T> ch_max = mlp(ops::global_max_pool2d(x));
    Tensor<T> ch_gate = ops::sigmoid(ops::add(ch_avg, ch_max));
    ch_gate = ops::reshape(ch_gate, Shape{B, C, 1, 1});
    Tensor<T> gated = ops::mul(x, ch_gate);

    Tensor<T> sp_in = ops::concat(ops::channel_mean(gated), ops::channel_max(gated), 1);
    Tensor<T> sp_gate =
        ops::sigmoid(ops::conv2d(sp_in, p.sp_w, std::optional<Tensor<T>>(p.sp_b), 1, 3, 1));
    return ops::mul(gated, sp_gate);  // [B,1,H,W] gate broadcasts over channels
}

// 1x1 conv taking level channels C_i to the common width c.
template <typename T>
Tensor<T> align_channels(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return ops::conv2d(x, w, std::optional<Tensor<T>>(b), 1, 0, 1);
}

// Resize level j to the size of level i: adaptive average pool when the
// source is finer (j < i), identity when j == i, bilinear upsample when the
// source is coarser (j > i). The stated relation must match the actual sizes.
template <typename T>
Tensor<T> resize_to_level(const Tensor<T>& f, int64_t th, int64_t tw, int j, int i) {
    if (f.rank() != 4)
        throw ShapeError("resize_to_level: expected NCHW, got " + shape_str(f.shape()));
    int64_t H = f.dim(2), W = f.dim(3);
    auto bad = [&](const char* need) {
        return ContractError("resize_to_level: relation j=" + std::to_string(j) +
                             " vs i=" + std::to_string(i) + " requires a " + need +
                             " source, got " + std::to_string(H) + "x" + std::to_string(W) +
                             " -> " + std::to_string(th) + "x" + std::to_string(tw));
    };
    if (j < i) {
        if (!(H > th && W > tw)) throw bad("larger");
        return ops::adaptive_avg_pool2d(f, th, tw);
    }
    if (j == i) {
        if (!(H == th && W == tw)) throw bad("same-size");
        return f;
    }
    if (!(H < th && W < tw)) throw bad("smaller");
    return ops::bilinear_resize(f, th, tw);
}

template <typename T>
struct SdiParams {
    std::array<CbamParams<T>, 4> attn;
    std::array<Tensor<T>, 4> align_w, align_b;              // per level, C_i -> c
    std::array<std::array<Tensor<T>, 4>, 4> smooth_w;       // [target i][source j], 3x3, c -> c
    std::array<std::array<Tensor<T>, 4>, 4> smooth_b;
};

// f1 = attn(f0); f2 = align(f1); f3[i][j] = resize(f2[j] -> size i);
// f4 = smooth(f3); f5[i] = f4[i][0] * f4[i][1] * f4[i][2] * f4[i][3].
// Fusion multiplies in fixed j order for bitwise determinism.
template <typename T>
FeaturePyramid<T> sdi_forward(const FeaturePyramid<T>& pyr, const SdiParams<T>& p) {
    if (pyr.levels.size() != 4)
        throw ShapeError("sdi_forward: expected 4 pyramid levels, got " +
                         std::to_string(pyr.levels.size()));
    std::array<Tensor<T>, 4> aligned;
    for (int j = 0; j < 4; ++j) {
        Tensor<T> f1 = cbam(pyr.levels[static_cast<size_t>(j)], p.attn[static_cast<size_t>(j)]);
        aligned[static_cast<size_t>(j)] =
            align_channels(f1, p.align_w[static_cast<size_t>(j)], p.align_b[static_cast<size_t>(j)]);
    }
    FeaturePyramid<T> out;
    out.levels.reserve(4);
    for (int i = 0; i < 4; ++i) {
        int64_t th = pyr.levels[static_cast<size_t>(i)].dim(2);
        int64_t tw = pyr.levels[static_cast<size_t>(i)].dim(3);
        Tensor<T> fused;
        for (int j = 0; j < 4; ++j) {
            Tensor<T> smoothed;
            try {
                Tensor<T> r = resize_to_level(aligned[static_cast<size_t>(j)], th, tw, j + 1, i + 1);
                smoothed = ops::conv2d(r, p.smooth_w[static_cast<size_t>(i)][static_cast<size_t>(j)],
                                       std::optional<Tensor<T>>(
                                           p.smooth_b[static_cast<size_t>(i)][static_cast<size_t>(j)]),
                                       1, 1, 1);
            } catch (const ContractError& e) {
                throw ContractError("sdi (i=" + std::to_string(i + 1) + ", j=" +
                                    std::to_string(j + 1) + "): " + e.what());
            } catch (const NumericError& e) {
                throw NumericError("sdi (i=" + std::to_string(i + 1) + ", j=" +
                                   std::to_string(j + 1) + "): " + e.what());
            }
            fused = (j == 0) ? smoothed : ops::mul(fused, smoothed);
        }
        out.levels.push_back(fused);
    }
    return out;
}

}  // namespace vssmseg::sdi
