#pragma once

#include "vssmseg/ops.hpp"
#include "vssmseg/ss2d.hpp"
#include "vssmseg/tensor.hpp"

// The residual VSS block. Input and output are channels-last [B,H,W,C];
// channel layout is converted around the depthwise conv / scan, which work
// on NCHW.
namespace vssmseg::vss {

template <typename T>
struct VssBlockParams {
    Tensor<T> in_w, in_b;      // C -> D embedding for the scan stream
    Tensor<T> gate_w, gate_b;  // C -> D for the gate stream
    Tensor<T> dw_w, dw_b;      // 3x3 depthwise conv on D channels
    ss2d::Ss2dParams<T> scan;
    Tensor<T> norm_gamma, norm_beta;  // layer norm after the scan
    Tensor<T> out_w, out_b;           // D -> C
};

// stream1 = LN(SS2D(SiLU(DWConv(Linear(x)))))
// stream2 = SiLU(Linear(x))
// out     = Linear(stream1 * stream2) + x
template <typename T>
Tensor<T> vss_forward(const Tensor<T>& x, const VssBlockParams<T>& p) {
    if (x.rank() != 4)
        throw ShapeError("vss_forward: expected [B,H,W,C], got " + shape_str(x.shape()));
    if (x.dim(3) != p.in_w.dim(0))
        throw ShapeError("vss_forward: input channels " + std::to_string(x.dim(3)) +
                         " do not match block width " + std::to_string(p.in_w.dim(0)));
    int64_t D = p.in_w.dim(1);

    Tensor<T> t = ops::linear(x, p.in_w, std::optional<Tensor<T>>(p.in_b));  // [B,H,W,D]
    t = ops::permute(t, {0, 3, 1, 2});                                       // [B,D,H,W]
    t = ops::conv2d(t, p.dw_w, std::optional<Tensor<T>>(p.dw_b), 1, 1, static_cast<int>(D));
    t = ops::silu(t);
    t = ss2d::ss2d_forward(t, p.scan);
    t = ops::permute(t, {0, 2, 3, 1});  // back to [B,H,W,D]
    Tensor<T> stream1 = ops::layer_norm(t, p.norm_gamma, p.norm_beta);

    Tensor<T> stream2 = ops::silu(ops::linear(x, p.gate_w, std::optional<Tensor<T>>(p.gate_b)));

    Tensor<T> merged = ops::mul(stream1, stream2);
    Tensor<T> out = ops::linear(merged, p.out_w, std::optional<Tensor<T>>(p.out_b));
    return ops::add(out, x);
}

}  // namespace vssmseg::vss
