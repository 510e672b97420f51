#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vssmseg/ops.hpp"
#include "vssmseg/ssm.hpp"
#include "vssmseg/tensor.hpp"

// 2D selective scan: unfold a feature map into four directional sequences,
// run the selective scan on each, restore spatial order, and merge by sum.
namespace vssmseg::ss2d {

enum class ScanDirection {
    RowMajorForward = 0,
    RowMajorReverse = 1,
    ColMajorForward = 2,
    ColMajorReverse = 3,
};

inline const char* scan_direction_name(ScanDirection d) {
    switch (d) {
        case ScanDirection::RowMajorForward: return "row_major_forward";
        case ScanDirection::RowMajorReverse: return "row_major_reverse";
        case ScanDirection::ColMajorForward: return "col_major_forward";
        case ScanDirection::ColMajorReverse: return "col_major_reverse";
    }
    return "?";
}

// Sequence position -> flattened pixel index h*W + w.
inline std::vector<int64_t> scan_index_map(ScanDirection d, int64_t H, int64_t W) {
    int64_t L = H * W;
    std::vector<int64_t> map(static_cast<size_t>(L));
    switch (d) {
        case ScanDirection::RowMajorForward:
            for (int64_t l = 0; l < L; ++l) map[static_cast<size_t>(l)] = l;
            break;
        case ScanDirection::RowMajorReverse:
            for (int64_t l = 0; l < L; ++l) map[static_cast<size_t>(l)] = L - 1 - l;
            break;
        case ScanDirection::ColMajorForward:
            for (int64_t l = 0; l < L; ++l) map[static_cast<size_t>(l)] = (l % H) * W + (l / H);
            break;
        case ScanDirection::ColMajorReverse:
            for (int64_t l = 0; l < L; ++l) {
                int64_t r = L - 1 - l;
                map[static_cast<size_t>(l)] = (r % H) * W + (r / H);
            }
            break;
    }
    return map;
}

// [B,C,H,W] -> [B,H*W,C], traversal order given by the direction.
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, ScanDirection d) {
    if (x.rank() != 4) throw ShapeError("unfold: expected NCHW, got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 1 || W < 1) throw ShapeError("unfold: empty spatial extent " + shape_str(x.shape()));
    auto map = std::make_shared<std::vector<int64_t>>(scan_index_map(d, H, W));
    int64_t L = H * W;
    const auto& xv = x.vec();
    std::vector<T> out(static_cast<size_t>(B * L * C));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t l = 0; l < L; ++l) {
            int64_t pix = (*map)[static_cast<size_t>(l)];
            T* op = out.data() + (b * L + l) * C;
            for (int64_t c = 0; c < C; ++c) op[c] = xv[static_cast<size_t>((b * C + c) * L + pix)];
        }
    Shape os{B, L, C};
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(os), std::move(out), [xn, map, B, C, L](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < L; ++l) {
                int64_t pix = (*map)[static_cast<size_t>(l)];
                const T* gp = go.data() + (b * L + l) * C;
                for (int64_t c = 0; c < C; ++c) gx[static_cast<size_t>((b * C + c) * L + pix)] += gp[c];
            }
    });
}

// [B,H*W,C] -> [B,C,H,W], inverse of unfold for the same direction.
template <typename T>
Tensor<T> refold(const Tensor<T>& seq, ScanDirection d, int64_t H, int64_t W) {
    if (seq.rank() != 3)
        throw ShapeError("refold: expected [B,L,C], got " + shape_str(seq.shape()));
    int64_t B = seq.dim(0), L = seq.dim(1), C = seq.dim(2);
    if (L != H * W)
        throw ShapeError("refold: sequence length " + std::to_string(L) + " != " +
                         std::to_string(H) + "*" + std::to_string(W));
    auto map = std::make_shared<std::vector<int64_t>>(scan_index_map(d, H, W));
    const auto& sv = seq.vec();
    std::vector<T> out(static_cast<size_t>(B * C * L));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t l = 0; l < L; ++l) {
            int64_t pix = (*map)[static_cast<size_t>(l)];
            const T* sp = sv.data() + (b * L + l) * C;
            for (int64_t c = 0; c < C; ++c) out[static_cast<size_t>((b * C + c) * L + pix)] = sp[c];
        }
    Shape os{B, C, H, W};
    Tape<T>* tp = merge_tapes<T>({&seq});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int sn = seq.node();
    return tp->emit(std::move(os), std::move(out), [sn, map, B, C, L](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (sn < 0) return;
        auto& gs = t.grad_buf(sn);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < L; ++l) {
                int64_t pix = (*map)[static_cast<size_t>(l)];
                T* gp = gs.data() + (b * L + l) * C;
                for (int64_t c = 0; c < C; ++c) gp[c] += go[static_cast<size_t>((b * C + c) * L + pix)];
            }
    });
}

constexpr std::array<ScanDirection, 4> kAllDirections = {
    ScanDirection::RowMajorForward, ScanDirection::RowMajorReverse,
    ScanDirection::ColMajorForward, ScanDirection::ColMajorReverse};

// Independent scan parameters per direction; projections are shared upstream
// in the VSS block, only the scan parameters differ here.
template <typename T>
struct Ss2dParams {
    std::array<ssm::SelectiveScanWeights<T>, 4> dir;
};

// y = sum over directions of refold(selective_scan(unfold(x, d)), d).
// The sum runs in fixed direction order so results are bitwise reproducible.
template <typename T>
Tensor<T> ss2d_forward(const Tensor<T>& x, const Ss2dParams<T>& p) {
    if (x.rank() != 4)
        throw ShapeError("ss2d_forward: expected NCHW, got " + shape_str(x.shape()));
    int64_t H = x.dim(2), W = x.dim(3);
    Tensor<T> acc;
    bool first = true;
    for (ScanDirection d : kAllDirections) {
        Tensor<T> branch;
        try {
            Tensor<T> seq = unfold(x, d);
            Tensor<T> y = ssm::selective_scan(seq, p.dir[static_cast<size_t>(d)]);
            branch = refold(y, d, H, W);
        } catch (const NumericError& e) {
            throw NumericError(std::string("ss2d[") + scan_direction_name(d) + "]: " + e.what());
        }
        acc = first ? branch : ops::add(acc, branch);
        first = false;
    }
    return acc;
}

}  // namespace vssmseg::ss2d
