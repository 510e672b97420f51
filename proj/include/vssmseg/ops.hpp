#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "vssmseg/tensor.hpp"

// Differentiable tensor operations. Every op computes its forward value
// eagerly; when an operand is recorded on a tape the result is recorded too,
// with a closure holding the analytic backward pass. Ops are pure: identical
// inputs give bitwise identical outputs.
namespace vssmseg::ops {

template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    const auto& xv = x.vec();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sigmoid_scalar(xv[i]);
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(x.shape(), std::move(out));
    auto xs = x.store();
    int xn = x.node();
    return tp->emit(x.shape(), std::move(out), [xs, xn](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        const auto& xr = *xs;
        for (size_t i = 0; i < xr.size(); ++i) {
            T s = sigmoid_scalar(xr[i]);
            gx[i] += go[i] * s * (T(1) + xr[i] * (T(1) - s));
        }
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    const auto& xv = x.vec();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(x.shape(), std::move(out));
    auto xs = x.store();
    int xn = x.node();
    return tp->emit(x.shape(), std::move(out), [xs, xn](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        const auto& xr = *xs;
        for (size_t i = 0; i < xr.size(); ++i)
            if (xr[i] > T(0)) gx[i] += go[i];
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    const auto& xv = x.vec();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = sigmoid_scalar(xv[i]);
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(x.shape(), std::move(out));
    int xn = x.node();
    auto os = std::make_shared<std::vector<T>>(out);  // sigma(x), reused in backward
    return tp->emit(x.shape(), std::move(out), [os, xn](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        const auto& s = *os;
        for (size_t i = 0; i < s.size(); ++i) gx[i] += go[i] * s[i] * (T(1) - s[i]);
    });
}

// ---------------------------------------------------------------------------
// Broadcast binary ops (numpy semantics, shapes aligned from the right)
// ---------------------------------------------------------------------------

struct BcastPlan {
    Shape out;
    std::vector<int64_t> sa, sb;  // per-out-dim element strides, 0 where broadcast
};

inline BcastPlan make_bcast(const Shape& a, const Shape& b, const char* opname) {
    size_t rank = std::max(a.size(), b.size());
    BcastPlan p;
    p.out.resize(rank);
    p.sa.resize(rank);
    p.sb.resize(rank);
    // native strides
    std::vector<int64_t> stA(a.size()), stB(b.size());
    int64_t acc = 1;
    for (size_t i = a.size(); i-- > 0;) {
        stA[i] = acc;
        acc *= a[i];
    }
    acc = 1;
    for (size_t i = b.size(); i-- > 0;) {
        stB[i] = acc;
        acc *= b[i];
    }
    for (size_t i = 0; i < rank; ++i) {
        size_t ra = rank - 1 - i;  // out dim index, from the back
        int64_t da = (i < a.size()) ? a[a.size() - 1 - i] : 1;
        int64_t db = (i < b.size()) ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        p.out[ra] = std::max(da, db);
        p.sa[ra] = (da == 1 && p.out[ra] != 1) ? 0 : (i < a.size() ? stA[a.size() - 1 - i] : 0);
        p.sb[ra] = (db == 1 && p.out[ra] != 1) ? 0 : (i < b.size() ? stB[b.size() - 1 - i] : 0);
    }
    return p;
}

// Walks the broadcast output space calling f(out_index, a_offset, b_offset).
template <typename F>
inline void bcast_walk(const BcastPlan& p, F&& f) {
    size_t rank = p.out.size();
    if (rank == 0) {
        f(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    std::vector<int64_t> idx(rank, 0);
    int64_t total = 1;
    for (int64_t d : p.out) total *= d;
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, oa, ob);
        for (size_t d = rank; d-- > 0;) {
            idx[d]++;
            oa += p.sa[d];
            ob += p.sb[d];
            if (idx[d] < p.out[d]) break;
            oa -= p.sa[d] * p.out[d];
            ob -= p.sb[d] * p.out[d];
            idx[d] = 0;
            if (d == 0) return;
        }
    }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& av = a.vec();
    const auto& bv = b.vec();
    std::vector<T> out;
    BcastPlan plan;
    if (a.shape() == b.shape()) {
        out.resize(av.size());
        for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
        plan.out = a.shape();
    } else {
        plan = make_bcast(a.shape(), b.shape(), "add");
        out.resize(static_cast<size_t>(numel_of(plan.out)));
        bcast_walk(plan, [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = av[static_cast<size_t>(oa)] + bv[static_cast<size_t>(ob)]; });
    }
    Tape<T>* tp = merge_tapes<T>({&a, &b});
    if (!tp) return Tensor<T>(plan.out, std::move(out));
    bool same = a.shape() == b.shape();
    int an = a.node(), bn = b.node();
    Shape sha = a.shape(), shb = b.shape();
    return tp->emit(plan.out, std::move(out), [an, bn, same, sha, shb](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (same) {
            if (an >= 0) {
                auto& ga = t.grad_buf(an);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_buf(bn);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
            return;
        }
        BcastPlan plan = make_bcast(sha, shb, "add");
        if (an >= 0) {
            auto& ga = t.grad_buf(an);
            bcast_walk(plan, [&](int64_t i, int64_t oa, int64_t) { ga[static_cast<size_t>(oa)] += go[static_cast<size_t>(i)]; });
        }
        if (bn >= 0) {
            auto& gb = t.grad_buf(bn);
            bcast_walk(plan, [&](int64_t i, int64_t, int64_t ob) { gb[static_cast<size_t>(ob)] += go[static_cast<size_t>(i)]; });
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& av = a.vec();
    const auto& bv = b.vec();
    std::vector<T> out;
    BcastPlan plan;
    if (a.shape() == b.shape()) {
        out.resize(av.size());
        for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
        plan.out = a.shape();
    } else {
        plan = make_bcast(a.shape(), b.shape(), "mul");
        out.resize(static_cast<size_t>(numel_of(plan.out)));
        bcast_walk(plan, [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = av[static_cast<size_t>(oa)] * bv[static_cast<size_t>(ob)]; });
    }
    Tape<T>* tp = merge_tapes<T>({&a, &b});
    if (!tp) return Tensor<T>(plan.out, std::move(out));
    bool same = a.shape() == b.shape();
    int an = a.node(), bn = b.node();
    auto as = a.store(), bs = b.store();
    Shape sha = a.shape(), shb = b.shape();
    return tp->emit(plan.out, std::move(out), [an, bn, as, bs, same, sha, shb](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        const auto& av = *as;
        const auto& bv = *bs;
        if (same) {
            if (an >= 0) {
                auto& ga = t.grad_buf(an);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_buf(bn);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
            }
            return;
        }
        BcastPlan plan = make_bcast(sha, shb, "mul");
        if (an >= 0) {
            auto& ga = t.grad_buf(an);
            bcast_walk(plan, [&](int64_t i, int64_t oa, int64_t ob) {
                ga[static_cast<size_t>(oa)] += go[static_cast<size_t>(i)] * bv[static_cast<size_t>(ob)];
            });
        }
        if (bn >= 0) {
            auto& gb = t.grad_buf(bn);
            bcast_walk(plan, [&](int64_t i, int64_t oa, int64_t ob) {
                gb[static_cast<size_t>(ob)] += go[static_cast<size_t>(i)] * av[static_cast<size_t>(oa)];
            });
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    const auto& xv = x.vec();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(x.shape(), std::move(out));
    int xn = x.node();
    return tp->emit(x.shape(), std::move(out), [xn, c](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const auto& xv = x.vec();
    T acc = T(0);
    for (T v : xv) acc += v;
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>::scalar(acc);
    int xn = x.node();
    int64_t n = x.numel();
    return tp->emit(Shape{}, std::vector<T>{acc}, [xn, n](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (int64_t i = 0; i < n; ++i) gx[static_cast<size_t>(i)] += go[0];
    });
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
    if (numel_of(s) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
    std::vector<T> out(x.vec());
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(s), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(s), std::move(out), [xn](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
}

inline std::vector<int64_t> contiguous_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != x.rank())
        throw ShapeError("permute: axes list size " + std::to_string(perm.size()) +
                         " does not match rank of " + shape_str(x.shape()));
    Shape os(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) os[i] = x.dim(perm[i]);
    auto in_st = contiguous_strides(x.shape());
    std::vector<int64_t> gather_st(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) gather_st[i] = in_st[static_cast<size_t>(perm[i])];

    const auto& xv = x.vec();
    std::vector<T> out(xv.size());
    size_t rank = os.size();
    std::vector<int64_t> idx(rank, 0);
    int64_t src = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[static_cast<size_t>(src)];
        for (size_t d = rank; d-- > 0;) {
            idx[d]++;
            src += gather_st[d];
            if (idx[d] < os[d]) break;
            src -= gather_st[d] * os[d];
            idx[d] = 0;
        }
    }
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    Shape os_copy = os;
    return tp->emit(std::move(os), std::move(out), [xn, os_copy, gather_st](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        size_t rank = os_copy.size();
        std::vector<int64_t> idx(rank, 0);
        int64_t src = 0;
        for (size_t i = 0; i < go.size(); ++i) {
            gx[static_cast<size_t>(src)] += go[i];
            for (size_t d = rank; d-- > 0;) {
                idx[d]++;
                src += gather_st[d];
                if (idx[d] < os_copy[d]) break;
                src -= gather_st[d] * os_copy[d];
                idx[d] = 0;
            }
        }
    });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
    if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < a.rank(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ off axis " + std::to_string(axis));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] += b.dim(axis);
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    int64_t inner = 1;
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    int64_t da = a.dim(axis) * inner, db = b.dim(axis) * inner;

    const auto& av = a.vec();
    const auto& bv = b.vec();
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    for (int64_t o = 0; o < outer; ++o) {
        std::copy(av.begin() + o * da, av.begin() + (o + 1) * da, out.begin() + o * (da + db));
        std::copy(bv.begin() + o * db, bv.begin() + (o + 1) * db,
                  out.begin() + o * (da + db) + da);
    }
    Tape<T>* tp = merge_tapes<T>({&a, &b});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int an = a.node(), bn = b.node();
    return tp->emit(std::move(os), std::move(out), [an, bn, outer, da, db](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        for (int64_t o = 0; o < outer; ++o) {
            if (an >= 0) {
                auto& ga = t.grad_buf(an);
                for (int64_t i = 0; i < da; ++i) ga[static_cast<size_t>(o * da + i)] += go[static_cast<size_t>(o * (da + db) + i)];
            }
            if (bn >= 0) {
                auto& gb = t.grad_buf(bn);
                for (int64_t i = 0; i < db; ++i) gb[static_cast<size_t>(o * db + i)] += go[static_cast<size_t>(o * (da + db) + da + i)];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// linear: y = x.w + b, broadcast over leading dims. x [..., d_in], w [d_in, d_out]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias) {
    if (x.rank() < 1 || w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0))
        throw ShapeError("linear: inner dimensions disagree between x " + shape_str(x.shape()) +
                         " and w " + shape_str(w.shape()));
    int64_t din = w.dim(0), dout = w.dim(1);
    if (bias && (bias->rank() != 1 || bias->dim(0) != dout))
        throw ShapeError("linear: bias " + shape_str(bias->shape()) + " does not match w " +
                         shape_str(w.shape()));
    int64_t rows = x.numel() / din;
    Shape os = x.shape();
    os[os.size() - 1] = dout;

    const auto& xv = x.vec();
    const auto& wv = w.vec();
    std::vector<T> out(static_cast<size_t>(rows * dout), T(0));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data() + r * din;
        T* op = out.data() + r * dout;
        for (int64_t i = 0; i < din; ++i) {
            T xi = xp[i];
            const T* wp = wv.data() + i * dout;
            for (int64_t j = 0; j < dout; ++j) op[j] += xi * wp[j];
        }
        if (bias) {
            const T* bp = bias->data();
            for (int64_t j = 0; j < dout; ++j) op[j] += bp[j];
        }
    }
    Tape<T>* tp = merge_tapes<T>({&x, &w, bias ? &*bias : nullptr});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    auto xs = x.store(), ws = w.store();
    int xn = x.node(), wn = w.node(), bn = bias ? bias->node() : -1;
    return tp->emit(std::move(os), std::move(out),
                    [xs, ws, xn, wn, bn, rows, din, dout](Tape<T>& t, int self) {
                        const auto& go = t.grad_at(self);
                        const auto& xv = *xs;
                        const auto& wv = *ws;
                        if (xn >= 0) {
                            auto& gx = t.grad_buf(xn);
                            for (int64_t r = 0; r < rows; ++r) {
                                const T* gp = go.data() + r * dout;
                                T* gxp = gx.data() + r * din;
                                for (int64_t i = 0; i < din; ++i) {
                                    const T* wp = wv.data() + i * dout;
                                    T acc = T(0);
                                    for (int64_t j = 0; j < dout; ++j) acc += gp[j] * wp[j];
                                    gxp[i] += acc;
                                }
                            }
                        }
                        if (wn >= 0) {
                            auto& gw = t.grad_buf(wn);
                            for (int64_t r = 0; r < rows; ++r) {
                                const T* xp = xv.data() + r * din;
                                const T* gp = go.data() + r * dout;
                                for (int64_t i = 0; i < din; ++i) {
                                    T xi = xp[i];
                                    T* gwp = gw.data() + i * dout;
                                    for (int64_t j = 0; j < dout; ++j) gwp[j] += xi * gp[j];
                                }
                            }
                        }
                        if (bn >= 0) {
                            auto& gb = t.grad_buf(bn);
                            for (int64_t r = 0; r < rows; ++r) {
                                const T* gp = go.data() + r * dout;
                                for (int64_t j = 0; j < dout; ++j) gb[static_cast<size_t>(j)] += gp[j];
                            }
                        }
                    });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return linear(x, w, std::optional<Tensor<T>>{});
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, NCHW. x [B,Cin,H,W], k [Cout,Cin/g,kh,kw].
// H' = floor((H + 2p - kh) / stride) + 1
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const std::optional<Tensor<T>>& bias,
                 int stride = 1, int padding = 0, int groups = 1) {
    if (x.rank() != 4 || k.rank() != 4)
        throw ShapeError("conv2d: expected x rank 4 and kernel rank 4, got " +
                         shape_str(x.shape()) + " and " + shape_str(k.shape()));
    int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Cout = k.dim(0), kcin = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (groups < 1 || Cin % groups != 0 || Cout % groups != 0)
        throw ShapeError("conv2d: groups=" + std::to_string(groups) +
                         " does not divide channels of x " + shape_str(x.shape()) + " / kernel " +
                         shape_str(k.shape()));
    if (kcin != Cin / groups)
        throw ShapeError("conv2d: kernel input channels " + std::to_string(kcin) +
                         " != Cin/groups = " + std::to_string(Cin / groups));
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
    if (bias && (bias->rank() != 1 || bias->dim(0) != Cout))
        throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " does not match Cout");
    int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: kernel " + shape_str(k.shape()) + " does not fit input " +
                         shape_str(x.shape()));
    int64_t cing = Cin / groups, coutg = Cout / groups;

    const auto& xv = x.vec();
    const auto& kv = k.vec();
    std::vector<T> out(static_cast<size_t>(B * Cout * Ho * Wo), T(0));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oc = 0; oc < Cout; ++oc) {
            int64_t g = oc / coutg;
            T bval = bias ? bias->data()[oc] : T(0);
            for (int64_t oh = 0; oh < Ho; ++oh) {
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    T acc = bval;
                    for (int64_t ic = 0; ic < cing; ++ic) {
                        const T* xp = xv.data() + ((b * Cin + g * cing + ic) * H) * W;
                        const T* kp = kv.data() + ((oc * cing + ic) * kh) * kw;
                        for (int64_t u = 0; u < kh; ++u) {
                            int64_t ih = oh * stride - padding + u;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t v = 0; v < kw; ++v) {
                                int64_t iw = ow * stride - padding + v;
                                if (iw < 0 || iw >= W) continue;
                                acc += xp[ih * W + iw] * kp[u * kw + v];
                            }
                        }
                    }
                    out[static_cast<size_t>(((b * Cout + oc) * Ho + oh) * Wo + ow)] = acc;
                }
            }
        }
    }
    Shape os{B, Cout, Ho, Wo};
    Tape<T>* tp = merge_tapes<T>({&x, &k, bias ? &*bias : nullptr});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    auto xs = x.store(), ks = k.store();
    int xn = x.node(), kn = k.node(), bn = bias ? bias->node() : -1;
    return tp->emit(
        std::move(os), std::move(out),
        [xs, ks, xn, kn, bn, B, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, padding, cing,
         coutg](Tape<T>& t, int self) {
            const auto& go = t.grad_at(self);
            const auto& xv = *xs;
            const auto& kv = *ks;
            std::vector<T>* gx = xn >= 0 ? &t.grad_buf(xn) : nullptr;
            std::vector<T>* gk = kn >= 0 ? &t.grad_buf(kn) : nullptr;
            std::vector<T>* gb = bn >= 0 ? &t.grad_buf(bn) : nullptr;
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    int64_t g = oc / coutg;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        for (int64_t ow = 0; ow < Wo; ++ow) {
                            T gov = go[static_cast<size_t>(((b * Cout + oc) * Ho + oh) * Wo + ow)];
                            if (gov == T(0)) continue;
                            if (gb) (*gb)[static_cast<size_t>(oc)] += gov;
                            for (int64_t ic = 0; ic < cing; ++ic) {
                                int64_t xbase = ((b * Cin + g * cing + ic) * H) * W;
                                int64_t kbase = ((oc * cing + ic) * kh) * kw;
                                for (int64_t u = 0; u < kh; ++u) {
                                    int64_t ih = oh * stride - padding + u;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int64_t v = 0; v < kw; ++v) {
                                        int64_t iw = ow * stride - padding + v;
                                        if (iw < 0 || iw >= W) continue;
                                        if (gx)
                                            (*gx)[static_cast<size_t>(xbase + ih * W + iw)] +=
                                                gov * kv[static_cast<size_t>(kbase + u * kw + v)];
                                        if (gk)
                                            (*gk)[static_cast<size_t>(kbase + u * kw + v)] +=
                                                gov * xv[static_cast<size_t>(xbase + ih * W + iw)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, int stride = 1, int padding = 0,
                 int groups = 1) {
    return conv2d(x, k, std::optional<Tensor<T>>{}, stride, padding, groups);
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis, population statistics. y = (x-m)/sqrt(v+eps)*g + b
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    int64_t C = x.dim(x.rank() - 1);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("layer_norm: affine params do not match channel axis " +
                         std::to_string(C));
    if (!(eps > T(0))) throw ValueError("layer_norm: eps must be > 0");
    int64_t rows = x.numel() / C;

    const auto& xv = x.vec();
    const auto& gv = gamma.vec();
    const auto& bv = beta.vec();
    std::vector<T> out(xv.size());
    auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * 2));  // mean, inv per row
    for (int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data() + r * C;
        T m = T(0);
        for (int64_t c = 0; c < C; ++c) m += xp[c];
        m /= static_cast<T>(C);
        T var = T(0);
        for (int64_t c = 0; c < C; ++c) {
            T d = xp[c] - m;
            var += d * d;
        }
        var /= static_cast<T>(C);
        T inv = T(1) / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(2 * r)] = m;
        (*stats)[static_cast<size_t>(2 * r + 1)] = inv;
        T* op = out.data() + r * C;
        for (int64_t c = 0; c < C; ++c) op[c] = (xp[c] - m) * inv * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
    }
    Tape<T>* tp = merge_tapes<T>({&x, &gamma, &beta});
    if (!tp) return Tensor<T>(x.shape(), std::move(out));
    auto xs = x.store(), gs = gamma.store();
    int xn = x.node(), gn = gamma.node(), bn = beta.node();
    return tp->emit(x.shape(), std::move(out), [xs, gs, stats, xn, gn, bn, rows, C](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        const auto& xv = *xs;
        const auto& gv = *gs;
        std::vector<T>* gx = xn >= 0 ? &t.grad_buf(xn) : nullptr;
        std::vector<T>* gg = gn >= 0 ? &t.grad_buf(gn) : nullptr;
        std::vector<T>* gb = bn >= 0 ? &t.grad_buf(bn) : nullptr;
        std::vector<T> xhat(static_cast<size_t>(C));
        for (int64_t r = 0; r < rows; ++r) {
            const T* xp = xv.data() + r * C;
            const T* gp = go.data() + r * C;
            T m = (*stats)[static_cast<size_t>(2 * r)];
            T inv = (*stats)[static_cast<size_t>(2 * r + 1)];
            T mean_gy = T(0), mean_gyx = T(0);
            for (int64_t c = 0; c < C; ++c) {
                xhat[static_cast<size_t>(c)] = (xp[c] - m) * inv;
                T gyg = gp[c] * gv[static_cast<size_t>(c)];
                mean_gy += gyg;
                mean_gyx += gyg * xhat[static_cast<size_t>(c)];
            }
            mean_gy /= static_cast<T>(C);
            mean_gyx /= static_cast<T>(C);
            for (int64_t c = 0; c < C; ++c) {
                if (gx) {
                    T gyg = gp[c] * gv[static_cast<size_t>(c)];
                    (*gx)[static_cast<size_t>(r * C + c)] +=
                        inv * (gyg - mean_gy - xhat[static_cast<size_t>(c)] * mean_gyx);
                }
                if (gg) (*gg)[static_cast<size_t>(c)] += gp[c] * xhat[static_cast<size_t>(c)];
                if (gb) (*gb)[static_cast<size_t>(c)] += gp[c];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// bilinear_resize, NCHW. src = (dst + 0.5) * (in / out) - 0.5, edge-clamped.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t oh, int64_t ow) {
    if (x.rank() != 4) throw ShapeError("bilinear_resize: expected NCHW, got " + shape_str(x.shape()));
    if (oh < 1 || ow < 1)
        throw ShapeError("bilinear_resize: output extent must be >= 1, got " +
                         std::to_string(oh) + "x" + std::to_string(ow));
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    // per-output-coordinate taps: low index, high index, fraction
    struct Tap {
        int64_t lo, hi;
        T f;
    };
    auto make_taps = [](int64_t in, int64_t out) {
        std::vector<Tap> taps(static_cast<size_t>(out));
        for (int64_t o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                             static_cast<double>(out) -
                         0.5;
            if (src < 0.0) src = 0.0;
            if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
            int64_t lo = static_cast<int64_t>(std::floor(src));
            if (lo > in - 1) lo = in - 1;
            int64_t hi = std::min(lo + 1, in - 1);
            taps[static_cast<size_t>(o)] = {lo, hi, static_cast<T>(src - static_cast<double>(lo))};
        }
        return taps;
    };
    auto ty = std::make_shared<std::vector<Tap>>(make_taps(H, oh));
    auto tx = std::make_shared<std::vector<Tap>>(make_taps(W, ow));

    const auto& xv = x.vec();
    std::vector<T> out(static_cast<size_t>(B * C * oh * ow));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* xp = xv.data() + bc * H * W;
        T* op = out.data() + bc * oh * ow;
        for (int64_t i = 0; i < oh; ++i) {
            const Tap& a = (*ty)[static_cast<size_t>(i)];
            for (int64_t j = 0; j < ow; ++j) {
                const Tap& b = (*tx)[static_cast<size_t>(j)];
                T v00 = xp[a.lo * W + b.lo], v01 = xp[a.lo * W + b.hi];
                T v10 = xp[a.hi * W + b.lo], v11 = xp[a.hi * W + b.hi];
                T top = v00 + (v01 - v00) * b.f;
                T bot = v10 + (v11 - v10) * b.f;
                op[i * ow + j] = top + (bot - top) * a.f;
            }
        }
    }
    Shape os{B, C, oh, ow};
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(os), std::move(out), [xn, ty, tx, B, C, H, W, oh, ow](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (int64_t bc = 0; bc < B * C; ++bc) {
            T* gp = gx.data() + bc * H * W;
            const T* op = go.data() + bc * oh * ow;
            for (int64_t i = 0; i < oh; ++i) {
                const auto& a = (*ty)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < ow; ++j) {
                    const auto& b = (*tx)[static_cast<size_t>(j)];
                    T g = op[i * ow + j];
                    gp[a.lo * W + b.lo] += g * (T(1) - a.f) * (T(1) - b.f);
                    gp[a.lo * W + b.hi] += g * (T(1) - a.f) * b.f;
                    gp[a.hi * W + b.lo] += g * a.f * (T(1) - b.f);
                    gp[a.hi * W + b.hi] += g * a.f * b.f;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// adaptive_avg_pool2d, NCHW. Bin i covers [floor(i*H/out), ceil((i+1)*H/out)).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int64_t oh, int64_t ow) {
    if (x.rank() != 4)
        throw ShapeError("adaptive_avg_pool2d: expected NCHW, got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (oh < 1 || ow < 1 || oh > H || ow > W)
        throw ShapeError("adaptive_avg_pool2d: output " + std::to_string(oh) + "x" +
                         std::to_string(ow) + " not within input " + shape_str(x.shape()));
    auto bin_lo = [](int64_t i, int64_t in, int64_t out) { return (i * in) / out; };
    auto bin_hi = [](int64_t i, int64_t in, int64_t out) {
        return ((i + 1) * in + out - 1) / out;  // ceil
    };
    const auto& xv = x.vec();
    std::vector<T> out(static_cast<size_t>(B * C * oh * ow));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* xp = xv.data() + bc * H * W;
        T* op = out.data() + bc * oh * ow;
        for (int64_t i = 0; i < oh; ++i) {
            int64_t h0 = bin_lo(i, H, oh), h1 = bin_hi(i, H, oh);
            for (int64_t j = 0; j < ow; ++j) {
                int64_t w0 = bin_lo(j, W, ow), w1 = bin_hi(j, W, ow);
                T acc = T(0);
                for (int64_t h = h0; h < h1; ++h)
                    for (int64_t w = w0; w < w1; ++w) acc += xp[h * W + w];
                op[i * ow + j] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
            }
        }
    }
    Shape os{B, C, oh, ow};
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(os), std::move(out), [xn, B, C, H, W, oh, ow, bin_lo, bin_hi](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (int64_t bc = 0; bc < B * C; ++bc) {
            T* gp = gx.data() + bc * H * W;
            const T* op = go.data() + bc * oh * ow;
            for (int64_t i = 0; i < oh; ++i) {
                int64_t h0 = bin_lo(i, H, oh), h1 = bin_hi(i, H, oh);
                for (int64_t j = 0; j < ow; ++j) {
                    int64_t w0 = bin_lo(j, W, ow), w1 = bin_hi(j, W, ow);
                    T g = op[i * ow + j] / static_cast<T>((h1 - h0) * (w1 - w0));
                    for (int64_t h = h0; h < h1; ++h)
                        for (int64_t w = w0; w < w1; ++w) gp[h * W + w] += g;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Pooling reductions used by the attention gates
// ---------------------------------------------------------------------------

// [B,C,H,W] -> [B,C,1,1]; ties resolve to the first maximum.
template <typename T>
Tensor<T> global_max_pool2d(const Tensor<T>& x) {
    if (x.rank() != 4)
        throw ShapeError("global_max_pool2d: expected NCHW, got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (HW < 1) throw ShapeError("global_max_pool2d: empty spatial extent");
    const auto& xv = x.vec();
    std::vector<T> out(static_cast<size_t>(B * C));
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* xp = xv.data() + bc * HW;
        int64_t best = 0;
        for (int64_t i = 1; i < HW; ++i)
            if (xp[i] > xp[best]) best = i;
        (*argmax)[static_cast<size_t>(bc)] = best;
        out[static_cast<size_t>(bc)] = xp[best];
    }
    Shape os{B, C, 1, 1};
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(os), std::move(out), [xn, argmax, B, C, HW](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (int64_t bc = 0; bc < B * C; ++bc)
            gx[static_cast<size_t>(bc * HW + (*argmax)[static_cast<size_t>(bc)])] += go[static_cast<size_t>(bc)];
    });
}

// [B,C,H,W] -> [B,1,H,W]
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("channel_mean: expected NCHW, got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const auto& xv = x.vec();
    std::vector<T> out(static_cast<size_t>(B * HW), T(0));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T* xp = xv.data() + (b * C + c) * HW;
            T* op = out.data() + b * HW;
            for (int64_t i = 0; i < HW; ++i) op[i] += xp[i];
        }
    for (auto& v : out) v /= static_cast<T>(C);
    Shape os{B, 1, x.dim(2), x.dim(3)};
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(os), std::move(out), [xn, B, C, HW](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        T invc = T(1) / static_cast<T>(C);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                T* gp = gx.data() + (b * C + c) * HW;
                const T* op = go.data() + b * HW;
                for (int64_t i = 0; i < HW; ++i) gp[i] += op[i] * invc;
            }
    });
}

// [B,C,H,W] -> [B,1,H,W]; ties resolve to the first (lowest-index) channel.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("channel_max: expected NCHW, got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (C < 1) throw ShapeError("channel_max: empty channel extent");
    const auto& xv = x.vec();
    std::vector<T> out(static_cast<size_t>(B * HW));
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * HW));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < HW; ++i) {
            int64_t best = 0;
            T bv = xv[static_cast<size_t>((b * C) * HW + i)];
            for (int64_t c = 1; c < C; ++c) {
                T v = xv[static_cast<size_t>((b * C + c) * HW + i)];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out[static_cast<size_t>(b * HW + i)] = bv;
            (*argmax)[static_cast<size_t>(b * HW + i)] = best;
        }
    }
    Shape os{B, 1, x.dim(2), x.dim(3)};
    Tape<T>* tp = merge_tapes<T>({&x});
    if (!tp) return Tensor<T>(std::move(os), std::move(out));
    int xn = x.node();
    return tp->emit(std::move(os), std::move(out), [xn, argmax, B, C, HW](Tape<T>& t, int self) {
        const auto& go = t.grad_at(self);
        if (xn < 0) return;
        auto& gx = t.grad_buf(xn);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < HW; ++i) {
                int64_t c = (*argmax)[static_cast<size_t>(b * HW + i)];
                gx[static_cast<size_t>((b * C + c) * HW + i)] += go[static_cast<size_t>(b * HW + i)];
            }
    });
}

}  // namespace vssmseg::ops
