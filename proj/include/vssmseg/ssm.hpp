#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "vssmseg/ops.hpp"
#include "vssmseg/tensor.hpp"

// State-space sequence kernel: zero-order-hold discretization, the recurrent
// and convolutional evaluation modes, and the selective (input-dependent)
// scan used by the 2D scan module.
namespace vssmseg::ssm {

template <typename T>
inline T softplus_scalar(T v) {
    if (v > T(30)) return v;
    if (v < T(-30)) return std::exp(v);
    return std::log1p(std::exp(v));
}

// Per diagonal entry: abar = exp(delta*a), bbar = factor*b with
// factor = (exp(delta*a) - 1) / a. The analytic limit factor = delta is used
// when |delta*a| < 1e-12 instead of the division.
template <typename T>
inline void zoh_entry(T delta, T a, T& abar, T& factor) {
    T u = delta * a;
    abar = std::exp(u);
    if (std::abs(u) < T(1e-12))
        factor = delta;
    else
        factor = std::expm1(u) / a;
}

// Diagonal SSM parameters for a single channel. A = -exp(a_log) elementwise,
// which keeps every diagonal entry strictly negative.
template <typename T>
struct SsmParams {
    std::vector<T> a_log;  // [N]
    std::vector<T> b;      // [N]
    std::vector<T> c;      // [N]
    std::vector<T> delta;  // one entry (time-invariant) or one per step
};

template <typename T>
struct DiscreteSsm {
    int64_t n = 0;      // state dimension
    int64_t steps = 1;  // 1 = time-invariant, else one row per step
    std::vector<T> a_bar;  // [steps*N]
    std::vector<T> b_bar;  // [steps*N]
    bool time_varying() const { return steps > 1; }
};

template <typename T>
DiscreteSsm<T> discretize_zoh(const SsmParams<T>& p) {
    int64_t n = static_cast<int64_t>(p.a_log.size());
    if (n == 0 || p.b.size() != p.a_log.size())
        throw ShapeError("discretize_zoh: a_log and b must have equal nonzero length");
    if (p.delta.empty()) throw ValueError("discretize_zoh: delta is empty");
    for (T d : p.delta)
        if (!(d > T(0)))
            throw ValueError("discretize_zoh: delta must be > 0, got " + std::to_string(static_cast<double>(d)));
    DiscreteSsm<T> out;
    out.n = n;
    out.steps = static_cast<int64_t>(p.delta.size());
    out.a_bar.resize(static_cast<size_t>(out.steps * n));
    out.b_bar.resize(static_cast<size_t>(out.steps * n));
    for (int64_t t = 0; t < out.steps; ++t) {
        T d = p.delta[static_cast<size_t>(t)];
        for (int64_t i = 0; i < n; ++i) {
            T a = -std::exp(p.a_log[static_cast<size_t>(i)]);
            T abar, factor;
            zoh_entry(d, a, abar, factor);
            out.a_bar[static_cast<size_t>(t * n + i)] = abar;
            out.b_bar[static_cast<size_t>(t * n + i)] = factor * p.b[static_cast<size_t>(i)];
        }
    }
    return out;
}

// h_t = Abar h_{t-1} + Bbar x_t, y_t = c . h_t, h_0 = 0.
template <typename T>
std::vector<T> scan_recurrent(const DiscreteSsm<T>& d, const std::vector<T>& c,
                              const std::vector<T>& x) {
    if (static_cast<int64_t>(c.size()) != d.n)
        throw ShapeError("scan_recurrent: c has length " + std::to_string(c.size()) +
                         ", state dimension is " + std::to_string(d.n));
    int64_t L = static_cast<int64_t>(x.size());
    if (d.time_varying() && d.steps != L)
        throw ContractError("scan_recurrent: per-step parameters cover " +
                            std::to_string(d.steps) + " steps, input has " + std::to_string(L));
    std::vector<T> h(static_cast<size_t>(d.n), T(0));
    std::vector<T> y(static_cast<size_t>(L));
    for (int64_t t = 0; t < L; ++t) {
        const T* ab = d.a_bar.data() + (d.time_varying() ? t * d.n : 0);
        const T* bb = d.b_bar.data() + (d.time_varying() ? t * d.n : 0);
        T acc = T(0);
        for (int64_t i = 0; i < d.n; ++i) {
            h[static_cast<size_t>(i)] = ab[i] * h[static_cast<size_t>(i)] + bb[i] * x[static_cast<size_t>(t)];
            acc += c[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
        }
        y[static_cast<size_t>(t)] = acc;
    }
    return y;
}

// Kbar = (c.Bbar, c.Abar.Bbar, ..., c.Abar^{L-1}.Bbar), y = causal conv x * Kbar.
// Requires time-invariant parameters.
template <typename T>
std::vector<T> scan_convolutional(const DiscreteSsm<T>& d, const std::vector<T>& c,
                                  const std::vector<T>& x) {
    if (d.time_varying())
        throw ContractError(
            "scan_convolutional: convolution mode requires time-invariant parameters");
    if (static_cast<int64_t>(c.size()) != d.n)
        throw ShapeError("scan_convolutional: c has length " + std::to_string(c.size()) +
                         ", state dimension is " + std::to_string(d.n));
    int64_t L = static_cast<int64_t>(x.size());
    std::vector<T> kernel(static_cast<size_t>(L), T(0));
    std::vector<T> state(d.b_bar);  // Abar^j Bbar
    for (int64_t j = 0; j < L; ++j) {
        T acc = T(0);
        for (int64_t i = 0; i < d.n; ++i) acc += c[static_cast<size_t>(i)] * state[static_cast<size_t>(i)];
        kernel[static_cast<size_t>(j)] = acc;
        for (int64_t i = 0; i < d.n; ++i) state[static_cast<size_t>(i)] *= d.a_bar[static_cast<size_t>(i)];
    }
    std::vector<T> y(static_cast<size_t>(L), T(0));
    for (int64_t t = 0; t < L; ++t) {
        T acc = T(0);
        for (int64_t j = 0; j <= t; ++j) acc += kernel[static_cast<size_t>(j)] * x[static_cast<size_t>(t - j)];
        y[static_cast<size_t>(t)] = acc;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Selective scan: D independent N-state SSMs whose delta, B, C are linear
// functions of the input at each step. delta goes through a factorized
// projection (rank R) plus bias and softplus; B and C are shared across
// channels. Discretization is the per-step zero-order hold above, and the
// skip term y += d_skip * x is added at the end.
// ---------------------------------------------------------------------------

template <typename T>
struct SelectiveScanWeights {
    Tensor<T> a_log;       // [D,N]
    Tensor<T> d_skip;      // [D]
    Tensor<T> w_dt_in;     // [D,R]
    Tensor<T> w_dt_out;    // [R,D]
    Tensor<T> b_dt;        // [D]
    Tensor<T> w_b;         // [D,N]
    Tensor<T> b_b;         // [N]
    Tensor<T> w_c;         // [D,N]
    Tensor<T> b_c;         // [N]
};

namespace detail {

// Everything the selective-scan backward pass needs, captured once.
template <typename T>
struct SelectiveScanSaved {
    int64_t B, L, D, N, R;
    std::shared_ptr<std::vector<T>> x, s, delta, bt, ct, sproj, h;
    std::shared_ptr<std::vector<T>> a;  // A = -exp(a_log), [D,N]
    std::shared_ptr<std::vector<T>> a_log_v, d_skip_v, w_dt_in_v, w_dt_out_v, w_b_v, w_c_v;
    int xn, a_log_n, d_skip_n, w_dt_in_n, w_dt_out_n, b_dt_n, w_b_n, b_b_n, w_c_n, b_c_n;
};

// d(factor)/dA with factor = expm1(u)/A, u = delta*A. Uses a series around
// u = 0 where the closed form cancels catastrophically.
template <typename T>
inline T zoh_factor_da(T delta, T a, T u, T eu) {
    if (std::abs(u) < T(1e-4)) return delta * delta * (T(0.5) + u / T(3) + u * u / T(8));
    return (delta * eu * a - std::expm1(u)) / (a * a);
}

template <typename T>
void selective_scan_backward(Tape<T>& t, int self, const std::shared_ptr<SelectiveScanSaved<T>>& sv) {
    const auto& gy = t.grad_at(self);
    const int64_t B = sv->B, L = sv->L, D = sv->D, N = sv->N, R = sv->R;
    const auto& xv = *sv->x;
    const auto& svia = *sv->s;
    const auto& dv = *sv->delta;
    const auto& btv = *sv->bt;
    const auto& ctv = *sv->ct;
    const auto& hv = *sv->h;
    const auto& av = *sv->a;
    const auto& dskip = *sv->d_skip_v;

    std::vector<T> gs(static_cast<size_t>(B * L * D), T(0));
    std::vector<T> gbt(static_cast<size_t>(B * L * N), T(0));
    std::vector<T> gct(static_cast<size_t>(B * L * N), T(0));
    std::vector<T> ga(static_cast<size_t>(D * N), T(0));
    std::vector<T> gdskip(static_cast<size_t>(D), T(0));
    std::vector<T>* gx = sv->xn >= 0 ? &t.grad_buf(sv->xn) : nullptr;
    std::vector<T> gx_scan(static_cast<size_t>(B * L * D), T(0));  // also feeds projections below

    std::vector<T> hhat(static_cast<size_t>(N));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t d = 0; d < D; ++d) {
            std::fill(hhat.begin(), hhat.end(), T(0));
            const T* arow = av.data() + d * N;
            for (int64_t l = L - 1; l >= 0; --l) {
                int64_t yi = (b * L + l) * D + d;
                T gyv = gy[static_cast<size_t>(yi)];
                const T* hrow = hv.data() + ((b * D + d) * L + l) * N;
                const T* hprev = l > 0 ? hrow - N : nullptr;
                const T* btrow = btv.data() + (b * L + l) * N;
                const T* ctrow = ctv.data() + (b * L + l) * N;
                T* gbtrow = gbt.data() + (b * L + l) * N;
                T* gctrow = gct.data() + (b * L + l) * N;
                T xval = xv[static_cast<size_t>(yi)];
                T delta = dv[static_cast<size_t>(yi)];

                // y_l = sum_n ct . h_l + d_skip * x_l
                if (gyv != T(0)) {
                    for (int64_t n = 0; n < N; ++n) {
                        gctrow[n] += gyv * hrow[n];
                        hhat[static_cast<size_t>(n)] += gyv * ctrow[n];
                    }
                    gdskip[static_cast<size_t>(d)] += gyv * xval;
                    gx_scan[static_cast<size_t>(yi)] += gyv * dskip[static_cast<size_t>(d)];
                }

                // h_l = abar . h_{l-1} + factor * bt * x_l
                T gdelta = T(0);
                for (int64_t n = 0; n < N; ++n) {
                    T hh = hhat[static_cast<size_t>(n)];
                    T a = arow[n];
                    T u = delta * a;
                    T eu = std::exp(u);
                    T factor = (std::abs(u) < T(1e-12)) ? delta : std::expm1(u) / a;
                    T hp = hprev ? hprev[n] : T(0);
                    T gabar = hh * hp;
                    T gfac = hh * btrow[n] * xval;
                    gbtrow[n] += hh * factor * xval;
                    gx_scan[static_cast<size_t>(yi)] += hh * factor * btrow[n];
                    gdelta += gabar * a * eu + gfac * eu;
                    ga[static_cast<size_t>(d * N + n)] +=
                        gabar * delta * eu + gfac * zoh_factor_da(delta, a, u, eu);
                    hhat[static_cast<size_t>(n)] = eu * hh;  // adjoint flows to h_{l-1}
                }
                // delta = softplus(s), so dL/ds = dL/ddelta * sigmoid(s)
                gs[static_cast<size_t>(yi)] +=
                    gdelta * ops::sigmoid_scalar(svia[static_cast<size_t>(yi)]);
            }
        }
    }

    if (sv->d_skip_n >= 0) {
        auto& g = t.grad_buf(sv->d_skip_n);
        for (int64_t d = 0; d < D; ++d) g[static_cast<size_t>(d)] += gdskip[static_cast<size_t>(d)];
    }

    // delta projection chain: s = (x . w_dt_in) . w_dt_out + b_dt
    const auto& wdi = *sv->w_dt_in_v;
    const auto& wdo = *sv->w_dt_out_v;
    const auto& sp = *sv->sproj;
    int64_t rows = B * L;
    std::vector<T> gsp(static_cast<size_t>(rows * R), T(0));
    for (int64_t r = 0; r < rows; ++r) {
        const T* gsr = gs.data() + r * D;
        T* gspr = gsp.data() + r * R;
        for (int64_t k = 0; k < R; ++k) {
            const T* wp = wdo.data() + k * D;
            T acc = T(0);
            for (int64_t d = 0; d < D; ++d) acc += gsr[d] * wp[d];
            gspr[k] = acc;
        }
    }
    if (sv->w_dt_out_n >= 0) {
        auto& g = t.grad_buf(sv->w_dt_out_n);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t k = 0; k < R; ++k) {
                T spv = sp[static_cast<size_t>(r * R + k)];
                const T* gsr = gs.data() + r * D;
                T* gp = g.data() + k * D;
                for (int64_t d = 0; d < D; ++d) gp[d] += spv * gsr[d];
            }
    }
    if (sv->b_dt_n >= 0) {
        auto& g = t.grad_buf(sv->b_dt_n);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t d = 0; d < D; ++d) g[static_cast<size_t>(d)] += gs[static_cast<size_t>(r * D + d)];
    }
    if (sv->w_dt_in_n >= 0) {
        auto& g = t.grad_buf(sv->w_dt_in_n);
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * D;
            const T* gspr = gsp.data() + r * R;
            for (int64_t d = 0; d < D; ++d) {
                T* gp = g.data() + d * R;
                for (int64_t k = 0; k < R; ++k) gp[k] += xr[d] * gspr[k];
            }
        }
    }
    // B / C projection weights
    if (sv->w_b_n >= 0) {
        auto& g = t.grad_buf(sv->w_b_n);
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * D;
            const T* gb = gbt.data() + r * N;
            for (int64_t d = 0; d < D; ++d) {
                T* gp = g.data() + d * N;
                for (int64_t n = 0; n < N; ++n) gp[n] += xr[d] * gb[n];
            }
        }
    }
    if (sv->b_b_n >= 0) {
        auto& g = t.grad_buf(sv->b_b_n);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t n = 0; n < N; ++n) g[static_cast<size_t>(n)] += gbt[static_cast<size_t>(r * N + n)];
    }
    if (sv->w_c_n >= 0) {
        auto& g = t.grad_buf(sv->w_c_n);
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * D;
            const T* gc = gct.data() + r * N;
            for (int64_t d = 0; d < D; ++d) {
                T* gp = g.data() + d * N;
                for (int64_t n = 0; n < N; ++n) gp[n] += xr[d] * gc[n];
            }
        }
    }
    if (sv->b_c_n >= 0) {
        auto& g = t.grad_buf(sv->b_c_n);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t n = 0; n < N; ++n) g[static_cast<size_t>(n)] += gct[static_cast<size_t>(r * N + n)];
    }
    // input gradient: scan part + all projection parts
    if (gx) {
        const auto& wb = *sv->w_b_v;
        const auto& wc = *sv->w_c_v;
        for (int64_t r = 0; r < rows; ++r) {
            T* gxr = gx->data() + r * D;
            const T* gscanr = gx_scan.data() + r * D;
            const T* gspr = gsp.data() + r * R;
            const T* gb = gbt.data() + r * N;
            const T* gc = gct.data() + r * N;
            for (int64_t d = 0; d < D; ++d) {
                T acc = gscanr[d];
                const T* wdir = wdi.data() + d * R;
                for (int64_t k = 0; k < R; ++k) acc += gspr[k] * wdir[k];
                const T* wbr = wb.data() + d * N;
                const T* wcr = wc.data() + d * N;
                for (int64_t n = 0; n < N; ++n) acc += gb[n] * wbr[n] + gc[n] * wcr[n];
                gxr[d] += acc;
            }
        }
    }
    // A gradient through the -exp(a_log) parameterization: dA/da_log = A
    if (sv->a_log_n >= 0) {
        auto& g = t.grad_buf(sv->a_log_n);
        for (int64_t i = 0; i < D * N; ++i)
            g[static_cast<size_t>(i)] += ga[static_cast<size_t>(i)] * av[static_cast<size_t>(i)];
    }
}

}  // namespace detail

// x: [B,L,D] -> y: [B,L,D]
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const SelectiveScanWeights<T>& w) {
    if (x.rank() != 3)
        throw ShapeError("selective_scan: expected x [B,L,D], got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    if (w.a_log.rank() != 2 || w.a_log.dim(0) != D)
        throw ShapeError("selective_scan: a_log " + shape_str(w.a_log.shape()) +
                         " does not match channel count " + std::to_string(D));
    const int64_t N = w.a_log.dim(1);
    const int64_t R = w.w_dt_in.dim(1);
    if (w.w_dt_in.dim(0) != D || w.w_dt_out.dim(0) != R || w.w_dt_out.dim(1) != D ||
        w.b_dt.numel() != D || w.w_b.dim(0) != D || w.w_b.dim(1) != N || w.b_b.numel() != N ||
        w.w_c.dim(0) != D || w.w_c.dim(1) != N || w.b_c.numel() != N || w.d_skip.numel() != D)
        throw ShapeError("selective_scan: inconsistent projection shapes for D=" +
                         std::to_string(D) + ", N=" + std::to_string(N));

    const auto& xv = x.vec();
    const int64_t rows = B * L;

    // projections
    auto sproj = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * R), T(0));
    auto s = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * D));
    auto delta = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * D));
    auto bt = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * N));
    auto ct = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * N));
    {
        const auto& wdi = w.w_dt_in.vec();
        const auto& wdo = w.w_dt_out.vec();
        const auto& bdt = w.b_dt.vec();
        const auto& wb = w.w_b.vec();
        const auto& bb = w.b_b.vec();
        const auto& wc = w.w_c.vec();
        const auto& bc = w.b_c.vec();
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * D;
            T* spr = sproj->data() + r * R;
            for (int64_t d = 0; d < D; ++d) {
                T xd = xr[d];
                const T* wp = wdi.data() + d * R;
                for (int64_t k = 0; k < R; ++k) spr[k] += xd * wp[k];
            }
            T* sr = s->data() + r * D;
            for (int64_t d = 0; d < D; ++d) sr[d] = bdt[static_cast<size_t>(d)];
            for (int64_t k = 0; k < R; ++k) {
                T sk = spr[k];
                const T* wp = wdo.data() + k * D;
                for (int64_t d = 0; d < D; ++d) sr[d] += sk * wp[d];
            }
            T* btr = bt->data() + r * N;
            T* ctr = ct->data() + r * N;
            for (int64_t n = 0; n < N; ++n) {
                btr[n] = bb[static_cast<size_t>(n)];
                ctr[n] = bc[static_cast<size_t>(n)];
            }
            for (int64_t d = 0; d < D; ++d) {
                T xd = xr[d];
                const T* wbp = wb.data() + d * N;
                const T* wcp = wc.data() + d * N;
                for (int64_t n = 0; n < N; ++n) {
                    btr[n] += xd * wbp[n];
                    ctr[n] += xd * wcp[n];
                }
            }
            for (int64_t d = 0; d < D; ++d) {
                if (!std::isfinite(sr[d]))
                    throw NumericError("selective_scan: non-finite projection at step " +
                                       std::to_string(r % L));
                delta->data()[r * D + d] = softplus_scalar(sr[d]);
            }
            for (int64_t n = 0; n < N; ++n)
                if (!std::isfinite(btr[n]) || !std::isfinite(ctr[n]))
                    throw NumericError("selective_scan: non-finite projection at step " +
                                       std::to_string(r % L));
        }
    }

    // A = -exp(a_log)
    auto a = std::make_shared<std::vector<T>>(static_cast<size_t>(D * N));
    {
        const auto& al = w.a_log.vec();
        for (size_t i = 0; i < al.size(); ++i) (*a)[i] = -std::exp(al[i]);
    }

    // scan, saving the hidden states for the backward pass
    auto h = std::make_shared<std::vector<T>>(static_cast<size_t>(B * D * L * N));
    std::vector<T> out(static_cast<size_t>(rows * D));
    {
        const auto& dskip = w.d_skip.vec();
        std::vector<T> hcur(static_cast<size_t>(N));
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t d = 0; d < D; ++d) {
                std::fill(hcur.begin(), hcur.end(), T(0));
                const T* arow = a->data() + d * N;
                for (int64_t l = 0; l < L; ++l) {
                    int64_t xi = (b * L + l) * D + d;
                    T xval = xv[static_cast<size_t>(xi)];
                    T dl = (*delta)[static_cast<size_t>(xi)];
                    const T* btr = bt->data() + (b * L + l) * N;
                    const T* ctr = ct->data() + (b * L + l) * N;
                    T* hrow = h->data() + ((b * D + d) * L + l) * N;
                    T acc = T(0);
                    for (int64_t n = 0; n < N; ++n) {
                        T abar, factor;
                        zoh_entry(dl, arow[n], abar, factor);
                        T hn = abar * hcur[static_cast<size_t>(n)] + factor * btr[n] * xval;
                        hcur[static_cast<size_t>(n)] = hn;
                        hrow[n] = hn;
                        acc += ctr[n] * hn;
                    }
                    out[static_cast<size_t>(xi)] = acc + dskip[static_cast<size_t>(d)] * xval;
                }
            }
        }
    }

    Tape<T>* tp = merge_tapes<T>({&x, &w.a_log, &w.d_skip, &w.w_dt_in, &w.w_dt_out, &w.b_dt,
                                  &w.w_b, &w.b_b, &w.w_c, &w.b_c});
    if (!tp) return Tensor<T>(Shape{B, L, D}, std::move(out));

    auto sv = std::make_shared<detail::SelectiveScanSaved<T>>();
    sv->B = B;
    sv->L = L;
    sv->D = D;
    sv->N = N;
    sv->R = R;
    sv->x = x.store();
    sv->s = s;
    sv->delta = delta;
    sv->bt = bt;
    sv->ct = ct;
    sv->sproj = sproj;
    sv->h = h;
    sv->a = a;
    sv->a_log_v = w.a_log.store();
    sv->d_skip_v = w.d_skip.store();
    sv->w_dt_in_v = w.w_dt_in.store();
    sv->w_dt_out_v = w.w_dt_out.store();
    sv->w_b_v = w.w_b.store();
    sv->w_c_v = w.w_c.store();
    sv->xn = x.node();
    sv->a_log_n = w.a_log.node();
    sv->d_skip_n = w.d_skip.node();
    sv->w_dt_in_n = w.w_dt_in.node();
    sv->w_dt_out_n = w.w_dt_out.node();
    sv->b_dt_n = w.b_dt.node();
    sv->w_b_n = w.w_b.node();
    sv->b_b_n = w.b_b.node();
    sv->w_c_n = w.w_c.node();
    sv->b_c_n = w.b_c.node();
    return tp->emit(Shape{B, L, D}, std::move(out), [sv](Tape<T>& t, int self) {
        detail::selective_scan_backward(t, self, sv);
    });
}

}  // namespace vssmseg::ssm
