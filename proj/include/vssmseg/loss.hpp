#pragma once

#include <cmath>
#include <memory>

#include "vssmseg/ops.hpp"
#include "vssmseg/tensor.hpp"

namespace vssmseg::loss {

// Composite BCE + soft-Dice loss on logits against a {0,1} mask.
//   p = clamp(sigmoid(z), eps, 1-eps)
//   bce = -mean(y log p + (1-y) log(1-p))
//   dice = 1 - (2 sum(p y) + smooth) / (sum p + sum y + smooth)
//   loss = lambda1 * bce + lambda2 * dice
// Fused forward/backward; the clamp gates the gradient to zero where active.
template <typename T>
Tensor<T> bce_dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T lambda1 = T(1),
                        T lambda2 = T(1), T smooth = T(1), T eps = T(1e-7)) {
    if (logits.shape() != target.shape())
        throw ShapeError("bce_dice_loss: logits " + shape_str(logits.shape()) +
                         " vs target " + shape_str(target.shape()));
    const auto& zv = logits.vec();
    const auto& yv = target.vec();
    const int64_t n = logits.numel();
    if (n == 0) throw ShapeError("bce_dice_loss: empty tensors");
    for (int64_t i = 0; i < n; ++i)
        if (yv[static_cast<size_t>(i)] != T(0) && yv[static_cast<size_t>(i)] != T(1))
            throw ContractError("bce_dice_loss: target must be binary, found " +
                                std::to_string(static_cast<double>(yv[static_cast<size_t>(i)])));

    auto p = std::make_shared<std::vector<T>>(static_cast<size_t>(n));   // raw sigmoid
    auto pc = std::make_shared<std::vector<T>>(static_cast<size_t>(n));  // clamped
    T bce = T(0), inter = T(0), psum = T(0), ysum = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T pr = ops::sigmoid_scalar(zv[static_cast<size_t>(i)]);
        T prc = pr < eps ? eps : (pr > T(1) - eps ? T(1) - eps : pr);
        (*p)[static_cast<size_t>(i)] = pr;
        (*pc)[static_cast<size_t>(i)] = prc;
        T y = yv[static_cast<size_t>(i)];
        bce -= y * std::log(prc) + (T(1) - y) * std::log(T(1) - prc);
        inter += prc * y;
        psum += prc;
        ysum += y;
    }
    bce /= static_cast<T>(n);
    T num = T(2) * inter + smooth;
    T den = psum + ysum + smooth;
    T dice = T(1) - num / den;
    T total = lambda1 * bce + lambda2 * dice;

    Tape<T>* tp = merge_tapes<T>({&logits});
    if (!tp) return Tensor<T>::scalar(total);
    int zn = logits.node();
    auto ys = target.store();
    return tp->emit(Shape{}, std::vector<T>{total},
                    [zn, ys, p, pc, n, lambda1, lambda2, eps, num, den](Tape<T>& t, int self) {
                        const auto& go = t.grad_at(self);
                        if (zn < 0) return;
                        auto& gz = t.grad_buf(zn);
                        const auto& yv = *ys;
                        T g = go[0];
                        for (int64_t i = 0; i < n; ++i) {
                            T pr = (*p)[static_cast<size_t>(i)];
                            T prc = (*pc)[static_cast<size_t>(i)];
                            if (pr != prc) continue;  // clamp active, gradient blocked
                            T y = yv[static_cast<size_t>(i)];
                            T dbce = -(y / prc - (T(1) - y) / (T(1) - prc)) / static_cast<T>(n);
                            T ddice = (num - T(2) * y * den) / (den * den);
                            gz[static_cast<size_t>(i)] +=
                                g * (lambda1 * dbce + lambda2 * ddice) * pr * (T(1) - pr);
                        }
                    });
}

}  // namespace vssmseg::loss
