// Type-branch loss: 3 * focal + dice, with analytic gradients with respect
// to the predicted probabilities. Inputs are any Eigen array expressions of
// matching shape; for per-channel dice the columns are the channels.
#pragma once

#include <cmath>

#include <Eigen/Core>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/numeric.hpp"
#include "nucleoforge/types.hpp"

namespace nucleoforge {

inline constexpr double kProbabilityFloor = 1e-7;
inline constexpr double kFocalWeight = 3.0;

template <class Scalar>
struct LossValue {
    using Grad = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Scalar value = Scalar(0);
    Grad grad;  // d value / d p, same shape as p
};

struct DiceOptions {
    double eps = 1e-3;
    bool squared = true;       // sum p^2 + sum y^2 in the denominator, else sum p + sum y
    bool per_channel = false;  // mean of per-column dice, else one joint reduction
};

struct LossOptions {
    double gamma = 2.0;
    DiceOptions dice;
};

namespace detail {
template <class DP, class DY>
void check_same_shape(const Eigen::ArrayBase<DP>& p, const Eigen::ArrayBase<DY>& y) {
    if (p.rows() != y.rows() || p.cols() != y.cols())
        throw ShapeError("prediction and target shapes differ");
}
}  // namespace detail

/// Soft-target focal loss without class weighting:
/// mean over elements of -y (1-p)^gamma ln p, with p clamped to
/// [1e-7, 1 - 1e-7]. Clamped elements get zero gradient.
template <class DP, class DY>
LossValue<typename DP::Scalar> focal_loss(const Eigen::ArrayBase<DP>& p,
                                          const Eigen::ArrayBase<DY>& y,
                                          typename DP::Scalar gamma) {
    using Scalar = typename DP::Scalar;
    detail::check_same_shape(p, y);
    if (!(gamma >= Scalar(0))) throw ParameterError("focal gamma must be non-negative");
    LossValue<Scalar> out;
    out.grad.resize(p.rows(), p.cols());
    const auto n = static_cast<Scalar>(p.size());
    const Scalar lo = Scalar(kProbabilityFloor), hi = Scalar(1) - Scalar(kProbabilityFloor);
    CompensatedSum total;
    for (Index r = 0; r < p.rows(); ++r) {
        for (Index c = 0; c < p.cols(); ++c) {
            const Scalar raw = p(r, c);
            const Scalar pc = std::min(std::max(raw, lo), hi);
            const Scalar t = static_cast<Scalar>(y(r, c));
            const Scalar q = Scalar(1) - pc;
            const Scalar log_p = std::log(pc);
            const Scalar mod = std::pow(q, gamma);
            total.add(static_cast<double>(-t * mod * log_p));
            if (raw < lo || raw > hi) {
                out.grad(r, c) = Scalar(0);
            } else {
                const Scalar dmod = gamma == Scalar(0) ? Scalar(0) : -gamma * std::pow(q, gamma - 1);
                out.grad(r, c) = -t * (dmod * log_p + mod / pc) / n;
            }
        }
    }
    out.value = p.size() ? static_cast<Scalar>(total.value()) / n : Scalar(0);
    return out;
}

namespace detail {
// One dice term over a block; writes its gradient into `grad` scaled by `weight`.
template <class BP, class BY, class BG>
double dice_block(const BP& p, const BY& y, BG grad, const DiceOptions& opts, double weight) {
    CompensatedSum inter, sp, sy;
    for (Index r = 0; r < p.rows(); ++r)
        for (Index c = 0; c < p.cols(); ++c) {
            const double pv = static_cast<double>(p(r, c)), yv = static_cast<double>(y(r, c));
            inter.add(pv * yv);
            sp.add(opts.squared ? pv * pv : pv);
            sy.add(opts.squared ? yv * yv : yv);
        }
    const double num = 2.0 * inter.value() + opts.eps;
    const double den = sp.value() + sy.value() + opts.eps;
    for (Index r = 0; r < p.rows(); ++r)
        for (Index c = 0; c < p.cols(); ++c) {
            const double pv = static_cast<double>(p(r, c)), yv = static_cast<double>(y(r, c));
            const double dden = opts.squared ? 2.0 * pv : 1.0;
            const double g = -(2.0 * yv * den - num * dden) / (den * den);
            grad(r, c) = static_cast<typename BG::Scalar>(weight * g);
        }
    return 1.0 - num / den;
}
}  // namespace detail

/// 1 - (2 sum p y + eps) / (sum p^2 + sum y^2 + eps) by default.
template <class DP, class DY>
LossValue<typename DP::Scalar> dice_loss(const Eigen::ArrayBase<DP>& p,
                                         const Eigen::ArrayBase<DY>& y,
                                         const DiceOptions& opts = {}) {
    using Scalar = typename DP::Scalar;
    detail::check_same_shape(p, y);
    if (!(opts.eps > 0.0)) throw ParameterError("dice eps must be positive");
    LossValue<Scalar> out;
    out.grad.resize(p.rows(), p.cols());
    if (!opts.per_channel || p.cols() == 0) {
        out.value = static_cast<Scalar>(detail::dice_block(p, y, out.grad.block(0, 0, p.rows(), p.cols()), opts, 1.0));
        return out;
    }
    const double weight = 1.0 / static_cast<double>(p.cols());
    CompensatedSum total;
    for (Index c = 0; c < p.cols(); ++c)
        total.add(detail::dice_block(p.col(c), y.col(c), out.grad.col(c), opts, weight));
    out.value = static_cast<Scalar>(total.value() * weight);
    return out;
}

template <class Scalar>
struct TpBranchLoss : LossValue<Scalar> {
    Scalar focal = Scalar(0);
    Scalar dice = Scalar(0);
};

/// 3 * focal + dice.
template <class DP, class DY>
TpBranchLoss<typename DP::Scalar> tp_branch_loss(const Eigen::ArrayBase<DP>& p,
                                                 const Eigen::ArrayBase<DY>& y,
                                                 const LossOptions& opts = {}) {
    using Scalar = typename DP::Scalar;
    const auto f = focal_loss(p, y, static_cast<Scalar>(opts.gamma));
    const auto d = dice_loss(p, y, opts.dice);
    TpBranchLoss<Scalar> out;
    out.focal = f.value;
    out.dice = d.value;
    out.value = Scalar(kFocalWeight) * f.value + d.value;
    out.grad = Scalar(kFocalWeight) * f.grad + d.grad;
    return out;
}

}  // namespace nucleoforge
