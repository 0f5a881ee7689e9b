#pragma once

#include <cmath>

#include "blockmem/types.hpp"

namespace blockmem {

inline constexpr double kRotaryBase = 10000.0;

/// Pairwise rotation factors for a contiguous run of positions. Angles are
/// computed in double regardless of Scalar so large positions do not lose
/// precision before the trig call; only the resulting factors are narrowed.
template <typename Scalar>
struct RotaryTable {
    Mat<Scalar> cos_f;  // [n, head_dim / 2]
    Mat<Scalar> sin_f;

    static RotaryTable make(Index start_pos, Index n, int head_dim,
                            double base = kRotaryBase) {
        const int pairs = head_dim / 2;
        RotaryTable t;
        t.cos_f.resize(n, pairs);
        t.sin_f.resize(n, pairs);
        for (int a = 0; a < pairs; ++a) {
            const double freq = std::pow(base, -2.0 * a / head_dim);
            for (Index i = 0; i < n; ++i) {
                const double angle = static_cast<double>(start_pos + i) * freq;
                t.cos_f(i, a) = static_cast<Scalar>(std::cos(angle));
                t.sin_f(i, a) = static_cast<Scalar>(std::sin(angle));
            }
        }
        return t;
    }
};

/// Rotates row r of `x` by the factors in row `table_row`. Component pairs
/// (2a, 2a+1) are rotated together; a trailing odd component is left as is.
template <typename Scalar>
inline void rotate_row(Eigen::Ref<Mat<Scalar>> x, Index r,
                       const RotaryTable<Scalar>& t, Index table_row) {
    const int pairs = static_cast<int>(t.cos_f.cols());
    for (int a = 0; a < pairs; ++a) {
        const Scalar c = t.cos_f(table_row, a);
        const Scalar s = t.sin_f(table_row, a);
        const Scalar x0 = x(r, 2 * a);
        const Scalar x1 = x(r, 2 * a + 1);
        x(r, 2 * a) = x0 * c - x1 * s;
        x(r, 2 * a + 1) = x0 * s + x1 * c;
    }
}

/// Rotates row i of `x` by position start_pos + i.
template <typename Scalar>
inline Mat<Scalar> rotate_by_positions(const Eigen::Ref<const Mat<Scalar>>& x,
                                       Index start_pos) {
    Mat<Scalar> out = x;
    const auto t =
        RotaryTable<Scalar>::make(start_pos, x.rows(), static_cast<int>(x.cols()));
    for (Index i = 0; i < out.rows(); ++i) rotate_row<Scalar>(out, i, t, i);
    return out;
}

/// Rotates every row of `x` by the same position.
template <typename Scalar>
inline Mat<Scalar> rotate_by_constant(const Eigen::Ref<const Mat<Scalar>>& x,
                                      Index pos) {
    Mat<Scalar> out = x;
    const auto t = RotaryTable<Scalar>::make(pos, 1, static_cast<int>(x.cols()));
    for (Index i = 0; i < out.rows(); ++i) rotate_row<Scalar>(out, i, t, 0);
    return out;
}

}  // namespace blockmem
