#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "blockmem/rotary.hpp"
#include "blockmem/types.hpp"

namespace blockmem {

enum class Segment { initial, retrieved, local };

/// Effective relative distance between a query and a context token.
/// Clamped mode pins every token of the initial and retrieved segments to
/// exactly local_size and caps local/in-batch distances there, so no
/// effective distance ever exceeds the local window length.
inline Index effective_distance(PositionMode mode, Index local_size,
                                Index query_abs, Index key_abs, Segment seg) {
    const Index true_dist = query_abs - key_abs;
    if (mode == PositionMode::absolute) return true_dist;
    if (seg == Segment::initial || seg == Segment::retrieved) return local_size;
    return std::min(true_dist, local_size);
}

/// One contiguous piece of the composed context window.
template <typename Scalar>
struct SegmentView {
    Segment kind = Segment::local;
    Index start_abs = 0;
    std::int64_t unit_id = -1;  // >= 0 only for retrieved units
    std::vector<Eigen::Ref<const Mat<Scalar>>> keys;    // per head [n, head_dim]
    std::vector<Eigen::Ref<const Mat<Scalar>>> values;  // per head [n, value_dim]

    Index size() const { return keys.empty() ? 0 : keys.front().rows(); }
};

/// Ordered view over the window segments a batch attends to. Segments appear
/// in document order: initial, retrieved units, local.
template <typename Scalar>
struct WindowView {
    std::vector<SegmentView<Scalar>> segments;

    Index total_tokens() const {
        Index n = 0;
        for (const auto& s : segments) n += s.size();
        return n;
    }
};

/// Effective distances for every (query row, attendable token) pair; window
/// columns first in segment order, then the l_X in-batch columns. Masked
/// in-batch pairs (key after query) hold -1.
using PositionAssignment = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
inline PositionAssignment assign_positions(const WindowView<Scalar>& window,
                                           const TokenBatch<Scalar>& batch,
                                           PositionMode mode, Index local_size) {
    const Index l_x = batch.size();
    const Index n_ctx = window.total_tokens();
    PositionAssignment d(l_x, n_ctx + l_x);
    for (Index i = 0; i < l_x; ++i) {
        const Index q_abs = batch.start_abs + i;
        Index col = 0;
        for (const auto& seg : window.segments) {
            for (Index j = 0; j < seg.size(); ++j, ++col)
                d(i, col) = effective_distance(mode, local_size, q_abs,
                                               seg.start_abs + j, seg.kind);
        }
        for (Index j = 0; j < l_x; ++j, ++col)
            d(i, col) = j > i ? Index(-1)
                              : effective_distance(mode, local_size, q_abs,
                                                   batch.start_abs + j, Segment::local);
    }
    return d;
}

template <typename Scalar>
struct AttentionOutput {
    std::vector<Mat<Scalar>> out;  // per head [l_X, value_dim]
    // Per head [l_X, n_ctx + l_X] softmax weights, present when requested.
    std::optional<std::vector<Mat<Scalar>>> weights;
    // Column layout of the score/weight matrices.
    std::vector<std::pair<Index, Index>> segment_cols;  // (first column, size)
    Index batch_col = 0;
};

namespace detail {

// Rows of `scores` whose true distance to this column's token exceeds the
// window get the constant-distance value instead. `capped` holds just the
// n_cols columns starting at scores column col0.
template <typename Scalar>
inline void apply_distance_cap(Mat<Scalar>& scores, const Mat<Scalar>& capped,
                               Index col0, Index n_cols, Index col0_abs,
                               Index batch_start, Index local_size) {
    for (Index j = 0; j < n_cols; ++j) {
        const Index key_abs = col0_abs + j;
        // rows i with (batch_start + i) - key_abs > local_size
        const Index first = std::max<Index>(0, local_size + key_abs - batch_start + 1);
        if (first >= scores.rows()) continue;
        const Index n = scores.rows() - first;
        scores.block(first, col0 + j, n, 1) = capped.block(first, j, n, 1);
    }
}

}  // namespace detail

/// Scaled dot-product attention of `batch` over `window` plus the causal
/// prefix of the batch itself. Rotary factors are applied at call time from
/// effective distances; stored keys stay untouched.
template <typename Scalar>
inline AttentionOutput<Scalar> attend(const TokenBatch<Scalar>& batch,
                                      const WindowView<Scalar>& window,
                                      PositionMode mode, Index local_size,
                                      bool emit_weights = false) {
    const int n_heads = batch.n_heads();
    const Index l_x = batch.size();
    if (l_x < 1) throw StreamError("attend: empty batch");
    const int head_dim = static_cast<int>(batch.q.front().cols());
    const int value_dim = static_cast<int>(batch.v.front().cols());
    const Index n_ctx = window.total_tokens();
    const Index n_all = n_ctx + l_x;

    AttentionOutput<Scalar> result;
    result.out.reserve(n_heads);
    if (emit_weights) result.weights.emplace();
    {
        Index col = 0;
        for (const auto& seg : window.segments) {
            result.segment_cols.emplace_back(col, seg.size());
            col += seg.size();
        }
        result.batch_col = col;
    }

    const Scalar scale = Scalar(1) / std::sqrt(Scalar(head_dim));
    const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

    for (int h = 0; h < n_heads; ++h) {
        for (const auto& seg : window.segments) {
            if (static_cast<int>(seg.keys[h].cols()) != head_dim ||
                static_cast<int>(seg.values[h].cols()) != value_dim)
                throw StreamError("attend: window/batch dimension mismatch");
        }

        Mat<Scalar> scores(l_x, n_all);
        const Mat<Scalar>& q = batch.q[h];

        if (mode == PositionMode::absolute) {
            const Mat<Scalar> q_abs = rotate_by_positions<Scalar>(q, batch.start_abs);
            Index col = 0;
            for (const auto& seg : window.segments) {
                scores.middleCols(col, seg.size()).noalias() =
                    q_abs * rotate_by_positions<Scalar>(seg.keys[h], seg.start_abs)
                                .transpose();
                col += seg.size();
            }
            scores.middleCols(col, l_x).noalias() =
                q_abs * rotate_by_positions<Scalar>(batch.k[h], batch.start_abs)
                            .transpose();
        } else {
            const Mat<Scalar> q_clamp = rotate_by_constant<Scalar>(q, local_size);
            const Mat<Scalar> q_abs = rotate_by_positions<Scalar>(q, batch.start_abs);
            Index col = 0;
            for (const auto& seg : window.segments) {
                if (seg.kind != Segment::local) {
                    // whole segment sits at the clamped distance
                    scores.middleCols(col, seg.size()).noalias() =
                        q_clamp * seg.keys[h].transpose();
                } else {
                    scores.middleCols(col, seg.size()).noalias() =
                        q_abs *
                        rotate_by_positions<Scalar>(seg.keys[h], seg.start_abs)
                            .transpose();
                    const Index max_dist =
                        (batch.start_abs + l_x - 1) - seg.start_abs;
                    if (max_dist > local_size) {
                        Mat<Scalar> capped(l_x, seg.size());
                        capped.noalias() = q_clamp * seg.keys[h].transpose();
                        detail::apply_distance_cap(scores, capped, col, seg.size(),
                                                   seg.start_abs, batch.start_abs,
                                                   local_size);
                    }
                }
                col += seg.size();
            }
            scores.middleCols(col, l_x).noalias() =
                q_abs * rotate_by_positions<Scalar>(batch.k[h], batch.start_abs)
                            .transpose();
            if (l_x - 1 > local_size) {
                Mat<Scalar> capped(l_x, l_x);
                capped.noalias() = q_clamp * batch.k[h].transpose();
                detail::apply_distance_cap(scores, capped, col, l_x,
                                           batch.start_abs, batch.start_abs,
                                           local_size);
            }
        }

        scores *= scale;
        for (Index i = 0; i < l_x; ++i)
            for (Index j = i + 1; j < l_x; ++j) scores(i, n_ctx + j) = neg_inf;

        // rowwise softmax with max subtraction
        Mat<Scalar> weights(l_x, n_all);
        for (Index i = 0; i < l_x; ++i) {
            const Index valid = n_ctx + i + 1;
            auto row = scores.row(i).head(valid);
            const Scalar m = row.maxCoeff();
            weights.row(i).head(valid) = (row.array() - m).exp();
            weights.row(i).tail(n_all - valid).setZero();
            weights.row(i) /= weights.row(i).sum();
        }

        Mat<Scalar> out(l_x, value_dim);
        out.setZero();
        Index col = 0;
        for (const auto& seg : window.segments) {
            out.noalias() += weights.middleCols(col, seg.size()) * seg.values[h];
            col += seg.size();
        }
        out.noalias() += weights.middleCols(col, l_x) * batch.v[h];
        result.out.push_back(std::move(out));
        if (emit_weights) result.weights->push_back(std::move(weights));
    }
    return result;
}

}  // namespace blockmem
