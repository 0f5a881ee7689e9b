#pragma once

#include <algorithm>
#include <deque>
#include <numeric>
#include <span>
#include <vector>

#include "blockmem/types.hpp"

namespace blockmem {

/// Running representative-score sums for the tokens that still have queries
/// ahead of them. A token at position m collects q_{m+j}·k_m over the l_L
/// queries that follow it, summed across heads; the finalized score divides
/// by l_L regardless of how many queries actually arrived, so tokens near
/// the end of a stream score proportionally lower.
///
/// Sums are kept in double so the finalized value agrees with a from-scratch
/// recomputation to well under engine-precision rounding.
template <typename Scalar>
class ScoreAccumulator {
public:
    explicit ScoreAccumulator(Index local_size) : local_size_(local_size) {}

    Index pending_begin() const { return lo_; }
    Index pending_end() const { return hi_; }
    Index next_query_abs() const { return next_query_abs_; }

    /// Queries already accumulated for pending token m; never exceeds l_L.
    Index count(Index m) const {
        return std::clamp<Index>(next_query_abs_ - 1 - m, 0, local_size_);
    }

    /// Feeds one batch of queries. `pending_keys` must hold, per head, the
    /// key rows of every pending token including the batch itself, i.e. rows
    /// for abs [pending_begin(), batch end). Batches must arrive in stream
    /// order.
    void accumulate(const TokenBatch<Scalar>& queries,
                    const std::vector<Eigen::Ref<const Mat<Scalar>>>& pending_keys) {
        const Index s = queries.start_abs;
        const Index l_x = queries.size();
        if (s != next_query_abs_)
            throw StreamError("ScoreAccumulator: out-of-order query batch");
        if (hi_ != s) throw StreamError("ScoreAccumulator: pending range out of sync");
        hi_ = s + l_x;
        sums_.resize(sums_.size() + static_cast<std::size_t>(l_x), 0.0);

        const Index n_pending = hi_ - lo_;
        if (pending_keys.front().rows() != n_pending)
            throw StreamError("ScoreAccumulator: pending keys do not cover range");

        Mat<double> dots(l_x, n_pending);
        dots.setZero();
        for (std::size_t h = 0; h < pending_keys.size(); ++h)
            dots.noalias() += queries.q[h].template cast<double>() *
                              pending_keys[h].template cast<double>().transpose();

        for (Index j = 0; j < n_pending; ++j) {
            const Index m = lo_ + j;
            // query rows i with m + 1 <= s + i <= m + l_L
            const Index first = std::max<Index>(0, m + 1 - s);
            const Index last = std::min<Index>(l_x - 1, m + local_size_ - s);
            if (first > last) continue;
            sums_[static_cast<std::size_t>(j)] +=
                dots.block(first, j, last - first + 1, 1).sum();
        }
        next_query_abs_ = hi_;
    }

    /// Pops the n oldest pending tokens, returning their finalized scores.
    std::vector<Scalar> finalize_front(Index n) {
        if (n > hi_ - lo_) throw StreamError("ScoreAccumulator: finalize beyond range");
        std::vector<Scalar> scores;
        scores.reserve(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i)
            scores.push_back(static_cast<Scalar>(sums_[static_cast<std::size_t>(i)] /
                                                 static_cast<double>(local_size_)));
        sums_.erase(sums_.begin(), sums_.begin() + static_cast<std::ptrdiff_t>(n));
        lo_ += n;
        return scores;
    }

private:
    Index local_size_;
    Index lo_ = 0, hi_ = 0;
    Index next_query_abs_ = 0;
    std::deque<double> sums_;  // aligned with [lo_, hi_)
};

/// Picks the min(r_k, n) highest-scored token indices; ties go to the lower
/// index and the result is sorted by position.
template <typename Scalar>
inline std::vector<Index> select_representatives(std::span<const Scalar> scores,
                                                 Index r_k) {
    const Index n = static_cast<Index>(scores.size());
    if (n == 0) throw StreamError("select_representatives: empty unit");
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index(0));
    const Index take = std::min(r_k, n);
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                      [&](Index a, Index b) {
                          if (scores[static_cast<std::size_t>(a)] !=
                              scores[static_cast<std::size_t>(b)])
                              return scores[static_cast<std::size_t>(a)] >
                                     scores[static_cast<std::size_t>(b)];
                          return a < b;
                      });
    idx.resize(static_cast<std::size_t>(take));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace blockmem
