#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "blockmem/types.hpp"

namespace blockmem::oracle {

/// Full q/k/v rows of one layer, double precision.
struct SequenceData {
    std::vector<Mat<double>> q, k, v;  // per head [n, head_dim] / [n, value_dim]

    Index length() const { return q.empty() ? 0 : q.front().rows(); }
    int n_heads() const { return static_cast<int>(q.size()); }
};

struct OracleReport {
    double max_abs_err = 0.0;
    double mean_abs_err = 0.0;
    std::uint64_t compared = 0;
    std::uint64_t mismatches = 0;  // entries over tolerance
    double tolerance = 0.0;

    bool ok() const { return mismatches == 0; }
};

namespace detail {

inline Vec<double> rotate(const Vec<double>& x, Index pos, double base = 10000.0) {
    Vec<double> out = x;
    const int pairs = static_cast<int>(x.size()) / 2;
    for (int a = 0; a < pairs; ++a) {
        const double angle = static_cast<double>(pos) * std::pow(base, -2.0 * a /
                                                                 static_cast<double>(x.size()));
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = x(2 * a);
        const double x1 = x(2 * a + 1);
        out(2 * a) = x0 * c - x1 * s;
        out(2 * a + 1) = x0 * s + x1 * c;
    }
    return out;
}

inline void softmax_inplace(std::vector<double>& logits) {
    double m = logits.front();
    for (double v : logits) m = std::max(m, v);
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

}  // namespace detail

/// Naive causal attention over the whole sequence: every token attends to all
/// of its predecessors and itself, one query at a time, no chunking and no
/// cache. Clamped mode caps every relative distance at local_size.
inline std::vector<Mat<double>> dense_attention(const SequenceData& seq,
                                                PositionMode mode, Index local_size) {
    const Index n = seq.length();
    const int value_dim = static_cast<int>(seq.v.front().cols());
    const int head_dim = static_cast<int>(seq.q.front().cols());
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    std::vector<Mat<double>> out;
    for (int h = 0; h < seq.n_heads(); ++h) {
        Mat<double> o(n, value_dim);
        for (Index i = 0; i < n; ++i) {
            const Vec<double> q_abs = detail::rotate(seq.q[h].row(i).transpose(), i);
            const Vec<double> q_cap =
                mode == PositionMode::clamped
                    ? detail::rotate(seq.q[h].row(i).transpose(), local_size)
                    : Vec<double>();
            std::vector<double> logits(static_cast<std::size_t>(i) + 1);
            for (Index j = 0; j <= i; ++j) {
                const bool cap = mode == PositionMode::clamped && i - j > local_size;
                const double s =
                    cap ? q_cap.dot(seq.k[h].row(j).transpose())
                        : q_abs.dot(detail::rotate(seq.k[h].row(j).transpose(), j));
                logits[static_cast<std::size_t>(j)] = s * scale;
            }
            detail::softmax_inplace(logits);
            Vec<double> acc = Vec<double>::Zero(value_dim);
            for (Index j = 0; j <= i; ++j)
                acc += logits[static_cast<std::size_t>(j)] * seq.v[h].row(j).transpose();
            o.row(i) = acc.transpose();
        }
        out.push_back(std::move(o));
    }
    return out;
}

/// Replays the streaming schedule from its arithmetic alone and attends over
/// exactly the tokens a full-retrieval engine run exposes: pinned initial
/// tokens, every packed unit, the sliding window and the causal batch prefix.
/// Tokens evicted but still waiting in a partial block are not visible.
inline std::vector<Mat<double>> windowed_attention_reference(
    const SequenceData& seq, const std::vector<Index>& schedule, Index init_size,
    Index local_size, Index unit_size, PositionMode mode) {
    const Index n = seq.length();
    const int value_dim = static_cast<int>(seq.v.front().cols());
    const int head_dim = static_cast<int>(seq.q.front().cols());
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    std::vector<Mat<double>> out;
    for (int h = 0; h < seq.n_heads(); ++h)
        out.emplace_back(Mat<double>::Zero(n, value_dim));

    Index fed = 0;
    for (Index batch : schedule) {
        // window composition before this batch is appended
        const Index local_begin = std::max<Index>(0, fed - local_size);
        const Index init_len = std::min(init_size, local_begin);
        const Index evicted = std::max<Index>(0, local_begin - init_size);
        const Index packed = evicted - evicted % unit_size;

        std::vector<Index> visible;
        for (Index j = 0; j < init_len; ++j) visible.push_back(j);
        for (Index j = init_size; j < init_size + packed; ++j) visible.push_back(j);
        for (Index j = local_begin; j < fed; ++j) visible.push_back(j);

        for (int h = 0; h < seq.n_heads(); ++h) {
            for (Index bi = 0; bi < batch; ++bi) {
                const Index i = fed + bi;
                const Vec<double> q_abs = detail::rotate(seq.q[h].row(i).transpose(), i);
                const Vec<double> q_cap =
                    detail::rotate(seq.q[h].row(i).transpose(), local_size);
                std::vector<double> logits;
                std::vector<Index> cols;
                for (Index j : visible) {
                    const bool far = j < local_begin;  // initial or packed unit
                    double s;
                    if (mode == PositionMode::clamped) {
                        s = (far || i - j > local_size)
                                ? q_cap.dot(seq.k[h].row(j).transpose())
                                : q_abs.dot(detail::rotate(seq.k[h].row(j).transpose(), j));
                    } else {
                        s = q_abs.dot(detail::rotate(seq.k[h].row(j).transpose(), j));
                    }
                    logits.push_back(s * scale);
                    cols.push_back(j);
                }
                for (Index j = fed; j <= i; ++j) {  // causal batch prefix
                    double s;
                    if (mode == PositionMode::clamped && i - j > local_size)
                        s = q_cap.dot(seq.k[h].row(j).transpose());
                    else
                        s = q_abs.dot(detail::rotate(seq.k[h].row(j).transpose(), j));
                    logits.push_back(s * scale);
                    cols.push_back(j);
                }
                detail::softmax_inplace(logits);
                Vec<double> acc = Vec<double>::Zero(value_dim);
                for (std::size_t t = 0; t < cols.size(); ++t)
                    acc += logits[t] * seq.v[h].row(cols[t]).transpose();
                out[static_cast<std::size_t>(h)].row(i) = acc.transpose();
            }
        }
        fed += batch;
    }
    return out;
}

/// Representative scores straight from the definition: the mean over the
/// following local_size query rows of the cross-head dot-product sum, with a
/// fixed denominator even when the stream ends early.
inline std::vector<double> batch_repr_scores(const SequenceData& seq, Index local_size) {
    const Index n = seq.length();
    std::vector<double> r(static_cast<std::size_t>(n), 0.0);
    for (Index m = 0; m < n; ++m) {
        double sum = 0.0;
        for (Index j = 1; j <= local_size && m + j < n; ++j)
            for (int h = 0; h < seq.n_heads(); ++h)
                sum += seq.q[h].row(m + j).dot(seq.k[h].row(m));
        r[static_cast<std::size_t>(m)] = sum / static_cast<double>(local_size);
    }
    return r;
}

/// Indices of the k largest values, largest first; ties go to the lower index.
inline std::vector<Index> argsort_topk(const std::vector<double>& values, Index k) {
    std::vector<Index> idx(values.size());
    std::iota(idx.begin(), idx.end(), Index(0));
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
    });
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k)));
    return idx;
}

/// Relevance of a unit represented by the mean of its key vectors (the
/// averaged-representation ablation): sum over queries and heads of q·mean(k).
inline double mean_repr_relevance(const std::vector<Mat<double>>& unit_keys,
                                  const std::vector<Mat<double>>& queries) {
    double total = 0.0;
    for (std::size_t h = 0; h < unit_keys.size(); ++h) {
        const Vec<double> mean = unit_keys[h].colwise().mean().transpose();
        total += (queries[h] * mean).sum();
    }
    return total;
}

/// Elementwise comparison of engine output (cast up by the caller) against a
/// reference, both as per-head matrices.
inline OracleReport compare(const std::vector<Mat<double>>& actual,
                            const std::vector<Mat<double>>& expected, double tol) {
    OracleReport rep;
    rep.tolerance = tol;
    double total = 0.0;
    for (std::size_t h = 0; h < actual.size(); ++h) {
        const Mat<double> diff = (actual[h] - expected[h]).cwiseAbs();
        rep.max_abs_err = std::max(rep.max_abs_err, diff.maxCoeff());
        total += diff.sum();
        rep.compared += static_cast<std::uint64_t>(diff.size());
        rep.mismatches += static_cast<std::uint64_t>((diff.array() > tol).count());
    }
    rep.mean_abs_err = rep.compared ? total / static_cast<double>(rep.compared) : 0.0;
    return rep;
}

}  // namespace blockmem::oracle
