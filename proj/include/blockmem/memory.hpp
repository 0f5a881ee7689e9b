#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "blockmem/repr_score.hpp"
#include "blockmem/types.hpp"

namespace blockmem {

enum class Tier { hot, cold };

/// A block of consecutive evicted tokens plus its representative keys and
/// eviction-priority state.
template <typename Scalar>
struct MemoryUnit {
    std::int64_t unit_id = 0;
    Index start_abs = 0;
    std::vector<Mat<Scalar>> keys;    // per head [size, head_dim]
    std::vector<Mat<Scalar>> values;  // per head [size, value_dim]
    std::vector<Index> repr_abs;      // ascending abs_index of representatives
    std::vector<Mat<Scalar>> repr_keys;  // per head [n_repr, head_dim]
    double freq_score = 0.0;
    Tier tier = Tier::cold;

    Index size() const { return keys.empty() ? 0 : keys.front().rows(); }
    Index end_abs() const { return start_abs + size(); }

    std::size_t bytes() const {
        std::size_t per_token = 0;
        for (std::size_t h = 0; h < keys.size(); ++h)
            per_token += (static_cast<std::size_t>(keys[h].cols()) +
                          static_cast<std::size_t>(values[h].cols())) *
                         sizeof(Scalar);
        return per_token * static_cast<std::size_t>(size());
    }
};

/// Packs tokens leaving the local window into units of unit_size tokens.
/// A trailing partial block is held back until it fills or the stream ends.
template <typename Scalar>
class UnitPacker {
public:
    UnitPacker(Index unit_size, Index n_repr, int n_heads)
        : unit_size_(unit_size), n_repr_(n_repr) {
        keys_.resize(n_heads);
        values_.resize(n_heads);
    }

    Index pending_tokens() const { return static_cast<Index>(scores_.size()); }
    std::int64_t units_built() const { return next_unit_id_; }

    /// Appends evicted tokens (rows of per-head key/value blocks, already
    /// scored) and returns every full unit this completes.
    std::vector<MemoryUnit<Scalar>> add(Index start_abs,
                                        const std::vector<Mat<Scalar>>& keys,
                                        const std::vector<Mat<Scalar>>& values,
                                        std::span<const Scalar> scores) {
        const Index n = static_cast<Index>(scores.size());
        if (n == 0) return {};
        if (pending_tokens() == 0)
            pending_start_ = start_abs;
        else if (pending_start_ + pending_tokens() != start_abs)
            throw StreamError("UnitPacker: non-contiguous eviction");
        for (std::size_t h = 0; h < keys_.size(); ++h) {
            append_rows(keys_[h], keys[h]);
            append_rows(values_[h], values[h]);
        }
        scores_.insert(scores_.end(), scores.begin(), scores.end());

        std::vector<MemoryUnit<Scalar>> done;
        while (pending_tokens() >= unit_size_) done.push_back(cut_front(unit_size_));
        return done;
    }

    /// Flushes the held-back partial unit, if any (stream end).
    std::optional<MemoryUnit<Scalar>> flush() {
        if (pending_tokens() == 0) return std::nullopt;
        return cut_front(pending_tokens());
    }

private:
    static void append_rows(Mat<Scalar>& dst, const Mat<Scalar>& src) {
        if (dst.rows() == 0) {
            dst = src;
            return;
        }
        const Index old = dst.rows();
        dst.conservativeResize(old + src.rows(), Eigen::NoChange);
        dst.bottomRows(src.rows()) = src;
    }

    MemoryUnit<Scalar> cut_front(Index n) {
        MemoryUnit<Scalar> u;
        u.unit_id = next_unit_id_++;
        u.start_abs = pending_start_;
        const int n_heads = static_cast<int>(keys_.size());
        u.keys.reserve(n_heads);
        u.values.reserve(n_heads);
        for (int h = 0; h < n_heads; ++h) {
            u.keys.push_back(keys_[h].topRows(n));
            u.values.push_back(values_[h].topRows(n));
            const Index rest = keys_[h].rows() - n;
            keys_[h] = Mat<Scalar>(keys_[h].bottomRows(rest));
            values_[h] = Mat<Scalar>(values_[h].bottomRows(rest));
        }
        const auto repr = select_representatives<Scalar>(
            std::span<const Scalar>(scores_.data(), static_cast<std::size_t>(n)),
            n_repr_);
        u.repr_abs.reserve(repr.size());
        u.repr_keys.resize(static_cast<std::size_t>(n_heads));
        for (int h = 0; h < n_heads; ++h)
            u.repr_keys[h].resize(static_cast<Index>(repr.size()),
                                  u.keys[h].cols());
        for (std::size_t r = 0; r < repr.size(); ++r) {
            u.repr_abs.push_back(pending_start_ + repr[r]);
            for (int h = 0; h < n_heads; ++h)
                u.repr_keys[h].row(static_cast<Index>(r)) = u.keys[h].row(repr[r]);
        }
        scores_.erase(scores_.begin(), scores_.begin() + static_cast<std::ptrdiff_t>(n));
        pending_start_ += n;
        return u;
    }

    Index unit_size_;
    Index n_repr_;
    Index pending_start_ = 0;
    std::vector<Mat<Scalar>> keys_, values_;  // per head, pending rows
    std::vector<Scalar> scores_;
    std::int64_t next_unit_id_ = 0;
};

/// Relevance of one unit for the current queries: raw q·k dot products summed
/// over queries, representative keys and heads. No positional transform is
/// applied; lookup happens before positions are assigned.
template <typename Scalar>
inline double relevance(const TokenBatch<Scalar>& batch, const MemoryUnit<Scalar>& unit) {
    if (unit.repr_abs.empty()) throw StreamError("relevance: unit has no representatives");
    double total = 0.0;
    for (int h = 0; h < batch.n_heads(); ++h)
        total += (batch.q[h].template cast<double>() *
                  unit.repr_keys[h].template cast<double>().transpose())
                     .sum();
    return total;
}

struct CacheCounters {
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t loads = 0;      // cold -> hot transfers
    std::uint64_t evictions = 0;  // hot -> cold transfers
    std::uint64_t requested = 0;
};

struct TraceRecord {
    Index step = 0;
    std::int64_t unit_id = 0;
    bool hit = false;
};

/// Hot/cold store for memory units. Entries of every unit stay addressable
/// (the tiers model GPU/CPU placement, they do not move bytes), but only the
/// hot set counts against capacity. Representative keys of all units live in
/// a flat index that is always searchable without a tier transfer.
template <typename Scalar>
class TieredStore {
public:
    TieredStore(Index hot_capacity, double decay, int n_heads)
        : hot_capacity_(hot_capacity), decay_(decay) {
        repr_index_.resize(static_cast<std::size_t>(n_heads));
    }

    Index total_units() const { return static_cast<Index>(units_.size()); }
    const MemoryUnit<Scalar>& unit(std::int64_t id) const {
        return units_[static_cast<std::size_t>(id)];
    }
    const CacheCounters& counters() const { return counters_; }
    const std::vector<TraceRecord>& trace() const { return trace_; }
    Index hot_units() const { return static_cast<Index>(hot_.size()); }
    Index hot_capacity() const { return hot_capacity_; }

    std::size_t hot_bytes() const {
        std::size_t b = 0;
        for (auto id : hot_) b += units_[static_cast<std::size_t>(id)].bytes();
        return b;
    }

    Index peak_hot_units() const { return peak_hot_units_; }
    std::size_t peak_hot_bytes() const { return peak_hot_bytes_; }

    /// Takes ownership of a freshly packed unit; new units start cold.
    void add_unit(MemoryUnit<Scalar> u) {
        if (u.unit_id != static_cast<std::int64_t>(units_.size()))
            throw StreamError("TieredStore: unit ids must be sequential");
        u.tier = Tier::cold;
        const Index add = u.repr_keys.front().rows();
        for (std::size_t h = 0; h < repr_index_.size(); ++h) {
            auto& idx = repr_index_[h];
            if (idx.rows() < repr_rows_ + add) {
                const Index cap = std::max<Index>(2 * idx.rows(), repr_rows_ + add);
                idx.conservativeResize(cap, u.repr_keys[h].cols());
            }
            idx.middleRows(repr_rows_, add) = u.repr_keys[h].template cast<double>();
        }
        repr_spans_.emplace_back(repr_rows_, add);
        repr_rows_ += add;
        units_.push_back(std::move(u));
    }

    void begin_step(Index step_id) { step_ = step_id; }

    /// Relevance scores for every unit, in unit-id order.
    std::vector<double> relevance_all(const TokenBatch<Scalar>& batch) const {
        std::vector<double> rel(units_.size(), 0.0);
        if (units_.empty()) return rel;
        Vec<double> per_repr = Vec<double>::Zero(repr_rows_);
        for (int h = 0; h < batch.n_heads(); ++h) {
            // Sum over queries first: by bilinearity the double sum of dot
            // products collapses to one matrix-vector pass over the index.
            Vec<double> qsum =
                batch.q[h].template cast<double>().colwise().sum().transpose();
            per_repr.noalias() +=
                repr_index_[static_cast<std::size_t>(h)].topRows(repr_rows_) * qsum;
        }
        for (std::size_t u = 0; u < units_.size(); ++u) {
            const auto [off, len] = repr_spans_[u];
            rel[u] = per_repr.segment(off, len).sum();
        }
        return rel;
    }

    /// Top-k_m units by relevance (ties to the lower unit id), returned in
    /// unit-id order. Cold units in the result are transferred to the hot
    /// tier; a unit already hot counts as a hit.
    std::vector<std::int64_t> lookup(const TokenBatch<Scalar>& batch, Index k_m) {
        const Index take = std::min<Index>(k_m, total_units());
        if (take <= 0) return {};
        const auto rel = relevance_all(batch);
        std::vector<std::int64_t> ids(units_.size());
        std::iota(ids.begin(), ids.end(), std::int64_t(0));
        std::partial_sort(ids.begin(), ids.begin() + take, ids.end(),
                          [&](std::int64_t a, std::int64_t b) {
                              const double ra = rel[static_cast<std::size_t>(a)];
                              const double rb = rel[static_cast<std::size_t>(b)];
                              if (ra != rb) return ra > rb;
                              return a < b;
                          });
        ids.resize(static_cast<std::size_t>(take));
        std::sort(ids.begin(), ids.end());
        for (auto id : ids) {
            auto& u = units_[static_cast<std::size_t>(id)];
            counters_.requested++;
            if (u.tier == Tier::hot) {
                counters_.hits++;
                trace_.push_back({step_, id, true});
            } else {
                counters_.misses++;
                counters_.loads++;
                u.tier = Tier::hot;
                hot_.push_back(id);
                trace_.push_back({step_, id, false});
            }
        }
        return ids;
    }

    /// Frequency update for one step: every hot unit decays, attended units
    /// then receive this step's attention mass.
    void update_frequency(std::span<const std::pair<std::int64_t, double>> masses) {
        for (auto id : hot_) units_[static_cast<std::size_t>(id)].freq_score *= decay_;
        for (const auto& [id, mass] : masses) {
            auto& u = units_[static_cast<std::size_t>(id)];
            if (u.tier != Tier::hot)
                throw StreamError("update_frequency: mass for a unit that is not hot");
            u.freq_score += mass;
        }
    }

    /// Offloads lowest-frequency units (ties to the lower unit id) until the
    /// hot tier fits its capacity again.
    void enforce_capacity() {
        while (static_cast<Index>(hot_.size()) > hot_capacity_) {
            std::size_t worst = 0;
            for (std::size_t i = 1; i < hot_.size(); ++i) {
                const auto& a = units_[static_cast<std::size_t>(hot_[i])];
                const auto& b = units_[static_cast<std::size_t>(hot_[worst])];
                if (a.freq_score < b.freq_score ||
                    (a.freq_score == b.freq_score && hot_[i] < hot_[worst]))
                    worst = i;
            }
            units_[static_cast<std::size_t>(hot_[worst])].tier = Tier::cold;
            hot_[worst] = hot_.back();
            hot_.pop_back();
            counters_.evictions++;
        }
    }

    /// Marks the end of an engine step; residency peaks are sampled here.
    void note_step_boundary() {
        if (static_cast<Index>(hot_.size()) > hot_capacity_)
            throw StreamError("TieredStore: hot tier over capacity at step end");
        peak_hot_units_ = std::max<Index>(peak_hot_units_, hot_units());
        peak_hot_bytes_ = std::max(peak_hot_bytes_, hot_bytes());
    }

private:
    Index hot_capacity_;
    double decay_;
    std::vector<MemoryUnit<Scalar>> units_;
    std::vector<std::int64_t> hot_;
    std::vector<Mat<double>> repr_index_;  // per head [total repr, head_dim]
    std::vector<std::pair<Index, Index>> repr_spans_;  // per unit (offset, len)
    Index repr_rows_ = 0;
    CacheCounters counters_;
    std::vector<TraceRecord> trace_;
    Index step_ = 0;
    Index peak_hot_units_ = 0;
    std::size_t peak_hot_bytes_ = 0;
};

}  // namespace blockmem
