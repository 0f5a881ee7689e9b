#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "blockmem/memory.hpp"
#include "blockmem/rng.hpp"
#include "blockmem/types.hpp"

namespace blockmem::cachesim {

enum class Policy { lru_decay, lru, fifo, random };

inline Policy policy_from_string(const std::string& s) {
    if (s == "lru_decay") return Policy::lru_decay;
    if (s == "lru") return Policy::lru;
    if (s == "fifo") return Policy::fifo;
    if (s == "random") return Policy::random;
    throw ConfigError("policy: unknown value '" + s + "'");
}

inline const char* to_string(Policy p) {
    switch (p) {
        case Policy::lru_decay: return "lru_decay";
        case Policy::lru: return "lru";
        case Policy::fifo: return "fifo";
        case Policy::random: return "random";
    }
    return "?";
}

struct SimReport {
    std::uint64_t requests = 0;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t evictions = 0;
    Index peak_resident = 0;

    double miss_rate() const {
        return requests ? static_cast<double>(misses) / static_cast<double>(requests)
                        : 0.0;
    }
};

/// Replays a unit-access trace against a capacity-bound cache. All four
/// policies share the load/hit bookkeeping and differ only in the eviction
/// victim and the per-step state update; lru_decay mirrors the engine store
/// (decay everything resident, then credit this step's requests).
class CacheSimulator {
public:
    CacheSimulator(Policy policy, Index capacity, std::uint64_t seed, double decay = 0.1)
        : policy_(policy), capacity_(capacity), decay_(decay), rng_(seed) {
        if (capacity < 1) throw ConfigError("cache capacity must be >= 1");
    }

    /// Serves every request of one step, then updates scores and evicts down
    /// to capacity.
    void access_step(Index step, std::span<const std::int64_t> units) {
        for (auto u : units) {
            ensure(u);
            auto& m = meta_[static_cast<std::size_t>(u)];
            report_.requests++;
            if (m.resident) {
                report_.hits++;
            } else {
                report_.misses++;
                m.resident = true;
                m.load_seq = ++load_counter_;
                resident_.push_back(u);
            }
            m.step_count++;
            m.last_access = step;
        }
        report_.peak_resident =
            std::max<Index>(report_.peak_resident, static_cast<Index>(resident_.size()));

        if (policy_ == Policy::lru_decay) {
            for (auto u : resident_) {
                auto& m = meta_[static_cast<std::size_t>(u)];
                m.freq = m.freq * decay_ + static_cast<double>(m.step_count);
            }
        }
        for (auto u : units) meta_[static_cast<std::size_t>(u)].step_count = 0;

        while (static_cast<Index>(resident_.size()) > capacity_) {
            const std::size_t victim = pick_victim();
            auto& m = meta_[static_cast<std::size_t>(resident_[victim])];
            m.resident = false;
            resident_[victim] = resident_.back();
            resident_.pop_back();
            report_.evictions++;
        }
    }

    const SimReport& report() const { return report_; }

private:
    struct UnitMeta {
        bool resident = false;
        double freq = 0.0;
        Index last_access = -1;
        std::uint64_t load_seq = 0;
        std::uint64_t step_count = 0;
    };

    void ensure(std::int64_t u) {
        if (u < 0) throw ConfigError("trace: negative unit id");
        if (static_cast<std::size_t>(u) >= meta_.size())
            meta_.resize(static_cast<std::size_t>(u) + 1);
    }

    std::size_t pick_victim() {
        if (policy_ == Policy::random)
            return static_cast<std::size_t>(rng_.next_below(resident_.size()));
        std::size_t best = 0;
        for (std::size_t i = 1; i < resident_.size(); ++i) {
            if (better_victim(resident_[i], resident_[best])) best = i;
        }
        return best;
    }

    bool better_victim(std::int64_t a, std::int64_t b) const {
        const auto& ma = meta_[static_cast<std::size_t>(a)];
        const auto& mb = meta_[static_cast<std::size_t>(b)];
        switch (policy_) {
            case Policy::lru_decay:
                if (ma.freq != mb.freq) return ma.freq < mb.freq;
                return a < b;
            case Policy::lru:
                if (ma.last_access != mb.last_access)
                    return ma.last_access < mb.last_access;
                return a < b;
            case Policy::fifo:
                return ma.load_seq < mb.load_seq;
            case Policy::random:
                break;
        }
        return false;
    }

    Policy policy_;
    Index capacity_;
    double decay_;
    Rng rng_;
    std::vector<UnitMeta> meta_;
    std::vector<std::int64_t> resident_;
    std::uint64_t load_counter_ = 0;
    SimReport report_;
};

/// Runs a whole (step, unit) request list; requests are grouped by step id.
inline SimReport simulate_trace(std::span<const std::pair<Index, std::int64_t>> requests,
                                Policy policy, Index capacity, std::uint64_t seed,
                                double decay = 0.1) {
    CacheSimulator sim(policy, capacity, seed, decay);
    std::vector<std::int64_t> step_units;
    std::size_t i = 0;
    while (i < requests.size()) {
        const Index step = requests[i].first;
        step_units.clear();
        while (i < requests.size() && requests[i].first == step)
            step_units.push_back(requests[i++].second);
        sim.access_step(step, step_units);
    }
    return sim.report();
}

/// Newline trace format: `step_id unit_id` with an optional trailing
/// `hit|miss` column (engine exports carry it; the simulator ignores it).
inline void write_trace(std::ostream& os,
                        std::span<const std::pair<Index, std::int64_t>> requests) {
    for (const auto& [step, unit] : requests) os << step << ' ' << unit << '\n';
}

inline void write_engine_trace(std::ostream& os, std::span<const TraceRecord> records) {
    for (const auto& r : records)
        os << r.step << ' ' << r.unit_id << ' ' << (r.hit ? "hit" : "miss") << '\n';
}

inline std::vector<std::pair<Index, std::int64_t>> read_trace(std::istream& is) {
    std::vector<std::pair<Index, std::int64_t>> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::istringstream ls(line);
        Index step;
        std::int64_t unit;
        if (!(ls >> step >> unit))
            throw ConfigError("trace: malformed line '" + line + "'");
        out.emplace_back(step, unit);
    }
    return out;
}

}  // namespace blockmem::cachesim
