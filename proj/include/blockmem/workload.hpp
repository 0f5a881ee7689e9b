#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "blockmem/engine.hpp"
#include "blockmem/rng.hpp"
#include "blockmem/types.hpp"

namespace blockmem::workload {

/// Synthetic passkey-style task: a span of one repeated out-of-alphabet token
/// id is buried in noise, then repeated near the end of the stream as the
/// probe. With the id-keyed adapter the probe queries align with the planted
/// keys, so a correct lookup must surface the units holding the plant.
struct PlantedTask {
    std::uint64_t seed = 0;
    Index length = 0;
    Index plant_start = 0;  // [plant_start, plant_start + plant_len)
    Index plant_len = 0;
    Index probe_pos = 0;  // probe occupies [probe_pos, probe_pos + probe_len)
    Index probe_len = 0;
    std::int64_t plant_id = 0;
    std::vector<std::int64_t> expected_units;
    std::vector<std::int64_t> token_ids;
};

inline constexpr std::int64_t kNoiseAlphabet = 1 << 20;

/// Generates a planted task for the given engine config. The plant is placed
/// so it is fully packed into units before the first probe step; when
/// `align_to_units` is set, the plant starts exactly on a unit boundary.
inline PlantedTask gen_planted(std::uint64_t seed, Index length, Index plant_len,
                               const EngineConfig& cfg, Index probe_len = 4,
                               bool align_to_units = false) {
    if (plant_len < 1 || probe_len < 1)
        throw ConfigError("gen_planted: plant_len and probe_len must be >= 1");
    PlantedTask t;
    t.seed = seed;
    t.length = length;
    t.plant_len = plant_len;
    t.probe_len = probe_len;
    t.probe_pos = length - probe_len;

    // latest start that is packed into a unit before the first probe step
    const Index a_max = t.probe_pos - cfg.local_size - cfg.unit_size - plant_len;
    const Index a_min = cfg.init_size;
    if (a_max < a_min)
        throw ConfigError(
            "gen_planted: length too small for init + local + unit margin");

    Rng rng(hash_mix(seed, 0x706c616e74ULL));
    Index a = a_min + static_cast<Index>(rng.next_below(
                          static_cast<std::uint64_t>(a_max - a_min + 1)));
    if (align_to_units) {
        a = cfg.init_size +
            ((a - cfg.init_size) / cfg.unit_size) * cfg.unit_size;
    }
    t.plant_start = a;
    t.plant_id = kNoiseAlphabet + static_cast<std::int64_t>(rng.next_below(1 << 20));

    t.token_ids.resize(static_cast<std::size_t>(length));
    for (auto& id : t.token_ids)
        id = static_cast<std::int64_t>(rng.next_below(kNoiseAlphabet));
    for (Index i = 0; i < plant_len; ++i)
        t.token_ids[static_cast<std::size_t>(a + i)] = t.plant_id;
    for (Index i = 0; i < probe_len; ++i)
        t.token_ids[static_cast<std::size_t>(t.probe_pos + i)] = t.plant_id;

    const std::int64_t first = (a - cfg.init_size) / cfg.unit_size;
    const std::int64_t last = (a + plant_len - 1 - cfg.init_size) / cfg.unit_size;
    for (std::int64_t u = first; u <= last; ++u) t.expected_units.push_back(u);
    return t;
}

struct RecallResult {
    double recall = 0.0;    // fraction of probe (step, layer) lookups that
                            // contained every expected unit
    Index probe_events = 0;
    Index hit_events = 0;
    EngineMetrics metrics;
};

/// Streams the task through an engine: everything before the probe is encoded
/// in chunks, the probe tokens are decoded one by one, and each decode
/// lookup is scored against the expected units. Unit spans observed in the
/// store are cross-checked against the packing arithmetic the expectation
/// was derived from.
template <typename Scalar>
inline RecallResult run_planted(const PlantedTask& task, const EngineConfig& cfg,
                                const ModelShape& shape, std::uint64_t engine_seed) {
    StreamEngine<Scalar> engine(cfg, shape, engine_seed);
    const auto ids = std::span<const std::int64_t>(task.token_ids);
    engine.feed(ids.first(static_cast<std::size_t>(task.probe_pos)));

    RecallResult res;
    for (Index p = 0; p < task.probe_len; ++p) {
        const auto out =
            engine.decode_step(task.token_ids[static_cast<std::size_t>(task.probe_pos + p)]);
        if (cfg.lookup_mode == LookupMode::none) continue;
        for (int l = 0; l < shape.n_layers; ++l) {
            const auto& store = engine.store(l);
            for (auto u : task.expected_units) {
                if (u >= store.total_units())
                    throw StreamError("run_planted: expected unit was never packed");
                const auto& unit = store.unit(u);
                if (unit.start_abs != cfg.init_size + u * cfg.unit_size ||
                    unit.size() != cfg.unit_size)
                    throw StreamError("run_planted: unit packing differs from expectation");
            }
            const auto& got = out[static_cast<std::size_t>(l)].retrieved_ids;
            const bool all = std::all_of(
                task.expected_units.begin(), task.expected_units.end(), [&](std::int64_t u) {
                    return std::find(got.begin(), got.end(), u) != got.end();
                });
            ++res.probe_events;
            if (all) ++res.hit_events;
        }
    }
    if (cfg.lookup_mode != LookupMode::none && res.probe_events > 0)
        res.recall = static_cast<double>(res.hit_events) /
                     static_cast<double>(res.probe_events);
    res.metrics = engine.metrics();
    return res;
}

/// Synthetic unit-access trace: a Zipf-popular working set mixed with short
/// locality bursts around the previous request.
struct TraceParams {
    std::uint64_t seed = 0;
    Index universe = 0;
    Index length = 0;
    double zipf_s = 1.0;
    double locality_prob = 0.0;
    Index locality_window = 0;
};

struct AccessTrace {
    TraceParams params;
    std::vector<std::pair<Index, std::int64_t>> requests;  // (step, unit)
};

/// Rank r (0-based) is unit id r: lower ids are more popular.
inline AccessTrace gen_trace(std::uint64_t seed, Index universe, Index length,
                             double zipf_s, double locality_prob = 0.0,
                             Index locality_window = 8) {
    if (universe < 1) throw ConfigError("gen_trace: universe must be >= 1");
    AccessTrace t;
    t.params = {seed, universe, length, zipf_s, locality_prob, locality_window};

    std::vector<double> cdf(static_cast<std::size_t>(universe));
    double acc = 0.0;
    for (Index r = 0; r < universe; ++r) {
        acc += 1.0 / std::pow(static_cast<double>(r + 1), zipf_s);
        cdf[static_cast<std::size_t>(r)] = acc;
    }
    for (auto& v : cdf) v /= acc;

    Rng rng(hash_mix(seed, 0x7472616365ULL));
    std::int64_t prev = 0;
    t.requests.reserve(static_cast<std::size_t>(length));
    for (Index step = 0; step < length; ++step) {
        std::int64_t unit;
        if (step > 0 && rng.next_double() < locality_prob) {
            const Index span = 2 * locality_window + 1;
            unit = prev - locality_window +
                   static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(span)));
            unit = std::clamp<std::int64_t>(unit, 0, universe - 1);
        } else {
            const double u = rng.next_double();
            unit = static_cast<std::int64_t>(
                std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            unit = std::min<std::int64_t>(unit, universe - 1);
        }
        t.requests.emplace_back(step, unit);
        prev = unit;
    }
    return t;
}

}  // namespace blockmem::workload
