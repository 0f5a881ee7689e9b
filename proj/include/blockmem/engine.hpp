#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "blockmem/adapter.hpp"
#include "blockmem/attention.hpp"
#include "blockmem/memory.hpp"
#include "blockmem/repr_score.hpp"
#include "blockmem/types.hpp"

namespace blockmem {

/// Context-token span attended in one step, for diagnostics and tests.
struct AttendedSpan {
    Segment kind;
    Index start_abs;
    Index size;
    std::int64_t unit_id;  // -1 unless retrieved
};

template <typename Scalar>
struct LayerStepOutput {
    AttentionOutput<Scalar> attn;
    std::vector<AttendedSpan> attended;
    std::vector<std::int64_t> retrieved_ids;
};

template <typename Scalar>
using StepOutput = std::vector<LayerStepOutput<Scalar>>;

struct EngineLayerMetrics {
    Index units = 0;
    Index hot_units = 0;
    Index peak_hot_units = 0;
    std::size_t peak_hot_bytes = 0;
    CacheCounters cache;
};

struct PhaseTimings {
    double adapter_ms = 0.0;
    double lookup_ms = 0.0;
    double attend_ms = 0.0;
    double score_ms = 0.0;
    double evict_ms = 0.0;
};

struct EngineMetrics {
    Index tokens = 0;
    Index steps = 0;
    std::uint64_t invariant_checks = 0;
    std::uint64_t invariant_violations = 0;
    PhaseTimings timings;
    std::vector<EngineLayerMetrics> layers;
};

/// Streaming attention engine: encodes chunk-by-chunk, decodes token-by-token,
/// and per layer maintains the pinned initial tokens, the sliding local
/// window, the representative-score accumulators and the tiered unit store.
template <typename Scalar>
class StreamEngine {
public:
    StreamEngine(EngineConfig config, ModelShape shape, std::uint64_t seed)
        : config_(config), shape_(shape), adapter_(seed, shape) {
        config.validate();
        shape.validate();
        layers_.reserve(static_cast<std::size_t>(shape.n_layers));
        for (int l = 0; l < shape.n_layers; ++l)
            layers_.emplace_back(config_, shape_);
    }

    const EngineConfig& config() const { return config_; }
    const ModelShape& shape() const { return shape_; }
    Index tokens_fed() const { return n_fed_; }
    Index steps_done() const { return step_; }
    const TieredStore<Scalar>& store(int layer) const {
        return layers_[static_cast<std::size_t>(layer)].store;
    }
    const SyntheticAdapter<Scalar>& adapter() const { return adapter_; }

    /// Makes every step verify softmax normalization even on steps that did
    /// not look anything up (fuzz harness support).
    void set_always_emit_weights(bool v) { always_emit_weights_ = v; }

    std::uint64_t invariant_checks() const { return checks_; }
    std::uint64_t invariant_violations() const { return violations_; }

    /// Encodes one chunk of at most chunk_size tokens.
    StepOutput<Scalar> encode_chunk(std::span<const std::int64_t> ids) {
        if (static_cast<Index>(ids.size()) > config_.chunk_size)
            throw StreamError("encode_chunk: batch exceeds chunk_size");
        const bool lookup = config_.lookup_mode == LookupMode::encode_and_decode;
        return step(ids, lookup);
    }

    /// Decodes a single token.
    StepOutput<Scalar> decode_step(std::int64_t id) {
        const bool lookup = config_.lookup_mode != LookupMode::none;
        return step(std::span<const std::int64_t>(&id, 1), lookup);
    }

    /// Feeds a whole sequence as encode chunks, discarding step outputs.
    void feed(std::span<const std::int64_t> ids) {
        for (std::size_t off = 0; off < ids.size();
             off += static_cast<std::size_t>(config_.chunk_size))
            encode_chunk(ids.subspan(
                off, std::min<std::size_t>(static_cast<std::size_t>(config_.chunk_size),
                                           ids.size() - off)));
    }

    /// Flushes each layer's held-back partial unit into its store.
    void finish() {
        for (auto& layer : layers_) {
            if (auto u = layer.packer.flush()) layer.store.add_unit(std::move(*u));
        }
    }

    EngineMetrics metrics() const {
        EngineMetrics m;
        m.tokens = n_fed_;
        m.steps = step_;
        m.invariant_checks = checks_;
        m.invariant_violations = violations_;
        m.timings = timings_;
        for (const auto& layer : layers_) {
            EngineLayerMetrics lm;
            lm.units = layer.store.total_units();
            lm.hot_units = layer.store.hot_units();
            lm.peak_hot_units = layer.store.peak_hot_units();
            lm.peak_hot_bytes = layer.store.peak_hot_bytes();
            lm.cache = layer.store.counters();
            m.layers.push_back(lm);
        }
        return m;
    }

    Index initial_len(int layer) const {
        return layers_[static_cast<std::size_t>(layer)].initial_len();
    }
    Index local_len(int layer) const {
        return layers_[static_cast<std::size_t>(layer)].local_len();
    }
    Index pending_partial(int layer) const {
        return layers_[static_cast<std::size_t>(layer)].packer.pending_tokens();
    }

private:
    struct Layer {
        Layer(const EngineConfig& cfg, const ModelShape& shape)
            : acc(cfg.local_size),
              packer(cfg.unit_size, cfg.n_repr, shape.n_heads),
              store(cfg.hot_capacity, cfg.decay, shape.n_heads) {
            init_keys.resize(static_cast<std::size_t>(shape.n_heads));
            init_values.resize(static_cast<std::size_t>(shape.n_heads));
            local_keys.resize(static_cast<std::size_t>(shape.n_heads));
            local_values.resize(static_cast<std::size_t>(shape.n_heads));
        }

        Index initial_len() const { return init_keys.front().rows(); }
        Index local_len() const { return local_keys.front().rows(); }

        std::vector<Mat<Scalar>> init_keys, init_values;    // pinned, abs [0, n)
        std::vector<Mat<Scalar>> local_keys, local_values;  // abs [local_start, ...)
        Index local_start = 0;
        ScoreAccumulator<Scalar> acc;
        UnitPacker<Scalar> packer;
        TieredStore<Scalar> store;
    };

    static void append_rows(Mat<Scalar>& dst, const Mat<Scalar>& src) {
        if (dst.rows() == 0) {
            dst = src;
            return;
        }
        const Index old = dst.rows();
        dst.conservativeResize(old + src.rows(), Eigen::NoChange);
        dst.bottomRows(src.rows()) = src;
    }

    static void drop_front(Mat<Scalar>& m, Index n) {
        m = Mat<Scalar>(m.bottomRows(m.rows() - n));
    }

    WindowView<Scalar> compose_window(Layer& layer,
                                      const std::vector<std::int64_t>& retrieved) const {
        WindowView<Scalar> w;
        if (layer.initial_len() > 0) {
            SegmentView<Scalar> s;
            s.kind = Segment::initial;
            s.start_abs = 0;
            for (int h = 0; h < shape_.n_heads; ++h) {
                s.keys.emplace_back(layer.init_keys[static_cast<std::size_t>(h)]);
                s.values.emplace_back(layer.init_values[static_cast<std::size_t>(h)]);
            }
            w.segments.push_back(std::move(s));
        }
        for (auto id : retrieved) {
            const auto& u = layer.store.unit(id);
            SegmentView<Scalar> s;
            s.kind = Segment::retrieved;
            s.start_abs = u.start_abs;
            s.unit_id = id;
            for (int h = 0; h < shape_.n_heads; ++h) {
                s.keys.emplace_back(u.keys[static_cast<std::size_t>(h)]);
                s.values.emplace_back(u.values[static_cast<std::size_t>(h)]);
            }
            w.segments.push_back(std::move(s));
        }
        if (layer.local_len() > 0) {
            SegmentView<Scalar> s;
            s.kind = Segment::local;
            s.start_abs = layer.local_start;
            for (int h = 0; h < shape_.n_heads; ++h) {
                s.keys.emplace_back(layer.local_keys[static_cast<std::size_t>(h)]);
                s.values.emplace_back(layer.local_values[static_cast<std::size_t>(h)]);
            }
            w.segments.push_back(std::move(s));
        }
        Index prev_end = 0;
        Index prev_start = -1;
        for (const auto& s : w.segments) {
            if (s.start_abs < prev_end || s.start_abs < prev_start)
                throw StreamError("compose_window: overlapping or unordered segments");
            prev_start = s.start_abs;
            prev_end = s.start_abs + s.size();
        }
        return w;
    }

    using Clock = std::chrono::steady_clock;

    double ms_since(Clock::time_point& mark) {
        const auto now = Clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - mark).count();
        mark = now;
        return ms;
    }

    StepOutput<Scalar> step(std::span<const std::int64_t> ids, bool lookup_enabled) {
        if (ids.empty()) throw StreamError("step: empty batch");
        const Index l_x = static_cast<Index>(ids.size());
        StepOutput<Scalar> out;
        out.reserve(layers_.size());
        for (int l = 0; l < shape_.n_layers; ++l) {
            auto& layer = layers_[static_cast<std::size_t>(l)];
            layer.store.begin_step(step_);
            auto mark = Clock::now();
            TokenBatch<Scalar> batch = adapter_.batch(l, ids, n_fed_);
            timings_.adapter_ms += ms_since(mark);

            const bool do_lookup = lookup_enabled && config_.n_lookup > 0 &&
                                   layer.store.total_units() > 0;
            std::vector<std::int64_t> retrieved;
            if (do_lookup) retrieved = layer.store.lookup(batch, config_.n_lookup);
            timings_.lookup_ms += ms_since(mark);

            WindowView<Scalar> window = compose_window(layer, retrieved);
            LayerStepOutput<Scalar> lo;
            for (const auto& seg : window.segments)
                lo.attended.push_back({seg.kind, seg.start_abs, seg.size(), seg.unit_id});
            const bool emit = (do_lookup && !retrieved.empty()) || always_emit_weights_;
            AttentionOutput<Scalar> attn =
                attend(batch, window, config_.position_mode, config_.local_size, emit);
            timings_.attend_ms += ms_since(mark);

            if (emit) check_softmax(attn);

            std::vector<std::pair<std::int64_t, double>> masses;
            if (do_lookup && attn.weights) {
                for (std::size_t si = 0; si < window.segments.size(); ++si) {
                    const auto& seg = window.segments[si];
                    if (seg.kind != Segment::retrieved) continue;
                    const auto [col, len] = attn.segment_cols[si];
                    double mass = 0.0;
                    for (const auto& w : *attn.weights)
                        mass += static_cast<double>(
                            w.middleCols(col, len).template cast<double>().sum());
                    masses.emplace_back(seg.unit_id, mass / shape_.n_heads);
                }
            }
            layer.store.update_frequency(masses);
            layer.store.enforce_capacity();
            timings_.evict_ms += ms_since(mark);

            // score accumulation over local + batch, then roll the window
            {
                std::vector<Eigen::Ref<const Mat<Scalar>>> pending;
                std::vector<Mat<Scalar>> merged(static_cast<std::size_t>(shape_.n_heads));
                for (int h = 0; h < shape_.n_heads; ++h) {
                    auto& m = merged[static_cast<std::size_t>(h)];
                    m = layer.local_keys[static_cast<std::size_t>(h)];
                    append_rows(m, batch.k[h]);
                    pending.emplace_back(m);
                }
                layer.acc.accumulate(batch, pending);
            }
            timings_.score_ms += ms_since(mark);
            for (int h = 0; h < shape_.n_heads; ++h) {
                append_rows(layer.local_keys[static_cast<std::size_t>(h)], batch.k[h]);
                append_rows(layer.local_values[static_cast<std::size_t>(h)], batch.v[h]);
            }

            const Index overflow = std::max<Index>(0, layer.local_len() - config_.local_size);
            if (overflow > 0) {
                const auto scores = layer.acc.finalize_front(overflow);
                const Index pop_start = layer.local_start;
                // split popped rows at the initial-token boundary
                const Index to_init =
                    std::clamp<Index>(config_.init_size - pop_start, 0, overflow);
                for (int h = 0; h < shape_.n_heads; ++h) {
                    auto& lk = layer.local_keys[static_cast<std::size_t>(h)];
                    auto& lv = layer.local_values[static_cast<std::size_t>(h)];
                    if (to_init > 0) {
                        append_rows(layer.init_keys[static_cast<std::size_t>(h)],
                                    lk.topRows(to_init));
                        append_rows(layer.init_values[static_cast<std::size_t>(h)],
                                    lv.topRows(to_init));
                    }
                }
                const Index to_evict = overflow - to_init;
                if (to_evict > 0) {
                    std::vector<Mat<Scalar>> ek(static_cast<std::size_t>(shape_.n_heads));
                    std::vector<Mat<Scalar>> ev(static_cast<std::size_t>(shape_.n_heads));
                    for (int h = 0; h < shape_.n_heads; ++h) {
                        ek[static_cast<std::size_t>(h)] =
                            layer.local_keys[static_cast<std::size_t>(h)].middleRows(
                                to_init, to_evict);
                        ev[static_cast<std::size_t>(h)] =
                            layer.local_values[static_cast<std::size_t>(h)].middleRows(
                                to_init, to_evict);
                    }
                    auto units = layer.packer.add(
                        pop_start + to_init, ek, ev,
                        std::span<const Scalar>(scores.data() + to_init,
                                                static_cast<std::size_t>(to_evict)));
                    for (auto& u : units) layer.store.add_unit(std::move(u));
                }
                for (int h = 0; h < shape_.n_heads; ++h) {
                    drop_front(layer.local_keys[static_cast<std::size_t>(h)], overflow);
                    drop_front(layer.local_values[static_cast<std::size_t>(h)], overflow);
                }
                layer.local_start += overflow;
            }

            layer.store.note_step_boundary();
            check_conservation(layer, n_fed_ + l_x);
            timings_.evict_ms += ms_since(mark);

            lo.retrieved_ids = std::move(retrieved);
            lo.attn = std::move(attn);
            out.push_back(std::move(lo));
        }
        n_fed_ += l_x;
        ++step_;
        return out;
    }

    void check_softmax(const AttentionOutput<Scalar>& attn) {
        for (const auto& w : *attn.weights) {
            for (Index i = 0; i < w.rows(); ++i) {
                ++checks_;
                const double s = w.row(i).template cast<double>().sum();
                const bool ok = w.row(i).minCoeff() >= Scalar(0) &&
                                std::abs(s - 1.0) <= 1e-6;
                if (!ok) ++violations_;
            }
        }
    }

    void check_conservation(const Layer& layer, Index fed) {
        ++checks_;
        const Index in_units =
            layer.store.total_units() == 0
                ? 0
                : layer.store.unit(layer.store.total_units() - 1).end_abs() -
                      config_.init_size;
        const Index total = layer.initial_len() + layer.local_len() +
                            layer.packer.pending_tokens() + in_units;
        if (total != fed) ++violations_;
    }

    EngineConfig config_;
    ModelShape shape_;
    SyntheticAdapter<Scalar> adapter_;
    std::vector<Layer> layers_;
    Index n_fed_ = 0;
    Index step_ = 0;
    bool always_emit_weights_ = false;
    std::uint64_t checks_ = 0;
    std::uint64_t violations_ = 0;
    PhaseTimings timings_;
};

}  // namespace blockmem
