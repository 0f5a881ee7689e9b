#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockmem {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = std::int64_t;

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct StreamError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-layer, per-head tensor geometry of the synthetic model.
struct ModelShape {
    int n_layers = 1;
    int n_heads = 1;
    int head_dim = 32;
    int value_dim = 32;  // defaults to head_dim

    static ModelShape make(int layers, int heads, int dim, int vdim = -1) {
        ModelShape s;
        s.n_layers = layers;
        s.n_heads = heads;
        s.head_dim = dim;
        s.value_dim = vdim < 0 ? dim : vdim;
        s.validate();
        return s;
    }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || head_dim < 1 || value_dim < 1)
            throw ConfigError("ModelShape: all fields must be >= 1");
    }
};

enum class LookupMode { encode_and_decode, decode_only, none };
enum class PositionMode { clamped, absolute };

inline const char* to_string(LookupMode m) {
    switch (m) {
        case LookupMode::encode_and_decode: return "encode_and_decode";
        case LookupMode::decode_only: return "decode_only";
        case LookupMode::none: return "none";
    }
    return "?";
}

inline const char* to_string(PositionMode m) {
    return m == PositionMode::clamped ? "clamped" : "absolute";
}

inline LookupMode lookup_mode_from_string(const std::string& s) {
    if (s == "encode_and_decode") return LookupMode::encode_and_decode;
    if (s == "decode_only") return LookupMode::decode_only;
    if (s == "none") return LookupMode::none;
    throw ConfigError("lookup_mode: unknown value '" + s + "'");
}

inline PositionMode position_mode_from_string(const std::string& s) {
    if (s == "clamped") return PositionMode::clamped;
    if (s == "absolute") return PositionMode::absolute;
    throw ConfigError("position_mode: unknown value '" + s + "'");
}

/// Streaming-engine hyperparameters. Defaults follow the operating profile:
/// 512-token encode chunks, 128-token memory units with 4 representative
/// tokens, 4K local window, 128 pinned initial tokens, 32-unit lookup with a
/// 32-unit hot cache and frequency decay 0.1.
struct EngineConfig {
    Index chunk_size = 512;    // l_C, max tokens per encode step
    Index unit_size = 128;     // l_bs, tokens per memory unit
    Index n_repr = 4;          // r_k, representative tokens per unit
    Index local_size = 4096;   // l_L, sliding-window length
    Index init_size = 128;     // l_I, pinned initial tokens
    Index n_lookup = 32;       // k_m, units loaded per lookup
    Index hot_capacity = 32;   // hot-tier capacity in units
    double decay = 0.1;        // d, frequency-score decay per step
    LookupMode lookup_mode = LookupMode::encode_and_decode;
    PositionMode position_mode = PositionMode::clamped;

    void validate() const {
        if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
        if (unit_size < 1) throw ConfigError("unit_size must be >= 1");
        if (n_repr < 1) throw ConfigError("n_repr must be >= 1");
        if (local_size < 1) throw ConfigError("local_size must be >= 1");
        if (init_size < 0) throw ConfigError("init_size must be >= 0");
        if (n_lookup < 0) throw ConfigError("n_lookup must be >= 0");
        if (n_repr > unit_size)
            throw ConfigError("n_repr must not exceed unit_size");
        if (hot_capacity < n_lookup)
            throw ConfigError("hot_capacity must be >= n_lookup");
        if (decay < 0.0 || decay > 1.0)
            throw ConfigError("decay must lie in [0, 1]");
    }
};

/// One token's per-head key and value rows plus its absolute stream position.
template <typename Scalar>
struct KVEntry {
    Index abs_index = 0;
    Mat<Scalar> key;    // [n_heads, head_dim]
    Mat<Scalar> value;  // [n_heads, value_dim]
};

/// A contiguous run of tokens as per-head row blocks. Row i of every matrix
/// belongs to the token at abs_index start_abs + i.
template <typename Scalar>
struct KVSlab {
    Index start_abs = 0;
    std::vector<Mat<Scalar>> keys;    // n_heads entries, each [n, head_dim]
    std::vector<Mat<Scalar>> values;  // n_heads entries, each [n, value_dim]

    Index size() const { return keys.empty() ? 0 : keys.front().rows(); }
    Index end_abs() const { return start_abs + size(); }

    KVEntry<Scalar> entry(Index row) const {
        KVEntry<Scalar> e;
        e.abs_index = start_abs + row;
        const int h = static_cast<int>(keys.size());
        e.key.resize(h, keys.front().cols());
        e.value.resize(h, values.front().cols());
        for (int i = 0; i < h; ++i) {
            e.key.row(i) = keys[i].row(row);
            e.value.row(i) = values[i].row(row);
        }
        return e;
    }
};

/// Current tokens of one computation step: queries, keys and values per head.
/// Length is the chunk size while encoding and exactly one while decoding.
template <typename Scalar>
struct TokenBatch {
    Index start_abs = 0;
    std::vector<Mat<Scalar>> q;  // n_heads entries, each [l_X, head_dim]
    std::vector<Mat<Scalar>> k;
    std::vector<Mat<Scalar>> v;

    Index size() const { return q.empty() ? 0 : q.front().rows(); }
    int n_heads() const { return static_cast<int>(q.size()); }
};

}  // namespace blockmem
