#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "blockmem/cache_sim.hpp"
#include "blockmem/types.hpp"

namespace blockmem::cli {

struct ShapeOptions {
    int n_layers = 1;
    int n_heads = 2;
    int head_dim = 32;
    int value_dim = -1;  // -1: same as head_dim

    ModelShape shape() const {
        return ModelShape::make(n_layers, n_heads, head_dim, value_dim);
    }
};

struct RunOptions {
    EngineConfig config;
    ShapeOptions shape;
    std::uint64_t seed = 0;
    Index length = 16384;
    bool planted = false;
    Index plant_len = 64;
    Index probe_len = 4;
    bool align_plant = false;
    std::string out_path;
    std::string trace_out;
};

struct SimulateCacheOptions {
    std::string trace_path;  // empty: generate a synthetic trace instead
    Index universe = 512;
    Index requests = 100000;
    double zipf_s = 1.0;
    double locality_prob = 0.3;
    Index locality_window = 8;
    cachesim::Policy policy = cachesim::Policy::lru_decay;
    Index capacity = 32;
    std::uint64_t seed = 0;
    double decay = 0.1;
    std::string out_path;
};

struct OracleCheckOptions {
    EngineConfig config;
    ShapeOptions shape;
    std::uint64_t seed = 0;
    Index length = 1024;
    std::string out_path;
};

struct BenchOptions {
    EngineConfig config;
    ShapeOptions shape;
    std::uint64_t seed = 0;
    std::vector<Index> lengths;
    std::string out_path;
};

nlohmann::json cmd_run(const RunOptions& opt);
nlohmann::json cmd_simulate_cache(const SimulateCacheOptions& opt);
/// Returns the report; `ok` in the report is false when a tolerance failed.
nlohmann::json cmd_oracle_check(const OracleCheckOptions& opt);
nlohmann::json cmd_bench(const BenchOptions& opt);

EngineConfig load_config_file(const std::string& path);

int run_main(int argc, char** argv);

}  // namespace blockmem::cli
