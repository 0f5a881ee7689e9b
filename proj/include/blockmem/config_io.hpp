#pragma once

#include <nlohmann/json.hpp>

#include <set>
#include <string>

#include "blockmem/types.hpp"

namespace blockmem {

/// Parses an EngineConfig from a JSON document. Field names match the struct
/// members one-to-one; absent fields keep their defaults and unknown keys are
/// rejected so a typo in an experiment config cannot silently fall back to a
/// default.
inline EngineConfig engine_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("engine config: expected a JSON object");
    static const std::set<std::string> known = {
        "chunk_size", "unit_size",    "n_repr", "local_size",  "init_size",
        "n_lookup",   "hot_capacity", "decay",  "lookup_mode", "position_mode"};
    for (const auto& item : j.items()) {
        if (!known.count(item.key()))
            throw ConfigError("engine config: unknown key '" + item.key() + "'");
    }
    EngineConfig c;
    if (j.contains("chunk_size")) c.chunk_size = j.at("chunk_size").get<Index>();
    if (j.contains("unit_size")) c.unit_size = j.at("unit_size").get<Index>();
    if (j.contains("n_repr")) c.n_repr = j.at("n_repr").get<Index>();
    if (j.contains("local_size")) c.local_size = j.at("local_size").get<Index>();
    if (j.contains("init_size")) c.init_size = j.at("init_size").get<Index>();
    if (j.contains("n_lookup")) c.n_lookup = j.at("n_lookup").get<Index>();
    if (j.contains("hot_capacity")) c.hot_capacity = j.at("hot_capacity").get<Index>();
    if (j.contains("decay")) c.decay = j.at("decay").get<double>();
    if (j.contains("lookup_mode"))
        c.lookup_mode = lookup_mode_from_string(j.at("lookup_mode").get<std::string>());
    if (j.contains("position_mode"))
        c.position_mode = position_mode_from_string(j.at("position_mode").get<std::string>());
    c.validate();
    return c;
}

inline nlohmann::json engine_config_to_json(const EngineConfig& c) {
    return nlohmann::json{
        {"chunk_size", c.chunk_size},
        {"unit_size", c.unit_size},
        {"n_repr", c.n_repr},
        {"local_size", c.local_size},
        {"init_size", c.init_size},
        {"n_lookup", c.n_lookup},
        {"hot_capacity", c.hot_capacity},
        {"decay", c.decay},
        {"lookup_mode", to_string(c.lookup_mode)},
        {"position_mode", to_string(c.position_mode)},
    };
}

}  // namespace blockmem
