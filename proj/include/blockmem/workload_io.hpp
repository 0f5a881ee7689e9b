#pragma once

#include <nlohmann/json.hpp>

#include "blockmem/workload.hpp"

namespace blockmem::workload {

inline nlohmann::json to_json(const PlantedTask& t) {
    return nlohmann::json{
        {"seed", t.seed},           {"length", t.length},
        {"plant_start", t.plant_start}, {"plant_len", t.plant_len},
        {"probe_pos", t.probe_pos}, {"probe_len", t.probe_len},
        {"plant_id", t.plant_id},   {"expected_units", t.expected_units},
        {"token_ids", t.token_ids},
    };
}

inline PlantedTask planted_task_from_json(const nlohmann::json& j) {
    PlantedTask t;
    t.seed = j.at("seed").get<std::uint64_t>();
    t.length = j.at("length").get<Index>();
    t.plant_start = j.at("plant_start").get<Index>();
    t.plant_len = j.at("plant_len").get<Index>();
    t.probe_pos = j.at("probe_pos").get<Index>();
    t.probe_len = j.at("probe_len").get<Index>();
    t.plant_id = j.at("plant_id").get<std::int64_t>();
    t.expected_units = j.at("expected_units").get<std::vector<std::int64_t>>();
    t.token_ids = j.at("token_ids").get<std::vector<std::int64_t>>();
    return t;
}

inline nlohmann::json to_json(const AccessTrace& t) {
    nlohmann::json reqs = nlohmann::json::array();
    for (const auto& [step, unit] : t.requests) reqs.push_back({step, unit});
    return nlohmann::json{
        {"seed", t.params.seed},
        {"universe", t.params.universe},
        {"length", t.params.length},
        {"zipf_s", t.params.zipf_s},
        {"locality_prob", t.params.locality_prob},
        {"locality_window", t.params.locality_window},
        {"requests", std::move(reqs)},
    };
}

inline AccessTrace access_trace_from_json(const nlohmann::json& j) {
    AccessTrace t;
    t.params.seed = j.at("seed").get<std::uint64_t>();
    t.params.universe = j.at("universe").get<Index>();
    t.params.length = j.at("length").get<Index>();
    t.params.zipf_s = j.at("zipf_s").get<double>();
    t.params.locality_prob = j.at("locality_prob").get<double>();
    t.params.locality_window = j.at("locality_window").get<Index>();
    for (const auto& r : j.at("requests"))
        t.requests.emplace_back(r.at(0).get<Index>(), r.at(1).get<std::int64_t>());
    return t;
}

}  // namespace blockmem::workload
