#include "blockmem/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "blockmem/config_io.hpp"
#include "blockmem/engine.hpp"
#include "blockmem/oracle.hpp"
#include "blockmem/parallel.hpp"
#include "blockmem/real.hpp"
#include "blockmem/repr_score.hpp"
#include "blockmem/workload.hpp"
#include "blockmem/workload_io.hpp"

namespace blockmem::cli {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

std::vector<std::int64_t> noise_ids(std::uint64_t seed, Index n) {
    Rng rng(hash_mix(seed, 0x6e6f697365ULL));
    std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
    for (auto& id : ids)
        id = static_cast<std::int64_t>(rng.next_below(workload::kNoiseAlphabet));
    return ids;
}

nlohmann::json metrics_to_json(const EngineMetrics& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers) {
        const auto req = l.cache.requested;
        layers.push_back({
            {"units", l.units},
            {"hot_units", l.hot_units},
            {"peak_hot_units", l.peak_hot_units},
            {"peak_hot_bytes", l.peak_hot_bytes},
            {"hits", l.cache.hits},
            {"misses", l.cache.misses},
            {"loads", l.cache.loads},
            {"evictions", l.cache.evictions},
            {"requested", req},
            {"hit_rate", req ? static_cast<double>(l.cache.hits) / req : 0.0},
            {"miss_rate", req ? static_cast<double>(l.cache.misses) / req : 0.0},
        });
    }
    return nlohmann::json{
        {"tokens", m.tokens},
        {"steps", m.steps},
        {"invariant_checks", m.invariant_checks},
        {"invariant_violations", m.invariant_violations},
        {"timings_ms",
         {{"adapter", m.timings.adapter_ms},
          {"lookup", m.timings.lookup_ms},
          {"attend", m.timings.attend_ms},
          {"score", m.timings.score_ms},
          {"evict", m.timings.evict_ms}}},
        {"layers", std::move(layers)},
    };
}

void write_report(const std::string& path, const nlohmann::json& j) {
    if (path.empty()) return;
    std::ofstream os(path);
    if (!os) throw StreamError("cannot write report to '" + path + "'");
    os << j.dump(2) << '\n';
}

void export_engine_trace(const std::string& path, const StreamEngine<Real>& engine) {
    if (path.empty()) return;
    std::ofstream os(path);
    if (!os) throw StreamError("cannot write trace to '" + path + "'");
    for (int l = 0; l < engine.shape().n_layers; ++l)
        cachesim::write_engine_trace(os, engine.store(l).trace());
}

/// Runs an engine over a fixed schedule (the last `decode_tail` steps as
/// decode steps) and returns per-layer per-head outputs as double matrices
/// with one row per token.
std::vector<std::vector<Mat<double>>> run_engine_collect(
    const EngineConfig& cfg, const ModelShape& shape, std::uint64_t seed,
    const std::vector<std::int64_t>& ids, const std::vector<Index>& schedule,
    Index decode_tail) {
    StreamEngine<Real> engine(cfg, shape, seed);
    const Index n = static_cast<Index>(ids.size());
    std::vector<std::vector<Mat<double>>> out(
        static_cast<std::size_t>(shape.n_layers));
    for (int l = 0; l < shape.n_layers; ++l) {
        out[static_cast<std::size_t>(l)].assign(
            static_cast<std::size_t>(shape.n_heads),
            Mat<double>::Zero(n, shape.value_dim));
    }
    Index fed = 0;
    const std::size_t first_decode = schedule.size() - static_cast<std::size_t>(decode_tail);
    for (std::size_t s = 0; s < schedule.size(); ++s) {
        const Index batch = schedule[s];
        std::span<const std::int64_t> span(ids.data() + fed,
                                           static_cast<std::size_t>(batch));
        StepOutput<Real> so = s >= first_decode ? engine.decode_step(span.front())
                                                : engine.encode_chunk(span);
        for (int l = 0; l < shape.n_layers; ++l)
            for (int h = 0; h < shape.n_heads; ++h)
                out[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)]
                    .middleRows(fed, batch) =
                    so[static_cast<std::size_t>(l)].attn.out[static_cast<std::size_t>(h)]
                        .template cast<double>();
        fed += batch;
    }
    return out;
}

oracle::SequenceData full_sequence(const SyntheticAdapter<Real>& adapter, int layer,
                                   const std::vector<std::int64_t>& ids) {
    const auto batch = adapter.batch(layer, ids, 0);
    oracle::SequenceData seq;
    for (int h = 0; h < adapter.shape().n_heads; ++h) {
        seq.q.push_back(batch.q[h].cast<double>());
        seq.k.push_back(batch.k[h].cast<double>());
        seq.v.push_back(batch.v[h].cast<double>());
    }
    return seq;
}

std::vector<Index> encode_schedule(Index length, Index chunk, Index decode_tail) {
    std::vector<Index> schedule;
    Index left = length - decode_tail;
    while (left > 0) {
        schedule.push_back(std::min(chunk, left));
        left -= schedule.back();
    }
    for (Index i = 0; i < decode_tail; ++i) schedule.push_back(1);
    return schedule;
}

nlohmann::json report_to_json(const oracle::OracleReport& r, const std::string& name,
                              bool pass) {
    return nlohmann::json{{"check", name},
                          {"max_abs_err", r.max_abs_err},
                          {"mean_abs_err", r.mean_abs_err},
                          {"compared", r.compared},
                          {"mismatches", r.mismatches},
                          {"tolerance", r.tolerance},
                          {"pass", pass}};
}

}  // namespace

EngineConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return engine_config_from_json(j);
}

nlohmann::json cmd_run(const RunOptions& opt) {
    opt.config.validate();
    const ModelShape shape = opt.shape.shape();
    const auto t0 = Clock::now();

    nlohmann::json report;
    report["config"] = engine_config_to_json(opt.config);
    report["seed"] = opt.seed;
    report["length"] = opt.length;

    if (opt.planted) {
        const auto task = workload::gen_planted(opt.seed, opt.length, opt.plant_len,
                                                opt.config, opt.probe_len,
                                                opt.align_plant);
        const auto res = workload::run_planted<Real>(task, opt.config, shape, opt.seed);
        report["recall"] = res.recall;
        report["probe_events"] = res.probe_events;
        report["expected_units"] = task.expected_units;
        report["metrics"] = metrics_to_json(res.metrics);
    } else {
        StreamEngine<Real> engine(opt.config, shape, opt.seed);
        const auto ids = noise_ids(opt.seed, opt.length);
        engine.feed(ids);
        engine.finish();
        report["metrics"] = metrics_to_json(engine.metrics());
        export_engine_trace(opt.trace_out, engine);
    }
    report["wall_ms"] = ms_between(t0, Clock::now());
    write_report(opt.out_path, report);
    return report;
}

nlohmann::json cmd_simulate_cache(const SimulateCacheOptions& opt) {
    std::vector<std::pair<Index, std::int64_t>> requests;
    nlohmann::json source;
    if (!opt.trace_path.empty()) {
        std::ifstream is(opt.trace_path);
        if (!is) throw ConfigError("cannot open trace file '" + opt.trace_path + "'");
        requests = cachesim::read_trace(is);
        source = opt.trace_path;
    } else {
        const auto trace = workload::gen_trace(opt.seed, opt.universe, opt.requests,
                                               opt.zipf_s, opt.locality_prob,
                                               opt.locality_window);
        requests = trace.requests;
        source = {{"universe", opt.universe},
                  {"requests", opt.requests},
                  {"zipf_s", opt.zipf_s},
                  {"locality_prob", opt.locality_prob},
                  {"locality_window", opt.locality_window}};
    }
    const auto rep = cachesim::simulate_trace(requests, opt.policy, opt.capacity,
                                              opt.seed, opt.decay);
    nlohmann::json report{
        {"policy", cachesim::to_string(opt.policy)},
        {"capacity", opt.capacity},
        {"decay", opt.decay},
        {"seed", opt.seed},
        {"trace", std::move(source)},
        {"requests", rep.requests},
        {"hits", rep.hits},
        {"misses", rep.misses},
        {"evictions", rep.evictions},
        {"peak_resident", rep.peak_resident},
        {"miss_rate", rep.miss_rate()},
    };
    write_report(opt.out_path, report);
    return report;
}

nlohmann::json cmd_oracle_check(const OracleCheckOptions& opt) {
    opt.config.validate();
    const ModelShape shape = opt.shape.shape();
    const auto ids = noise_ids(opt.seed, opt.length);
    const Index decode_tail = std::min<Index>(32, opt.length / 8);

    nlohmann::json checks = nlohmann::json::array();
    bool all_ok = true;

    // 1. degenerate configuration vs the dense causal oracle
    {
        EngineConfig cfg = opt.config;
        cfg.local_size = std::max(cfg.local_size, opt.length);
        cfg.position_mode = PositionMode::absolute;
        const auto schedule = encode_schedule(opt.length, cfg.chunk_size, decode_tail);
        const auto got = run_engine_collect(cfg, shape, opt.seed, ids, schedule,
                                            decode_tail);
        SyntheticAdapter<Real> adapter(opt.seed, shape);
        oracle::OracleReport worst;
        worst.tolerance = 1e-5;
        for (int l = 0; l < shape.n_layers; ++l) {
            const auto seq = full_sequence(adapter, l, ids);
            const auto want = oracle::dense_attention(seq, PositionMode::absolute,
                                                      cfg.local_size);
            const auto rep = oracle::compare(got[static_cast<std::size_t>(l)], want, 1e-5);
            worst.max_abs_err = std::max(worst.max_abs_err, rep.max_abs_err);
            worst.mean_abs_err = std::max(worst.mean_abs_err, rep.mean_abs_err);
            worst.compared += rep.compared;
            worst.mismatches += rep.mismatches;
        }
        checks.push_back(report_to_json(worst, "degenerate_vs_dense", worst.ok()));
        all_ok = all_ok && worst.ok();
    }

    // 2. full-retrieval configuration vs the windowed clamped oracle
    {
        EngineConfig cfg = opt.config;
        cfg.position_mode = PositionMode::clamped;
        cfg.lookup_mode = LookupMode::encode_and_decode;
        cfg.n_lookup = opt.length / cfg.unit_size + 2;
        cfg.hot_capacity = std::max(cfg.hot_capacity, cfg.n_lookup);
        const auto schedule = encode_schedule(opt.length, cfg.chunk_size, decode_tail);
        const auto got = run_engine_collect(cfg, shape, opt.seed, ids, schedule,
                                            decode_tail);
        SyntheticAdapter<Real> adapter(opt.seed, shape);
        oracle::OracleReport worst;
        worst.tolerance = 1e-5;
        for (int l = 0; l < shape.n_layers; ++l) {
            const auto seq = full_sequence(adapter, l, ids);
            const auto want = oracle::windowed_attention_reference(
                seq, schedule, cfg.init_size, cfg.local_size, cfg.unit_size,
                PositionMode::clamped);
            const auto rep = oracle::compare(got[static_cast<std::size_t>(l)], want, 1e-5);
            worst.max_abs_err = std::max(worst.max_abs_err, rep.max_abs_err);
            worst.mean_abs_err = std::max(worst.mean_abs_err, rep.mean_abs_err);
            worst.compared += rep.compared;
            worst.mismatches += rep.mismatches;
        }
        checks.push_back(report_to_json(worst, "full_retrieval_vs_windowed", worst.ok()));
        all_ok = all_ok && worst.ok();
    }

    // 3. incremental representative scores vs the batch definition
    {
        SyntheticAdapter<Real> adapter(opt.seed, shape);
        const auto seq = full_sequence(adapter, 0, ids);
        const auto want = oracle::batch_repr_scores(seq, opt.config.local_size);

        ScoreAccumulator<Real> acc(opt.config.local_size);
        Index fed = 0;
        std::vector<Mat<Real>> seen_keys(static_cast<std::size_t>(shape.n_heads));
        while (fed < opt.length) {
            const Index b = std::min(opt.config.chunk_size, opt.length - fed);
            const auto batch = adapter.batch(
                0, std::span<const std::int64_t>(ids.data() + fed,
                                                 static_cast<std::size_t>(b)),
                fed);
            std::vector<Eigen::Ref<const Mat<Real>>> pending;
            for (int h = 0; h < shape.n_heads; ++h) {
                auto& m = seen_keys[static_cast<std::size_t>(h)];
                const Index old = m.rows();
                m.conservativeResize(old + b, shape.head_dim);
                m.bottomRows(b) = batch.k[h];
                pending.emplace_back(m);
            }
            acc.accumulate(batch, pending);
            fed += b;
        }
        const auto got = acc.finalize_front(opt.length);
        oracle::OracleReport rep;
        rep.tolerance = 1e-6;
        double total = 0.0;
        for (Index m = 0; m < opt.length; ++m) {
            const double err = std::abs(static_cast<double>(got[static_cast<std::size_t>(m)]) -
                                        want[static_cast<std::size_t>(m)]);
            rep.max_abs_err = std::max(rep.max_abs_err, err);
            total += err;
            ++rep.compared;
            if (err > rep.tolerance) ++rep.mismatches;
        }
        rep.mean_abs_err = total / static_cast<double>(opt.length);
        checks.push_back(report_to_json(rep, "repr_scores_incremental_vs_batch", rep.ok()));
        all_ok = all_ok && rep.ok();
    }

    nlohmann::json report{{"seed", opt.seed},
                          {"length", opt.length},
                          {"config", engine_config_to_json(opt.config)},
                          {"checks", std::move(checks)},
                          {"ok", all_ok}};
    write_report(opt.out_path, report);
    return report;
}

nlohmann::json cmd_bench(const BenchOptions& opt) {
    opt.config.validate();
    const ModelShape shape = opt.shape.shape();
    std::vector<nlohmann::json> rows(opt.lengths.size());
    run_parallel(opt.lengths.size(), [&](std::size_t i) {
        const Index length = opt.lengths[i];
        const auto t0 = Clock::now();
        StreamEngine<Real> engine(opt.config, shape, opt.seed + i);
        engine.feed(noise_ids(opt.seed + i, length));
        engine.finish();
        const double wall = ms_between(t0, Clock::now());
        const auto m = engine.metrics();
        Index peak_units = 0;
        std::size_t peak_bytes = 0;
        Index units = 0;
        for (const auto& l : m.layers) {
            peak_units = std::max(peak_units, l.peak_hot_units);
            peak_bytes = std::max(peak_bytes, l.peak_hot_bytes);
            units = std::max(units, l.units);
        }
        rows[i] = {
            {"length", length},
            {"wall_ms", wall},
            {"tokens_per_s", wall > 0 ? 1000.0 * static_cast<double>(length) / wall : 0.0},
            {"steps", m.steps},
            {"units", units},
            {"peak_hot_units", peak_units},
            {"peak_hot_bytes", peak_bytes},
            {"hot_capacity", opt.config.hot_capacity},
            {"metrics", metrics_to_json(m)},
        };
    });
    nlohmann::json report{{"config", engine_config_to_json(opt.config)},
                          {"seed", opt.seed},
                          {"rows", rows}};
    write_report(opt.out_path, report);
    return report;
}

namespace {

// Flags mirror the EngineConfig field names; a config file provides the base
// values and any flag given explicitly overrides the file.
void add_engine_flags(CLI::App* cmd, EngineConfig& cfg, std::string& config_path) {
    cmd->add_option("--config", config_path, "engine config JSON file");
    cmd->add_option("--chunk_size", cfg.chunk_size);
    cmd->add_option("--unit_size", cfg.unit_size);
    cmd->add_option("--n_repr", cfg.n_repr);
    cmd->add_option("--local_size", cfg.local_size);
    cmd->add_option("--init_size", cfg.init_size);
    cmd->add_option("--n_lookup", cfg.n_lookup);
    cmd->add_option("--hot_capacity", cfg.hot_capacity);
    cmd->add_option("--decay", cfg.decay);
    cmd->add_option_function<std::string>(
        "--lookup_mode", [&cfg](const std::string& s) { cfg.lookup_mode = lookup_mode_from_string(s); });
    cmd->add_option_function<std::string>(
        "--position_mode",
        [&cfg](const std::string& s) { cfg.position_mode = position_mode_from_string(s); });
}

EngineConfig merge_config(const CLI::App* cmd, const std::string& config_path,
                          const EngineConfig& flags) {
    if (config_path.empty()) return flags;
    EngineConfig base = load_config_file(config_path);
    if (cmd->count("--chunk_size")) base.chunk_size = flags.chunk_size;
    if (cmd->count("--unit_size")) base.unit_size = flags.unit_size;
    if (cmd->count("--n_repr")) base.n_repr = flags.n_repr;
    if (cmd->count("--local_size")) base.local_size = flags.local_size;
    if (cmd->count("--init_size")) base.init_size = flags.init_size;
    if (cmd->count("--n_lookup")) base.n_lookup = flags.n_lookup;
    if (cmd->count("--hot_capacity")) base.hot_capacity = flags.hot_capacity;
    if (cmd->count("--decay")) base.decay = flags.decay;
    if (cmd->count("--lookup_mode")) base.lookup_mode = flags.lookup_mode;
    if (cmd->count("--position_mode")) base.position_mode = flags.position_mode;
    return base;
}

void add_shape_flags(CLI::App* cmd, ShapeOptions& shape) {
    cmd->add_option("--n_layers", shape.n_layers);
    cmd->add_option("--n_heads", shape.n_heads);
    cmd->add_option("--head_dim", shape.head_dim);
    cmd->add_option("--value_dim", shape.value_dim);
}

}  // namespace

int run_main(int argc, char** argv) {
    CLI::App app{"streaming block-memory attention engine"};
    app.require_subcommand(1);

    RunOptions run_opt;
    std::string run_config_path;
    auto* run = app.add_subcommand("run", "stream a synthetic workload");
    add_engine_flags(run, run_opt.config, run_config_path);
    add_shape_flags(run, run_opt.shape);
    run->add_option("--seed", run_opt.seed);
    run->add_option("--length", run_opt.length);
    run->add_flag("--planted", run_opt.planted, "use a planted-retrieval task");
    run->add_option("--plant-len", run_opt.plant_len);
    run->add_option("--probe-len", run_opt.probe_len);
    run->add_flag("--align-plant", run_opt.align_plant);
    run->add_option("--out", run_opt.out_path);
    run->add_option("--trace-out", run_opt.trace_out);

    SimulateCacheOptions sim_opt;
    std::string policy_name = "lru_decay";
    auto* sim = app.add_subcommand("simulate-cache", "replay a unit-access trace");
    sim->add_option("--trace", sim_opt.trace_path);
    sim->add_option("--policy", policy_name, "lru_decay | lru | fifo | random");
    sim->add_option("--capacity", sim_opt.capacity);
    sim->add_option("--seed", sim_opt.seed);
    sim->add_option("--decay", sim_opt.decay);
    sim->add_option("--universe", sim_opt.universe);
    sim->add_option("--requests", sim_opt.requests);
    sim->add_option("--zipf", sim_opt.zipf_s);
    sim->add_option("--locality-prob", sim_opt.locality_prob);
    sim->add_option("--locality-window", sim_opt.locality_window);
    sim->add_option("--out", sim_opt.out_path);

    OracleCheckOptions oc_opt;
    std::string oc_config_path;
    auto* oc = app.add_subcommand("oracle-check", "compare the engine to brute-force references");
    add_engine_flags(oc, oc_opt.config, oc_config_path);
    add_shape_flags(oc, oc_opt.shape);
    oc->add_option("--seed", oc_opt.seed);
    oc->add_option("--length", oc_opt.length);
    oc->add_option("--out", oc_opt.out_path);

    BenchOptions bench_opt;
    std::string bench_config_path;
    std::string lengths_csv = "32768";
    auto* bench = app.add_subcommand("bench", "timing/residency across stream lengths");
    add_engine_flags(bench, bench_opt.config, bench_config_path);
    add_shape_flags(bench, bench_opt.shape);
    bench->add_option("--seed", bench_opt.seed);
    bench->add_option("--lengths", lengths_csv, "comma-separated stream lengths");
    bench->add_option("--out", bench_opt.out_path);

    try {
        app.parse(argc, argv);

        if (run->parsed()) {
            run_opt.config = merge_config(run, run_config_path, run_opt.config);
            const auto report = cmd_run(run_opt);
            std::cout << "tokens=" << report["length"]
                      << " steps=" << report["metrics"]["steps"];
            if (report.contains("recall")) std::cout << " recall=" << report["recall"];
            std::cout << " wall_ms=" << report["wall_ms"] << '\n';
            return 0;
        }
        if (sim->parsed()) {
            sim_opt.policy = cachesim::policy_from_string(policy_name);
            const auto report = cmd_simulate_cache(sim_opt);
            std::cout << "policy=" << policy_name << " requests=" << report["requests"]
                      << " miss_rate=" << report["miss_rate"] << '\n';
            return 0;
        }
        if (oc->parsed()) {
            oc_opt.config = merge_config(oc, oc_config_path, oc_opt.config);
            const auto report = cmd_oracle_check(oc_opt);
            for (const auto& c : report["checks"])
                std::cout << c["check"].get<std::string>()
                          << ": max_abs_err=" << c["max_abs_err"]
                          << (c["pass"].get<bool>() ? " ok" : " FAIL") << '\n';
            return report["ok"].get<bool>() ? 0 : 1;
        }
        if (bench->parsed()) {
            bench_opt.config = merge_config(bench, bench_config_path, bench_opt.config);
            std::stringstream ss(lengths_csv);
            std::string item;
            while (std::getline(ss, item, ','))
                bench_opt.lengths.push_back(static_cast<Index>(std::stoll(item)));
            const auto report = cmd_bench(bench_opt);
            for (const auto& row : report["rows"])
                std::cout << "length=" << row["length"]
                          << " wall_ms=" << row["wall_ms"]
                          << " tokens_per_s=" << row["tokens_per_s"]
                          << " peak_hot_units=" << row["peak_hot_units"] << '\n';
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace blockmem::cli
