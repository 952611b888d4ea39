#include "flowtune/report.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include "flowtune/errors.hpp"
#include "flowtune/inspect.hpp"
#include "flowtune/trial_table.hpp"

namespace flowtune {

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string format_range(const ParamSpec& spec) {
    std::ostringstream out;
    if (spec.kind == ParamKind::Binary) {
        out << "{0, 1}";
    } else {
        out << "[" << spec.min << ", " << spec.max << "]";
    }
    return out.str();
}

} // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const BaselineTable* baselines) {
    static const BaselineTable builtin = BaselineTable::builtin_defaults();
    const BaselineTable* table = baselines ? baselines : &builtin;

    RunConfig config;
    config.raw = j;
    config.platform = j.value("platform", std::string("ASAP7"));
    config.circuit = j.value("circuit", std::string("IBEX"));

    // objective first: its baseline anchors the clock period range
    nlohmann::json objective_json = j.value("objective", nlohmann::json{{"kind", "co_optimize"}});
    if (!objective_json.contains("baseline"))
        objective_json["baseline"] = {{"platform", config.platform},
                                      {"circuit", config.circuit}};
    config.objective = Objective::from_json(objective_json, table);

    const auto& space_json = j.value("space", nlohmann::json{{"preset", "four_param"}});
    if (space_json.contains("preset")) {
        const auto preset = space_json.at("preset").get<std::string>();
        PresetLabel label;
        if (preset == "four_param") label = PresetLabel::FourParam;
        else if (preset == "twelve_param") label = PresetLabel::TwelveParam;
        else throw ConfigError("unknown space preset: " + preset);
        config.space = with_clock_period_anchor(build_preset_space(label),
                                                config.objective.baseline.ecp_alpha);
    } else {
        config.space = ParamSpace::from_json(space_json);
    }

    const auto& loop_json = j.value("loop", nlohmann::json::object());
    config.loop.total_serial_iterations = loop_json.value("iterations", 15);
    config.loop.parallel_k = loop_json.value("parallel_k", 25);
    config.loop.max_tool_calls_per_iteration =
        loop_json.value("max_tool_calls_per_iteration", 8);
    config.loop.seed = loop_json.value("seed", 0ULL);

    const auto& retrieval_json = j.value("retrieval", nlohmann::json::object());
    config.loop.retrieval_enabled = retrieval_json.value("enabled", false);
    config.loop.retrieval_budget.max_calls_per_iteration =
        retrieval_json.value("max_calls_per_iteration", 3);
    config.loop.retrieval_budget.max_payload_chars_per_iteration =
        retrieval_json.value("max_payload_chars_per_iteration", 2000);
    config.loop.retrieval_budget.max_snippet_chars =
        retrieval_json.value("max_snippet_chars", 500);
    if (retrieval_json.contains("cutoff_iteration") &&
        !retrieval_json["cutoff_iteration"].is_null())
        config.loop.retrieval_budget.cutoff_iteration =
            retrieval_json["cutoff_iteration"].get<int>();

    const auto& eval_json = j.value("evaluator", nlohmann::json::object());
    const auto kind = eval_json.value("kind", std::string("synthetic"));
    if (kind == "synthetic") config.evaluator.kind = EvaluatorKind::Synthetic;
    else if (kind == "external_command") config.evaluator.kind = EvaluatorKind::ExternalCommand;
    else if (kind == "archive_replay") config.evaluator.kind = EvaluatorKind::ArchiveReplay;
    else throw ConfigError("unknown evaluator kind: " + kind);
    config.evaluator.timeout_s = eval_json.value("timeout_s", 30.0);
    config.evaluator.parallel_k = config.loop.parallel_k;
    config.evaluator.command_template = eval_json.value("command_template", std::string());
    config.evaluator.synthetic_seed = eval_json.value("synthetic_seed", config.loop.seed);
    if (eval_json.contains("param_key_map"))
        config.evaluator.param_key_map =
            eval_json["param_key_map"].get<std::map<std::string, std::string>>();
    if (eval_json.contains("metrics_key_map"))
        config.evaluator.metrics_key_map =
            eval_json["metrics_key_map"].get<std::map<std::string, std::string>>();

    config.profile = SyntheticProfile::for_circuit(config.objective.baseline);
    if (eval_json.contains("landscape_key"))
        config.profile.landscape_key = eval_json["landscape_key"].get<std::string>();

    const auto& backend_json = j.value("backend", nlohmann::json::object());
    config.backend_kind = backend_json.value("kind", std::string("scripted"));
    return config;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path,
                               const BaselineTable* baselines) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunManifest::to_json() const {
    return nlohmann::json{{"config", config_snapshot},
                          {"seed", seed},
                          {"backend_id", backend_id},
                          {"started_at", started_at},
                          {"ended_at", ended_at},
                          {"artifacts", artifact_paths}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_snapshot = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.backend_id = j.at("backend_id").get<std::string>();
    m.started_at = j.value("started_at", std::string());
    m.ended_at = j.value("ended_at", std::string());
    if (j.contains("artifacts"))
        m.artifact_paths = j["artifacts"].get<std::map<std::string, std::string>>();
    return m;
}

namespace {

ContextInputs build_context_inputs(const RunConfig& config) {
    ContextInputs inputs;
    inputs.platform = config.platform;
    inputs.circuit = config.circuit;
    inputs.space = config.space;
    inputs.objective = config.objective;
    inputs.output_variables = {"WL", "ECP", "WL'", "ECP'", "Area", "Count", "Power", "PDP"};

    switch (config.objective.kind) {
    case Objective::Kind::Single:
        inputs.task = std::string("minimize ") + metric_display_name(config.objective.metric);
        inputs.optimization_quantity = inputs.task;
        break;
    case Objective::Kind::CoOptimize:
        inputs.task = "jointly minimize WL and ECP";
        inputs.optimization_quantity = "minimize WL/WL_baseline + ECP/ECP_baseline";
        break;
    case Objective::Kind::WeightedSum:
        inputs.task = "minimize a weighted sum of normalized metrics";
        inputs.optimization_quantity = "minimize weighted normalized sum";
        break;
    case Objective::Kind::Constrained:
        inputs.task = "minimize the target objective without violating leeway constraints";
        inputs.optimization_quantity = "minimize constrained target";
        break;
    }
    for (const auto& spec : config.space.specs()) {
        inputs.input_domains[spec.name] =
            std::string(param_kind_name(spec.kind)) + " " + format_range(spec);
        inputs.suggested_ranges[spec.name] = format_range(spec);
    }
    return inputs;
}

std::unique_ptr<LlmBackend> build_backend(const std::string& kind) {
    if (kind == "scripted")
        return std::make_unique<ScriptedBackend>(ScriptedBackend::Mode::FullToolchain);
    if (kind == "scripted_direct")
        return std::make_unique<ScriptedBackend>(ScriptedBackend::Mode::DirectK);
    if (kind == "http") return std::make_unique<HttpBackend>();
    throw ConfigError("unknown backend kind: " + kind);
}

/// Replays the logged completion stream of a finished run.
class TranscriptBackend : public LlmBackend {
public:
    TranscriptBackend(const std::filesystem::path& transcripts, std::string id)
        : id_(std::move(id)) {
        std::ifstream in(transcripts);
        if (!in) throw ReplayDivergenceError("replay: missing transcript log");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            if (j.value("type", "") == "completion") entries_.push_back(std::move(j));
        }
    }

    CompletionResult complete(const CompletionRequest&) override {
        if (cursor_ >= entries_.size())
            throw ReplayDivergenceError("replay: transcript exhausted");
        const auto& entry = entries_[cursor_++];
        CompletionResult result;
        result.content = entry.value("content", std::string());
        for (const auto& c : entry.value("tool_calls", nlohmann::json::array()))
            result.tool_calls.push_back(
                {c.at("name").get<std::string>(), c.at("arguments")});
        return result;
    }

    std::string identifier() const override { return id_; }

private:
    std::vector<nlohmann::json> entries_;
    std::size_t cursor_ = 0;
    std::string id_;
};

} // namespace

TuneOutcome run_tune(const RunConfig& config, const std::filesystem::path& out_dir,
                     ProviderClient* provider_override) {
    std::filesystem::create_directories(out_dir);

    EvaluatorConfig eval_config = config.evaluator;
    eval_config.workdir = out_dir;
    eval_config.parallel_k = config.loop.parallel_k;
    Evaluator evaluator(eval_config, config.space, config.profile);

    auto backend = build_backend(config.backend_kind);

    // retrieval wiring: cold caches need live credentials
    std::unique_ptr<RetrievalCache> cache;
    std::unique_ptr<ProviderClient> owned_provider;
    std::unique_ptr<RetrievalTools> retrieval;
    if (config.loop.retrieval_enabled) {
        const auto cache_path =
            config.raw.contains("retrieval") &&
                    config.raw["retrieval"].contains("cache_file")
                ? std::filesystem::path(
                      config.raw["retrieval"]["cache_file"].get<std::string>())
                : out_dir / "retrieval_cache.ldjson";
        cache = std::make_unique<RetrievalCache>(cache_path);
        ProviderClient* provider = provider_override;
        if (!provider) {
            const char* key = std::getenv("WEB_SEARCH_API_KEY");
            if ((!key || !*key) && cache->size() == 0)
                throw ConfigError(
                    "retrieval enabled with a cold cache: missing environment value "
                    "WEB_SEARCH_API_KEY");
            if (key && *key) {
                owned_provider = std::make_unique<HttpProviderClient>(
                    "https://api.search.brave.com", "https://api.openalex.org");
            } else {
                owned_provider = std::make_unique<NullProviderClient>(); // warm-cache only
            }
            provider = owned_provider.get();
        }
        retrieval = std::make_unique<RetrievalTools>(*provider, *cache,
                                                     config.loop.retrieval_budget);
    }

    auto context = GlobalContext::initialize(build_context_inputs(config));

    RunManifest manifest;
    manifest.config_snapshot = config.raw;
    manifest.seed = config.loop.seed;
    manifest.backend_id = backend->identifier();
    manifest.started_at = iso_timestamp();

    AgentLoop loop(std::move(context), config.loop, std::move(evaluator), *backend,
                   retrieval.get(), out_dir);
    TuneOutcome outcome;
    outcome.run_dir = out_dir;
    outcome.report = loop.run_to_completion();

    manifest.ended_at = iso_timestamp();
    manifest.artifact_paths = {
        {"iterations", (out_dir / "iterations.ldjson").string()},
        {"transcripts", (out_dir / "transcripts.ldjson").string()},
        {"trials", (out_dir / "trials.ldjson").string()},
        {"final_report", (out_dir / "final_report.json").string()},
    };
    std::ofstream mf(out_dir / "manifest.json");
    mf << manifest.to_json().dump(2) << "\n";

    const bool ok = outcome.report.best_found &&
                    (!outcome.report.constrained || outcome.report.violation_free);
    outcome.exit_status = ok ? 0 : 1;
    return outcome;
}

int run_replay(const std::filesystem::path& run_dir) {
    std::ifstream mf(run_dir / "manifest.json");
    if (!mf) throw ReplayDivergenceError("replay: missing manifest in " + run_dir.string());
    nlohmann::json manifest_json;
    mf >> manifest_json;
    const auto manifest = RunManifest::from_json(manifest_json);
    auto config = RunConfig::from_json(manifest.config_snapshot);

    // logged per-iteration proposals are the ground truth to reproduce
    std::vector<IterationRecord> logged;
    {
        std::ifstream in(run_dir / "iterations.ldjson");
        if (!in) throw ReplayDivergenceError("replay: missing iteration records");
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) logged.push_back(IterationRecord::from_json(nlohmann::json::parse(line)));
    }

    // decision stages rerun against the archived flow results
    EvaluatorConfig eval_config = config.evaluator;
    eval_config.kind = EvaluatorKind::ArchiveReplay;
    eval_config.workdir = run_dir;
    eval_config.parallel_k = config.loop.parallel_k;
    Evaluator evaluator(eval_config, config.space, config.profile);

    TranscriptBackend backend(run_dir / "transcripts.ldjson", manifest.backend_id);

    NullProviderClient null_provider;
    RetrievalCache cache(run_dir / "retrieval_cache.ldjson");
    std::unique_ptr<RetrievalTools> retrieval;
    if (config.loop.retrieval_enabled)
        retrieval = std::make_unique<RetrievalTools>(null_provider, cache,
                                                     config.loop.retrieval_budget);

    const auto replay_dir = run_dir / "replay";
    std::filesystem::remove_all(replay_dir);

    auto context = GlobalContext::initialize(build_context_inputs(config));
    AgentLoop loop(std::move(context), config.loop, std::move(evaluator), backend,
                   retrieval.get(), replay_dir);
    loop.set_replay_strict(true);

    for (const auto& expected : logged) {
        IterationRecord actual;
        try {
            actual = loop.run_iteration();
        } catch (const ReplayDivergenceError& e) {
            throw ReplayDivergenceError("iteration " + std::to_string(expected.iteration) +
                                        ": " + e.what());
        }
        if (actual.proposals != expected.proposals)
            throw ReplayDivergenceError("iteration " + std::to_string(expected.iteration) +
                                        ": proposal sequence diverged");
    }
    return null_provider.attempted_calls();
}

Baseline run_baseline(const RunConfig& config, const std::filesystem::path& out_file) {
    Baseline baseline;
    if (config.evaluator.kind == EvaluatorKind::Synthetic) {
        // the synthetic flow is calibrated so defaults reproduce the anchors
        baseline = config.profile.anchors;
        baseline.platform = config.platform;
        baseline.circuit = config.circuit;
    } else {
        // run once at default parameters (lattice midpoints unless configured)
        ParamVector defaults;
        for (const auto& spec : config.space.specs())
            defaults.assignments[spec.name] = spec.from_unit(0.5);
        if (config.raw.contains("evaluator") &&
            config.raw["evaluator"].contains("default_params"))
            for (const auto& [k, v] :
                 config.raw["evaluator"]["default_params"].items())
                defaults.assignments[k] = v.get<double>();
        EvaluatorConfig eval_config = config.evaluator;
        if (eval_config.workdir.empty())
            eval_config.workdir = out_file.parent_path() / "baseline_run";
        Evaluator evaluator(eval_config, config.space, config.profile);
        const auto job = evaluator.evaluate_one(defaults, 0, 0);
        const auto& m = job.metrics;
        if (!m.wl || !m.ecp || !m.cts_wl || !m.cts_ecp || !m.area || !m.instance_count ||
            !m.power)
            throw Error("baseline run did not produce a complete metric record");
        baseline.platform = config.platform;
        baseline.circuit = config.circuit;
        baseline.wl_alpha = *m.wl;
        baseline.ecp_alpha = *m.ecp;
        baseline.cts_wl_alpha = *m.cts_wl;
        baseline.cts_ecp_alpha = *m.cts_ecp;
        baseline.area_alpha = *m.area;
        baseline.count_alpha = *m.instance_count;
        baseline.power_alpha = *m.power;
        baseline.pdp_alpha = m.pdp ? *m.pdp : *m.power * *m.ecp;
    }
    baseline.validate();

    BaselineTable table;
    table.add(baseline);
    if (!out_file.parent_path().empty())
        std::filesystem::create_directories(out_file.parent_path());
    std::ofstream out(out_file);
    if (!out) throw Error("cannot write baseline file: " + out_file.string());
    out << table.to_json().dump(2) << "\n";
    return baseline;
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

namespace {

std::vector<MetricRecord> load_metrics(const std::filesystem::path& run_dir) {
    std::ifstream in(run_dir / "trials.ldjson");
    if (!in) throw Error("missing trials.ldjson in " + run_dir.string());
    std::vector<MetricRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out.push_back(MetricRecord::from_json(j.at("metrics")));
    }
    return out;
}

} // namespace

void write_trajectory_csv(const std::filesystem::path& run_dir, std::ostream& out) {
    std::ifstream in(run_dir / "final_report.json");
    if (!in) throw Error("missing final_report.json in " + run_dir.string());
    nlohmann::json report;
    in >> report;
    out << "iteration,incumbent,rows_total\n";
    for (const auto& t : report.at("trajectory"))
        out << t.at("iteration").get<int>() << "," << t.at("incumbent").get<double>() << ","
            << t.at("rows_total").get<int>() << "\n";
}

void write_correlation_csv(const std::filesystem::path& run_dir, std::ostream& out) {
    const auto records = load_metrics(run_dir);
    const MetricId ids[] = {MetricId::Wl, MetricId::Ecp, MetricId::Area,
                            MetricId::InstanceCount, MetricId::Power};
    std::vector<std::vector<double>> columns(5);
    for (const auto& r : records) {
        bool complete = true;
        for (const auto id : ids)
            if (!r.get(id)) complete = false;
        if (!complete) continue;
        for (std::size_t c = 0; c < 5; ++c) columns[c].push_back(*r.get(ids[c]));
    }
    out << "kind,metric,WL,ECP,Area,Count,Power\n";
    for (const char* kind : {"pearson", "kendall"}) {
        for (std::size_t i = 0; i < 5; ++i) {
            out << kind << "," << metric_display_name(ids[i]);
            for (std::size_t j = 0; j < 5; ++j) {
                Eigen::VectorXd a = Eigen::Map<Eigen::VectorXd>(
                    columns[i].data(), static_cast<Eigen::Index>(columns[i].size()));
                Eigen::VectorXd b = Eigen::Map<Eigen::VectorXd>(
                    columns[j].data(), static_cast<Eigen::Index>(columns[j].size()));
                const double v = std::string(kind) == "pearson" ? pearson(a, b)
                                                                : kendall_tau_b(a, b);
                out << "," << v;
            }
            out << "\n";
        }
    }
}

std::vector<std::pair<double, double>> pareto_front_min(
    const std::vector<std::pair<double, double>>& points) {
    std::vector<std::pair<double, double>> front;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            if (i == j) continue;
            const bool no_worse =
                points[j].first <= points[i].first && points[j].second <= points[i].second;
            const bool better =
                points[j].first < points[i].first || points[j].second < points[i].second;
            if (no_worse && better) dominated = true;
        }
        if (!dominated) front.push_back(points[i]);
    }
    return front;
}

void write_pareto_csv(const std::filesystem::path& run_dir, std::ostream& out) {
    const auto records = load_metrics(run_dir);
    std::vector<std::pair<double, double>> points;
    for (const auto& r : records)
        if (r.wl && r.ecp) points.emplace_back(*r.wl, *r.ecp);
    out << "wl,ecp\n";
    for (const auto& [wl, ecp] : pareto_front_min(points))
        out << wl << "," << ecp << "\n";
}

} // namespace flowtune
