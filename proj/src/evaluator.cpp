#include "flowtune/evaluator.hpp"

#include <sys/types.h>
#include <sys/wait.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

void EvaluatorConfig::validate() const {
    if (parallel_k < 1) throw ConfigError("parallel_k must be >= 1");
    if (timeout_s <= 0.0) throw ConfigError("timeout_s must be positive");
    if (kind == EvaluatorKind::ExternalCommand && command_template.empty())
        throw ConfigError("external evaluator requires command_template");
    if (kind == EvaluatorKind::ArchiveReplay && workdir.empty())
        throw ConfigError("archive replay requires the original run directory as workdir");
}

SyntheticProfile SyntheticProfile::for_circuit(const Baseline& baseline) {
    SyntheticProfile p;
    p.anchors = baseline;
    // Tie the CTS anchors to the generator ratios so surrogate-normalized
    // losses estimate the routed ones without bias.
    p.anchors.cts_wl_alpha = kCtsWlRatio * baseline.wl_alpha;
    p.anchors.cts_ecp_alpha = kCtsEcpRatio * baseline.ecp_alpha;
    p.anchors.pdp_alpha = baseline.power_alpha * baseline.ecp_alpha;
    p.landscape_key = baseline.platform + ":" + baseline.circuit;
    return p;
}

nlohmann::json JobResult::to_json() const {
    return nlohmann::json{{"run_id", run_id},
                          {"iteration", iteration},
                          {"params", params.to_json()},
                          {"metrics", metrics.to_json()},
                          {"wall_time_s", wall_time_s},
                          {"log_path", log_path.string()}};
}

JobResult JobResult::from_json(const nlohmann::json& j) {
    JobResult r;
    r.run_id = j.at("run_id").get<std::string>();
    r.iteration = j.at("iteration").get<int>();
    r.params = ParamVector::from_json(j.at("params"));
    r.metrics = MetricRecord::from_json(j.at("metrics"));
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.log_path = j.value("log_path", std::string());
    return r;
}

namespace {

struct Landscape {
    std::vector<double> weights;  // congestion bowl weights per dimension
    std::vector<double> optima;   // bowl center in the unit cube
    double clock_weight = 3.0;    // timing bowl weight on the clock coordinate
    int clock_index = 0;
};

Landscape landscape_for(const SyntheticProfile& profile, const ParamSpace& space) {
    Landscape l;
    const std::uint64_t key = fnv1a64(profile.landscape_key);
    const auto d = space.size();
    l.weights.resize(d);
    l.optima.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        Rng wrng(hash_combine(key, hash_combine(fnv1a64("weight"), i)));
        Rng orng(hash_combine(key, hash_combine(fnv1a64("optimum"), i)));
        l.weights[i] = 8.0 + 8.0 * wrng.next_unit();
        l.optima[i] = 0.25 + 0.5 * orng.next_unit();
    }
    Rng crng(hash_combine(key, fnv1a64("clock_weight")));
    l.clock_weight = 2.0 + 2.0 * crng.next_unit();
    const int ci = space.index_of(kClockPeriodName);
    l.clock_index = ci >= 0 ? ci : 0;
    return l;
}

double congestion(const Landscape& l, const std::vector<double>& u) {
    double c = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - l.optima[i];
        c += l.weights[i] * d * d;
    }
    const std::size_t j = u.size() > 1 ? 1 : 0;
    c += 0.3 * std::sin(2.0 * M_PI * u[0]) * std::sin(2.0 * M_PI * u[j]);
    return c > 0.0 ? c : 0.0;
}

double timing_pressure(const Landscape& l, const std::vector<double>& u, double c) {
    const double t = u[static_cast<std::size_t>(l.clock_index)];
    const double d = t - l.optima[static_cast<std::size_t>(l.clock_index)];
    double h = l.clock_weight * d * d + 0.15 * c;
    if (h < 0.0) h = 0.0;
    if (h > 1.0) h = 1.0;
    return h;
}

MetricRecord synthetic_means(const ParamVector& point, const ParamSpace& space,
                             const SyntheticProfile& profile, double* c_out, double* h_out) {
    point.validate(space);
    const auto u = to_unit_row(space, point);
    const auto l = landscape_for(profile, space);
    const double c = congestion(l, u);
    const double h = timing_pressure(l, u, c);
    const auto& a = profile.anchors;

    MetricRecord r;
    r.wl = a.wl_alpha * (0.82 + 0.30 * c);
    r.ecp = a.ecp_alpha * (0.85 + 0.25 * h);
    r.power = a.power_alpha * (1.10 - 0.40 * h);
    r.area = a.area_alpha * (0.93 + 0.10 * c / (1.0 + c));
    r.instance_count = std::round(a.count_alpha * (0.98 + 0.04 * c / (1.0 + c)));
    r.status = RunStatus::Complete;
    if (c_out) *c_out = c;
    if (h_out) *h_out = h;
    return r;
}

std::uint64_t point_hash(const ParamVector& point, const ParamSpace& space) {
    std::uint64_t h = fnv1a64("point");
    for (const auto& spec : space.specs())
        h = hash_combine(h, static_cast<std::uint64_t>(spec.grid_encode(point.at(spec.name))));
    return h;
}

} // namespace

double synthetic_timeout_probability(const ParamVector& point, const ParamSpace& space,
                                     const SyntheticProfile& profile) {
    const int ci = space.index_of(kClockPeriodName);
    if (ci < 0) return 0.05;
    const double clk = point.at(kClockPeriodName);
    const double ecp_a = profile.anchors.ecp_alpha;
    double p = 0.05 + 0.5 * (ecp_a - clk) / ecp_a;
    if (p < 0.0) p = 0.0;
    if (p > 0.6) p = 0.6;
    return p;
}

MetricRecord synthetic_expected(const ParamVector& point, const ParamSpace& space,
                                const SyntheticProfile& profile) {
    auto r = synthetic_means(point, space, profile, nullptr, nullptr);
    r.cts_wl = kCtsWlRatio * *r.wl;
    r.cts_ecp = kCtsEcpRatio * *r.ecp;
    return derive_pdp(std::move(r));
}

MetricRecord synthetic_evaluate(const ParamVector& point, const ParamSpace& space,
                                const SyntheticProfile& profile, std::uint64_t seed) {
    auto r = synthetic_means(point, space, profile, nullptr, nullptr);

    Rng rng(hash_combine(seed, point_hash(point, space)));
    const auto& a = profile.anchors;
    r.wl = *r.wl + rng.normal(0.0, 0.002 * a.wl_alpha);
    if (*r.wl <= 0.0) r.wl = 0.01 * a.wl_alpha; // unreachable in practice
    r.cts_wl = kCtsWlRatio * *r.wl * (1.0 + rng.uniform(-0.03, 0.03));
    r.cts_ecp = kCtsEcpRatio * *r.ecp * (1.0 + rng.uniform(-0.02, 0.02));
    r = derive_pdp(std::move(r));

    const double p = synthetic_timeout_probability(point, space, profile);
    if (rng.bernoulli(p)) {
        // routed stages timed out; only CTS-stage surrogates survive
        r.wl.reset();
        r.ecp.reset();
        r.area.reset();
        r.instance_count.reset();
        r.power.reset();
        r.pdp.reset();
        r.status = RunStatus::Timeout;
    } else {
        r.status = RunStatus::Complete;
    }
    return r;
}

Evaluator::Evaluator(EvaluatorConfig config, ParamSpace space,
                     std::optional<SyntheticProfile> profile)
    : config_(std::move(config)), space_(std::move(space)), profile_(std::move(profile)) {
    config_.validate();
    if (config_.kind == EvaluatorKind::Synthetic && !profile_)
        throw ConfigError("synthetic evaluator requires a profile");
}

const SyntheticProfile& Evaluator::profile() const {
    if (!profile_) throw ConfigError("evaluator has no synthetic profile");
    return *profile_;
}

std::filesystem::path run_directory(const std::filesystem::path& workdir, int iteration,
                                    int index) {
    char iter_buf[32], run_buf[32];
    std::snprintf(iter_buf, sizeof iter_buf, "iter_%04d", iteration);
    std::snprintf(run_buf, sizeof run_buf, "run_%04d", index);
    return workdir / "runs" / iter_buf / run_buf;
}

namespace {

JobResult archive_replay_one(const ParamVector& point, const EvaluatorConfig& config,
                             int iteration, int index) {
    char iter_buf[32], run_buf[32];
    std::snprintf(iter_buf, sizeof iter_buf, "iter_%04d", iteration);
    std::snprintf(run_buf, sizeof run_buf, "run_%04d", index);
    const auto dir = config.workdir / "archive" / iter_buf / run_buf;

    JobResult job;
    job.run_id = "iter" + std::to_string(iteration) + "_run" + std::to_string(index);
    job.iteration = iteration;
    job.params = point;

    std::ifstream pf(dir / "params.json");
    if (!pf)
        throw ReplayDivergenceError("replay: no archived run at " + dir.string());
    nlohmann::json params_json;
    pf >> params_json;
    const auto archived = ParamVector::from_json(params_json);
    if (!(archived == point))
        throw ReplayDivergenceError("replay: requested point differs from the archive at " +
                                    dir.string());

    std::ifstream mf(dir / "metrics.json");
    if (!mf)
        throw ReplayDivergenceError("replay: archived metrics missing at " + dir.string());
    nlohmann::json metrics_json;
    mf >> metrics_json;
    job.metrics = parse_canonical_metrics(metrics_json, config.metrics_key_map);
    job.log_path = dir / "metrics.json";
    return job;
}

} // namespace

JobResult Evaluator::evaluate_one(const ParamVector& point, int iteration, int index) const {
    if (config_.kind == EvaluatorKind::ExternalCommand)
        return external_prepare_and_invoke(point, config_, space_, iteration, index);
    if (config_.kind == EvaluatorKind::ArchiveReplay)
        return archive_replay_one(point, config_, iteration, index);

    JobResult job;
    job.run_id = "iter" + std::to_string(iteration) + "_run" + std::to_string(index);
    job.iteration = iteration;
    job.params = point;

    const std::uint64_t job_seed =
        hash_combine(config_.synthetic_seed,
                     hash_combine(static_cast<std::uint64_t>(iteration),
                                  static_cast<std::uint64_t>(index)));
    job.metrics = synthetic_evaluate(point, space_, *profile_, job_seed);

    Rng wall_rng(hash_combine(job_seed, fnv1a64("wall_time")));
    job.wall_time_s = job.metrics.status == RunStatus::Timeout
                          ? config_.timeout_s
                          : wall_rng.uniform(0.2, 0.8) * config_.timeout_s;

    if (!config_.workdir.empty()) {
        const auto dir = run_directory(config_.workdir, iteration, index);
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (!ec) {
            std::ofstream pf(dir / "params.json");
            pf << job.params.to_json().dump() << "\n";
            nlohmann::json m = nlohmann::json::object();
            if (job.metrics.wl) m["route__wirelength"] = *job.metrics.wl;
            if (job.metrics.ecp) m["timing__ecp"] = *job.metrics.ecp;
            if (job.metrics.cts_wl) m["cts__wirelength"] = *job.metrics.cts_wl;
            if (job.metrics.cts_ecp) m["cts__ecp"] = *job.metrics.cts_ecp;
            if (job.metrics.area) m["design__area"] = *job.metrics.area;
            if (job.metrics.instance_count)
                m["design__instance_count"] = *job.metrics.instance_count;
            if (job.metrics.power) m["power__total"] = *job.metrics.power;
            std::ofstream mf(dir / "metrics.json");
            mf << m.dump(2) << "\n";
            job.log_path = dir / "metrics.json";
        }
    }
    return job;
}

std::vector<JobResult> Evaluator::run_batch(const std::vector<ParamVector>& points,
                                            int iteration, BatchStats* stats) const {
    if (points.empty()) throw DomainError("run_batch requires a nonempty batch");
    if (static_cast<int>(points.size()) > config_.parallel_k)
        throw DomainError("batch size exceeds parallel_k");

    std::vector<JobResult> results(points.size());
    std::atomic<std::size_t> next{0};
    std::atomic<int> in_flight{0};
    std::mutex stats_mutex;
    int max_in_flight = 0;
    std::exception_ptr replay_error;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= points.size()) return;
            {
                const int now = in_flight.fetch_add(1) + 1;
                std::lock_guard lock(stats_mutex);
                if (now > max_in_flight) max_in_flight = now;
            }
            try {
                results[i] = evaluate_one(points[i], iteration, static_cast<int>(i));
            } catch (const ReplayDivergenceError&) {
                std::lock_guard lock(stats_mutex);
                if (!replay_error) replay_error = std::current_exception();
            } catch (const std::exception&) {
                // spawn or parse failure: this job fails, the batch survives
                JobResult failed;
                failed.run_id = "iter" + std::to_string(iteration) + "_run" + std::to_string(i);
                failed.iteration = iteration;
                failed.params = points[i];
                failed.metrics.status = RunStatus::Failed;
                results[i] = std::move(failed);
            }
            in_flight.fetch_sub(1);
        }
    };

    const int n_threads =
        std::min<int>(config_.parallel_k, static_cast<int>(points.size()));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (replay_error) std::rethrow_exception(replay_error);

    if (stats) {
        stats->max_in_flight = max_in_flight;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (!config_.workdir.empty())
                stats->run_dirs.push_back(
                    run_directory(config_.workdir, iteration, static_cast<int>(i)));
    }
    return results;
}

std::string default_flow_variable_name(std::string_view param_name) {
    std::string out;
    out.reserve(param_name.size());
    for (char ch : param_name) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        else if (!out.empty() && out.back() != '_')
            out.push_back('_');
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

MetricRecord parse_canonical_metrics(const nlohmann::json& j,
                                     const std::map<std::string, std::string>& key_map) {
    static const std::pair<const char*, MetricId> canonical[] = {
        {"route__wirelength", MetricId::Wl},
        {"timing__ecp", MetricId::Ecp},
        {"cts__wirelength", MetricId::CtsWl},
        {"cts__ecp", MetricId::CtsEcp},
        {"design__area", MetricId::Area},
        {"design__instance_count", MetricId::InstanceCount},
        {"power__total", MetricId::Power},
    };
    MetricRecord r;
    for (const auto& [canon, id] : canonical) {
        auto it = key_map.find(canon);
        const std::string key = it != key_map.end() ? it->second : canon;
        if (j.contains(key)) r.set(id, j.at(key).get<double>());
    }
    r = derive_pdp(std::move(r));
    if (r.status != RunStatus::Failed || (r.wl && r.ecp)) {
        // status from metric presence
        if (r.wl && r.ecp) r.status = RunStatus::Complete;
        else if (r.cts_wl || r.cts_ecp) r.status = RunStatus::Timeout;
        else r.status = RunStatus::Failed;
    }
    return r;
}

namespace {

std::string format_param_value(const ParamSpec& spec, double value) {
    char buf[64];
    if (spec.kind == ParamKind::Continuous)
        std::snprintf(buf, sizeof buf, "%.10g", value);
    else
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(std::llround(value)));
    return buf;
}

} // namespace

JobResult external_prepare_and_invoke(const ParamVector& point, const EvaluatorConfig& config,
                                      const ParamSpace& space, int iteration, int index) {
    point.validate(space);
    if (config.command_template.empty())
        throw ConfigError("external evaluator requires command_template");

    const auto dir = run_directory(config.workdir, iteration, index);
    std::filesystem::create_directories(dir);

    JobResult job;
    job.run_id = "iter" + std::to_string(iteration) + "_run" + std::to_string(index);
    job.iteration = iteration;
    job.params = point;
    job.log_path = dir / "command.log";

    {
        std::ofstream pf(dir / "params.json");
        pf << point.to_json().dump() << "\n";
    }
    {
        std::ofstream overrides(dir / "overrides.mk");
        for (const auto& spec : space.specs()) {
            if (spec.name == kClockPeriodName) continue;
            auto it = config.param_key_map.find(spec.name);
            const std::string key =
                it != config.param_key_map.end() ? it->second
                                                 : default_flow_variable_name(spec.name);
            overrides << key << "=" << format_param_value(spec, point.at(spec.name)) << "\n";
        }
    }
    if (const auto* clk = space.find(kClockPeriodName)) {
        std::ofstream sdc(dir / "constraint.sdc");
        sdc << "create_clock [get_ports clk] -name core_clock -period "
            << format_param_value(*clk, point.at(kClockPeriodName)) << "\n";
    }

    const auto start = std::chrono::steady_clock::now();
    const pid_t pid = fork();
    if (pid == 0) {
        setenv("RUN_DIR", dir.c_str(), 1);
        char timeout_buf[32];
        std::snprintf(timeout_buf, sizeof timeout_buf, "%.0f", config.timeout_s);
        setenv("TIMEOUT_S", timeout_buf, 1);
        if (!std::freopen(job.log_path.c_str(), "w", stdout)) _exit(127);
        (void)dup2(fileno(stdout), fileno(stderr));
        execl("/bin/sh", "sh", "-c", config.command_template.c_str(), (char*)nullptr);
        _exit(127);
    }

    bool spawned = pid > 0;
    bool timed_out = false;
    if (spawned) {
        bool term_sent = false;
        for (;;) {
            int status = 0;
            const pid_t done = waitpid(pid, &status, WNOHANG);
            if (done == pid || done < 0) break;
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (!term_sent && elapsed > config.timeout_s) {
                kill(pid, SIGTERM);
                term_sent = true;
                timed_out = true;
            } else if (term_sent && elapsed > config.timeout_s + kTimeoutGraceSeconds) {
                kill(pid, SIGKILL);
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }
    job.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (!spawned) {
        job.metrics.status = RunStatus::Failed;
        return job;
    }

    const auto metrics_path = dir / "metrics.json";
    const auto surrogate_path = dir / "metrics_cts.json";
    auto parse_file = [&](const std::filesystem::path& p) -> std::optional<MetricRecord> {
        std::ifstream in(p);
        if (!in) return std::nullopt;
        try {
            nlohmann::json j;
            in >> j;
            return parse_canonical_metrics(j, config.metrics_key_map);
        } catch (const std::exception& e) {
            std::ofstream log(job.log_path, std::ios::app);
            log << "metrics parse error: " << e.what() << "\n";
            MetricRecord failed;
            failed.status = RunStatus::Failed;
            return failed;
        }
    };

    if (auto parsed = parse_file(metrics_path)) {
        job.metrics = *parsed;
    } else if (auto surrogate = parse_file(surrogate_path)) {
        job.metrics = *surrogate;
        if (job.metrics.status == RunStatus::Complete) job.metrics.status = RunStatus::Timeout;
    } else {
        job.metrics.status = RunStatus::Failed;
    }
    if (timed_out && job.metrics.status == RunStatus::Complete)
        job.metrics.status = RunStatus::Timeout;
    return job;
}

std::filesystem::path archive_iteration(int iteration, const std::filesystem::path& workdir) {
    char iter_buf[32];
    std::snprintf(iter_buf, sizeof iter_buf, "iter_%04d", iteration);
    const auto src = workdir / "runs" / iter_buf;
    const auto dst = workdir / "archive" / iter_buf;
    if (!std::filesystem::exists(src))
        throw Error("iteration directory does not exist: " + src.string());
    if (std::filesystem::exists(dst))
        throw Error("iteration already archived: " + dst.string());
    std::filesystem::create_directories(dst.parent_path());
    std::error_code ec;
    std::filesystem::rename(src, dst, ec);
    if (ec) {
        // cross-device fallback: copy then remove, reporting anything left behind
        std::filesystem::copy(src, dst, std::filesystem::copy_options::recursive);
        std::error_code rm_ec;
        std::filesystem::remove_all(src, rm_ec);
        if (rm_ec)
            throw Error("archive partially moved; source remains at " + src.string() + ": " +
                        rm_ec.message());
    }
    return dst;
}

} // namespace flowtune
