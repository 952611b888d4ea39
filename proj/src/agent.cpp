#include "flowtune/agent.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "flowtune/agglom.hpp"
#include "flowtune/errors.hpp"
#include "flowtune/inspect.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

const char* metric_display_name(MetricId id) {
    switch (id) {
    case MetricId::Wl: return "WL";
    case MetricId::Ecp: return "ECP";
    case MetricId::CtsWl: return "WL'";
    case MetricId::CtsEcp: return "ECP'";
    case MetricId::Area: return "Area";
    case MetricId::InstanceCount: return "Count";
    case MetricId::Power: return "Power";
    case MetricId::Pdp: return "PDP";
    }
    return "?";
}

nlohmann::json DecisionSummary::to_json() const {
    return nlohmann::json{{"iteration", iteration},
                          {"best_objective", best_objective},
                          {"tools_used", tools_used},
                          {"region_note", region_note},
                          {"surrogate_rows_added", surrogate_rows_added}};
}

DecisionSummary DecisionSummary::from_json(const nlohmann::json& j) {
    DecisionSummary s;
    s.iteration = j.at("iteration").get<int>();
    s.best_objective = j.at("best_objective").get<double>();
    s.tools_used = j.at("tools_used").get<std::vector<std::string>>();
    s.region_note = j.at("region_note").get<std::string>();
    s.surrogate_rows_added = j.at("surrogate_rows_added").get<int>();
    return s;
}

std::string normalize_optimization_quantity(const std::string& text) {
    std::string lower;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c)) || (!lower.empty() && lower.back() != ' '))
            lower.push_back(std::isspace(static_cast<unsigned char>(c))
                                ? ' '
                                : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    while (!lower.empty() && lower.back() == ' ') lower.pop_back();

    bool minimize = true;
    std::string quantity = lower;
    if (lower.rfind("minimize ", 0) == 0) {
        quantity = lower.substr(9);
    } else if (lower.rfind("maximize ", 0) == 0) {
        quantity = lower.substr(9);
        minimize = false;
    }
    // a leading sign flips the direction
    while (!quantity.empty() && (quantity.front() == ' ' || quantity.front() == '-')) {
        if (quantity.front() == '-') minimize = !minimize;
        quantity.erase(quantity.begin());
    }
    return (minimize ? "minimize " : "maximize ") + quantity;
}

GlobalContext GlobalContext::initialize(ContextInputs inputs) {
    auto require = [](bool ok, const char* bullet) {
        if (!ok)
            throw ConfigError(std::string("context initialization missing input: ") + bullet);
    };
    require(!inputs.platform.empty(), "The design platform");
    require(!inputs.circuit.empty(), "The circuit under consideration");
    require(!inputs.task.empty(), "The optimization task");
    require(inputs.space.size() > 0, "The input design parameters");
    require(!inputs.output_variables.empty(), "The output variable sets");
    require(!inputs.optimization_quantity.empty(), "The exact output quantity to optimize");
    require(!inputs.input_domains.empty(), "The domains of the inputs");
    require(!inputs.suggested_ranges.empty(), "Suggested ranges for inputs");
    inputs.optimization_quantity = normalize_optimization_quantity(inputs.optimization_quantity);
    GlobalContext ctx;
    ctx.inputs_ = std::move(inputs);
    return ctx;
}

void GlobalContext::append_summary(DecisionSummary summary) {
    if (summary.region_note.size() > kRegionNoteMaxChars)
        summary.region_note.resize(kRegionNoteMaxChars);
    summaries_.push_back(std::move(summary));
    while (summaries_.size() > kDecisionSummaryCap) summaries_.pop_front();
}

namespace {

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string objective_instruction(const Objective& objective) {
    const auto& b = objective.baseline;
    std::ostringstream out;
    switch (objective.kind) {
    case Objective::Kind::Single: {
        const char* name = metric_display_name(objective.metric);
        out << "There is only a single objective to optimize in this problem. You observe "
               "that the value inside the final JSON is "
            << name << ", while the corresponding baseline value is "
            << format_number(b.alpha_for(objective.metric))
            << ". Your effective loss to minimize should be " << name << " / "
            << format_number(b.alpha_for(objective.metric)) << ".";
        if (const auto s = surrogate_of(objective.metric)) {
            out << " If you do not observe the correct value " << name
                << ", but you observe a strong surrogate " << metric_display_name(*s)
                << ", you should use it as a signal. Your effective loss should then be "
                << metric_display_name(*s) << " / " << format_number(b.alpha_for(*s)) << ".";
        }
        break;
    }
    case Objective::Kind::CoOptimize:
        out << "There are two objectives to optimize jointly. Your effective loss to "
               "minimize should be WL / "
            << format_number(b.wl_alpha) << " + ECP / " << format_number(b.ecp_alpha)
            << ". If a routed value is unavailable but its surrogate exists, apply the "
               "same substitution: WL' / "
            << format_number(b.cts_wl_alpha) << " and ECP' / "
            << format_number(b.cts_ecp_alpha) << ".";
        break;
    case Objective::Kind::WeightedSum: {
        out << "Your effective loss to minimize is a weighted sum:";
        bool first = true;
        for (const auto& [m, w] : objective.weights) {
            out << (first ? " " : " + ") << format_number(w) << " * "
                << metric_display_name(m) << " / " << format_number(b.alpha_for(m));
            first = false;
        }
        out << ".";
        break;
    }
    case Objective::Kind::Constrained:
        out << objective_instruction(*objective.target);
        for (const auto& c : objective.constraints) {
            out << " Do not allow " << metric_display_name(c.metric)
                << " to worsen by more than " << format_number(c.leeway_percent)
                << "% relative to its baseline value "
                << format_number(b.alpha_for(c.metric)) << ".";
        }
        break;
    }
    return out.str();
}

} // namespace

std::string GlobalContext::render_system_prompt() const {
    std::ostringstream out;
    out << "You are tuning flow parameters for a digital design.\n";
    out << "Design platform: " << inputs_.platform << "\n";
    out << "Circuit under consideration: " << inputs_.circuit << "\n";
    out << "Optimization task: " << inputs_.task << "\n";
    out << "Exact quantity to optimize: " << inputs_.optimization_quantity << "\n";
    out << "Tunable parameters:\n";
    for (const auto& spec : inputs_.space.specs()) {
        out << "  - " << spec.name << " (" << param_kind_name(spec.kind) << ")";
        auto domain = inputs_.input_domains.find(spec.name);
        if (domain != inputs_.input_domains.end()) out << " domain: " << domain->second;
        auto range = inputs_.suggested_ranges.find(spec.name);
        if (range != inputs_.suggested_ranges.end()) out << " suggested: " << range->second;
        out << "\n";
    }
    out << "Output variables: ";
    for (std::size_t i = 0; i < inputs_.output_variables.size(); ++i)
        out << (i ? ", " : "") << inputs_.output_variables[i];
    out << "\n";
    out << objective_instruction(inputs_.objective) << "\n";
    if (!summaries_.empty()) {
        out << "Decision summaries from previous iterations:\n";
        for (const auto& s : summaries_) {
            out << "  [iter " << s.iteration << "] best=" << format_number(s.best_objective)
                << " surrogate_rows=" << s.surrogate_rows_added;
            if (!s.region_note.empty()) out << " note: " << s.region_note;
            out << "\n";
        }
    }
    return out.str();
}

nlohmann::json GlobalContext::to_json() const {
    nlohmann::json summaries = nlohmann::json::array();
    for (const auto& s : summaries_) summaries.push_back(s.to_json());
    return nlohmann::json{{"platform", inputs_.platform},
                          {"circuit", inputs_.circuit},
                          {"task", inputs_.task},
                          {"optimization_quantity", inputs_.optimization_quantity},
                          {"space", inputs_.space.to_json()},
                          {"objective", inputs_.objective.to_json()},
                          {"output_variables", inputs_.output_variables},
                          {"input_domains", inputs_.input_domains},
                          {"suggested_ranges", inputs_.suggested_ranges},
                          {"decision_summaries", summaries}};
}

void LoopConfig::validate() const {
    if (total_serial_iterations < 1) throw ConfigError("total_serial_iterations must be >= 1");
    if (parallel_k < 1) throw ConfigError("parallel_k must be >= 1");
    if (max_tool_calls_per_iteration < 0) throw ConfigError("tool budget must be >= 0");
    retrieval_budget.validate();
}

bool IterationRecord::has_stage(const std::string& name) const {
    for (const auto& s : stages)
        if (s.name == name) return true;
    return false;
}

nlohmann::json IterationRecord::to_json() const {
    nlohmann::json stages_json = nlohmann::json::array();
    for (const auto& s : stages)
        stages_json.push_back({{"name", s.name}, {"detail", s.detail}});
    nlohmann::json j{{"iteration", iteration},
                     {"stages", stages_json},
                     {"tools_used", tools_used},
                     {"tool_calls", tool_calls},
                     {"rejected_tool_calls", rejected_tool_calls},
                     {"retrieval_calls", retrieval_calls},
                     {"retrieval_payload_chars", retrieval_payload_chars},
                     {"proposals", proposals},
                     {"rows_added", rows_added},
                     {"surrogate_rows_added", surrogate_rows_added},
                     {"trace_fragment", trace_fragment}};
    if (best_objective) j["best_objective"] = *best_objective;
    return j;
}

IterationRecord IterationRecord::from_json(const nlohmann::json& j) {
    IterationRecord r;
    r.iteration = j.at("iteration").get<int>();
    for (const auto& s : j.at("stages"))
        r.stages.push_back({s.at("name").get<std::string>(), s.at("detail")});
    r.tools_used = j.at("tools_used").get<std::vector<std::string>>();
    r.tool_calls = j.at("tool_calls").get<int>();
    r.rejected_tool_calls = j.at("rejected_tool_calls").get<int>();
    r.retrieval_calls = j.at("retrieval_calls").get<int>();
    r.retrieval_payload_chars = j.at("retrieval_payload_chars").get<int>();
    r.proposals = j.at("proposals");
    r.rows_added = j.at("rows_added").get<int>();
    r.surrogate_rows_added = j.at("surrogate_rows_added").get<int>();
    r.trace_fragment = j.value("trace_fragment", std::string());
    if (j.contains("best_objective")) r.best_objective = j.at("best_objective").get<double>();
    return r;
}

GlobalContext update_global_context(GlobalContext context, const IterationRecord& local) {
    DecisionSummary summary;
    summary.iteration = local.iteration;
    summary.best_objective = local.best_objective.value_or(
        std::numeric_limits<double>::quiet_NaN());
    summary.tools_used = local.tools_used;
    summary.surrogate_rows_added = local.surrogate_rows_added;
    std::ostringstream note;
    note << "rows+" << local.rows_added;
    if (local.best_objective) note << " best=" << *local.best_objective;
    if (local.retrieval_calls > 0) note << " retrieval=" << local.retrieval_calls;
    summary.region_note = note.str();
    if (summary.region_note.size() > kRegionNoteMaxChars)
        summary.region_note.resize(kRegionNoteMaxChars);
    context.append_summary(std::move(summary));
    return context;
}

bool should_stop(int completed_iterations, const LoopConfig& config) {
    return completed_iterations >= config.total_serial_iterations;
}

// ---------------------------------------------------------------------------
// tool dispatcher
// ---------------------------------------------------------------------------

ToolDispatcher::ToolDispatcher(const TrialTable& table, const ParamSpace& space, int parallel_k,
                               int max_calls, std::uint64_t seed, RetrievalTools* retrieval,
                               bool replay_strict)
    : table_(table), space_(space), parallel_k_(parallel_k), max_calls_(max_calls),
      seed_(seed), retrieval_(retrieval), replay_strict_(replay_strict) {}

const std::vector<ToolSchema>& ToolDispatcher::available_tools() {
    static const std::vector<ToolSchema> tools = {
        {"inspect_distribution", "Summary statistics and input/target correlations", {}},
        {"inspect_structure", "Model-family recommendation from cross-validated fits", {}},
        {"analyze_manifold", "PCA variance ratios and a 2-D MDS embedding", {}},
        {"analyze_local", "Local outlier scores and density clustering", {}},
        {"create_kernel",
         "Configure a covariance kernel",
         {{"kernel_spec", "string", "e.g. matern52 or rbf(ls=0.5)", true}}},
        {"create_model",
         "Fit a Gaussian-process model on the collated data",
         {{"kernel_type", "string", "rbf | matern32 | matern52", false},
          {"noise_level", "number", "observation noise variance", false}}},
        {"expected_improvement",
         "Score points by expected improvement",
         {{"mu", "object", "posterior means", true},
          {"std", "object", "posterior stddevs", true},
          {"y_best", "number", "incumbent objective", true}}},
        {"handle_surrogate", "Fuse routed and surrogate objective values", {}},
        {"latin_hypercube",
         "Space-filling seed batch",
         {{"n_points", "integer", "number of points", true}}},
        {"propose_candidates",
         "Acquisition-ranked candidate pool from the fitted model",
         {{"n_candidates", "integer", "pool size to return", true}}},
        {"create_quality_scores", "Quality scores from model predictions", {}},
        {"select_points",
         "Reduce candidates by a named method",
         {{"method", "string", "top_quality | pareto | max_min", true},
          {"n_points", "integer", "selection size", true}}},
        {"hybrid_select",
         "Quality/diversity greedy selection",
         {{"n_points", "integer", "selection size", true}}},
        {"entropy_select",
         "Entropy-proxy diverse selection",
         {{"n_points", "integer", "selection size", true}}},
        {"graph_select",
         "kNN-graph exclusion selection",
         {{"n_points", "integer", "selection size", true}}},
        {"web_search",
         "Bounded, cached web retrieval",
         {{"query", "string", "query text", true},
          {"top_k", "integer", "result count", false}}},
        {"scholarly_lookup",
         "Bounded, cached scholarly metadata lookup",
         {{"query", "string", "query text", true},
          {"top_k", "integer", "result count", false}}},
    };
    return tools;
}

namespace {

bool is_agglom_tool(const std::string& name) {
    return name == "select_points" || name == "entropy_select" || name == "hybrid_select" ||
           name == "graph_select" || name == "create_quality_scores";
}

bool is_retrieval_tool(const std::string& name) {
    return name == "web_search" || name == "scholarly_lookup";
}

/// Objective value a row would get if only its CTS surrogates were visible.
std::optional<double> surrogate_objective(const MetricRecord& record,
                                          const Objective& objective) {
    auto term = [&](MetricId id) -> std::optional<double> {
        const auto s = surrogate_of(id);
        if (!s) return std::nullopt;
        const auto v = record.get(*s);
        if (!v) return std::nullopt;
        return *v / objective.baseline.alpha_for(*s);
    };
    switch (objective.kind) {
    case Objective::Kind::Single:
        return term(objective.metric);
    case Objective::Kind::CoOptimize: {
        const auto a = term(MetricId::Wl);
        const auto b = term(MetricId::Ecp);
        if (!a || !b) return std::nullopt;
        return *a + *b;
    }
    case Objective::Kind::WeightedSum: {
        double sum = 0.0;
        for (const auto& [m, w] : objective.weights) {
            const auto t = term(m);
            if (!t) return std::nullopt;
            sum += w * *t;
        }
        return sum;
    }
    case Objective::Kind::Constrained:
        return surrogate_objective(record, *objective.target);
    }
    return std::nullopt;
}

} // namespace

nlohmann::json ToolDispatcher::execute(const ToolCall& call) {
    if (calls_used_ >= max_calls_)
        throw BudgetError("tool budget exhausted: call " + std::to_string(calls_used_ + 1) +
                          " rejected at M=" + std::to_string(max_calls_));
    ++calls_used_;
    tools_used_.push_back(call.name);
    if (is_agglom_tool(call.name)) agglomerate_used_ = true;
    try {
        return dispatch(call);
    } catch (const BudgetError& e) {
        return nlohmann::json{{"error", e.what()}, {"error_kind", "budget"}};
    } catch (const RetrievalUnavailableError& e) {
        if (replay_strict_) throw ReplayDivergenceError(std::string("replay: ") + e.what());
        return nlohmann::json{{"error", e.what()}, {"error_kind", "retrieval_unavailable"}};
    } catch (const Error& e) {
        return nlohmann::json{{"error", e.what()}};
    }
}

nlohmann::json ToolDispatcher::dispatch(const ToolCall& call) {
    const auto& name = call.name;
    const auto& args = call.arguments;

    if (is_retrieval_tool(name)) {
        if (!retrieval_) throw ConfigError("retrieval tools are disabled for this run");
        if (agglomerate_used_)
            throw BudgetError("retrieval calls are only allowed before agglomeration");
        retrieval_used_ = true;
        if (name == "web_search") {
            WebSearchOptions options;
            options.top_k = args.value("top_k", 3);
            options.site_filter = args.value("site_filter", std::string());
            return retrieval_->web_search(args.at("query").get<std::string>(), options)
                .to_json();
        }
        ScholarlyOptions options;
        options.top_k = args.value("top_k", 3);
        if (args.contains("year_range"))
            options.year_range = {args["year_range"].at(0).get<int>(),
                                  args["year_range"].at(1).get<int>()};
        options.venue_filter = args.value("venue_filter", std::string());
        return retrieval_->scholarly_lookup(args.at("query").get<std::string>(), options)
            .to_json();
    }

    if (name == "latin_hypercube") {
        const int n = args.at("n_points").get<int>();
        const auto samples = latin_hypercube(n, static_cast<int>(space_.size()),
                                             hash_combine(seed_, fnv1a64("seed_batch")));
        nlohmann::json points = nlohmann::json::array();
        for (Eigen::Index i = 0; i < samples.rows(); ++i) {
            std::vector<double> unit(space_.size());
            for (std::size_t j = 0; j < space_.size(); ++j)
                unit[j] = samples(i, static_cast<Eigen::Index>(j));
            points.push_back(from_unit_row(space_, unit).to_json());
        }
        return nlohmann::json{{"points", points}};
    }

    // everything below needs collated data
    if (table_.empty()) throw DomainError("tool '" + name + "' needs a nonempty dataset");
    if (!matrix_) matrix_ = to_matrix(table_);

    if (name == "inspect_distribution") {
        Eigen::VectorXd y_surrogate(matrix_->y.size());
        for (Eigen::Index i = 0; i < y_surrogate.size(); ++i) {
            const auto& row = table_.rows()[static_cast<std::size_t>(i)];
            const auto s = surrogate_objective(row.metrics, table_.objective());
            y_surrogate(i) = s ? *s : std::numeric_limits<double>::quiet_NaN();
        }
        return inspect_distribution(matrix_->X, matrix_->y, &y_surrogate).to_json();
    }
    if (name == "inspect_structure")
        return inspect_structure(matrix_->X, matrix_->y).to_json();
    if (name == "analyze_manifold") return analyze_manifold(matrix_->X).to_json();
    if (name == "analyze_local") return analyze_local(matrix_->X).to_json();

    if (name == "handle_surrogate") {
        const auto n = matrix_->y.size();
        Eigen::VectorXd y_true(n), surrogate(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& row = table_.rows()[static_cast<std::size_t>(i)];
            y_true(i) = row.surrogate_only ? std::numeric_limits<double>::quiet_NaN()
                                           : row.objective.value;
            const auto s = surrogate_objective(row.metrics, table_.objective());
            surrogate(i) = s ? *s : std::numeric_limits<double>::quiet_NaN();
        }
        fusion_ = handle_surrogate(matrix_->X, y_true, surrogate);
        return nlohmann::json{{"paired_rows", fusion_->paired_rows},
                              {"slope", fusion_->slope},
                              {"intercept", fusion_->intercept},
                              {"identity_fallback", fusion_->identity_fallback}};
    }

    if (name == "create_kernel") {
        kernel_ = create_kernel(args.at("kernel_spec").get<std::string>(),
                                static_cast<int>(space_.size()));
        return nlohmann::json{{"family", kernel_family_name(kernel_->family)},
                              {"input_dim", kernel_->input_dim}};
    }

    if (name == "create_model") {
        KernelSpec kernel =
            kernel_ ? *kernel_
                    : create_kernel(args.value("kernel_type", std::string("matern52")),
                                    static_cast<int>(space_.size()));
        const double noise = args.value("noise_level", 1e-6);
        if (fusion_) {
            Eigen::VectorXd noise_var =
                fusion_->uncertainty.array().square().max(noise).matrix();
            model_ = GpModel::fit(matrix_->X, fusion_->y_combined, noise_var, kernel);
        } else {
            model_ = GpModel::fit(matrix_->X, matrix_->y, noise, kernel);
        }
        return nlohmann::json{{"trained_rows", static_cast<int>(model_->train_size())},
                              {"kernel", kernel_family_name(model_->kernel().family)},
                              {"jitter", model_->jitter_used()}};
    }

    if (name == "expected_improvement") {
        const auto mu_list = args.at("mu").get<std::vector<double>>();
        const auto std_list = args.at("std").get<std::vector<double>>();
        Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(
            mu_list.data(), static_cast<Eigen::Index>(mu_list.size()));
        Eigen::VectorXd sd = Eigen::Map<const Eigen::VectorXd>(
            std_list.data(), static_cast<Eigen::Index>(std_list.size()));
        const auto ei = expected_improvement(mu, sd, args.at("y_best").get<double>());
        return nlohmann::json{{"ei", std::vector<double>(ei.data(), ei.data() + ei.size())}};
    }

    if (name == "propose_candidates") {
        if (!model_) throw DomainError("propose_candidates needs a fitted model");
        const int n = args.at("n_candidates").get<int>();
        double y_best = std::numeric_limits<double>::infinity();
        for (const auto& row : table_.rows())
            if (!row.objective.missing) y_best = std::min(y_best, row.objective.value);
        if (!std::isfinite(y_best)) throw DomainError("no usable incumbent in the dataset");
        candidates_ = propose_candidates(*model_, space_, n, y_best,
                                         hash_combine(seed_, fnv1a64("proposals")));
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : candidates_)
            arr.push_back({{"params", c.params.to_json()}, {"ei", c.ei}});
        return nlohmann::json{{"candidates", arr}};
    }

    // agglomeration tools operate on the current candidate pool
    if (is_agglom_tool(name)) {
        if (candidates_.empty())
            throw DomainError("selection tools need a candidate pool; call propose_candidates");
        const auto m = static_cast<Eigen::Index>(candidates_.size());
        Eigen::MatrixXd X(m, static_cast<Eigen::Index>(space_.size()));
        Eigen::VectorXd quality(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto unit = to_unit_row(space_, candidates_[static_cast<std::size_t>(i)].params);
            for (std::size_t j = 0; j < unit.size(); ++j)
                X(i, static_cast<Eigen::Index>(j)) = unit[j];
            quality(i) = candidates_[static_cast<std::size_t>(i)].ei;
        }

        if (name == "create_quality_scores") {
            Eigen::VectorXd mu, sd;
            if (!model_) throw DomainError("create_quality_scores needs a fitted model");
            model_->predict(X, mu, sd);
            const auto q = create_quality_scores(X, quality, mu, &sd,
                                                 args.value("beta", 0.5));
            return nlohmann::json{
                {"quality_scores", std::vector<double>(q.data(), q.data() + q.size())}};
        }

        std::vector<int> indices;
        const int n_points = args.at("n_points").get<int>();
        if (name == "select_points") {
            SelectionRequest request;
            request.X = X;
            request.quality = quality;
            request.n_points = n_points;
            request.method = args.at("method").get<std::string>();
            indices = select_points(request);
        } else if (name == "entropy_select") {
            indices = entropy_select(X, quality, n_points);
        } else if (name == "graph_select") {
            indices = graph_select(X, quality, n_points);
        } else if (name == "hybrid_select") {
            Eigen::MatrixXd dist(m, m);
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < m; ++j)
                    dist(i, j) = (X.row(i) - X.row(j)).norm();
            indices = hybrid_select(X, quality, dist, n_points);
        }
        nlohmann::json selected = nlohmann::json::array();
        for (const int idx : indices)
            selected.push_back(candidates_[static_cast<std::size_t>(idx)].params.to_json());
        return nlohmann::json{{"selected", selected}, {"indices", indices}};
    }

    throw ConfigError("unknown tool: " + name);
}

// ---------------------------------------------------------------------------
// agent loop
// ---------------------------------------------------------------------------

AgentLoop::AgentLoop(GlobalContext context, LoopConfig config, Evaluator evaluator,
                     LlmBackend& backend, RetrievalTools* retrieval,
                     std::filesystem::path run_dir)
    : context_(std::move(context)), config_(config), evaluator_(std::move(evaluator)),
      backend_(backend), retrieval_(retrieval), run_dir_(std::move(run_dir)),
      table_(evaluator_.space(), context_.inputs().objective) {
    config_.validate();
    if (!run_dir_.empty()) {
        std::filesystem::create_directories(run_dir_);
        iteration_log_.open(run_dir_ / "iterations.ldjson", std::ios::app);
        transcript_log_.open(run_dir_ / "transcripts.ldjson", std::ios::app);
        trace_log_.open(run_dir_ / "traces.log", std::ios::app);
    }
    pending_points_ = [&] {
        // the first RUN is seeded with a space-filling design
        const auto samples =
            latin_hypercube(config_.parallel_k, static_cast<int>(evaluator_.space().size()),
                            hash_combine(config_.seed, fnv1a64("first_batch")));
        std::vector<ParamVector> points;
        for (Eigen::Index i = 0; i < samples.rows(); ++i) {
            std::vector<double> unit(evaluator_.space().size());
            for (std::size_t j = 0; j < unit.size(); ++j)
                unit[j] = samples(i, static_cast<Eigen::Index>(j));
            points.push_back(from_unit_row(evaluator_.space(), unit));
        }
        return points;
    }();
}

nlohmann::json AgentLoop::iteration_brief(int iteration) const {
    bool has_surrogate = false;
    for (const auto& row : table_.rows())
        if (row.surrogate_only) has_surrogate = true;
    const auto* best = best_so_far(table_);
    std::vector<std::string> param_names;
    for (const auto& spec : evaluator_.space().specs()) param_names.push_back(spec.name);
    nlohmann::json brief{{"iteration", iteration},
                         {"table_rows", static_cast<int>(table_.size())},
                         {"has_surrogate_rows", has_surrogate},
                         {"k", config_.parallel_k},
                         {"param_names", param_names},
                         {"retrieval_enabled", config_.retrieval_enabled && retrieval_ != nullptr}};
    if (best) brief["y_best"] = best->objective.value;
    return brief;
}

std::vector<ParamVector> AgentLoop::decide_next_batch(int iteration, IterationRecord& record) {
    ToolDispatcher dispatcher(table_, evaluator_.space(), config_.parallel_k,
                              config_.max_tool_calls_per_iteration,
                              hash_combine(config_.seed, static_cast<std::uint64_t>(iteration)),
                              config_.retrieval_enabled ? retrieval_ : nullptr, replay_strict_);

    CompletionRequest request;
    request.messages.push_back({"system", context_.render_system_prompt(), ""});
    request.messages.push_back({"user", iteration_brief(iteration).dump(), ""});
    request.tools = ToolDispatcher::available_tools();
    request.structured_output = true;
    std::vector<std::string> param_names;
    for (const auto& spec : evaluator_.space().specs()) param_names.push_back(spec.name);
    request.proposal_schema = ProposalSchema{param_names, config_.parallel_k};

    std::vector<ParamVector> proposals;
    const int max_turns = config_.max_tool_calls_per_iteration + 8;
    for (int turn = 0; turn < max_turns; ++turn) {
        auto outcome = request_completion(backend_, request);
        if (transcript_log_.is_open()) {
            nlohmann::json entry{{"type", "completion"},
                                 {"iteration", iteration},
                                 {"turn", turn},
                                 {"model", backend_.identifier()},
                                 {"content", outcome.result.content},
                                 {"retry_count", outcome.result.retry_count}};
            nlohmann::json calls = nlohmann::json::array();
            for (const auto& c : outcome.result.tool_calls)
                calls.push_back({{"name", c.name}, {"arguments", c.arguments}});
            entry["tool_calls"] = calls;
            transcript_log_ << entry.dump() << "\n";
        }
        record.trace_fragment =
            retain_reasoning(outcome.result, trace_log_.is_open() ? &trace_log_ : nullptr);

        if (outcome.result.tool_calls.empty()) {
            proposals = std::move(outcome.proposals);
            break;
        }
        for (const auto& call : outcome.result.tool_calls) {
            nlohmann::json result;
            try {
                result = dispatcher.execute(call);
            } catch (const BudgetError& e) {
                ++record.rejected_tool_calls;
                result = nlohmann::json{{"error", e.what()}, {"error_kind", "budget"}};
            }
            if (transcript_log_.is_open())
                transcript_log_ << nlohmann::json{{"type", "tool_result"},
                                                  {"iteration", iteration},
                                                  {"tool", call.name},
                                                  {"result", result}}
                                       .dump()
                                << "\n";
            request.messages.push_back({"tool", result.dump(), call.name});
        }
    }
    if (proposals.empty())
        throw StructuredParseError("backend produced no proposal batch within the turn limit");

    record.tools_used = dispatcher.tools_used();
    record.tool_calls = dispatcher.calls_used();
    if (retrieval_ && config_.retrieval_enabled) {
        record.retrieval_calls = retrieval_->budget_state().calls_used;
        record.retrieval_payload_chars = retrieval_->budget_state().payload_chars_used;
    }

    // stage attribution from the tool sequence
    nlohmann::json inspect_tools = nlohmann::json::array();
    nlohmann::json optimize_tools = nlohmann::json::array();
    nlohmann::json agglom_tools = nlohmann::json::array();
    for (const auto& t : dispatcher.tools_used()) {
        if (t.rfind("inspect", 0) == 0 || t.rfind("analyze", 0) == 0 || is_retrieval_tool(t))
            inspect_tools.push_back(t);
        else if (is_agglom_tool(t))
            agglom_tools.push_back(t);
        else
            optimize_tools.push_back(t);
    }
    record.stages.push_back({"INSPECT", {{"tools", inspect_tools}}});
    record.stages.push_back({"OPTIMIZE", {{"tools", optimize_tools}}});
    if (!agglom_tools.empty())
        record.stages.push_back(
            {"AGGLOMERATE",
             {{"tools", agglom_tools}, {"pool", static_cast<int>(dispatcher.candidates().size())}}});

    // ALTER: snap proposals onto the lattice and write the next batch configs
    std::vector<ParamVector> sanitized;
    for (const auto& p : proposals) {
        ParamVector snapped;
        for (const auto& spec : evaluator_.space().specs()) {
            double v = p.at(spec.name);
            if (v < spec.min) v = spec.min;
            if (v > spec.max) v = spec.max;
            snapped.assignments[spec.name] = spec.grid_decode(spec.grid_encode(v));
        }
        snapped.validate(evaluator_.space());
        sanitized.push_back(std::move(snapped));
    }
    nlohmann::json proposals_json = nlohmann::json::array();
    for (const auto& p : sanitized) proposals_json.push_back(p.to_json());
    record.proposals = proposals_json;
    if (!run_dir_.empty()) {
        std::ofstream next(run_dir_ / "next_batch.json");
        next << proposals_json.dump(2) << "\n";
    }
    record.stages.push_back(
        {"ALTER", {{"configs_written", static_cast<int>(sanitized.size())}}});
    return sanitized;
}

IterationRecord AgentLoop::run_iteration() {
    const int iteration = completed_iterations_ + 1;
    IterationRecord record;
    record.iteration = iteration;

    if (retrieval_) retrieval_->begin_iteration(iteration);

    // RUN
    BatchStats stats;
    const auto results = evaluator_.run_batch(pending_points_, iteration, &stats);
    record.stages.push_back({"RUN",
                             {{"jobs", static_cast<int>(results.size())},
                              {"max_in_flight", stats.max_in_flight}}});

    // READ: all logs to date (the collated table carries prior iterations)
    int files = 0;
    for (const auto& r : results)
        if (!r.log_path.empty()) ++files;
    record.stages.push_back(
        {"READ", {{"new_logs", files}, {"prior_rows", static_cast<int>(table_.size())}}});

    // COLLATE
    const auto before = table_.size();
    table_ = collate(results, table_);
    record.rows_added = static_cast<int>(table_.size() - before);
    for (std::size_t i = before; i < table_.size(); ++i)
        if (table_.rows()[i].surrogate_only) ++record.surrogate_rows_added;
    record.stages.push_back({"COLLATE",
                             {{"rows_added", record.rows_added},
                              {"surrogate_rows_added", record.surrogate_rows_added},
                              {"skipped", static_cast<int>(results.size()) - record.rows_added}}});

    // INSPECT / OPTIMIZE / (AGGLOMERATE) / ALTER, with one retry on a fresh
    // completion if structured parsing is exhausted
    try {
        pending_points_ = decide_next_batch(iteration, record);
    } catch (const StructuredParseError&) {
        pending_points_ = decide_next_batch(iteration, record);
    }

    const auto* best = best_so_far(table_);
    if (best) record.best_objective = best->objective.value;

    proposal_hash_ = hash_combine(proposal_hash_, fnv1a64(record.proposals.dump()));

    if (!evaluator_.config().workdir.empty()) {
        try {
            archive_paths_.push_back(
                archive_iteration(iteration, evaluator_.config().workdir).string());
        } catch (const Error&) {
            // nothing to archive when the evaluator wrote no run directories
        }
    }

    context_ = update_global_context(std::move(context_), record);
    persist_record(record);
    records_.push_back(record);
    ++completed_iterations_;
    return record;
}

void AgentLoop::persist_record(const IterationRecord& record) {
    if (iteration_log_.is_open()) {
        iteration_log_ << record.to_json().dump() << "\n";
        iteration_log_.flush();
    }
}

FinalReport AgentLoop::run_to_completion() {
    while (!finished()) run_iteration();

    FinalReport report;
    report.backend_id = backend_.identifier();
    report.constrained = table_.objective().kind == Objective::Kind::Constrained;

    // trajectory of the incumbent
    double incumbent = std::numeric_limits<double>::infinity();
    int rows = 0;
    for (const auto& rec : records_) {
        rows += rec.rows_added;
        if (rec.best_objective && *rec.best_objective < incumbent)
            incumbent = *rec.best_objective;
        report.trajectory.push_back({rec.iteration, incumbent, rows});
    }

    const TrialRow* best = nullptr;
    if (report.constrained) {
        // the reported best must be verifiably violation-free
        for (const auto& row : table_.rows()) {
            if (row.objective.missing) continue;
            const auto check = check_constraints(row.metrics, table_.objective().baseline,
                                                 table_.objective().constraints);
            bool all_pass = true;
            for (const auto& c : check.checks)
                if (c.state != ConstraintState::Pass) all_pass = false;
            if (!all_pass) continue;
            if (!best || row.objective.value < best->objective.value) best = &row;
        }
    } else {
        best = best_so_far(table_);
    }

    if (best) {
        report.best_found = true;
        report.best_params = best->params;
        report.best_metrics = best->metrics;
        report.best_objective = best->objective.value;
        if (report.constrained) {
            const auto check = check_constraints(best->metrics, table_.objective().baseline,
                                                 table_.objective().constraints);
            report.violation_free = !check.any_violation;
            report.constraint_report = check.to_json();
        }
    } else {
        report.best_found = false;
        report.violation_free = false;
    }
    report.archive_paths = archive_paths_;

    char hash_buf[32];
    std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                  static_cast<unsigned long long>(proposal_hash_));
    report.proposal_transcript_hash = hash_buf;

    if (!run_dir_.empty()) {
        save_trials_ldjson(table_, run_dir_ / "trials.ldjson");
        std::ofstream out(run_dir_ / "final_report.json");
        out << report.to_json().dump(2) << "\n";
    }
    return report;
}

nlohmann::json FinalReport::to_json() const {
    nlohmann::json trajectory_json = nlohmann::json::array();
    for (const auto& t : trajectory)
        trajectory_json.push_back({{"iteration", t.iteration},
                                   {"incumbent", t.incumbent},
                                   {"rows_total", t.rows_total}});
    nlohmann::json j{{"best_found", best_found},
                     {"trajectory", trajectory_json},
                     {"constrained", constrained},
                     {"violation_free", violation_free},
                     {"archive_paths", archive_paths},
                     {"proposal_transcript_hash", proposal_transcript_hash},
                     {"backend_id", backend_id}};
    if (best_found) {
        j["best_params"] = best_params.to_json();
        j["best_metrics"] = best_metrics.to_json();
        j["best_objective"] = best_objective;
        if (constrained) j["constraint_report"] = constraint_report;
    }
    return j;
}

} // namespace flowtune
