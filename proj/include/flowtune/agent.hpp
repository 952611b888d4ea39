#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowtune/evaluator.hpp"
#include "flowtune/llm.hpp"
#include "flowtune/metrics.hpp"
#include "flowtune/optimize.hpp"
#include "flowtune/param_space.hpp"
#include "flowtune/retrieval.hpp"
#include "flowtune/trial_table.hpp"

namespace flowtune {

inline constexpr int kDecisionSummaryCap = 24;
inline constexpr int kRegionNoteMaxChars = 280;

/// Display name used in prompts and reports (WL, ECP, WL', ...).
const char* metric_display_name(MetricId id);

struct DecisionSummary {
    int iteration = 0;
    double best_objective = 0.0;
    std::vector<std::string> tools_used;
    std::string region_note; // <= 280 chars, distilled from the iteration only
    int surrogate_rows_added = 0;

    nlohmann::json to_json() const;
    static DecisionSummary from_json(const nlohmann::json& j);
};

/// The eight initialization inputs. Missing ones raise a ConfigError naming
/// the bullet.
struct ContextInputs {
    std::string platform;
    std::string circuit;
    std::string task;
    ParamSpace space;
    Objective objective;
    std::vector<std::string> output_variables;
    std::string optimization_quantity; // e.g. "minimize WL" or "maximize -WL"
    std::map<std::string, std::string> input_domains;
    std::map<std::string, std::string> suggested_ranges;
};

/// Canonical minimization form: "maximize -WL" and "minimize WL" coincide.
std::string normalize_optimization_quantity(const std::string& text);

/// Persistent agent state: design metadata plus bounded per-iteration
/// summaries (append-only, oldest evicted beyond the cap).
class GlobalContext {
public:
    static GlobalContext initialize(ContextInputs inputs);

    const ContextInputs& inputs() const { return inputs_; }
    const std::deque<DecisionSummary>& summaries() const { return summaries_; }
    void append_summary(DecisionSummary summary);

    /// System prompt with the objective instruction templates rendered
    /// against the active baselines.
    std::string render_system_prompt() const;

    nlohmann::json to_json() const;

private:
    ContextInputs inputs_;
    std::deque<DecisionSummary> summaries_;
};

struct LoopConfig {
    int total_serial_iterations = 15;
    int parallel_k = 25;
    int max_tool_calls_per_iteration = 8;
    bool retrieval_enabled = false;
    RetrievalBudget retrieval_budget;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StageRecord {
    std::string name; // RUN READ COLLATE INSPECT OPTIMIZE AGGLOMERATE ALTER
    nlohmann::json detail;
};

struct IterationRecord {
    int iteration = 0;
    std::vector<StageRecord> stages;
    std::vector<std::string> tools_used;
    int tool_calls = 0;
    int rejected_tool_calls = 0;
    int retrieval_calls = 0;
    int retrieval_payload_chars = 0;
    nlohmann::json proposals = nlohmann::json::array(); // next-batch points
    int rows_added = 0;
    int surrogate_rows_added = 0;
    std::optional<double> best_objective;
    std::string trace_fragment;

    bool has_stage(const std::string& name) const;
    nlohmann::json to_json() const;
    static IterationRecord from_json(const nlohmann::json& j);
};

/// Appends exactly one DecisionSummary distilled from the iteration; raw tool
/// outputs, logs and traces never enter the context.
GlobalContext update_global_context(GlobalContext context, const IterationRecord& local);

bool should_stop(int completed_iterations, const LoopConfig& config);

/// Executes tool calls against the loop's current dataset. Enforces the
/// per-iteration call budget and the retrieval stage rule.
class ToolDispatcher {
public:
    ToolDispatcher(const TrialTable& table, const ParamSpace& space, int parallel_k,
                   int max_calls, std::uint64_t seed, RetrievalTools* retrieval,
                   bool replay_strict = false);

    /// Executes one call; throws BudgetError past the call budget. Tool-level
    /// failures come back as {"error": ...} payloads.
    nlohmann::json execute(const ToolCall& call);

    const std::vector<std::string>& tools_used() const { return tools_used_; }
    int calls_used() const { return calls_used_; }
    bool agglomerate_used() const { return agglomerate_used_; }
    bool retrieval_used() const { return retrieval_used_; }
    const std::vector<Candidate>& candidates() const { return candidates_; }

    static const std::vector<ToolSchema>& available_tools();

private:
    nlohmann::json dispatch(const ToolCall& call);

    const TrialTable& table_;
    const ParamSpace& space_;
    int parallel_k_;
    int max_calls_;
    std::uint64_t seed_;
    RetrievalTools* retrieval_;
    bool replay_strict_;

    std::optional<TrialMatrix> matrix_;
    std::optional<SurrogateFusion> fusion_;
    std::optional<KernelSpec> kernel_;
    std::optional<GpModel> model_;
    std::vector<Candidate> candidates_;
    std::vector<std::string> tools_used_;
    int calls_used_ = 0;
    bool agglomerate_used_ = false;
    bool retrieval_used_ = false;
};

struct TrajectoryPoint {
    int iteration = 0;
    double incumbent = 0.0;
    int rows_total = 0;
};

struct FinalReport {
    bool best_found = false;
    ParamVector best_params;
    MetricRecord best_metrics;
    double best_objective = 0.0;
    std::vector<TrajectoryPoint> trajectory;
    bool constrained = false;
    bool violation_free = true;
    nlohmann::json constraint_report;
    std::vector<std::string> archive_paths;
    std::string proposal_transcript_hash;
    std::string backend_id;

    nlohmann::json to_json() const;
};

class AgentLoop {
public:
    AgentLoop(GlobalContext context, LoopConfig config, Evaluator evaluator,
              LlmBackend& backend, RetrievalTools* retrieval,
              std::filesystem::path run_dir);

    IterationRecord run_iteration();
    bool finished() const { return should_stop(completed_iterations_, config_); }
    FinalReport run_to_completion();

    const TrialTable& table() const { return table_; }
    const GlobalContext& context() const { return context_; }
    int completed_iterations() const { return completed_iterations_; }
    const std::vector<IterationRecord>& records() const { return records_; }

    /// Strict replay mode: retrieval cache misses become divergence errors.
    void set_replay_strict(bool strict) { replay_strict_ = strict; }

private:
    nlohmann::json iteration_brief(int iteration) const;
    std::vector<ParamVector> decide_next_batch(int iteration, IterationRecord& record);
    void persist_record(const IterationRecord& record);

    GlobalContext context_;
    LoopConfig config_;
    Evaluator evaluator_;
    LlmBackend& backend_;
    RetrievalTools* retrieval_;
    std::filesystem::path run_dir_;

    TrialTable table_;
    std::vector<ParamVector> pending_points_;
    int completed_iterations_ = 0;
    std::vector<IterationRecord> records_;
    std::vector<std::string> archive_paths_;
    std::uint64_t proposal_hash_ = 0;
    bool replay_strict_ = false;

    std::ofstream iteration_log_;
    std::ofstream transcript_log_;
    std::ofstream trace_log_;
};

} // namespace flowtune
