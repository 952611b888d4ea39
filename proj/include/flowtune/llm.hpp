#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowtune/param_space.hpp"

namespace flowtune {

inline constexpr int kMaxToolsPerRequest = 128;
inline constexpr int kStructuredOutputRetries = 3;
/// Share of max_tokens reserved for content when a reasoning trace may be
/// emitted alongside it.
inline constexpr double kContentTokenReserveShare = 0.4;

struct ToolParam {
    std::string name;
    std::string type; // "number", "integer", "string", "boolean", "object"
    std::string description;
    bool required = false;
};

struct ToolSchema {
    std::string name;
    std::string description;
    std::vector<ToolParam> parameters;

    nlohmann::json to_json() const; // chat-completions function block
};

/// First char letter/underscore, then up to 63 from letters, digits,
/// hyphen, underscore.
bool valid_tool_name(std::string_view name);

struct ChatMessage {
    std::string role; // system | user | assistant | tool
    std::string content;
    std::string tool_name; // set on tool-result messages
};

/// Expected shape of a structured proposal payload: exactly `count` records,
/// each assigning every active parameter name.
struct ProposalSchema {
    std::vector<std::string> param_names;
    int count = 0;
};

struct CompletionRequest {
    std::vector<ChatMessage> messages;
    std::vector<ToolSchema> tools;
    double temperature = 0.1;
    int max_tokens = 8192;
    bool structured_output = false;
    int choices = 1;
    std::optional<ProposalSchema> proposal_schema;
    /// Filled by validate_request: tokens reserved for content so a trace
    /// cannot crowd out the structured proposal.
    int content_token_reserve = 0;
};

/// Reasoning traces are observability, not memory. The wrapper keeps them
/// out of every prompt-rendering path, which accepts plain strings only.
struct TaintedText {
    std::string text;
};

struct ToolCall {
    std::string name;
    nlohmann::json arguments;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int content_tokens = 0;
    int reasoning_tokens = 0;
};

struct CompletionResult {
    std::string content;
    std::vector<ToolCall> tool_calls;
    std::optional<TaintedText> reasoning_trace;
    TokenUsage usage;
    int retry_count = 0;
};

/// Clamps temperature to [0,1], forces single-choice sampling below
/// temperature 0.01, rejects >128 tools and invalid tool names. Idempotent.
CompletionRequest validate_request(CompletionRequest request);

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual CompletionResult complete(const CompletionRequest& request) = 0;
    virtual std::string identifier() const = 0;
};

/// Parses a structured proposal payload (top-level array, or an object with
/// a "proposals" array). Extra fields and wrong counts are SchemaErrors.
std::vector<ParamVector> parse_proposals(const std::string& content,
                                         const ProposalSchema& schema);

struct CompletionOutcome {
    CompletionResult result;
    std::vector<ParamVector> proposals; // filled when structured_output was set
};

/// Validates, completes, and (for structured output) parses the proposal
/// payload, retrying up to kStructuredOutputRetries times with a repair
/// message quoting the validation error.
CompletionOutcome request_completion(LlmBackend& backend, CompletionRequest request);

/// Writes the full trace (if any) to the log stream and returns a bounded
/// (<= 280 char) digest: the only trace-derived text allowed near a prompt.
/// The digest never contains trace text itself.
std::string retain_reasoning(const CompletionResult& result, std::ostream* trace_log);

/// Deterministic scripted policy driving the same tool-call surface a live
/// backend would use. Reads only structured payload fields, never metadata
/// strings, so renaming a circuit cannot change its decisions.
class ScriptedBackend : public LlmBackend {
public:
    enum class Mode {
        FullToolchain, // inspect -> (fuse) -> fit -> propose 200 -> entropy-select K
        DirectK,       // propose exactly K and emit them (agglomeration skipped)
    };

    explicit ScriptedBackend(Mode mode = Mode::FullToolchain);
    CompletionResult complete(const CompletionRequest& request) override;
    std::string identifier() const override;

private:
    Mode mode_;
};

/// HTTP chat-completions dialect (tool calling + JSON-object response mode).
/// Credentials via LLM_API_KEY / LLM_BASE_URL / LLM_MODEL.
class HttpBackend : public LlmBackend {
public:
    HttpBackend(); // reads the environment
    HttpBackend(std::string base_url, std::string api_key, std::string model);
    CompletionResult complete(const CompletionRequest& request) override;
    std::string identifier() const override { return model_; }

private:
    std::string base_url_;
    std::string api_key_;
    std::string model_;
};

/// Wire-format helpers, exposed for tests.
nlohmann::json build_chat_request_json(const CompletionRequest& request,
                                       const std::string& model);
CompletionResult parse_chat_response_json(const nlohmann::json& response);

} // namespace flowtune
