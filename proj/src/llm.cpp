#include "flowtune/llm.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include <httplib.h>

#include "flowtune/errors.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

nlohmann::json ToolSchema::to_json() const {
    nlohmann::json props = nlohmann::json::object();
    nlohmann::json required = nlohmann::json::array();
    for (const auto& p : parameters) {
        props[p.name] = {{"type", p.type}, {"description", p.description}};
        if (p.required) required.push_back(p.name);
    }
    return nlohmann::json{
        {"type", "function"},
        {"function",
         {{"name", name},
          {"description", description},
          {"parameters",
           {{"type", "object"}, {"properties", props}, {"required", required}}}}}};
}

bool valid_tool_name(std::string_view name) {
    if (name.empty() || name.size() > 64) return false;
    const char first = name.front();
    if (!(std::isalpha(static_cast<unsigned char>(first)) || first == '_')) return false;
    for (char c : name.substr(1))
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
            return false;
    return true;
}

CompletionRequest validate_request(CompletionRequest request) {
    if (request.temperature < 0.0) request.temperature = 0.0;
    if (request.temperature > 1.0) request.temperature = 1.0;
    // near-zero sampling only supports a single choice
    if (request.temperature < 0.01) request.choices = 1;
    if (request.choices < 1) request.choices = 1;
    if (static_cast<int>(request.tools.size()) > kMaxToolsPerRequest)
        throw LimitError("request carries " + std::to_string(request.tools.size()) +
                         " tools; the limit is " + std::to_string(kMaxToolsPerRequest));
    for (const auto& tool : request.tools)
        if (!valid_tool_name(tool.name))
            throw SchemaError("invalid tool name: '" + tool.name + "'");
    request.content_token_reserve = static_cast<int>(
        std::ceil(kContentTokenReserveShare * static_cast<double>(request.max_tokens)));
    return request;
}

std::vector<ParamVector> parse_proposals(const std::string& content,
                                         const ProposalSchema& schema) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("proposal payload is not valid JSON: ") + e.what());
    }
    const nlohmann::json* arr = nullptr;
    if (j.is_array()) arr = &j;
    else if (j.is_object() && j.contains("proposals") && j["proposals"].is_array())
        arr = &j["proposals"];
    else
        throw SchemaError("proposal payload must be an array or {\"proposals\": [...]}");

    if (static_cast<int>(arr->size()) != schema.count)
        throw SchemaError("expected exactly " + std::to_string(schema.count) +
                          " proposals, got " + std::to_string(arr->size()));

    std::vector<ParamVector> out;
    out.reserve(arr->size());
    for (const auto& record : *arr) {
        if (!record.is_object()) throw SchemaError("each proposal must be an object");
        ParamVector v;
        for (const auto& name : schema.param_names) {
            if (!record.contains(name))
                throw SchemaError("proposal missing parameter '" + name + "'");
            if (!record[name].is_number())
                throw SchemaError("proposal parameter '" + name + "' must be a number");
            v.assignments[name] = record[name].get<double>();
        }
        if (record.size() != schema.param_names.size())
            throw SchemaError("proposal carries unexpected extra fields");
        out.push_back(std::move(v));
    }
    return out;
}

CompletionOutcome request_completion(LlmBackend& backend, CompletionRequest request) {
    request = validate_request(request);
    CompletionOutcome outcome;
    if (!request.structured_output) {
        outcome.result = backend.complete(request);
        return outcome;
    }
    if (!request.proposal_schema)
        throw ConfigError("structured_output requires a proposal schema");

    CompletionRequest attempt = request;
    std::string last_error;
    for (int retry = 0; retry <= kStructuredOutputRetries; ++retry) {
        auto result = backend.complete(attempt);
        result.retry_count = retry;
        try {
            outcome.proposals = parse_proposals(result.content, *request.proposal_schema);
            outcome.result = std::move(result);
            return outcome;
        } catch (const SchemaError& e) {
            last_error = e.what();
            attempt.messages.push_back(
                {"user",
                 "Your previous output failed validation: " + last_error +
                     ". Reply again with only the corrected JSON payload.",
                 ""});
        }
    }
    throw StructuredParseError("structured output failed after " +
                               std::to_string(kStructuredOutputRetries) +
                               " retries: " + last_error);
}

std::string retain_reasoning(const CompletionResult& result, std::ostream* trace_log) {
    if (!result.reasoning_trace || result.reasoning_trace->text.empty()) return "";
    const auto& trace = result.reasoning_trace->text;
    if (trace_log) *trace_log << trace << "\n";
    // digest only: length and hash, no verbatim trace text
    char buf[128];
    std::snprintf(buf, sizeof buf, "reasoning trace captured (%zu chars, digest %016llx)",
                  trace.size(), static_cast<unsigned long long>(fnv1a64(trace)));
    std::string fragment(buf);
    if (fragment.size() > 280) fragment.resize(280);
    return fragment;
}

// ---------------------------------------------------------------------------
// scripted backend
// ---------------------------------------------------------------------------

namespace {

int estimate_tokens(const std::string& text) {
    return static_cast<int>(text.size() / 4) + 1;
}

struct ScriptedContext {
    nlohmann::json brief;                      // last user brief payload
    std::map<std::string, nlohmann::json> tool_results; // by tool name, since the brief
};

ScriptedContext read_context(const CompletionRequest& request) {
    ScriptedContext ctx;
    std::size_t brief_index = 0;
    for (std::size_t i = 0; i < request.messages.size(); ++i) {
        const auto& m = request.messages[i];
        if (m.role != "user") continue;
        try {
            auto j = nlohmann::json::parse(m.content);
            if (j.is_object() && j.contains("iteration")) {
                ctx.brief = j;
                brief_index = i;
            }
        } catch (const nlohmann::json::exception&) {
            // plain-text user message (e.g. a repair note); not a brief
        }
    }
    if (ctx.brief.is_null())
        throw SchemaError("scripted backend: no iteration brief found in the conversation");
    for (std::size_t i = brief_index + 1; i < request.messages.size(); ++i) {
        const auto& m = request.messages[i];
        if (m.role != "tool") continue;
        try {
            ctx.tool_results[m.tool_name] = nlohmann::json::parse(m.content);
        } catch (const nlohmann::json::exception&) {
            ctx.tool_results[m.tool_name] = nlohmann::json::object();
        }
    }
    return ctx;
}

CompletionResult make_tool_call(const std::string& name, nlohmann::json args,
                                const std::string& note) {
    CompletionResult r;
    r.tool_calls.push_back({name, std::move(args)});
    r.reasoning_trace = TaintedText{note};
    r.usage.reasoning_tokens = estimate_tokens(note);
    return r;
}

CompletionResult make_proposals(const nlohmann::json& points, const std::string& note) {
    CompletionResult r;
    r.content = nlohmann::json{{"proposals", points}}.dump();
    r.reasoning_trace = TaintedText{note};
    r.usage.content_tokens = estimate_tokens(r.content);
    r.usage.reasoning_tokens = estimate_tokens(note);
    return r;
}

} // namespace

ScriptedBackend::ScriptedBackend(Mode mode) : mode_(mode) {}

std::string ScriptedBackend::identifier() const {
    return mode_ == Mode::FullToolchain ? "scripted-full" : "scripted-direct";
}

CompletionResult ScriptedBackend::complete(const CompletionRequest& request) {
    const auto ctx = read_context(request);
    const int table_rows = ctx.brief.value("table_rows", 0);
    const int k = ctx.brief.value("k", 1);
    const bool has_surrogate = ctx.brief.value("has_surrogate_rows", false);
    const bool retrieval = ctx.brief.value("retrieval_enabled", false);
    const int iteration = ctx.brief.value("iteration", 1);

    auto has = [&](const char* tool) { return ctx.tool_results.count(tool) > 0; };

    // cold start: no collated rows yet, seed with a space-filling design
    if (table_rows == 0) {
        if (!has("latin_hypercube"))
            return make_tool_call("latin_hypercube", {{"n_points", k}},
                                  "empty dataset; requesting space-filling seed batch");
        return make_proposals(ctx.tool_results.at("latin_hypercube").value(
                                  "points", nlohmann::json::array()),
                              "emitting seed batch");
    }

    if (retrieval && iteration <= 2 && !has("web_search"))
        return make_tool_call(
            "web_search",
            {{"query", "flow parameter tuning heuristics"}, {"top_k", 3}},
            "early iteration; fetching external tuning context");

    if (!has("inspect_distribution"))
        return make_tool_call("inspect_distribution", nlohmann::json::object(),
                              "inspecting collated dataset of " +
                                  std::to_string(table_rows) + " rows");

    if (has_surrogate && !has("handle_surrogate"))
        return make_tool_call("handle_surrogate", nlohmann::json::object(),
                              "fusing surrogate rows with routed rows");

    if (!has("create_model"))
        return make_tool_call(
            "create_model",
            {{"kernel_type", "matern52"}, {"noise_level", 1e-6}},
            "fitting smooth-surrogate model on " + std::to_string(table_rows) + " rows");

    const int n_candidates = mode_ == Mode::FullToolchain ? std::max(200, k) : k;
    if (!has("propose_candidates"))
        return make_tool_call("propose_candidates", {{"n_candidates", n_candidates}},
                              "requesting acquisition-ranked candidates");

    if (mode_ == Mode::FullToolchain) {
        if (!has("entropy_select"))
            return make_tool_call("entropy_select", {{"n_points", k}},
                                  "sub-selecting a diverse batch of " + std::to_string(k));
        return make_proposals(ctx.tool_results.at("entropy_select").value(
                                  "selected", nlohmann::json::array()),
                              "emitting selected batch");
    }

    // DirectK: emit exactly k proposals straight from the optimizer
    nlohmann::json points = nlohmann::json::array();
    for (const auto& c :
         ctx.tool_results.at("propose_candidates").value("candidates", nlohmann::json::array()))
        points.push_back(c.value("params", nlohmann::json::object()));
    return make_proposals(points, "emitting optimizer batch directly");
}

// ---------------------------------------------------------------------------
// HTTP chat-completions backend
// ---------------------------------------------------------------------------

nlohmann::json build_chat_request_json(const CompletionRequest& request,
                                       const std::string& model) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        nlohmann::json msg{{"role", m.role}, {"content", m.content}};
        if (m.role == "tool" && !m.tool_name.empty()) msg["name"] = m.tool_name;
        messages.push_back(msg);
    }
    nlohmann::json j{{"model", model},
                     {"messages", messages},
                     {"temperature", request.temperature},
                     {"max_tokens", request.max_tokens},
                     {"n", request.choices}};
    if (!request.tools.empty()) {
        nlohmann::json tools = nlohmann::json::array();
        for (const auto& t : request.tools) tools.push_back(t.to_json());
        j["tools"] = tools;
    }
    if (request.structured_output) j["response_format"] = {{"type", "json_object"}};
    return j;
}

CompletionResult parse_chat_response_json(const nlohmann::json& response) {
    CompletionResult result;
    const auto& choices = response.at("choices");
    if (choices.empty()) throw SchemaError("backend response has no choices");
    const auto& message = choices.at(0).at("message");
    if (message.contains("content") && message["content"].is_string())
        result.content = message["content"].get<std::string>();
    if (message.contains("tool_calls")) {
        for (const auto& call : message["tool_calls"]) {
            ToolCall tc;
            tc.name = call.at("function").at("name").get<std::string>();
            const auto& args = call.at("function").at("arguments");
            tc.arguments = args.is_string()
                               ? nlohmann::json::parse(args.get<std::string>())
                               : args;
            result.tool_calls.push_back(std::move(tc));
        }
    }
    // providers expose the trace in a separate field when thinking is on
    if (message.contains("reasoning_content") && message["reasoning_content"].is_string())
        result.reasoning_trace = TaintedText{message["reasoning_content"].get<std::string>()};
    if (response.contains("usage")) {
        const auto& u = response["usage"];
        result.usage.prompt_tokens = u.value("prompt_tokens", 0);
        result.usage.content_tokens = u.value("completion_tokens", 0);
        result.usage.reasoning_tokens = u.value("reasoning_tokens", 0);
    }
    return result;
}

HttpBackend::HttpBackend() {
    const char* url = std::getenv("LLM_BASE_URL");
    const char* key = std::getenv("LLM_API_KEY");
    const char* model = std::getenv("LLM_MODEL");
    if (!url || !*url) throw ConfigError("missing environment value LLM_BASE_URL");
    if (!key || !*key) throw ConfigError("missing environment value LLM_API_KEY");
    if (!model || !*model) throw ConfigError("missing environment value LLM_MODEL");
    base_url_ = url;
    api_key_ = key;
    model_ = model;
}

HttpBackend::HttpBackend(std::string base_url, std::string api_key, std::string model)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), model_(std::move(model)) {}

CompletionResult HttpBackend::complete(const CompletionRequest& request) {
    const auto body = build_chat_request_json(request, model_).dump();
    httplib::Client client(base_url_);
    client.set_connection_timeout(30);
    client.set_read_timeout(300);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
    if (!res)
        throw Error("backend transport failure (no response)");
    if (res->status != 200)
        throw Error("backend error status " + std::to_string(res->status) + ": " + res->body);
    return parse_chat_response_json(nlohmann::json::parse(res->body));
}

} // namespace flowtune
