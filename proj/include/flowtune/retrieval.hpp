#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace flowtune {

struct RetrievalBudget {
    int max_calls_per_iteration = 3;
    int max_payload_chars_per_iteration = 2000;
    int max_snippet_chars = 500;
    std::optional<int> cutoff_iteration; // no retrieval after this iteration

    void validate() const;
};

struct BudgetState {
    int iteration = 0;
    int calls_used = 0;         // network calls; cache hits are free
    int payload_chars_used = 0; // all returned characters count

    void begin_iteration(int it) {
        iteration = it;
        calls_used = 0;
        payload_chars_used = 0;
    }
};

struct RetrievalRecord {
    std::string title;
    std::string id; // url for web, stable work id for scholarly
    std::string snippet;
    std::string authors; // scholarly only
    std::string venue;   // scholarly only
    int year = 0;        // scholarly only

    nlohmann::json to_json() const;
};

enum class RetrievalKind { Web, Scholarly };

struct RetrievalResult {
    RetrievalKind kind = RetrievalKind::Web;
    std::vector<RetrievalRecord> records;
    bool from_cache = false;
    std::string query_key;

    int payload_chars() const;
    nlohmann::json to_json() const;
};

struct WebSearchOptions {
    int top_k = 3;
    std::string site_filter;
    nlohmann::json to_json() const;
};

struct ScholarlyOptions {
    int top_k = 3;
    std::optional<std::pair<int, int>> year_range;
    std::string venue_filter;
    nlohmann::json to_json() const;
};

/// Lowercases, collapses whitespace, serializes options in sorted-field
/// order, hashes. Throws DomainError on an empty query.
std::string normalize_cache_key(std::string_view query, std::string_view provider,
                                const nlohmann::json& options);

/// Append-only line-delimited JSON cache; a key's value never changes after
/// first write. Concurrent reads are fine; appends are serialized.
class RetrievalCache {
public:
    RetrievalCache() = default; // in-memory only
    explicit RetrievalCache(std::filesystem::path file);

    std::optional<nlohmann::json> get(const std::string& key) const;
    /// First write wins; later puts for the same key are ignored.
    void put(const std::string& key, const std::string& provider, const std::string& query,
             const nlohmann::json& response);
    std::size_t size() const;

private:
    std::filesystem::path file_;
    mutable std::mutex mutex_;
    std::map<std::string, nlohmann::json> entries_;
};

/// Raw provider transport. Tests and replay use stubs; the HTTP client talks
/// to a web-search endpoint and a scholarly-metadata endpoint.
class ProviderClient {
public:
    virtual ~ProviderClient() = default;
    /// Canonical response: {"results": [{"title","url","snippet"}...]}.
    virtual nlohmann::json web_search(const std::string& query, const WebSearchOptions& options) = 0;
    /// Canonical response: {"works": [{"title","authors","year","venue","id"}...]}.
    virtual nlohmann::json scholarly_lookup(const std::string& query,
                                            const ScholarlyOptions& options) = 0;
};

/// Live HTTPS client. Credentials and contact identity come from the
/// environment (WEB_SEARCH_API_KEY, SCHOLARLY_CONTACT).
class HttpProviderClient : public ProviderClient {
public:
    HttpProviderClient(std::string web_base_url, std::string scholarly_base_url);
    nlohmann::json web_search(const std::string& query, const WebSearchOptions& options) override;
    nlohmann::json scholarly_lookup(const std::string& query,
                                    const ScholarlyOptions& options) override;

private:
    std::string web_base_url_;
    std::string scholarly_base_url_;
};

/// Counts every attempted network call and always fails; replay mode uses it
/// to prove a warm cache needs no provider traffic.
class NullProviderClient : public ProviderClient {
public:
    nlohmann::json web_search(const std::string&, const WebSearchOptions&) override;
    nlohmann::json scholarly_lookup(const std::string&, const ScholarlyOptions&) override;
    int attempted_calls() const { return attempted_calls_; }

private:
    int attempted_calls_ = 0;
};

struct SanitizeConfig {
    /// Case-insensitive line-anchored patterns; matching lines are dropped.
    std::vector<std::string> injection_patterns;
    static SanitizeConfig defaults();
};

/// Strips markup, drops imperative-injection lines, truncates at a word
/// boundary. The output is data, never instructions; callers embed it only
/// inside untrusted-content blocks.
std::string sanitize_snippets(const std::string& raw, int cap,
                              const SanitizeConfig& config = SanitizeConfig::defaults());

/// Bounded, cached, sanitized retrieval over both providers.
class RetrievalTools {
public:
    RetrievalTools(ProviderClient& client, RetrievalCache& cache, RetrievalBudget budget,
                   SanitizeConfig sanitize = SanitizeConfig::defaults());

    void begin_iteration(int iteration);

    RetrievalResult web_search(const std::string& query, const WebSearchOptions& options = {});
    RetrievalResult scholarly_lookup(const std::string& query,
                                     const ScholarlyOptions& options = {});

    const BudgetState& budget_state() const { return state_; }
    const RetrievalBudget& budget() const { return budget_; }

private:
    void check_budget_preconditions() const;
    void charge_payload(RetrievalResult& result);

    ProviderClient& client_;
    RetrievalCache& cache_;
    RetrievalBudget budget_;
    SanitizeConfig sanitize_;
    BudgetState state_;
};

} // namespace flowtune
