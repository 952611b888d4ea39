#include "flowtune/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>

#include "flowtune/errors.hpp"
#include "flowtune/rng.hpp"

// cpp-httplib is header-only; keep the build lean
#define CPPHTTPLIB_OPENSSL_SUPPORT_DISABLED
#include <httplib.h>

namespace flowtune {

void RetrievalBudget::validate() const {
    if (max_calls_per_iteration < 0 || max_payload_chars_per_iteration < 0 ||
        max_snippet_chars < 0)
        throw ConfigError("retrieval budget counts must be >= 0");
    if (max_snippet_chars > max_payload_chars_per_iteration)
        throw ConfigError("snippet cap must not exceed the payload cap");
}

nlohmann::json RetrievalRecord::to_json() const {
    nlohmann::json j{{"title", title}, {"id", id}, {"snippet", snippet}};
    if (!authors.empty()) j["authors"] = authors;
    if (!venue.empty()) j["venue"] = venue;
    if (year > 0) j["year"] = year;
    return j;
}

int RetrievalResult::payload_chars() const {
    int total = 0;
    for (const auto& r : records)
        total += static_cast<int>(r.title.size() + r.snippet.size());
    return total;
}

nlohmann::json RetrievalResult::to_json() const {
    nlohmann::json records_json = nlohmann::json::array();
    for (const auto& r : records) records_json.push_back(r.to_json());
    return nlohmann::json{{"kind", kind == RetrievalKind::Web ? "web" : "scholarly"},
                          {"records", records_json},
                          {"from_cache", from_cache},
                          {"query_key", query_key}};
}

nlohmann::json WebSearchOptions::to_json() const {
    return nlohmann::json{{"site_filter", site_filter}, {"top_k", top_k}};
}

nlohmann::json ScholarlyOptions::to_json() const {
    nlohmann::json j{{"top_k", top_k}, {"venue_filter", venue_filter}};
    if (year_range) j["year_range"] = {year_range->first, year_range->second};
    return j;
}

std::string normalize_cache_key(std::string_view query, std::string_view provider,
                                const nlohmann::json& options) {
    std::string normalized;
    normalized.reserve(query.size());
    bool pending_space = false;
    for (char ch : query) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !normalized.empty();
            continue;
        }
        if (pending_space) {
            normalized.push_back(' ');
            pending_space = false;
        }
        normalized.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    if (normalized.empty()) throw DomainError("cache key: query is empty after trimming");

    // nlohmann objects already iterate keys in sorted order
    const std::string material =
        std::string(provider) + "\n" + normalized + "\n" + options.dump();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(material)));
    return std::string(provider) + ":" + buf;
}

RetrievalCache::RetrievalCache(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(file_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            const auto key = j.at("key").get<std::string>();
            entries_.emplace(key, j.at("response"));
        } catch (const nlohmann::json::exception&) {
            // tolerate trailing partial lines from an interrupted run
        }
    }
}

std::optional<nlohmann::json> RetrievalCache::get(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(std::in_place, it->second);
}

void RetrievalCache::put(const std::string& key, const std::string& provider,
                         const std::string& query, const nlohmann::json& response) {
    std::lock_guard lock(mutex_);
    if (entries_.count(key)) return; // append-only: first write wins
    entries_.emplace(key, response);
    if (file_.empty()) return;
    std::ofstream out(file_, std::ios::app);
    out << nlohmann::json{{"key", key},
                          {"provider", provider},
                          {"query", query},
                          {"response", response},
                          {"stored_at", static_cast<long long>(std::time(nullptr))}}
               .dump()
        << "\n";
}

std::size_t RetrievalCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

HttpProviderClient::HttpProviderClient(std::string web_base_url, std::string scholarly_base_url)
    : web_base_url_(std::move(web_base_url)), scholarly_base_url_(std::move(scholarly_base_url)) {}

namespace {

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

} // namespace

nlohmann::json HttpProviderClient::web_search(const std::string& query,
                                              const WebSearchOptions& options) {
    const std::string api_key = env_or_empty("WEB_SEARCH_API_KEY");
    if (api_key.empty())
        throw ConfigError("missing environment value WEB_SEARCH_API_KEY");
    httplib::Client client(web_base_url_);
    client.set_connection_timeout(10);
    httplib::Params params{{"q", query}, {"count", std::to_string(options.top_k)}};
    if (!options.site_filter.empty()) params.emplace("site", options.site_filter);
    httplib::Headers headers{{"X-Subscription-Token", api_key},
                             {"Accept", "application/json"}};
    auto res = client.Get("/res/v1/web/search", params, headers);
    if (!res || res->status != 200)
        throw RetrievalUnavailableError("web search provider unavailable");
    auto raw = nlohmann::json::parse(res->body);
    // normalize the provider shape into the canonical one
    nlohmann::json results = nlohmann::json::array();
    if (raw.contains("web") && raw["web"].contains("results")) {
        for (const auto& r : raw["web"]["results"]) {
            results.push_back({{"title", r.value("title", "")},
                               {"url", r.value("url", "")},
                               {"snippet", r.value("description", "")}});
        }
    } else if (raw.contains("results")) {
        results = raw["results"];
    }
    return nlohmann::json{{"results", results}};
}

nlohmann::json HttpProviderClient::scholarly_lookup(const std::string& query,
                                                    const ScholarlyOptions& options) {
    httplib::Client client(scholarly_base_url_);
    client.set_connection_timeout(10);
    httplib::Params params{{"search", query},
                           {"per-page", std::to_string(options.top_k)}};
    httplib::Headers headers{{"Accept", "application/json"}};
    const std::string contact = env_or_empty("SCHOLARLY_CONTACT");
    if (!contact.empty()) params.emplace("mailto", contact);
    auto res = client.Get("/works", params, headers);
    if (!res || res->status != 200)
        throw RetrievalUnavailableError("scholarly provider unavailable");
    auto raw = nlohmann::json::parse(res->body);
    nlohmann::json works = nlohmann::json::array();
    const auto& source = raw.contains("results") ? raw["results"]
                         : raw.contains("works") ? raw["works"]
                                                 : raw;
    for (const auto& w : source) {
        std::string authors;
        if (w.contains("authorships")) {
            for (const auto& a : w["authorships"]) {
                if (!authors.empty()) authors += ", ";
                authors += a.value("author", nlohmann::json::object()).value("display_name", "");
            }
        } else if (w.contains("authors")) {
            authors = w.value("authors", "");
        }
        works.push_back({{"title", w.value("title", w.value("display_name", ""))},
                         {"authors", authors},
                         {"year", w.value("publication_year", w.value("year", 0))},
                         {"venue", w.value("venue", "")},
                         {"id", w.value("id", "")}});
    }
    return nlohmann::json{{"works", works}};
}

nlohmann::json NullProviderClient::web_search(const std::string&, const WebSearchOptions&) {
    ++attempted_calls_;
    throw RetrievalUnavailableError("replay mode: provider network calls are forbidden");
}

nlohmann::json NullProviderClient::scholarly_lookup(const std::string&,
                                                    const ScholarlyOptions&) {
    ++attempted_calls_;
    throw RetrievalUnavailableError("replay mode: provider network calls are forbidden");
}

SanitizeConfig SanitizeConfig::defaults() {
    return SanitizeConfig{{
        R"(^\s*ignore\b.*\b(instruction|prompt|rule|message)s?\b)",
        R"(^\s*ignore (all|any|previous|prior|above|earlier)\b)",
        R"(^\s*disregard\b)",
        R"(^\s*forget (all|everything|previous|prior|your)\b)",
        R"(^\s*you must (now )?(ignore|follow|obey|output|reveal|act)\b)",
        R"(^\s*(system|assistant)\s*:)",
        R"(^\s*new instructions?\b)",
        R"(^\s*override\b.*\b(instruction|objective|constraint)s?\b)",
    }};
}

std::string sanitize_snippets(const std::string& raw, int cap, const SanitizeConfig& config) {
    // strip markup tags
    std::string no_tags;
    no_tags.reserve(raw.size());
    bool in_tag = false;
    for (char ch : raw) {
        if (ch == '<') {
            in_tag = true;
            continue;
        }
        if (ch == '>') {
            in_tag = false;
            continue;
        }
        if (!in_tag) no_tags.push_back(ch);
    }

    // drop imperative-injection lines
    std::vector<std::regex> patterns;
    patterns.reserve(config.injection_patterns.size());
    for (const auto& p : config.injection_patterns)
        patterns.emplace_back(p, std::regex::icase);

    std::string kept;
    std::size_t pos = 0;
    while (pos <= no_tags.size()) {
        auto end = no_tags.find('\n', pos);
        if (end == std::string::npos) end = no_tags.size();
        const std::string line = no_tags.substr(pos, end - pos);
        bool drop = false;
        for (const auto& re : patterns)
            if (std::regex_search(line, re)) {
                drop = true;
                break;
            }
        if (!drop) {
            if (!kept.empty()) kept.push_back('\n');
            kept += line;
        }
        if (end == no_tags.size()) break;
        pos = end + 1;
    }

    // collapse runs of blank lines left by dropped content
    while (kept.find("\n\n\n") != std::string::npos)
        kept.erase(kept.find("\n\n\n"), 1);

    if (cap >= 0 && static_cast<int>(kept.size()) > cap) {
        std::size_t cut = static_cast<std::size_t>(cap);
        while (cut > 0 && !std::isspace(static_cast<unsigned char>(kept[cut])))
            --cut; // back up to a word boundary
        kept.resize(cut);
        while (!kept.empty() && std::isspace(static_cast<unsigned char>(kept.back())))
            kept.pop_back();
    }
    return kept;
}

RetrievalTools::RetrievalTools(ProviderClient& client, RetrievalCache& cache,
                               RetrievalBudget budget, SanitizeConfig sanitize)
    : client_(client), cache_(cache), budget_(budget), sanitize_(std::move(sanitize)) {
    budget_.validate();
}

void RetrievalTools::begin_iteration(int iteration) {
    state_.begin_iteration(iteration);
}

void RetrievalTools::check_budget_preconditions() const {
    if (budget_.cutoff_iteration && state_.iteration > *budget_.cutoff_iteration)
        throw BudgetError("retrieval cutoff iteration passed");
    if (state_.payload_chars_used >= budget_.max_payload_chars_per_iteration)
        throw BudgetError("retrieval payload budget exhausted for this iteration");
}

void RetrievalTools::charge_payload(RetrievalResult& result) {
    // trim whole records from the tail until the payload budget holds
    const int available = budget_.max_payload_chars_per_iteration - state_.payload_chars_used;
    while (!result.records.empty() && result.payload_chars() > available)
        result.records.pop_back();
    state_.payload_chars_used += result.payload_chars();
}

RetrievalResult RetrievalTools::web_search(const std::string& query,
                                           const WebSearchOptions& options) {
    check_budget_preconditions();
    const auto key = normalize_cache_key(query, "web", options.to_json());

    nlohmann::json response;
    bool from_cache = false;
    if (auto cached = cache_.get(key)) {
        response = *cached;
        from_cache = true; // cache hits consume no network-call budget
    } else {
        if (state_.calls_used >= budget_.max_calls_per_iteration)
            throw BudgetError("retrieval call budget exhausted for this iteration");
        response = client_.web_search(query, options); // may throw; cache untouched
        ++state_.calls_used;
        cache_.put(key, "web", query, response);
    }

    RetrievalResult result;
    result.kind = RetrievalKind::Web;
    result.from_cache = from_cache;
    result.query_key = key;
    if (response.contains("results")) {
        for (const auto& r : response["results"]) {
            if (static_cast<int>(result.records.size()) >= options.top_k) break;
            RetrievalRecord rec;
            rec.title = sanitize_snippets(r.value("title", ""), budget_.max_snippet_chars, sanitize_);
            rec.id = r.value("url", "");
            rec.snippet =
                sanitize_snippets(r.value("snippet", ""), budget_.max_snippet_chars, sanitize_);
            result.records.push_back(std::move(rec));
        }
    }
    charge_payload(result);
    return result;
}

RetrievalResult RetrievalTools::scholarly_lookup(const std::string& query,
                                                 const ScholarlyOptions& options) {
    check_budget_preconditions();
    const auto key = normalize_cache_key(query, "scholarly", options.to_json());

    nlohmann::json response;
    bool from_cache = false;
    if (auto cached = cache_.get(key)) {
        response = *cached;
        from_cache = true;
    } else {
        if (state_.calls_used >= budget_.max_calls_per_iteration)
            throw BudgetError("retrieval call budget exhausted for this iteration");
        response = client_.scholarly_lookup(query, options);
        ++state_.calls_used;
        cache_.put(key, "scholarly", query, response);
    }

    RetrievalResult result;
    result.kind = RetrievalKind::Scholarly;
    result.from_cache = from_cache;
    result.query_key = key;
    std::set<std::string> seen_ids;
    if (response.contains("works")) {
        for (const auto& w : response["works"]) {
            if (static_cast<int>(result.records.size()) >= options.top_k) break;
            const int year = w.value("year", 0);
            if (options.year_range &&
                (year < options.year_range->first || year > options.year_range->second))
                continue;
            const std::string venue = w.value("venue", "");
            if (!options.venue_filter.empty() && venue != options.venue_filter) continue;
            const std::string id = w.value("id", "");
            if (!id.empty() && !seen_ids.insert(id).second) continue; // dedup by stable id
            RetrievalRecord rec;
            rec.title = sanitize_snippets(w.value("title", ""), budget_.max_snippet_chars, sanitize_);
            rec.id = id;
            rec.authors = w.value("authors", "");
            rec.venue = venue;
            rec.year = year;
            result.records.push_back(std::move(rec));
        }
    }
    charge_payload(result);
    return result;
}

} // namespace flowtune
