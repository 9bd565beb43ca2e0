#pragma once

// Completion-API client: bearer auth, bounded retries, an in-flight cap, a
// context-length guard and an NDJSON audit trail.

#include <condition_variable>
#include <fstream>
#include <mutex>
#include <string>

#include "anno/prompt.hpp"

namespace anno {

// Rough token estimate used for the context guard: the larger of
// ceil(bytes / 4) and the whitespace-separated piece count.
std::size_t approx_token_count(std::string_view text);

struct Completion {
    std::string text;
    std::size_t retries = 0;
    std::size_t prompt_tokens = 0;
    int status = 0;
};

class LlmClient {
public:
    explicit LlmClient(ApiConfig config);

    // Throws ContextLengthExceeded (before any network traffic), ApiError, Timeout.
    Completion complete(const std::string& prompt);

    const ApiConfig& config() const { return config_; }

private:
    void audit(const json& entry);

    ApiConfig config_;
    std::mutex mutex_;
    std::condition_variable slot_free_;
    std::size_t in_flight_ = 0;
    std::mutex log_mutex_;
};

// One-shot convenience wrapper returning the completion text verbatim.
std::string query_llm(const std::string& prompt, const ApiConfig& config);

}  // namespace anno
