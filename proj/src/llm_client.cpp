#include "anno/llm_client.hpp"

#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "anno/store.hpp"
#include "anno/text.hpp"

namespace anno {

namespace {

struct Slot {
    std::mutex& mutex;
    std::condition_variable& cv;
    std::size_t& in_flight;

    Slot(std::mutex& m, std::condition_variable& c, std::size_t& n, std::size_t cap) : mutex(m), cv(c), in_flight(n) {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return in_flight < cap; });
        ++in_flight;
    }
    ~Slot() {
        {
            std::lock_guard lock(mutex);
            --in_flight;
        }
        cv.notify_one();
    }
};

bool transient(int status) { return status == 429 || status >= 500; }

}  // namespace

std::size_t approx_token_count(std::string_view text) {
    return std::max((text.size() + 3) / 4, split_whitespace(text).size());
}

LlmClient::LlmClient(ApiConfig config) : config_(std::move(config)) {
    if (config_.max_in_flight == 0) config_.max_in_flight = 1;
}

void LlmClient::audit(const json& entry) {
    if (config_.audit_log.empty()) return;
    std::lock_guard lock(log_mutex_);
    std::ofstream out(config_.audit_log, std::ios::app);
    out << entry.dump() << '\n';
}

Completion LlmClient::complete(const std::string& prompt) {
    Completion result;
    result.prompt_tokens = approx_token_count(prompt);
    json entry{{"ts", now_utc_ms()},
               {"endpoint", config_.endpoint},
               {"model", config_.model},
               {"prompt", prompt},
               {"prompt_tokens", result.prompt_tokens}};

    if (result.prompt_tokens + config_.max_tokens > config_.context_limit) {
        entry["error"] = "ContextLengthExceeded";
        audit(entry);
        throw Error(ErrorCode::ContextLengthExceeded,
                    "prompt of ~" + std::to_string(result.prompt_tokens) + " tokens plus " +
                        std::to_string(config_.max_tokens) + " completion tokens exceeds the limit of " +
                        std::to_string(config_.context_limit));
    }

    std::string key;
    if (!config_.api_key_env.empty()) {
        const char* value = std::getenv(config_.api_key_env.c_str());
        if (!value || !*value) {
            entry["error"] = "missing credential";
            audit(entry);
            throw Error(ErrorCode::ApiError, "environment variable " + config_.api_key_env + " is not set");
        }
        key = value;
    }

    const auto scheme_end = config_.endpoint.find("://");
    const auto path_start = config_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? config_.endpoint : config_.endpoint.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
    const json body{{"model", config_.model},
                    {"prompt", prompt},
                    {"max_tokens", config_.max_tokens},
                    {"temperature", config_.temperature}};

    Slot slot(mutex_, slot_free_, in_flight_, config_.max_in_flight);
    httplib::Client client(origin);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

    auto backoff = config_.initial_backoff;
    for (std::size_t attempt = 0;; ++attempt) {
        auto res = client.Post(path, headers, body.dump(), "application/json");
        std::string failure;
        ErrorCode code = ErrorCode::ApiError;
        std::chrono::milliseconds wait = backoff;
        if (!res) {
            const auto err = res.error();
            code = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                    err == httplib::Error::Write)
                       ? ErrorCode::Timeout
                       : ErrorCode::ApiError;
            failure = "transport error: " + httplib::to_string(err);
        } else if (res->status == 200) {
            const json reply = json::parse(res->body, nullptr, false);
            if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty() ||
                !reply["choices"][0].contains("text") || !reply["choices"][0]["text"].is_string()) {
                entry["status"] = 200;
                entry["retries"] = attempt;
                entry["error"] = "malformed completion body";
                audit(entry);
                throw Error(ErrorCode::ApiError, "completion response lacks choices[0].text");
            }
            result.text = reply["choices"][0]["text"].get<std::string>();
            result.retries = attempt;
            result.status = 200;
            entry["status"] = 200;
            entry["retries"] = attempt;
            entry["completion"] = result.text;
            audit(entry);
            return result;
        } else {
            result.status = res->status;
            failure = "HTTP " + std::to_string(res->status);
            if (!transient(res->status)) {
                entry["status"] = res->status;
                entry["retries"] = attempt;
                entry["error"] = failure;
                audit(entry);
                throw Error(ErrorCode::ApiError, "completion API returned " + failure + ": " + res->body);
            }
            if (res->has_header("Retry-After")) {
                const auto seconds = std::atof(res->get_header_value("Retry-After").c_str());
                if (seconds > 0) wait = std::chrono::milliseconds(static_cast<long long>(seconds * 1000));
            }
        }
        if (attempt >= config_.max_retries) {
            entry["status"] = result.status;
            entry["retries"] = attempt;
            entry["error"] = failure;
            audit(entry);
            throw Error(code, "completion API failed after " + std::to_string(attempt + 1) + " attempts: " + failure);
        }
        std::this_thread::sleep_for(std::min(wait, config_.max_backoff));
        backoff = std::min(backoff * 2, config_.max_backoff);
    }
}

std::string query_llm(const std::string& prompt, const ApiConfig& config) {
    LlmClient client(config);
    return client.complete(prompt).text;
}

}  // namespace anno
