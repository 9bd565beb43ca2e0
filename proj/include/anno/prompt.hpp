#pragma once

// Few-shot prompt construction, exemplar selection and completion parsing.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anno/kernels.hpp"
#include "anno/model.hpp"

namespace anno {

using json = nlohmann::json;

struct FewShotExample {
    std::string sentence;   // space-separated tokens
    std::string task_name;
    std::string answer;     // space-separated tags, without quote marks
};

// `Given the sentence `` {sentence} '' the {task} are `` {answer} ''` per
// example, joined by "\n\n", then the target clause ending at "are".
std::string build_prompt(const std::vector<FewShotExample>& examples, const std::string& target_sentence,
                         const std::string& task_name);

// n distinct examples drawn uniformly without replacement, in draw order.
std::vector<FewShotExample> select_random(const std::vector<FewShotExample>& train, std::size_t n,
                                          std::uint64_t seed);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual VectorXd embed(const std::string& sentence) const = 0;
    virtual std::size_t dim() const = 0;
};

// L2-normalised bag of lower-cased whitespace tokens hashed into `dim` buckets.
class HashedBowEmbedder : public EmbeddingProvider {
public:
    explicit HashedBowEmbedder(std::size_t dim = 1024, std::uint64_t seed = 0x6f77);
    VectorXd embed(const std::string& sentence) const override;
    std::size_t dim() const override { return dim_; }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

// Mean of an external encoder's token vectors.
class EncoderEmbedder : public EmbeddingProvider {
public:
    explicit EncoderEmbedder(EncoderClient client) : client_(std::move(client)) {}
    VectorXd embed(const std::string& sentence) const override;
    std::size_t dim() const override { return client_.dim(); }

private:
    EncoderClient client_;
};

struct ScoredExample {
    std::size_t index = 0;
    double similarity = 0;
};

// Every training example scored against the target, best first, ties by index.
// Scores are rounded to 12 decimals; a sentence that embeds to zero scores 0.
std::vector<ScoredExample> rank_by_similarity(const std::vector<FewShotExample>& train,
                                              const std::string& target_sentence, const EmbeddingProvider& embedder);

std::vector<FewShotExample> select_similar(const std::vector<FewShotExample>& train, const std::string& target_sentence,
                                           std::size_t n, const EmbeddingProvider* embedder);

struct ParsedTags {
    std::vector<std::string> tags;
    bool mismatch = false;
};

// First `` ... '' run, else first `...` run, else the whole text; split on
// whitespace, then truncated or right-padded with "O" to expected_len.
ParsedTags parse_tags(const std::string& completion, std::size_t expected_len);

enum class SelectionStrategy { Random, Similar };

std::string_view to_string(SelectionStrategy s);
SelectionStrategy selection_strategy_from_string(std::string_view name);

struct ApiConfig {
    std::string endpoint;                    // full URL of the completions route
    std::string model;
    std::size_t max_tokens = 256;
    double temperature = 0.0;
    std::string api_key_env = "OPENAI_API_KEY";  // empty: send no credential
    std::size_t context_limit = 2049;        // prompt + completion, in approximate tokens
    std::size_t max_retries = 4;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::milliseconds max_backoff{8000};
    std::chrono::milliseconds timeout{60000};
    std::size_t max_in_flight = 4;
    std::string audit_log;                   // NDJSON path; empty disables

    static ApiConfig from_json(const json& node);
};

struct PromptConfig {
    std::size_t n_examples = 10;
    SelectionStrategy strategy = SelectionStrategy::Random;
    std::uint64_t seed = 0;
    std::string task_name = "entities-recognition";
    std::size_t max_example_tokens = 0;      // exemplars longer than this are skipped; 0 = no cap
    ApiConfig api;

    static PromptConfig from_json(const json& node);
};

// Drops exemplars over the token cap, then selects per the configured strategy.
std::vector<FewShotExample> select_examples(const std::vector<FewShotExample>& train, const std::string& target,
                                            const PromptConfig& config, const EmbeddingProvider* embedder);

}  // namespace anno
