#include "anno/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "anno/text.hpp"

namespace anno {

namespace {

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string clause(const std::string& sentence, const std::string& task_name) {
    return "Given the sentence `` " + sentence + " '' the " + task_name + " are";
}

}  // namespace

std::string build_prompt(const std::vector<FewShotExample>& examples, const std::string& target_sentence,
                         const std::string& task_name) {
    if (examples.empty()) throw Error(ErrorCode::EmptyExamples, "a prompt needs at least one example");
    std::string out;
    for (const auto& ex : examples) {
        out += clause(ex.sentence, task_name);
        out += " `` " + ex.answer + " ''";
        out += "\n\n";
    }
    out += clause(target_sentence, task_name);
    return out;
}

std::vector<FewShotExample> select_random(const std::vector<FewShotExample>& train, std::size_t n,
                                          std::uint64_t seed) {
    if (n > train.size())
        throw Error(ErrorCode::PoolTooSmall, "asked for " + std::to_string(n) + " examples from a pool of " +
                                                 std::to_string(train.size()));
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::vector<FewShotExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.push_back(train[idx[i]]);
    }
    return out;
}

HashedBowEmbedder::HashedBowEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw Error(ErrorCode::InvalidParams, "embedding dim must be positive");
}

VectorXd HashedBowEmbedder::embed(const std::string& sentence) const {
    VectorXd v = VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& tok : split_whitespace(sentence))
        v(static_cast<Eigen::Index>(fnv1a(to_lower(tok), seed_) % dim_)) += 1.0;
    const double norm = v.norm();
    if (norm > 0) v /= norm;
    return v;
}

VectorXd EncoderEmbedder::embed(const std::string& sentence) const {
    const auto tokens = split_whitespace(sentence);
    if (tokens.empty()) return VectorXd::Zero(static_cast<Eigen::Index>(client_.dim()));
    return client_.encode(tokens).rowwise().mean();
}

std::vector<ScoredExample> rank_by_similarity(const std::vector<FewShotExample>& train,
                                              const std::string& target_sentence, const EmbeddingProvider& embedder) {
    const VectorXd target = embedder.embed(target_sentence);
    if (target.norm() == 0) throw Error(ErrorCode::ZeroVector, "target sentence embeds to the zero vector");
    std::vector<ScoredExample> scored;
    scored.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const VectorXd v = embedder.embed(train[i].sentence);
        // Rounded so that ties in exact arithmetic stay ties and fall back to index order.
        const double sim = v.norm() == 0 ? 0.0 : cosine(v, target);
        scored.push_back({i, std::round(sim * 1e12) / 1e12});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const ScoredExample& a, const ScoredExample& b) { return a.similarity > b.similarity; });
    return scored;
}

std::vector<FewShotExample> select_similar(const std::vector<FewShotExample>& train, const std::string& target_sentence,
                                           std::size_t n, const EmbeddingProvider* embedder) {
    if (!embedder) throw Error(ErrorCode::EmbedderUnavailable, "no embedder configured");
    if (n > train.size())
        throw Error(ErrorCode::PoolTooSmall, "asked for " + std::to_string(n) + " examples from a pool of " +
                                                 std::to_string(train.size()));
    const auto ranked = rank_by_similarity(train, target_sentence, *embedder);
    std::vector<FewShotExample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(train[ranked[i].index]);
    return out;
}

ParsedTags parse_tags(const std::string& completion, std::size_t expected_len) {
    std::string_view body = completion;
    if (auto open = body.find("``"); open != std::string_view::npos) {
        body = body.substr(open + 2);
        if (auto close = body.find("''"); close != std::string_view::npos) body = body.substr(0, close);
    } else if (auto tick = body.find('`'); tick != std::string_view::npos) {
        body = body.substr(tick + 1);
        if (auto close = body.find('`'); close != std::string_view::npos) body = body.substr(0, close);
    }
    ParsedTags out;
    out.tags = split_whitespace(body);
    out.mismatch = out.tags.size() != expected_len;
    out.tags.resize(expected_len, "O");
    return out;
}

std::string_view to_string(SelectionStrategy s) { return s == SelectionStrategy::Random ? "random" : "similar"; }

SelectionStrategy selection_strategy_from_string(std::string_view name) {
    if (name == "random") return SelectionStrategy::Random;
    if (name == "similar") return SelectionStrategy::Similar;
    throw Error(ErrorCode::InvalidParams, "unknown selection strategy `" + std::string(name) + "`");
}

ApiConfig ApiConfig::from_json(const json& node) {
    ApiConfig c;
    if (node.is_null()) return c;
    c.endpoint = node.value("endpoint", c.endpoint);
    c.model = node.value("model", c.model);
    c.max_tokens = node.value("max_tokens", c.max_tokens);
    c.temperature = node.value("temperature", c.temperature);
    c.api_key_env = node.value("api_key_env", c.api_key_env);
    c.context_limit = node.value("context_limit", c.context_limit);
    c.max_retries = node.value("max_retries", c.max_retries);
    c.initial_backoff = std::chrono::milliseconds(node.value("initial_backoff_ms", c.initial_backoff.count()));
    c.max_backoff = std::chrono::milliseconds(node.value("max_backoff_ms", c.max_backoff.count()));
    c.timeout = std::chrono::milliseconds(node.value("timeout_ms", c.timeout.count()));
    c.max_in_flight = std::max<std::size_t>(1, node.value("max_in_flight", c.max_in_flight));
    c.audit_log = node.value("audit_log", c.audit_log);
    return c;
}

PromptConfig PromptConfig::from_json(const json& node) {
    PromptConfig c;
    if (node.is_null()) return c;
    c.n_examples = node.value("n_examples", c.n_examples);
    if (c.n_examples == 0) throw Error(ErrorCode::InvalidParams, "n_examples must be at least 1");
    if (node.contains("strategy")) c.strategy = selection_strategy_from_string(node.at("strategy").get<std::string>());
    c.seed = node.value("seed", c.seed);
    c.task_name = node.value("task_name", c.task_name);
    c.max_example_tokens = node.value("max_example_tokens", c.max_example_tokens);
    if (node.contains("api")) c.api = ApiConfig::from_json(node.at("api"));
    return c;
}

std::vector<FewShotExample> select_examples(const std::vector<FewShotExample>& train, const std::string& target,
                                            const PromptConfig& config, const EmbeddingProvider* embedder) {
    std::vector<FewShotExample> pool;
    for (const auto& ex : train) {
        if (config.max_example_tokens && split_whitespace(ex.sentence).size() > config.max_example_tokens) continue;
        pool.push_back(ex);
    }
    if (config.strategy == SelectionStrategy::Random) return select_random(pool, config.n_examples, config.seed);
    return select_similar(pool, target, config.n_examples, embedder);
}

}  // namespace anno
