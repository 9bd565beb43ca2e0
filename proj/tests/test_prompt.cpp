#include <doctest.h>

#include <random>
#include <set>

#include "anno/prompt.hpp"
#include "support.hpp"

using namespace anno;

namespace {

std::vector<FewShotExample> figure9_examples(std::string* target, std::string* task) {
    const auto j = test::fixture_json("prompt/figure9_exemplars.json");
    *target = j.at("target");
    *task = j.at("task_name");
    std::vector<FewShotExample> out;
    for (const auto& e : j.at("examples")) out.push_back({e.at("sentence"), *task, e.at("answer")});
    return out;
}

std::string random_sentence(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len) {
    std::string s;
    const std::size_t n = 1 + rng() % max_len;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(rng() % vocab);
    return s;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
    return n;
}

}  // namespace

TEST_CASE("reference prompt is reproduced byte for byte") {
    std::string target, task;
    const auto examples = figure9_examples(&target, &task);
    REQUIRE(examples.size() == 10);
    CHECK(build_prompt(examples, target, task) == test::read_fixture("prompt/figure9_prompt.txt"));
}

TEST_CASE("prompt layout") {
    const auto one = build_prompt({{"a b", "t", "O O"}}, "c", "t");
    CHECK(one == "Given the sentence `` a b '' the t are `` O O ''\n\nGiven the sentence `` c '' the t are");
    CHECK(count_of(one, "\n\n") == 1);

    std::vector<FewShotExample> three(3, {"x", "t", "O"});
    const auto p = build_prompt(three, "y", "t");
    CHECK(count_of(p, "\n\n") == 3);
    CHECK(p.substr(p.size() - 3) == "are");

    CHECK_THROWS_AS(build_prompt({}, "y", "t"), Error);
}

TEST_CASE("distinct example lists give distinct prompts") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        auto make = [&] {
            std::vector<FewShotExample> ex;
            const std::size_t n = 1 + rng() % 3;
            for (std::size_t i = 0; i < n; ++i)
                ex.push_back({random_sentence(rng, 4, 3), "t", rng() % 2 ? "O" : "B-X"});
            return ex;
        };
        const auto a = make();
        const auto b = make();
        const bool same = a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](auto& x, auto& y) {
                              return x.sentence == y.sentence && x.answer == y.answer;
                          });
        CHECK((build_prompt(a, "z", "t") == build_prompt(b, "z", "t")) == same);
    }
}

TEST_CASE("random selection") {
    std::vector<FewShotExample> pool;
    for (int i = 0; i < 120; ++i) pool.push_back({"s" + std::to_string(i), "t", "O"});

    auto ids = [](const std::vector<FewShotExample>& v) {
        std::vector<std::string> out;
        for (const auto& e : v) out.push_back(e.sentence);
        return out;
    };
    CHECK(ids(select_random(pool, 10, 3)) == ids(select_random(pool, 10, 3)));

    std::set<std::vector<std::string>> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto pick = ids(select_random(pool, 10, seed));
        CHECK(std::set<std::string>(pick.begin(), pick.end()).size() == 10);
        seen.insert(pick);
    }
    CHECK(seen.size() == 50);

    CHECK(select_random(pool, 120, 1).size() == 120);
    try {
        select_random(pool, 121, 1);
        FAIL("expected PoolTooSmall");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PoolTooSmall);
    }
}

TEST_CASE("hashed bag-of-words embedder") {
    HashedBowEmbedder e(64);
    const auto v = e.embed("The cat the CAT");
    CHECK(v.norm() == doctest::Approx(1.0));
    CHECK(cosine(e.embed("a b c"), e.embed("c b a")) == doctest::Approx(1.0));
    CHECK(e.embed("").norm() == 0.0);
    CHECK_THROWS_AS(HashedBowEmbedder(0), Error);
}

TEST_CASE("similar selection matches an exhaustive sort on 10-item pools") {
    HashedBowEmbedder embedder(32, 11);
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<FewShotExample> pool;
        for (int i = 0; i < 10; ++i) pool.push_back({random_sentence(rng, 12, 5), "t", "O"});
        const std::string target = random_sentence(rng, 12, 5);
        const std::size_t n = 1 + rng() % 10;

        // Oracle: cosine from raw components, then a full sort on (-similarity, index).
        const auto t = embedder.embed(target);
        std::vector<std::pair<long double, std::size_t>> keyed;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const auto v = embedder.embed(pool[i].sentence);
            long double dot = 0, nv = 0, nt = 0;
            for (Eigen::Index k = 0; k < v.size(); ++k) {
                dot += static_cast<long double>(v(k)) * t(k);
                nv += static_cast<long double>(v(k)) * v(k);
                nt += static_cast<long double>(t(k)) * t(k);
            }
            const long double sim = nv == 0 ? 0 : dot / std::sqrt(nv * nt);
            keyed.emplace_back(-std::round(sim * 1e12L), i);
        }
        std::sort(keyed.begin(), keyed.end());

        const auto got = select_similar(pool, target, n, &embedder);
        REQUIRE(got.size() == n);
        for (std::size_t r = 0; r < n; ++r) CHECK(got[r].sentence == pool[keyed[r].second].sentence);
    }
}

TEST_CASE("similar selection errors") {
    std::vector<FewShotExample> pool{{"a", "t", "O"}};
    try {
        select_similar(pool, "a", 1, nullptr);
        FAIL("expected EmbedderUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmbedderUnavailable);
    }
    HashedBowEmbedder embedder;
    try {
        select_similar(pool, "a", 2, &embedder);
        FAIL("expected PoolTooSmall");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PoolTooSmall);
    }
    try {
        select_similar(pool, "   ", 1, &embedder);
        FAIL("expected ZeroVector");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroVector);
    }
}

TEST_CASE("completion parsing") {
    auto p = parse_tags(" `` B-PER I-PER O ''\n\nGiven the sentence", 3);
    CHECK(p.tags == std::vector<std::string>{"B-PER", "I-PER", "O"});
    CHECK_FALSE(p.mismatch);

    p = parse_tags("`B-LOC O`", 2);
    CHECK(p.tags == std::vector<std::string>{"B-LOC", "O"});

    p = parse_tags("B-ORG", 3);
    CHECK(p.tags == std::vector<std::string>{"B-ORG", "O", "O"});
    CHECK(p.mismatch);

    p = parse_tags("`` O O O O ''", 2);
    CHECK(p.tags == std::vector<std::string>{"O", "O"});
    CHECK(p.mismatch);

    p = parse_tags("", 2);
    CHECK(p.tags == std::vector<std::string>{"O", "O"});
    CHECK(p.mismatch);
}

TEST_CASE("parsed length always equals the expected length") {
    std::mt19937_64 rng(5);
    const std::string alphabet = "`' OB-PERI\n";
    for (int trial = 0; trial < 2000; ++trial) {
        std::string s;
        const std::size_t len = rng() % 40;
        for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
        const std::size_t expected = rng() % 8;
        const auto p = parse_tags(s, expected);
        REQUIRE(p.tags.size() == expected);
        for (const auto& t : p.tags) REQUIRE_FALSE(t.empty());
    }
}

TEST_CASE("prompt config") {
    const auto c = PromptConfig::from_json(json::parse(
        R"({"n_examples": 5, "strategy": "similar", "seed": 4,
            "api": {"endpoint": "http://x/v1/completions", "model": "m", "initial_backoff_ms": 10}})"));
    CHECK(c.n_examples == 5);
    CHECK(c.strategy == SelectionStrategy::Similar);
    CHECK(c.seed == 4);
    CHECK(c.api.model == "m");
    CHECK(c.api.initial_backoff.count() == 10);
    CHECK(c.api.context_limit == 2049);
    CHECK(c.task_name == "entities-recognition");
    CHECK_THROWS_AS(PromptConfig::from_json(json{{"strategy", "nearest"}}), Error);
    CHECK_THROWS_AS(PromptConfig::from_json(json{{"n_examples", 0}}), Error);
}

TEST_CASE("token cap filters long exemplars before selection") {
    std::vector<FewShotExample> pool{{"a b c d e", "t", "O O O O O"}, {"a b", "t", "O O"}, {"c", "t", "O"}};
    PromptConfig cfg;
    cfg.n_examples = 2;
    cfg.max_example_tokens = 2;
    const auto got = select_examples(pool, "a", cfg, nullptr);
    REQUIRE(got.size() == 2);
    for (const auto& e : got) CHECK(e.sentence != "a b c d e");
    cfg.n_examples = 3;
    CHECK_THROWS_AS(select_examples(pool, "a", cfg, nullptr), Error);
}
