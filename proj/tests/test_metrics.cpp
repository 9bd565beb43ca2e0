#include <doctest.h>

#include <random>

#include "anno/metrics.hpp"
#include "anno/synthetic.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace anno;
using Tags = std::vector<std::string>;

TEST_CASE("identical sequences score perfectly") {
    const std::vector<Tags> g{{"B-PER", "I-PER", "O", "B-LOC"}, {"O", "O"}};
    const auto m = evaluate_sequence_labeling(g, g);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.gold_chunks == 2);
}

TEST_CASE("truncated entity matches nothing") {
    const auto m = evaluate_sequence_labeling({{"B-PER", "O", "O"}}, {{"B-PER", "I-PER", "O"}});
    CHECK(m.matched_chunks == 0);
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);
    CHECK(m.accuracy == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("chunk extraction follows conlleval") {
    CHECK(extract_chunks({"I-PER", "I-PER", "O"}) == std::vector<Chunk>{{0, 2, "PER"}});
    CHECK(extract_chunks({"B-PER", "I-LOC"}) == std::vector<Chunk>{{0, 1, "PER"}, {1, 2, "LOC"}});
    CHECK(extract_chunks({"B-PER", "B-PER"}) == std::vector<Chunk>{{0, 1, "PER"}, {1, 2, "PER"}});
    CHECK(extract_chunks({"O", "I-ORG", "I-ORG"}) == std::vector<Chunk>{{1, 3, "ORG"}});
    // Non-BIO tags count as outside.
    CHECK(extract_chunks({"B-X", "NN", "I-X"}) == std::vector<Chunk>{{0, 1, "X"}, {2, 3, "X"}});
    CHECK(extract_chunks({}).empty());
}

TEST_CASE("no chunks on either side is vacuously perfect") {
    const auto m = evaluate_sequence_labeling({{"O", "O"}}, {{"O", "O"}});
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
}

TEST_CASE("length mismatches are rejected") {
    CHECK_THROWS_AS(evaluate_sequence_labeling({{"O"}}, {}), Error);
    try {
        evaluate_sequence_labeling({{"O"}}, {{"O", "O"}});
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LengthMismatch);
    }
}

TEST_CASE("all-O predictions on the fixture corpus") {
    const auto corpus = read_conll(test::fixture_path("corpus/sample.conll"), {{"ner", 3}});
    REQUIRE(corpus.sentences.size() == 6);

    // O-fraction counted straight from the file's last column.
    std::istringstream lines(test::read_fixture("corpus/sample.conll"));
    std::string line;
    std::size_t tokens = 0, outside = 0;
    while (std::getline(lines, line)) {
        if (line.empty() || line.rfind("-DOCSTART-", 0) == 0) continue;
        ++tokens;
        outside += line.size() >= 2 && line.substr(line.size() - 2) == " O";
    }
    REQUIRE(tokens == 47);
    REQUIRE(outside == 35);

    std::vector<Tags> golds, preds;
    for (const auto& s : corpus.sentences) {
        golds.push_back(s.tags.at("ner"));
        preds.emplace_back(s.tokens.size(), "O");
    }
    const auto m = evaluate_sequence_labeling(preds, golds);
    CHECK(m.accuracy == doctest::Approx(35.0 / 47.0));
    CHECK(m.f1 == 0.0);
    CHECK(m.gold_chunks == 7);
}

TEST_CASE("agrees with the brute-force span oracle on 10000 random pairs") {
    std::mt19937_64 rng(20240611);
    const Tags alphabet{"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "X"};
    std::size_t checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t sentences = 1 + rng() % 3;
        std::vector<Tags> preds, golds;
        for (std::size_t s = 0; s < sentences; ++s) {
            const std::size_t n = rng() % 12;
            Tags g, p;
            for (std::size_t i = 0; i < n; ++i) {
                g.push_back(alphabet[rng() % alphabet.size()]);
                // Predictions copy gold most of the time so matches are common.
                p.push_back(rng() % 3 ? g.back() : alphabet[rng() % alphabet.size()]);
            }
            golds.push_back(g);
            preds.push_back(p);
        }
        const auto m = evaluate_sequence_labeling(preds, golds);
        const auto o = test::span_oracle(preds, golds);
        REQUIRE(m.gold_chunks == o.gold);
        REQUIRE(m.predicted_chunks == o.predicted);
        REQUIRE(m.matched_chunks == o.matched);
        REQUIRE(m.correct_tokens == o.correct);
        const double p = o.predicted ? static_cast<double>(o.matched) / o.predicted : 0.0;
        const double r = o.gold ? static_cast<double>(o.matched) / o.gold : 0.0;
        if (o.gold == 0 && o.predicted == 0) {
            REQUIRE(m.f1 == 1.0);
        } else {
            REQUIRE(m.precision == p);
            REQUIRE(m.recall == r);
            REQUIRE(m.f1 == (p + r > 0 ? 2 * p * r / (p + r) : 0.0));
        }
        ++checked;
    }
    CHECK(checked == 10000);
}
