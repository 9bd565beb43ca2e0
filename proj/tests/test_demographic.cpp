#include <doctest.h>

#include <random>
#include <set>

#include "anno/demographic.hpp"
#include "anno/harness.hpp"
#include "anno/synthetic.hpp"

using namespace anno;
using Tokens = std::vector<std::string>;

namespace {

DemographicConfig raw_age() { return DemographicConfig::from_json(json::parse(R"({"bins": {"age": null}})")); }

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidParams;
}

}  // namespace

TEST_CASE("raw and binned renderings") {
    CHECK(encode_demographics(json{{"age", 25}}, raw_age()) == Tokens{"age=25"});
    CHECK(encode_demographics(json{{"age", 25.5}}, raw_age()) == Tokens{"age=25.5"});

    const auto decade = DemographicConfig::from_json(json::object());
    CHECK(decade.features == Tokens{"age"});
    CHECK(encode_demographics(json{{"age", 25}}, decade) == Tokens{"age=20-29"});
    CHECK(encode_demographics(json{{"age", 30}}, decade) == Tokens{"age=30-39"});
    CHECK(encode_demographics(json{{"age", 29.9}}, decade) == Tokens{"age=20-29"});
    CHECK(encode_demographics(json{{"age", -1}}, decade) == Tokens{"age=<0"});
    CHECK(encode_demographics(json{{"age", 130}}, decade) == Tokens{"age=>=130"});

    const auto custom = DemographicConfig::from_json(json::parse(R"({"bins": {"age": [0, 18.5, 65]}})"));
    CHECK(encode_demographics(json{{"age", 20}}, custom) == Tokens{"age=18.5-65"});
    CHECK(encode_demographics(json{{"age", 10}}, custom) == Tokens{"age=0-18.5"});
}

TEST_CASE("declared order is kept and strings pass through") {
    const auto cfg = DemographicConfig::from_json(json::parse(R"({"features": ["gender", "age", "student"]})"));
    const json profile{{"age", 41}, {"student", false}, {"gender", "f"}};
    CHECK(encode_demographics(profile, cfg) == Tokens{"gender=f", "age=40-49", "student=false"});
}

TEST_CASE("missing or non-scalar features") {
    const auto cfg = DemographicConfig::from_json(json::object());
    CHECK(code_of([&] { encode_demographics(json::object(), cfg); }) == ErrorCode::MissingFeature);
    CHECK(code_of([&] { encode_demographics(json{{"age", nullptr}}, cfg); }) == ErrorCode::MissingFeature);
    CHECK(code_of([&] { encode_demographics(json{{"age", json::array({1})}}, cfg); }) == ErrorCode::MissingFeature);
    CHECK(code_of([&] { encode_demographics(json{{"age", ""}}, cfg); }) == ErrorCode::MissingFeature);
}

TEST_CASE("bad bin specs") {
    CHECK(code_of([] { DemographicConfig::from_json(json::parse(R"({"bins": {"age": [5]}})")); }) ==
          ErrorCode::InvalidParams);
    CHECK(code_of([] { DemographicConfig::from_json(json::parse(R"({"bins": {"age": [5, 3]}})")); }) ==
          ErrorCode::InvalidParams);
    CHECK(code_of([] { DemographicConfig::from_json(json::parse(R"({"bins": {"age": "quintile"}})")); }) ==
          ErrorCode::InvalidParams);
    CHECK(code_of([] { DemographicConfig::from_json(json::array()); }) == ErrorCode::InvalidParams);
}

TEST_CASE("config round trip") {
    const auto cfg = DemographicConfig::from_json(json::parse(R"({"features": ["age"], "bins": {"age": [0, 50]}})"));
    const auto back = DemographicConfig::from_json(cfg.to_json());
    CHECK(back.features == cfg.features);
    CHECK(back.bins.at("age").edges == cfg.bins.at("age").edges);
}

TEST_CASE("augmentation prefixes pseudo-tokens and keeps the words") {
    Instance inst{"7", {"good", "film"}, {{"sentiment", Label{std::string("positive")}}}, 0};
    const auto cfg = DemographicConfig::from_json(json::parse(R"({"features": ["gender", "age"]})"));
    const auto out = augment(inst, json{{"age", 63}, {"gender", "m"}}, cfg);
    CHECK(out.tokens == Tokens{"gender=m", "age=60-69", "good", "film"});
    CHECK(out.prefix_len == 2);
    CHECK(out.word_count() == 2);
    CHECK(out.labels == inst.labels);

    DemographicConfig off;
    const auto same = augment(inst, json::object(), off);
    CHECK(same.tokens == inst.tokens);
    CHECK(same.prefix_len == 0);
}

TEST_CASE("suffix and injectivity properties") {
    std::mt19937_64 rng(3);
    const auto cfg = DemographicConfig::from_json(json::parse(R"({"features": ["age", "region"], "bins": {}})"));
    std::map<Tokens, json> seen;
    for (int trial = 0; trial < 1000; ++trial) {
        const json profile{{"age", static_cast<int>(rng() % 40)}, {"region", "r" + std::to_string(rng() % 5)}};
        Instance inst{"i", {}, {}, 0};
        for (std::size_t k = 0; k < rng() % 6; ++k) inst.tokens.push_back("w" + std::to_string(rng() % 9));
        const auto out = augment(inst, profile, cfg);
        REQUIRE(out.tokens.size() == inst.tokens.size() + 2);
        CHECK(Tokens(out.tokens.begin() + 2, out.tokens.end()) == inst.tokens);

        const auto tokens = encode_demographics(profile, cfg);
        auto [it, fresh] = seen.emplace(tokens, profile);
        if (!fresh) CHECK(it->second == profile);
    }
}

TEST_CASE("disagreement corpus") {
    DemographicParams params;
    params.test_items = 1000;
    const auto a = generate_demographic_corpus(params, 11);
    const auto b = generate_demographic_corpus(params, 11);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].tokens == b.train[i].tokens);
        CHECK(a.train[i].label == b.train[i].label);
    }
    std::size_t dependent = 0;
    for (bool d : a.age_dependent) dependent += d;
    CHECK(dependent == 8);

    // Two simulated annotators aged 30 and 60 over the same 1000 statements.
    SimulatedAnnotator young, old;
    std::size_t conflicts = 0;
    for (const auto& item : a.test) {
        const auto y = young.label(demographic_label(item.text_class, 30, params), a.labels);
        const auto o = old.label(demographic_label(item.text_class, 60, params), a.labels);
        conflicts += y != o;
    }
    CHECK(std::abs(static_cast<double>(conflicts) / 1000.0 - 0.4) <= 0.02);

    // Closed form: (1 - f) + f * max(q, 1 - q) with f = 0.4 and a balanced split.
    std::size_t n_old = 0;
    for (const auto& item : a.test) n_old += item.age >= params.old_threshold;
    CHECK(n_old == 500);
    CHECK(std::abs(text_only_bayes_accuracy(a.test) - 0.8) <= 0.01);

    params.keywords_per_statement = params.keywords_per_class + 1;
    CHECK(code_of([&] { generate_demographic_corpus(params, 1); }) == ErrorCode::InvalidParams);
}

TEST_CASE("the age token flips suggestions for age-dependent statements") {
    DemographicParams params;
    const auto corpus = generate_demographic_corpus(params, 2);
    const auto features = DemographicConfig::from_json(json::object());
    std::vector<Instance> train;
    for (const auto& item : corpus.train) {
        Instance inst{"", item.tokens, {{"sentiment", Label{item.label}}}, 0};
        train.push_back(augment(inst, item.profile, features));
    }
    std::vector<const Instance*> batch;
    for (const auto& i : train) batch.push_back(&i);
    auto model = make_model<double>({{"sentiment", TaskKind::Classification, corpus.labels}}, ExtractorConfig{}, 2);
    ALConfig cfg;
    cfg.epochs = 15;
    anno::train(model, batch, cfg);

    std::size_t checked = 0;
    for (const auto& item : corpus.test) {
        if (item.text_class % 5 != 4) continue;
        Instance inst{"", item.tokens, {}, 0};
        const auto y = suggest_for_annotator(model, inst, json{{"age", 30}}, features).at("sentiment");
        const auto o = suggest_for_annotator(model, inst, json{{"age", 60}}, features).at("sentiment");
        CHECK(y.labels == Tokens{"positive"});
        CHECK(o.labels == Tokens{"negative"});
        if (++checked == 20) break;
    }
    CHECK(checked == 20);
}
