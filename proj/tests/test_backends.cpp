#include <doctest.h>

#include <chrono>
#include <filesystem>

#include "anno/backends.hpp"
#include "anno/synthetic.hpp"
#include "anno/text.hpp"
#include "support.hpp"

using namespace anno;
using Tags = std::vector<std::string>;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidParams;
}

// Entity selection over synthetic sentences, plus a yes/no button whose gold
// answer is whether the sentence has an entity.
struct NerTask {
    TaskFile gold;
    std::vector<Tags> tags;
};

NerTask ner_task(std::size_t n, std::uint64_t seed) {
    SyntheticParams params;
    params.sentences = n;
    params.plain_fraction = 0;
    const auto corpus = generate_two_task_corpus(params, seed);
    std::vector<std::string> types;
    for (const auto& l : corpus.label_sets.at("ner"))
        if (is_begin(l)) types.emplace_back(tag_type(l));
    json format = json::array({json{{"type", "selection"}, {"properties", {{"contents", types}}}},
                               json{{"type", "button"}, {"properties", {{"contents", {"none", "some"}}}}}});
    NerTask out;
    out.gold.interface = parse_interface_spec(json{{"format", format}});
    std::vector<Payload> sources;
    for (const auto& s : corpus.sentences) sources.emplace_back(join(s.tokens, " "));
    out.gold.document = make_document(out.gold.interface, sources, std::vector<Tags>(n, Tags{"Mark entities", "Any?"}));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = corpus.sentences[i].tags.at("ner");
        out.tags.push_back(t);
        const bool some = std::any_of(t.begin(), t.end(), [](const auto& x) { return x != "O"; });
        out.gold.document.result[i] = {tags_to_spans(tokenize(std::get<std::string>(sources[i])), t),
                                       ChoiceAnswer{some ? 1 : 0}};
    }
    return out;
}

struct Env {
    AnnotationStore store{open_sqlite_storage(":memory:")};
    User admin = store.register_user({"admin", "Admin", Role::Administrator, json::object()}, "pw");
    User ann = store.register_user({"ann", "Ann", Role::Annotator, json{{"age", 30}}}, "pw");
    User bob = store.register_user({"bob", "Bob", Role::Annotator, json{{"age", 64}}}, "pw");
    User anon = store.register_user({"anon", "Anon", Role::Annotator, json::object()}, "pw");
};

void submit_gold(AnnotationStore& store, const std::string& task, const std::string& who, const TaskFile& gold) {
    auto served = store.next_instance(task, who);
    REQUIRE(served);
    store.submit_annotation(task, who, served->instance_index, gold.document.result[served->instance_index]);
}

}  // namespace

TEST_CASE("component mapping on the custom interface fixture") {
    const auto file = parse_task_file(test::read_fixture("appendix_e_custom.json"));
    const auto tasks = component_tasks(file.interface, json::object());
    REQUIRE(tasks.size() == 2);
    CHECK(tasks[0].component == 2);
    CHECK(tasks[0].kind == TaskKind::Classification);
    CHECK(tasks[0].labels == Tags{"positive", "negative", "neutral"});
    CHECK(tasks[1].component == 3);
    CHECK(tasks[1].task_id == "c3");
    CHECK(tasks[1].labels == Tags{"O", "B-NP", "I-NP", "B-PP", "I-PP", "B-VP", "I-VP"});

    const auto named = component_tasks(file.interface, json{{"tasks", {{"3", "cp"}}}});
    REQUIRE(named.size() == 1);
    CHECK(named[0].task_id == "cp");
    CHECK(code_of([&] { component_tasks(file.interface, json{{"tasks", {{"1", "x"}}}}); }) == ErrorCode::InvalidParams);
    CHECK(code_of([&] { component_tasks(file.interface, json{{"tasks", {{"9", "x"}}}}); }) == ErrorCode::InvalidParams);
    CHECK(code_of([&] { component_tasks(file.interface, json{{"tasks", {{"two", "x"}}}}); }) == ErrorCode::InvalidParams);
    CHECK(code_of([] { component_tasks(parse_interface_spec(R"({"format": [{"type": "textbox"}]})"), json::object()); }) ==
          ErrorCode::InvalidParams);
}

TEST_CASE("answers survive the trip through model labels") {
    const auto t = ner_task(200, 3);
    const auto tasks = component_tasks(t.gold.interface, json::object());
    for (std::size_t i = 0; i < t.tags.size(); ++i) {
        const auto& src = t.gold.document.source[i];
        const auto inst = to_model_instance(src, t.gold.document.result[i], tasks);
        CHECK(std::get<Tags>(inst.labels.at("c0")) == t.tags[i]);
        std::map<std::string, TaskSuggestion> s{{"c0", {t.tags[i], 1.0}},
                                               {"c1", {{std::get<std::string>(inst.labels.at("c1"))}, 1.0}}};
        const auto back = to_component_values(src, s, tasks, make_document(t.gold.interface, {src}, {{"a", "b"}}).result[0]);
        CHECK(back == t.gold.document.result[i]);
    }

    // Labels outside the component and orphan I- tags are repaired.
    const Payload src = std::string("a b c");
    const auto out = to_component_values(src, {{"c0", {{"I-PER", "B-XYZ", "I-PER"}, 1}}}, tasks,
                                         {LabeledSpanSet{}, ChoiceAnswer{0}});
    const auto spans = std::get<LabeledSpanSet>(out[0]).spans;
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].start == 0);
    CHECK(spans[1].start == 4);
}

TEST_CASE("backend config") {
    const auto c = ModelBackendConfig::from_json(json{{"k", 4}, {"alphas", {{"c0", 2.0}}}, {"agg", "min"}},
                                                 BackendKind::Mtal);
    CHECK(c.al.query_batch_k == 4);
    CHECK(c.al.retrain_every == 4);
    CHECK(c.al.alphas.at("c0") == 2.0);
    CHECK(c.al.confidence_agg == ConfidenceAgg::Min);
    CHECK_FALSE(c.demographics);
    CHECK(ModelBackendConfig::from_json(json::object(), BackendKind::DemographicAl).demographics->features == Tags{"age"});
    CHECK(code_of([] { ModelBackendConfig::from_json(json{{"alphas", {{"a", 0.0}}}}, BackendKind::Mtal); }) ==
          ErrorCode::InvalidParams);
    CHECK(code_of([] { ModelBackendConfig::from_json(json{{"retrain_every", 0}}, BackendKind::Mtal); }) ==
          ErrorCode::InvalidParams);
}

TEST_CASE("every k-th submission retrains exactly once") {
    Env env;
    const auto t = ner_task(40, 5);
    const auto snapdir = std::filesystem::temp_directory_path() / "anno_backend_snapshots";
    std::filesystem::remove_all(snapdir);
    const auto id = env.store.create_task(
        env.admin, t.gold.interface, make_document(t.gold.interface, t.gold.document.source, t.gold.document.question),
        BackendKind::Mtal, json{{"retrain_every", 3}, {"epochs", 4}, {"snapshot_dir", snapdir.string()}});
    env.store.assign(id, "ann");
    auto backend = std::dynamic_pointer_cast<ModelBackend>(make_backend(env.store.task(id)));
    REQUIRE(backend);
    env.store.set_backend(id, backend);

    for (int i = 0; i < 2; ++i) submit_gold(env.store, id, "ann", t.gold);
    backend->wait_idle();
    CHECK(backend->retrain_count() == 0);
    CHECK(backend->snapshot_id().empty());
    auto served = env.store.next_instance(id, "ann");
    CHECK_FALSE(served->suggestion);
    env.store.submit_annotation(id, "ann", served->instance_index, t.gold.document.result[served->instance_index]);

    backend->wait_idle();
    CHECK(backend->retrain_count() == 1);
    CHECK(backend->snapshot_id() == "mtal-" + id + "-1");
    CHECK(std::filesystem::exists(snapdir / ("mtal-" + id + "-1.snap")));

    // Least confident unlabeled instance is served first.
    const auto order = backend->serving_order(env.store.task(id));
    REQUIRE(order.size() == 37);
    served = env.store.next_instance(id, "ann");
    CHECK(served->instance_index == order.front());
    REQUIRE(served->suggestion);
    CHECK(served->suggestion->provenance == "mtal-" + id + "-1");
    CHECK(served->suggestion->values.size() == 2);
    CHECK(std::holds_alternative<LabeledSpanSet>(served->suggestion->values[0]));
    CHECK(std::holds_alternative<ChoiceAnswer>(served->suggestion->values[1]));
    CHECK(*served->suggestion->confidence > 0);
    env.store.submit_annotation(id, "ann", served->instance_index, t.gold.document.result[served->instance_index]);

    for (int i = 0; i < 4; ++i) submit_gold(env.store, id, "ann", t.gold);
    backend->wait_idle();
    CHECK(backend->retrain_count() == 2);
    CHECK(backend->snapshot_id() == "mtal-" + id + "-2");
    CHECK(backend->labeled_count() == 8);

    const auto loaded = load_snapshot<double>((snapdir / ("mtal-" + id + "-2.snap")).string());
    CHECK(loaded.heads.size() == 2);
    std::filesystem::remove_all(snapdir);
}

TEST_CASE("serving reads the published snapshot while training runs") {
    Env env;
    const auto t = ner_task(400, 6);
    const auto id = env.store.create_task(
        env.admin, t.gold.interface, make_document(t.gold.interface, t.gold.document.source, t.gold.document.question),
        BackendKind::Mtal, json{{"retrain_every", 10}, {"epochs", 30}}, AssignmentPolicy::Exclusive);
    env.store.assign(id, "ann");
    auto backend = std::dynamic_pointer_cast<ModelBackend>(make_backend(env.store.task(id)));
    env.store.set_backend(id, backend);
    for (int i = 0; i < 10; ++i) submit_gold(env.store, id, "ann", t.gold);
    backend->wait_idle();

    // Submit up to the next retrain, then time suggestions while it runs.
    for (int i = 0; i < 10; ++i) submit_gold(env.store, id, "ann", t.gold);
    double worst_ms = 0;
    for (int i = 0; i < 20; ++i) {
        const auto start = std::chrono::steady_clock::now();
        const auto served = env.store.next_instance(id, "ann");
        worst_ms = std::max(
            worst_ms, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
        CHECK(served->suggestion);
    }
    CHECK(worst_ms < 200);
    backend->wait_idle();
    CHECK(backend->retrain_count() == 2);
}

TEST_CASE("demographic back-end trains per annotator and needs a profile to suggest") {
    Env env;
    const auto t = ner_task(12, 7);
    const auto id = env.store.create_task(
        env.admin, t.gold.interface, make_document(t.gold.interface, t.gold.document.source, t.gold.document.question),
        BackendKind::DemographicAl, json{{"retrain_every", 4}, {"epochs", 2}}, AssignmentPolicy::Shared);
    for (const char* u : {"ann", "bob", "anon"}) env.store.assign(id, u);
    auto backend = std::dynamic_pointer_cast<ModelBackend>(make_backend(env.store.task(id)));
    env.store.set_backend(id, backend);

    for (int i = 0; i < 2; ++i) {
        submit_gold(env.store, id, "ann", t.gold);
        submit_gold(env.store, id, "bob", t.gold);
    }
    submit_gold(env.store, id, "anon", t.gold);  // no age: not a training example
    backend->wait_idle();
    CHECK(backend->labeled_count() == 4);
    CHECK(backend->retrain_count() == 1);
    CHECK(backend->snapshot_id() == "demographic_al-" + id + "-1");
    CHECK(backend->serving_order(env.store.task(id)).empty());

    CHECK(env.store.next_instance(id, "ann")->suggestion);
    CHECK_FALSE(env.store.next_instance(id, "anon")->suggestion);
}

TEST_CASE("prompt back-end builds prompts from exemplars and parses completions") {
    Env env;
    const auto t = ner_task(30, 8);
    std::map<std::string, std::string> answers;
    for (std::size_t i = 0; i < t.tags.size(); ++i)
        answers[std::get<std::string>(t.gold.document.source[i])] = join(t.tags[i], " ");
    bool fail = false;
    std::vector<std::string> prompts;
    auto complete = [&](const std::string& prompt) -> std::string {
        if (fail) throw Error(ErrorCode::ApiError, "HTTP 500");
        prompts.push_back(prompt);
        const auto start = prompt.rfind("`` ") + 3;
        const auto sentence = prompt.substr(start, prompt.rfind(" ''") - start);
        return " `` " + answers.at(sentence) + " ''";
    };
    const json config{{"n_examples", 2}, {"strategy", "similar"}, {"component", 0}};
    const auto id = env.store.create_task(
        env.admin, t.gold.interface, make_document(t.gold.interface, t.gold.document.source, t.gold.document.question),
        BackendKind::Prompt, config);
    env.store.assign(id, "ann");
    auto backend = std::make_shared<PromptBackend>(env.store.task(id), config, complete);
    env.store.set_backend(id, backend);

    auto served = env.store.next_instance(id, "ann");
    CHECK_FALSE(served->suggestion);  // empty exemplar pool
    env.store.submit_annotation(id, "ann", served->instance_index, t.gold.document.result[served->instance_index]);
    CHECK(backend->pool_size() == 1);

    served = env.store.next_instance(id, "ann");
    REQUIRE(served->suggestion);
    CHECK(served->suggestion->backend == BackendKind::Prompt);
    CHECK(std::get<LabeledSpanSet>(served->suggestion->values[0]) ==
          std::get<LabeledSpanSet>(t.gold.document.result[served->instance_index][0]));
    CHECK(served->suggestion->values[1] == ResultValue{ChoiceAnswer{0}});  // untouched component
    REQUIRE(prompts.size() == 1);
    CHECK(prompts[0].rfind("Given the sentence `` ", 0) == 0);
    CHECK(std::count(prompts[0].begin(), prompts[0].end(), '\n') == 2);  // one exemplar

    const auto log = backend->log();
    REQUIRE(log.size() == 1);  // an empty pool makes no request
    CHECK(served->suggestion->provenance == log[0].id);
    CHECK(log[0].prompt == prompts[0]);

    fail = true;
    CHECK_FALSE(env.store.next_instance(id, "ann")->suggestion);
    CHECK(backend->log().back().error.find("500") != std::string::npos);

    CHECK(code_of([&] { PromptBackend(env.store.task(id), json{{"component", 1}}, complete); }) ==
          ErrorCode::InvalidParams);
}
