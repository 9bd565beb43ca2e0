#pragma once

// Experiment runner: simulated annotators, the pool-based AL loop, the four
// comparison scenarios and their CSV / JSON / SVG reports.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "anno/active.hpp"
#include "anno/demographic.hpp"
#include "anno/metrics.hpp"
#include "anno/prompt.hpp"
#include "anno/store.hpp"
#include "anno/synthetic.hpp"

namespace anno {

// Answers from gold, replacing each label with a different one at rate epsilon.
class SimulatedAnnotator {
public:
    explicit SimulatedAnnotator(double epsilon = 0.0, std::uint64_t seed = 0);

    std::string label(const std::string& gold, const std::vector<std::string>& label_set);
    std::vector<std::string> tags(const std::vector<std::string>& gold, const std::vector<std::string>& label_set);

    // Gold results for a served instance; choice answers are noised, other
    // values pass through. Throws MissingGold when the gold row is absent or
    // leaves a result-collecting component empty.
    std::vector<ResultValue> answer(const ServedInstance& served, const TaskFile& gold);

    // Pulls and answers instances until the store has none left for this
    // annotator. Returns the number of submissions.
    std::size_t annotate_all(AnnotationStore& store, const std::string& task_id, const std::string& annotator_id,
                             const TaskFile& gold);

private:
    double epsilon_;
    std::mt19937_64 rng_;
};

// Sequence instances; labels are kept only for `tasks` (all when empty).
Instance to_instance(const TaggedSentence& sentence, std::size_t index, const std::vector<std::string>& tasks = {});
std::vector<Instance> to_instances(const SequenceCorpus& corpus, std::size_t begin, std::size_t end,
                                   const std::vector<std::string>& tasks = {});

// Token accuracy and entity metrics per task on labeled `test` instances.
template <typename Scalar>
std::map<std::string, SequenceMetrics> evaluate_model(const BasicMultiTaskModel<Scalar>& model,
                                                      const std::vector<Instance>& test);

enum class QueryStrategy { LeastConfidence, Random };
std::string_view to_string(QueryStrategy s);
QueryStrategy query_strategy_from_string(std::string_view name);

struct RoundRow {
    std::size_t round = 0;
    std::size_t labeled = 0;
    std::map<std::string, SequenceMetrics> metrics;
    double mean_f1 = 0;
    double wall_ms = 0;             // cumulative
    std::size_t train_passes = 0;   // cumulative extractor passes spent training
    std::size_t forward_passes = 0; // cumulative, training plus pool scoring
};

struct RunResult {
    std::string setting;
    std::uint64_t seed = 0;
    std::vector<RoundRow> rows;
    std::vector<std::size_t> queried;  // pool indices in labeling order
    double aulc = 0;
};

struct LoopConfig {
    std::vector<std::string> tasks;   // heads of the model driving the loop
    QueryStrategy strategy = QueryStrategy::LeastConfidence;
    std::size_t budget = 500;
    ALConfig al{.epochs = 3};
    ExtractorConfig extractor;
    double noise = 0;
};

// One pool-based AL run. The first batch is drawn at random for both
// strategies; afterwards each round queries k instances, simulates their
// annotation, retrains (warm start) and evaluates on `test`.
RunResult run_al_loop(const std::vector<Instance>& pool, const std::vector<Instance>& test,
                      const std::map<std::string, std::vector<std::string>>& label_sets, const LoopConfig& cfg,
                      std::uint64_t seed, const std::string& setting);

// Trapezoid area under mean F1 against labeled count, divided by the x span.
double area_under_curve(const std::vector<RoundRow>& rows);

enum class Scenario { MtalVsSingle, AlVsRandom, Demographic, PromptEval };
std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view name);

// Mock completion models for prompt_eval: "gold" answers with the target's
// gold tags, "all-o" with all "O"; "api" calls the configured endpoint.
struct SimConfig {
    Scenario scenario = Scenario::AlVsRandom;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::optional<std::string> corpus_path;
    std::map<std::string, std::size_t> corpus_columns{{"cp", 2}, {"ner", 3}};
    SyntheticParams synthetic;
    DemographicParams demographic;
    std::size_t test_size = 400;
    std::size_t budget = 500;
    ALConfig al{.epochs = 3};
    ExtractorConfig extractor;
    double noise = 0;
    std::vector<QueryStrategy> strategies{QueryStrategy::LeastConfidence, QueryStrategy::Random};
    DemographicConfig demographic_features = DemographicConfig::from_json(json::object());
    PromptConfig prompt;
    std::vector<SelectionStrategy> prompt_strategies{SelectionStrategy::Random, SelectionStrategy::Similar};
    std::vector<std::size_t> prompt_n{1, 5, 10};
    std::string prompt_task = "ner";
    std::size_t prompt_eval_size = 100;
    std::string mock_llm = "gold";
    std::string out_dir;

    // Throws InvalidParams.
    void validate() const;
};

struct ScenarioReport {
    Scenario scenario = Scenario::AlVsRandom;
    std::vector<RunResult> runs;
    json summary;
};

ScenarioReport run_scenario(const SimConfig& cfg);

// results.csv, summary.json and curves.svg under `dir`.
void write_report(const ScenarioReport& report, const std::string& dir);
std::string report_csv(const ScenarioReport& report);

// Scenario pieces, also used directly by tests and the acceptance runner.
json run_demographic_seed(const SimConfig& cfg, std::uint64_t seed);
json run_prompt_eval_seed(const SimConfig& cfg, std::uint64_t seed);

}  // namespace anno
