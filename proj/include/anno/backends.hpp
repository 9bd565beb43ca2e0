#pragma once

// Suggestion back-ends for the annotation store.
//
// Components map onto model tasks: a labeled selection or dropdown over a
// text source becomes a sequence task with BIO tags over whitespace tokens,
// and a button becomes a classification task over its labels. Other
// components are passed through from the instance's current result.

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>

#include "anno/demographic.hpp"
#include "anno/llm_client.hpp"
#include "anno/store.hpp"

namespace anno {

struct ComponentTask {
    std::size_t component = 0;
    std::string task_id;
    TaskKind kind = TaskKind::Sequence;
    std::vector<std::string> labels;  // model label set ("O" first for sequences)
};

// Every eligible component, or only those named in config["tasks"]
// ({"<component index>": "<task id>"}). Throws InvalidParams.
std::vector<ComponentTask> component_tasks(const InterfaceSpec& spec, const json& config);

std::vector<std::string> payload_tokens(const Payload& payload);

// Labels for every mapped component that carries an answer.
Instance to_model_instance(const Payload& payload, const std::vector<ResultValue>& results,
                           const std::vector<ComponentTask>& tasks);

// Suggested values for every component: mapped ones from the model output,
// the rest copied from `current`.
std::vector<ResultValue> to_component_values(const Payload& payload,
                                             const std::map<std::string, TaskSuggestion>& suggestion,
                                             const std::vector<ComponentTask>& tasks,
                                             std::vector<ResultValue> current);

// backend_config for mtal and demographic tasks:
//   {"tasks": {...}, "alphas": {...}, "k": 10, "retrain_every": 10, "epochs": 10,
//    "learning_rate": 0.5, "batch_size": 16, "seed": 0, "agg": "mean",
//    "dim": 48, "encoder_url": "...", "snapshot_dir": "...", "demographics": {...}}
struct ModelBackendConfig {
    ALConfig al;
    ExtractorConfig extractor;
    std::optional<DemographicConfig> demographics;  // set for demographic tasks
    std::string snapshot_dir;                       // empty: snapshots stay in memory

    static ModelBackendConfig from_json(const json& node, BackendKind kind);
};

// Active-learning back-end. Submissions feed the labeled pool; every
// retrain_every submissions a worker thread trains a private copy of the
// model and publishes it as a new snapshot. Serving only reads the published
// snapshot.
class ModelBackend : public SuggestionBackend {
public:
    ModelBackend(const Task& task, ModelBackendConfig config);
    ~ModelBackend() override;

    std::optional<Suggestion> suggest(const Task& task, std::size_t instance, const User& annotator) override;
    void on_submit(const Task& task, const AnnotationRecord& record, const User& annotator) override;
    std::vector<std::size_t> serving_order(const Task& task) override;

    // Empty before the first retrain.
    std::string snapshot_id() const;
    std::size_t retrain_count() const { return retrains_; }
    std::size_t labeled_count() const;
    // Blocks until no retrain is queued or running.
    void wait_idle();

    const std::vector<ComponentTask>& tasks() const { return tasks_; }

private:
    struct Snapshot {
        std::string id;
        MultiTaskModel model;
        std::vector<std::size_t> order;  // unlabeled instances, least confident first
    };

    void worker();
    std::shared_ptr<const Snapshot> current() const;

    std::string task_id_;
    BackendKind kind_;
    ModelBackendConfig config_;
    std::vector<ComponentTask> tasks_;
    std::vector<Payload> sources_;

    mutable std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable idle_;
    std::map<std::pair<std::size_t, std::string>, Instance> labeled_;  // (instance, annotator)
    std::size_t submissions_ = 0;
    bool pending_ = false;
    bool running_ = false;
    bool stop_ = false;
    MultiTaskModel working_;

    mutable std::mutex snapshot_mutex_;  // guards only the pointer swap
    std::shared_ptr<const Snapshot> snapshot_;
    std::atomic<std::size_t> retrains_{0};

    std::thread thread_;
};

using CompletionFn = std::function<std::string(const std::string& prompt)>;

// backend_config for prompt tasks: a PromptConfig object plus optional
//   {"component": <index>, "examples": [{"sentence": "...", "answer": "..."}],
//    "embedder_url": "...", "embedder_dim": 768}
// Submitted annotations join the exemplar pool.
class PromptBackend : public SuggestionBackend {
public:
    // `complete` defaults to an LlmClient built from the prompt config.
    PromptBackend(const Task& task, const json& config, CompletionFn complete = {});

    std::optional<Suggestion> suggest(const Task& task, std::size_t instance, const User& annotator) override;
    void on_submit(const Task& task, const AnnotationRecord& record, const User& annotator) override;

    struct LogEntry {
        std::string id;
        std::size_t instance = 0;
        std::string prompt;
        std::string completion;
        std::string error;
    };
    std::vector<LogEntry> log() const;
    std::size_t pool_size() const;

private:
    std::string task_id_;
    PromptConfig config_;
    ComponentTask target_;
    std::unique_ptr<EmbeddingProvider> embedder_;
    std::shared_ptr<LlmClient> client_;
    CompletionFn complete_;

    mutable std::mutex mutex_;
    std::vector<FewShotExample> seed_examples_;
    std::map<std::pair<std::size_t, std::string>, FewShotExample> submitted_;
    std::vector<LogEntry> log_;
};

// The back-end for a task's kind and config, or null for BackendKind::None.
std::shared_ptr<SuggestionBackend> make_backend(const Task& task, CompletionFn complete = {});

}  // namespace anno
