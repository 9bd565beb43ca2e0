#include "anno/backends.hpp"

#include <filesystem>

#include "anno/text.hpp"

namespace anno {

namespace {

bool sequence_component(const ComponentSpec& c) { return c.labeled_spans(); }

std::vector<std::string> bio_labels(const std::vector<std::string>& types) {
    std::vector<std::string> out{"O"};
    for (const auto& t : types) {
        out.push_back("B-" + t);
        out.push_back("I-" + t);
    }
    return out;
}

ComponentTask task_for(const ComponentSpec& c, std::size_t index, std::string id) {
    if (sequence_component(c)) return {index, std::move(id), TaskKind::Sequence, bio_labels(c.contents)};
    return {index, std::move(id), TaskKind::Classification, c.contents};
}

bool eligible(const ComponentSpec& c) {
    return sequence_component(c) || (c.kind == ComponentKind::Button && c.contents.size() >= 2);
}

const std::string* text_of(const Payload& payload) { return std::get_if<std::string>(&payload); }

std::vector<HeadSpec> head_specs(const std::vector<ComponentTask>& tasks) {
    std::vector<HeadSpec> heads;
    for (const auto& t : tasks) heads.push_back({t.task_id, t.kind, t.labels});
    return heads;
}

// Tags whose type is outside the component's labels become "O"; an I- tag
// that does not continue a chunk of its type is read as B-.
std::vector<std::string> clean_tags(std::vector<std::string> tags, const std::vector<std::string>& label_set) {
    std::string prev;
    for (auto& t : tags) {
        if (std::find(label_set.begin(), label_set.end(), t) == label_set.end()) t = "O";
        if (is_inside(t) && tag_type(prev) != tag_type(t)) t = "B-" + std::string(tag_type(t));
        prev = t;
    }
    return tags;
}

}  // namespace

std::vector<ComponentTask> component_tasks(const InterfaceSpec& spec, const json& config) {
    std::vector<ComponentTask> out;
    const json* names = config.is_object() && config.contains("tasks") ? &config.at("tasks") : nullptr;
    if (names && !names->is_object()) throw Error(ErrorCode::InvalidParams, "\"tasks\" must map component indices to task ids");
    if (!names) {
        for (std::size_t i = 0; i < spec.size(); ++i)
            if (eligible(spec.components[i])) out.push_back(task_for(spec.components[i], i, "c" + std::to_string(i)));
    } else {
        for (const auto& [key, value] : names->items()) {
            std::size_t index = 0;
            try {
                index = std::stoul(key);
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidParams, "task key `" + key + "` is not a component index");
            }
            if (index >= spec.size() || !eligible(spec.components[index]))
                throw Error(ErrorCode::InvalidParams, "component " + key + " cannot back a model task");
            if (!value.is_string()) throw Error(ErrorCode::InvalidParams, "task ids must be strings");
            out.push_back(task_for(spec.components[index], index, value.get<std::string>()));
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.component < b.component; });
    }
    if (out.empty()) throw Error(ErrorCode::InvalidParams, "interface has no component a model can suggest for");
    return out;
}

std::vector<std::string> payload_tokens(const Payload& payload) {
    if (const auto* text = text_of(payload)) return split_whitespace(*text);
    std::vector<std::string> out;
    const auto& table = std::get<TablePayload>(payload);
    for (const auto& row : table.rows)
        for (const auto& cell : row)
            for (auto& t : split_whitespace(cell)) out.push_back(std::move(t));
    return out;
}

Instance to_model_instance(const Payload& payload, const std::vector<ResultValue>& results,
                           const std::vector<ComponentTask>& tasks) {
    Instance inst;
    inst.tokens = payload_tokens(payload);
    const auto* text = text_of(payload);
    const auto tokens = text ? tokenize(*text) : std::vector<Token>{};
    for (const auto& t : tasks) {
        if (t.component >= results.size()) continue;
        const auto& value = results[t.component];
        if (t.kind == TaskKind::Sequence) {
            if (!text) continue;
            if (const auto* spans = std::get_if<LabeledSpanSet>(&value)) inst.labels[t.task_id] = spans_to_tags(tokens, *spans);
        } else if (const auto* choice = std::get_if<ChoiceAnswer>(&value)) {
            if (choice->index >= 0 && static_cast<std::size_t>(choice->index) < t.labels.size())
                inst.labels[t.task_id] = t.labels[static_cast<std::size_t>(choice->index)];
        }
    }
    return inst;
}

std::vector<ResultValue> to_component_values(const Payload& payload,
                                             const std::map<std::string, TaskSuggestion>& suggestion,
                                             const std::vector<ComponentTask>& tasks,
                                             std::vector<ResultValue> current) {
    const auto* text = text_of(payload);
    for (const auto& t : tasks) {
        auto it = suggestion.find(t.task_id);
        if (it == suggestion.end() || t.component >= current.size()) continue;
        if (t.kind == TaskKind::Sequence) {
            if (!text) continue;
            current[t.component] = tags_to_spans(tokenize(*text), clean_tags(it->second.labels, t.labels));
        } else {
            const auto pos = std::find(t.labels.begin(), t.labels.end(), it->second.labels.at(0));
            current[t.component] = ChoiceAnswer{static_cast<std::int64_t>(pos - t.labels.begin())};
        }
    }
    return current;
}

ModelBackendConfig ModelBackendConfig::from_json(const json& node, BackendKind kind) {
    ModelBackendConfig c;
    const json cfg = node.is_null() ? json::object() : node;
    if (!cfg.is_object()) throw Error(ErrorCode::InvalidParams, "backend config must be an object");
    if (cfg.contains("alphas")) c.al.alphas = cfg.at("alphas").get<std::map<std::string, double>>();
    for (const auto& [task, alpha] : c.al.alphas)
        if (!(alpha > 0)) throw Error(ErrorCode::InvalidParams, "alpha for `" + task + "` must be positive");
    c.al.query_batch_k = cfg.value("k", c.al.query_batch_k);
    c.al.retrain_every = cfg.value("retrain_every", c.al.query_batch_k);
    c.al.epochs = cfg.value("epochs", c.al.epochs);
    c.al.learning_rate = cfg.value("learning_rate", c.al.learning_rate);
    c.al.batch_size = cfg.value("batch_size", c.al.batch_size);
    c.al.seed = cfg.value("seed", c.al.seed);
    if (cfg.contains("agg")) c.al.confidence_agg = confidence_agg_from_string(cfg.at("agg").get<std::string>());
    if (c.al.query_batch_k == 0 || c.al.retrain_every == 0 || c.al.epochs == 0 || c.al.batch_size == 0)
        throw Error(ErrorCode::InvalidParams, "k, retrain_every, epochs and batch_size must be positive");
    if (!(c.al.learning_rate > 0)) throw Error(ErrorCode::InvalidParams, "learning_rate must be positive");
    c.extractor.dim = cfg.value("dim", c.extractor.dim);
    if (cfg.contains("encoder_url")) c.extractor.encoder_url = cfg.at("encoder_url").get<std::string>();
    c.snapshot_dir = cfg.value("snapshot_dir", std::string());
    if (kind == BackendKind::DemographicAl)
        c.demographics = DemographicConfig::from_json(cfg.value("demographics", json::object()));
    return c;
}

ModelBackend::ModelBackend(const Task& task, ModelBackendConfig config)
    : task_id_(task.task_id),
      kind_(task.backend == BackendKind::None ? BackendKind::Mtal : task.backend),
      config_(std::move(config)),
      tasks_(component_tasks(task.interface, task.backend_config)),
      sources_(task.document.source),
      working_(make_model<double>(head_specs(tasks_), config_.extractor, config_.al.seed)) {
    if (!config_.snapshot_dir.empty()) std::filesystem::create_directories(config_.snapshot_dir);
    thread_ = std::thread([this] { worker(); });
}

ModelBackend::~ModelBackend() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    thread_.join();
}

std::shared_ptr<const ModelBackend::Snapshot> ModelBackend::current() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
}

std::string ModelBackend::snapshot_id() const {
    const auto snap = current();
    return snap ? snap->id : std::string();
}

std::size_t ModelBackend::labeled_count() const {
    std::lock_guard lock(mutex_);
    return labeled_.size();
}

void ModelBackend::wait_idle() {
    std::unique_lock lock(mutex_);
    idle_.wait(lock, [&] { return !pending_ && !running_; });
}

std::optional<Suggestion> ModelBackend::suggest(const Task& task, std::size_t instance, const User& annotator) {
    const auto snap = current();
    if (!snap || instance >= task.document.size()) return std::nullopt;
    Instance inst;
    inst.tokens = payload_tokens(task.document.source[instance]);
    if (inst.tokens.empty()) return std::nullopt;
    if (config_.demographics) {
        try {
            inst = augment(inst, annotator.demographics, *config_.demographics);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::MissingFeature) return std::nullopt;
            throw;
        }
    }
    const auto out = anno::suggest(snap->model, inst, config_.al.confidence_agg);
    double confidence = 0;
    for (const auto& [_, s] : out) confidence += s.confidence;
    Suggestion s;
    s.backend = kind_;
    s.values = to_component_values(task.document.source[instance], out, tasks_, task.document.result[instance]);
    s.confidence = confidence / static_cast<double>(out.size());
    s.provenance = snap->id;
    return s;
}

void ModelBackend::on_submit(const Task& task, const AnnotationRecord& record, const User& annotator) {
    if (record.instance_index >= task.document.size()) return;
    Instance inst = to_model_instance(task.document.source[record.instance_index], record.results, tasks_);
    if (inst.tokens.empty() || inst.labels.empty()) return;
    if (config_.demographics) {
        try {
            inst = augment(inst, annotator.demographics, *config_.demographics);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::MissingFeature) return;
            throw;
        }
    }
    inst.instance_id = std::to_string(record.instance_index);
    {
        std::lock_guard lock(mutex_);
        labeled_[{record.instance_index, annotator.user_id}] = std::move(inst);
        if (++submissions_ % config_.al.retrain_every != 0) return;
        pending_ = true;
    }
    wake_.notify_all();
}

std::vector<std::size_t> ModelBackend::serving_order(const Task&) {
    const auto snap = current();
    return snap ? snap->order : std::vector<std::size_t>{};
}

void ModelBackend::worker() {
    std::unique_lock lock(mutex_);
    for (;;) {
        wake_.wait(lock, [&] { return stop_ || pending_; });
        if (stop_) return;
        pending_ = false;
        running_ = true;
        std::vector<Instance> batch;
        std::set<std::size_t> labeled_ids;
        for (const auto& [key, inst] : labeled_) {
            batch.push_back(inst);
            labeled_ids.insert(key.first);
        }
        const std::size_t generation = retrains_ + 1;
        MultiTaskModel model = working_;
        lock.unlock();

        std::vector<const Instance*> ptrs;
        for (const auto& i : batch) ptrs.push_back(&i);
        ALConfig cfg = config_.al;
        cfg.seed = config_.al.seed * 1000003 + generation;
        auto snap = std::make_shared<Snapshot>();
        try {
            train(model, ptrs, cfg);
            // Demographic suggestions depend on who asks, so only the plain
            // back-end reorders the queue.
            if (!config_.demographics) {
                PoolState pool;
                std::vector<double> confidence(sources_.size(), 1.0);
                for (std::size_t i = 0; i < sources_.size(); ++i) {
                    if (labeled_ids.count(i)) continue;
                    Instance inst;
                    inst.tokens = payload_tokens(sources_[i]);
                    if (inst.tokens.empty()) continue;
                    confidence[i] = multi_task_confidence(model, inst, cfg.confidence_agg);
                    pool.unlabeled.insert(i);
                }
                if (!pool.unlabeled.empty()) snap->order = select_by_confidence(confidence, pool, pool.unlabeled.size());
            }
            snap->id = std::string(to_string(kind_)) + "-" + task_id_ + "-" + std::to_string(generation);
            if (!config_.snapshot_dir.empty())
                save_snapshot(model, (std::filesystem::path(config_.snapshot_dir) / (snap->id + ".snap")).string());
            snap->model = model;
        } catch (const Error&) {
            snap.reset();  // keep serving the previous snapshot
        }

        lock.lock();
        if (snap) {
            working_ = std::move(model);
            {
                std::lock_guard swap(snapshot_mutex_);
                snapshot_ = std::move(snap);
            }
            ++retrains_;
        }
        running_ = false;
        if (!pending_) idle_.notify_all();
    }
}

PromptBackend::PromptBackend(const Task& task, const json& config, CompletionFn complete)
    : task_id_(task.task_id), config_(PromptConfig::from_json(config)), complete_(std::move(complete)) {
    const json cfg = config.is_null() ? json::object() : config;
    std::optional<std::size_t> component;
    if (cfg.contains("component")) component = cfg.at("component").get<std::size_t>();
    for (std::size_t i = 0; i < task.interface.size() && !component; ++i)
        if (sequence_component(task.interface.components[i])) component = i;
    if (!component || *component >= task.interface.size() || !sequence_component(task.interface.components[*component]))
        throw Error(ErrorCode::InvalidParams, "prompt back-end needs a labeled selection component");
    target_ = task_for(task.interface.components[*component], *component, config_.task_name);

    for (const auto& e : cfg.value("examples", json::array()))
        seed_examples_.push_back({e.at("sentence").get<std::string>(), config_.task_name, e.at("answer").get<std::string>()});

    if (cfg.contains("embedder_url"))
        embedder_ = std::make_unique<EncoderEmbedder>(
            EncoderClient(cfg.at("embedder_url").get<std::string>(), cfg.value("embedder_dim", std::size_t{768})));
    else
        embedder_ = std::make_unique<HashedBowEmbedder>();

    if (!complete_) {
        client_ = std::make_shared<LlmClient>(config_.api);
        complete_ = [client = client_](const std::string& prompt) { return client->complete(prompt).text; };
    }
}

std::size_t PromptBackend::pool_size() const {
    std::lock_guard lock(mutex_);
    return seed_examples_.size() + submitted_.size();
}

std::vector<PromptBackend::LogEntry> PromptBackend::log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

std::optional<Suggestion> PromptBackend::suggest(const Task& task, std::size_t instance, const User&) {
    if (instance >= task.document.size()) return std::nullopt;
    const auto* text = text_of(task.document.source[instance]);
    if (!text) return std::nullopt;
    const auto words = split_whitespace(*text);
    if (words.empty()) return std::nullopt;
    const std::string target = join(words, " ");

    std::vector<FewShotExample> pool;
    LogEntry entry;
    {
        std::lock_guard lock(mutex_);
        pool = seed_examples_;
        for (const auto& [key, ex] : submitted_)
            if (key.first != instance) pool.push_back(ex);
        entry.id = "prompt-" + task_id_ + "-" + std::to_string(log_.size() + 1);
    }
    if (pool.empty()) return std::nullopt;

    PromptConfig cfg = config_;
    cfg.n_examples = std::min(cfg.n_examples, pool.size());
    cfg.seed = config_.seed + instance;
    entry.instance = instance;
    std::optional<Suggestion> out;
    try {
        entry.prompt = build_prompt(select_examples(pool, target, cfg, embedder_.get()), target, cfg.task_name);
        entry.completion = complete_(entry.prompt);
        const auto parsed = parse_tags(entry.completion, words.size());
        TaskSuggestion ts{parsed.tags, 1.0};
        Suggestion s;
        s.backend = BackendKind::Prompt;
        s.values = to_component_values(task.document.source[instance], {{target_.task_id, ts}}, {target_},
                                       task.document.result[instance]);
        s.provenance = entry.id;
        out = std::move(s);
    } catch (const Error& e) {
        // An unreachable or failing completion API leaves the instance without a suggestion.
        entry.error = e.what();
    }
    std::lock_guard lock(mutex_);
    log_.push_back(std::move(entry));
    return out;
}

void PromptBackend::on_submit(const Task& task, const AnnotationRecord& record, const User& annotator) {
    if (record.instance_index >= task.document.size() || target_.component >= record.results.size()) return;
    const auto* text = text_of(task.document.source[record.instance_index]);
    const auto* spans = std::get_if<LabeledSpanSet>(&record.results[target_.component]);
    if (!text || !spans) return;
    const auto tokens = tokenize(*text);
    if (tokens.empty()) return;
    FewShotExample ex{join(token_texts(tokens), " "), config_.task_name, join(spans_to_tags(tokens, *spans), " ")};
    std::lock_guard lock(mutex_);
    submitted_[{record.instance_index, annotator.user_id}] = std::move(ex);
}

std::shared_ptr<SuggestionBackend> make_backend(const Task& task, CompletionFn complete) {
    switch (task.backend) {
        case BackendKind::None: return nullptr;
        case BackendKind::Mtal:
        case BackendKind::DemographicAl:
            return std::make_shared<ModelBackend>(task, ModelBackendConfig::from_json(task.backend_config, task.backend));
        case BackendKind::Prompt: return std::make_shared<PromptBackend>(task, task.backend_config, std::move(complete));
    }
    return nullptr;
}

}  // namespace anno
