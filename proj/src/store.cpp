#include "anno/store.hpp"

#include <openssl/rand.h>
#include <openssl/sha.h>

#include <algorithm>
#include <sstream>

namespace anno {

namespace {

std::string random_hex(std::size_t bytes) {
    std::vector<unsigned char> buf(bytes);
    if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1)
        throw Error(ErrorCode::StorageError, "random source unavailable");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned char b : buf) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

std::string sha256_hex(const std::string& input) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(input.data()), input.size(), digest);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned char b : digest) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

std::string hash_password(const std::string& password) {
    const std::string salt = random_hex(8);
    return salt + "$" + sha256_hex(salt + password);
}

bool verify_password(const std::string& stored, const std::string& password) {
    auto sep = stored.find('$');
    if (sep == std::string::npos) return false;
    return sha256_hex(stored.substr(0, sep) + password) == stored.substr(sep + 1);
}

json optional_results(const std::optional<std::vector<ResultValue>>& values) {
    return values ? results_to_json(*values) : json(nullptr);
}

}  // namespace

Timestamp now_utc_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string_view to_string(Role role) { return role == Role::Administrator ? "administrator" : "annotator"; }

std::string_view to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::None: return "none";
        case BackendKind::Mtal: return "mtal";
        case BackendKind::DemographicAl: return "demographic_al";
        case BackendKind::Prompt: return "prompt";
    }
    return "none";
}

std::string_view to_string(AssignmentPolicy policy) {
    return policy == AssignmentPolicy::Exclusive ? "exclusive" : "shared";
}

Role role_from_string(std::string_view name) {
    if (name == "administrator" || name == "admin") return Role::Administrator;
    if (name == "annotator") return Role::Annotator;
    throw Error(ErrorCode::MalformedDocument, "unknown role `" + std::string(name) + "`");
}

BackendKind backend_from_string(std::string_view name) {
    for (auto kind : {BackendKind::None, BackendKind::Mtal, BackendKind::DemographicAl, BackendKind::Prompt}) {
        if (to_string(kind) == name) return kind;
    }
    throw Error(ErrorCode::MalformedDocument, "unknown backend `" + std::string(name) + "`");
}

AssignmentPolicy policy_from_string(std::string_view name) {
    if (name == "exclusive") return AssignmentPolicy::Exclusive;
    if (name == "shared") return AssignmentPolicy::Shared;
    throw Error(ErrorCode::MalformedDocument, "unknown assignment policy `" + std::string(name) + "`");
}

json to_json(const User& user) {
    return json{{"user_id", user.user_id},
                {"name", user.name},
                {"role", to_string(user.role)},
                {"demographics", user.demographics}};
}

json to_json(const AnnotationRecord& r, bool with_task_id) {
    json out{{"instance_index", r.instance_index},
             {"annotator_id", r.annotator_id},
             {"results", results_to_json(r.results)},
             {"submitted_at", r.submitted_at},
             {"served_at", r.served_at ? json(*r.served_at) : json(nullptr)},
             {"duration_ms", r.duration_ms ? json(*r.duration_ms) : json(nullptr)},
             {"suggestion_shown", optional_results(r.suggestion_shown)},
             {"accepted_unchanged", r.accepted_unchanged},
             {"latest", r.latest},
             {"idempotency_key", r.idempotency_key ? json(*r.idempotency_key) : json(nullptr)}};
    if (with_task_id) out["task_id"] = r.task_id;
    return out;
}

AnnotationRecord record_from_json(const json& node) {
    AnnotationRecord r;
    r.task_id = node.value("task_id", std::string());
    r.instance_index = node.at("instance_index").get<std::size_t>();
    r.annotator_id = node.at("annotator_id").get<std::string>();
    r.results = parse_results(node.at("results"));
    r.submitted_at = node.at("submitted_at").get<Timestamp>();
    if (auto it = node.find("served_at"); it != node.end() && !it->is_null()) r.served_at = it->get<Timestamp>();
    if (auto it = node.find("duration_ms"); it != node.end() && !it->is_null())
        r.duration_ms = it->get<std::int64_t>();
    if (auto it = node.find("suggestion_shown"); it != node.end() && !it->is_null())
        r.suggestion_shown = parse_results(*it);
    r.accepted_unchanged = node.value("accepted_unchanged", false);
    r.latest = node.value("latest", true);
    if (auto it = node.find("idempotency_key"); it != node.end() && !it->is_null())
        r.idempotency_key = it->get<std::string>();
    return r;
}

json to_json(const Suggestion& s) {
    json out{{"backend", to_string(s.backend)},
             {"values", results_to_json(s.values)},
             {"provenance", s.provenance}};
    out["confidence"] = s.confidence ? json(*s.confidence) : json(nullptr);
    return out;
}

ValidationError::ValidationError(std::vector<Violation> violations)
    : Error(ErrorCode::ValidationFailed,
            "validation failed with " + std::to_string(violations.size()) + " violation(s)" +
                (violations.empty() ? std::string() : ": " + violations.front().detail)),
      violations_(std::move(violations)) {}

// --- AnnotationStore ----------------------------------------------------------

AnnotationStore::AnnotationStore(std::unique_ptr<Storage> storage, StoreOptions options)
    : storage_(std::move(storage)), options_(std::move(options)) {}

User AnnotationStore::register_user(User user, const std::string& password) {
    if (user.user_id.empty()) user.user_id = user.name;
    if (user.user_id.empty()) throw Error(ErrorCode::MalformedDocument, "users need an id or a name");
    if (user.name.empty()) user.name = user.user_id;
    if (!user.demographics.is_object()) throw Error(ErrorCode::MalformedDocument, "demographics must be an object");
    storage_->put_user(user, hash_password(password));
    return user;
}

std::optional<User> AnnotationStore::find_user(const std::string& user_id) { return storage_->find_user(user_id); }

std::optional<User> AnnotationStore::find_user_by_name(const std::string& name) {
    return storage_->find_user_by_name(name);
}

bool AnnotationStore::check_password(const std::string& user_id, const std::string& password) {
    auto stored = storage_->password_hash(user_id);
    return stored && verify_password(*stored, password);
}

Task AnnotationStore::require_task(const std::string& task_id) {
    auto task = storage_->find_task(task_id);
    if (!task) throw Error(ErrorCode::UnknownTask, "unknown task `" + task_id + "`");
    return *task;
}

User AnnotationStore::require_user(const std::string& user_id) {
    auto user = storage_->find_user(user_id);
    if (!user) throw Error(ErrorCode::UnknownUser, "unknown user `" + user_id + "`");
    return *user;
}

std::string AnnotationStore::fresh_task_id() { return "task-" + random_hex(6); }

std::string AnnotationStore::create_task(const User& admin, InterfaceSpec spec, TaskDocument doc,
                                         BackendKind backend, json config, AssignmentPolicy policy,
                                         std::string name) {
    if (admin.role != Role::Administrator)
        throw Error(ErrorCode::PermissionDenied, "only administrators create tasks");
    auto violations = validate_task_document(doc, spec);
    if (!violations.empty()) throw ValidationError(std::move(violations));
    for (std::size_t i = 0; i < doc.size(); ++i) {
        for (std::size_t j = 0; j < spec.size(); ++j)
            doc.result[i][j] = conform_result(doc.result[i][j], spec.components[j], doc.source[i]);
    }

    Task task;
    task.task_id = fresh_task_id();
    task.name = name.empty() ? task.task_id : std::move(name);
    task.interface = std::move(spec);
    task.document = std::move(doc);
    task.backend = backend;
    task.backend_config = config.is_null() ? json::object() : std::move(config);
    task.policy = policy;
    storage_->insert_task(task);
    return task.task_id;
}

std::string AnnotationStore::import_task(const User& admin, const json& exported, BackendKind backend,
                                         json config, AssignmentPolicy policy, std::string name) {
    TaskFile file = parse_task_file(exported);
    std::vector<AnnotationRecord> restored;
    if (auto it = exported.find("records"); it != exported.end() && it->is_array()) {
        for (const auto& r : *it) restored.push_back(record_from_json(r));
    }
    const std::string task_id = create_task(admin, std::move(file.interface), std::move(file.document), backend,
                                            std::move(config), policy, std::move(name));
    for (auto& r : restored) {
        r.task_id = task_id;
        storage_->append_record(std::move(r));
    }
    return task_id;
}

void AnnotationStore::assign(const std::string& task_id, const std::string& annotator_id) {
    require_task(task_id);
    User user = require_user(annotator_id);
    if (user.role != Role::Annotator)
        throw Error(ErrorCode::RoleMismatch, "`" + annotator_id + "` is not an annotator");
    storage_->add_assignee(task_id, annotator_id);
}

std::optional<ServedInstance> AnnotationStore::next_instance(const std::string& task_id,
                                                            const std::string& annotator_id) {
    Task task = require_task(task_id);
    User user = require_user(annotator_id);
    if (!task.assignees.count(annotator_id))
        throw Error(ErrorCode::NotAssigned, "`" + annotator_id + "` is not assigned to " + task_id);

    std::set<std::size_t> annotated_by_caller;
    if (task.policy == AssignmentPolicy::Shared) {
        for (const auto& r : storage_->records(task_id)) {
            if (r.annotator_id == annotator_id) annotated_by_caller.insert(r.instance_index);
        }
    }

    std::vector<std::size_t> preferred;
    if (auto be = backend(task_id)) preferred = be->serving_order(task);

    const Timestamp now = options_.clock();
    const Timestamp expires = now + options_.lease_timeout.count();
    std::optional<std::size_t> chosen;
    Timestamp served_at = now;
    {
        std::lock_guard lock(mutex_);
        // Re-read under the lock so done flags match the lease table.
        task = require_task(task_id);
        auto& task_leases = leases_[task_id];
        for (auto& [_, list] : task_leases) {
            std::erase_if(list, [&](const Lease& l) { return l.expires_at <= now; });
        }
        // Leases the caller already holds come first, then the back-end's
        // preference, then document order.
        std::vector<std::size_t> order;
        std::vector<char> listed(task.document.size(), 0);
        auto push = [&](std::size_t i) {
            if (i < listed.size() && !listed[i]) {
                listed[i] = 1;
                order.push_back(i);
            }
        };
        for (const auto& [i, list] : task_leases)
            for (const auto& l : list)
                if (l.annotator_id == annotator_id) push(i);
        for (const std::size_t i : preferred) push(i);
        for (std::size_t i = 0; i < task.document.size(); ++i) push(i);
        for (const std::size_t i : order) {
            auto& list = task_leases[i];
            if (task.policy == AssignmentPolicy::Exclusive) {
                if (task.document.done[i] != 0) continue;
                const bool taken = std::any_of(list.begin(), list.end(), [&](const Lease& l) {
                    return l.annotator_id != annotator_id;
                });
                if (taken) continue;
            } else if (annotated_by_caller.count(i)) {
                continue;
            }
            auto own = std::find_if(list.begin(), list.end(),
                                    [&](const Lease& l) { return l.annotator_id == annotator_id; });
            if (own == list.end()) {
                list.push_back(Lease{annotator_id, now, expires, std::nullopt});
            } else {
                own->expires_at = expires;
                served_at = own->served_at;
            }
            chosen = i;
            break;
        }
    }
    if (!chosen) return std::nullopt;

    ServedInstance served;
    served.instance_index = *chosen;
    served.payload = task.document.source[*chosen];
    served.questions = task.document.question[*chosen];
    served.current = task.document.result[*chosen];
    served.served_at = served_at;
    served.lease_expires_at = expires;

    if (auto be = backend(task_id)) {
        served.suggestion = be->suggest(task, *chosen, user);
        if (served.suggestion && served.suggestion->values.size() != task.interface.size())
            served.suggestion.reset();
    }
    if (served.suggestion) {
        std::lock_guard lock(mutex_);
        for (auto& l : leases_[task_id][*chosen]) {
            if (l.annotator_id == annotator_id) l.suggestion = served.suggestion->values;
        }
    }
    return served;
}

AnnotationRecord AnnotationStore::submit_annotation(const std::string& task_id, const std::string& annotator_id,
                                                    std::size_t instance, const std::vector<ResultValue>& results,
                                                    const SubmitOptions& options) {
    Task task = require_task(task_id);
    User user = require_user(annotator_id);
    const bool admin = user.role == Role::Administrator;
    if (!admin && !task.assignees.count(annotator_id))
        throw Error(ErrorCode::NotAssigned, "`" + annotator_id + "` is not assigned to " + task_id);

    if (options.idempotency_key) {
        if (auto prior = storage_->find_by_idempotency_key(task_id, *options.idempotency_key)) return *prior;
    }

    TaskDocument merged;
    try {
        merged = merge_annotation(task.document, task.interface, instance, results);
    } catch (const Error& e) {
        Violation::Rule rule = e.code() == ErrorCode::ArityMismatch ? Violation::Rule::ArityMismatch
                                                                    : Violation::Rule::InvalidResult;
        if (e.code() == ErrorCode::IndexOutOfRange) rule = Violation::Rule::LengthMismatch;
        throw ValidationError({Violation{rule, instance, std::nullopt, e.what()}});
    }
    const auto& canonical = merged.result[instance];

    AnnotationRecord stored;
    {
        std::lock_guard lock(mutex_);
        if (options.idempotency_key) {
            if (auto prior = storage_->find_by_idempotency_key(task_id, *options.idempotency_key)) return *prior;
        }
        const Timestamp now = options_.clock();
        auto& list = leases_[task_id][instance];
        std::erase_if(list, [&](const Lease& l) { return l.expires_at <= now && l.annotator_id != annotator_id; });

        if (!admin && task.policy == AssignmentPolicy::Exclusive) {
            const bool held_by_other = std::any_of(list.begin(), list.end(), [&](const Lease& l) {
                return l.annotator_id != annotator_id;
            });
            if (held_by_other)
                throw Error(ErrorCode::LeaseExpired, "instance " + std::to_string(instance) +
                                                         " is leased to another annotator");
            if (require_task(task_id).document.done[instance] != 0) {
                bool own_earlier = false;
                for (const auto& r : storage_->records(task_id)) {
                    if (r.instance_index == instance && r.annotator_id == annotator_id) own_earlier = true;
                }
                if (!own_earlier)
                    throw Error(ErrorCode::LeaseExpired,
                                "instance " + std::to_string(instance) + " was already annotated by someone else");
            }
        }

        AnnotationRecord record;
        record.annotator_id = annotator_id;
        record.results = canonical;
        record.submitted_at = now;
        record.idempotency_key = options.idempotency_key;
        auto own = std::find_if(list.begin(), list.end(),
                                [&](const Lease& l) { return l.annotator_id == annotator_id; });
        if (own != list.end()) {
            record.served_at = own->served_at;
            record.duration_ms = now - own->served_at;
            record.suggestion_shown = own->suggestion;
        }
        record.accepted_unchanged = options.accepted_unchanged.value_or(
            record.suggestion_shown.has_value() && *record.suggestion_shown == canonical);

        stored = storage_->commit_submission(task_id, instance, canonical, std::move(record));
        if (task.policy == AssignmentPolicy::Exclusive)
            list.clear();
        else
            std::erase_if(list, [&](const Lease& l) { return l.annotator_id == annotator_id; });
    }

    if (auto be = backend(task_id)) {
        task.document = std::move(merged);
        be->on_submit(task, stored, user);
    }
    return stored;
}

json AnnotationStore::export_task(const std::string& task_id) {
    Task task;
    std::vector<AnnotationRecord> stored;
    {
        // Document and records must come from the same side of any submit.
        std::lock_guard lock(mutex_);
        task = require_task(task_id);
        stored = storage_->records(task_id);
    }
    json out = to_json(TaskFile{task.interface, task.document});
    json records = json::array();
    json by_annotator = json::object();
    std::size_t sequence = 0;
    for (const auto& r : stored) {
        json entry = to_json(r, false);
        entry["sequence"] = ++sequence;
        records.push_back(std::move(entry));
        if (r.latest) by_annotator[r.annotator_id][std::to_string(r.instance_index)] = results_to_json(r.results);
    }
    out["records"] = std::move(records);
    out["annotations_by_annotator"] = std::move(by_annotator);
    return out;
}

std::string AnnotationStore::export_records_ndjson(const std::string& task_id) {
    require_task(task_id);
    std::ostringstream out;
    for (const auto& r : storage_->records(task_id)) out << to_json(r, true).dump() << '\n';
    return out.str();
}

Task AnnotationStore::task(const std::string& task_id) { return require_task(task_id); }

std::vector<Task> AnnotationStore::tasks_for(const User& user) {
    std::vector<Task> out;
    for (const auto& id : storage_->list_task_ids()) {
        auto task = storage_->find_task(id);
        if (!task) continue;
        if (user.role == Role::Administrator || task->assignees.count(user.user_id)) out.push_back(std::move(*task));
    }
    return out;
}

std::vector<AnnotationRecord> AnnotationStore::records(const std::string& task_id) {
    require_task(task_id);
    return storage_->records(task_id);
}

std::vector<AnnotationRecord> AnnotationStore::latest_records(const std::string& task_id) {
    auto all = records(task_id);
    std::erase_if(all, [](const AnnotationRecord& r) { return !r.latest; });
    return all;
}

void AnnotationStore::set_backend(const std::string& task_id, std::shared_ptr<SuggestionBackend> backend) {
    std::lock_guard lock(mutex_);
    backends_[task_id] = std::move(backend);
}

std::shared_ptr<SuggestionBackend> AnnotationStore::backend(const std::string& task_id) const {
    std::lock_guard lock(mutex_);
    auto it = backends_.find(task_id);
    return it == backends_.end() ? nullptr : it->second;
}

Session AnnotationStore::open_session(const std::string& user_id, std::chrono::milliseconds ttl) {
    require_user(user_id);
    Session s;
    s.token = random_hex(24);
    s.user_id = user_id;
    s.issued_at = options_.clock();
    s.expires_at = s.issued_at + ttl.count();
    storage_->put_session(s);
    return s;
}

std::optional<User> AnnotationStore::user_for_token(const std::string& token) {
    auto session = storage_->find_session(token);
    if (!session || session->expires_at <= options_.clock()) return std::nullopt;
    return storage_->find_user(session->user_id);
}

}  // namespace anno
