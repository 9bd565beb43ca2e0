#pragma once

// Users, tasks, assignments, leases and annotation records.
//
// The workflow: an administrator uploads an interface plus a task document,
// assigns annotators, annotators pull instances (with an optional machine
// suggestion) and submit results, the administrator exports. Durable state
// lives behind the Storage contract; leases are held in memory by the store,
// which is the single authority for them.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "anno/schema.hpp"

namespace anno {

using Timestamp = std::int64_t;  // UTC milliseconds

Timestamp now_utc_ms();

enum class Role { Administrator, Annotator };
enum class BackendKind { None, Mtal, DemographicAl, Prompt };
enum class AssignmentPolicy { Exclusive, Shared };

std::string_view to_string(Role role);
std::string_view to_string(BackendKind kind);
std::string_view to_string(AssignmentPolicy policy);
Role role_from_string(std::string_view name);
BackendKind backend_from_string(std::string_view name);
AssignmentPolicy policy_from_string(std::string_view name);

struct User {
    std::string user_id;
    std::string name;
    Role role = Role::Annotator;
    json demographics = json::object();  // feature name -> scalar
};

json to_json(const User& user);

struct Task {
    std::string task_id;
    std::string name;
    InterfaceSpec interface;
    TaskDocument document;
    std::set<std::string> assignees;
    BackendKind backend = BackendKind::None;
    json backend_config = json::object();
    AssignmentPolicy policy = AssignmentPolicy::Exclusive;
};

struct AnnotationRecord {
    std::int64_t record_id = 0;
    std::string task_id;
    std::size_t instance_index = 0;
    std::string annotator_id;
    std::vector<ResultValue> results;
    Timestamp submitted_at = 0;
    std::optional<Timestamp> served_at;
    std::optional<std::int64_t> duration_ms;
    std::optional<std::vector<ResultValue>> suggestion_shown;
    bool accepted_unchanged = false;
    bool latest = true;
    std::optional<std::string> idempotency_key;
};

// `with_task_id` is off inside task exports, where the task is implied.
json to_json(const AnnotationRecord& record, bool with_task_id = true);
AnnotationRecord record_from_json(const json& node);

// A back-end's proposal for one instance, one value per interface component.
struct Suggestion {
    BackendKind backend = BackendKind::None;
    std::vector<ResultValue> values;
    std::optional<double> confidence;
    std::string provenance;  // model snapshot id or prompt log id
};

json to_json(const Suggestion& suggestion);

struct ServedInstance {
    std::size_t instance_index = 0;
    Payload payload;
    std::vector<std::string> questions;
    std::vector<ResultValue> current;
    std::optional<Suggestion> suggestion;
    Timestamp served_at = 0;
    Timestamp lease_expires_at = 0;
};

struct Session {
    std::string token;
    std::string user_id;
    Timestamp issued_at = 0;
    Timestamp expires_at = 0;
};

class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<Violation> violations);
    const std::vector<Violation>& violations() const { return violations_; }

private:
    std::vector<Violation> violations_;
};

// Durable storage contract. Every method is a single transaction.
class Storage {
public:
    virtual ~Storage() = default;

    virtual void put_user(const User& user, const std::string& password_hash) = 0;
    virtual std::optional<User> find_user(const std::string& user_id) = 0;
    virtual std::optional<User> find_user_by_name(const std::string& name) = 0;
    virtual std::optional<std::string> password_hash(const std::string& user_id) = 0;
    virtual std::vector<User> list_users() = 0;

    virtual void insert_task(const Task& task) = 0;
    virtual std::optional<Task> find_task(const std::string& task_id) = 0;
    virtual std::vector<std::string> list_task_ids() = 0;
    virtual void add_assignee(const std::string& task_id, const std::string& user_id) = 0;

    // Writes the instance's new result row and appends the record, marking
    // earlier records for the same (task, instance, annotator) as superseded.
    // Returns the stored record with its id.
    virtual AnnotationRecord commit_submission(const std::string& task_id, std::size_t instance,
                                               const std::vector<ResultValue>& results,
                                               AnnotationRecord record) = 0;
    // Inserts a record verbatim (used when restoring an export).
    virtual AnnotationRecord append_record(AnnotationRecord record) = 0;
    virtual std::vector<AnnotationRecord> records(const std::string& task_id) = 0;
    virtual std::optional<AnnotationRecord> find_by_idempotency_key(const std::string& task_id,
                                                                    const std::string& key) = 0;

    virtual void put_session(const Session& session) = 0;
    virtual std::optional<Session> find_session(const std::string& token) = 0;
};

// SQLite-backed storage. `path` may be ":memory:".
std::unique_ptr<Storage> open_sqlite_storage(const std::string& path);

// Receives lifecycle events for a task and proposes suggestions.
class SuggestionBackend {
public:
    virtual ~SuggestionBackend() = default;
    virtual std::optional<Suggestion> suggest(const Task& task, std::size_t instance,
                                              const User& annotator) = 0;
    virtual void on_submit(const Task& task, const AnnotationRecord& record, const User& annotator) = 0;
    // Instances to serve first, most useful first. The store falls back to
    // document order for anything not listed.
    virtual std::vector<std::size_t> serving_order(const Task&) { return {}; }
};

struct SubmitOptions {
    std::optional<bool> accepted_unchanged;  // computed from the served suggestion when absent
    std::optional<std::string> idempotency_key;
};

struct StoreOptions {
    std::chrono::milliseconds lease_timeout{std::chrono::minutes(30)};
    std::function<Timestamp()> clock = now_utc_ms;
};

class AnnotationStore {
public:
    explicit AnnotationStore(std::unique_ptr<Storage> storage, StoreOptions options = {});

    User register_user(User user, const std::string& password = {});
    std::optional<User> find_user(const std::string& user_id);
    std::optional<User> find_user_by_name(const std::string& name);
    bool check_password(const std::string& user_id, const std::string& password);

    std::string create_task(const User& admin, InterfaceSpec spec, TaskDocument doc,
                            BackendKind backend = BackendKind::None, json config = json::object(),
                            AssignmentPolicy policy = AssignmentPolicy::Exclusive, std::string name = {});
    // Recreates a task from a previous export, including its records.
    std::string import_task(const User& admin, const json& exported, BackendKind backend = BackendKind::None,
                            json config = json::object(),
                            AssignmentPolicy policy = AssignmentPolicy::Exclusive, std::string name = {});

    void assign(const std::string& task_id, const std::string& annotator_id);

    std::optional<ServedInstance> next_instance(const std::string& task_id, const std::string& annotator_id);

    AnnotationRecord submit_annotation(const std::string& task_id, const std::string& annotator_id,
                                       std::size_t instance, const std::vector<ResultValue>& results,
                                       const SubmitOptions& options = {});

    json export_task(const std::string& task_id);
    std::string export_records_ndjson(const std::string& task_id);

    Task task(const std::string& task_id);
    std::vector<Task> tasks_for(const User& user);
    std::vector<AnnotationRecord> records(const std::string& task_id);
    std::vector<AnnotationRecord> latest_records(const std::string& task_id);

    void set_backend(const std::string& task_id, std::shared_ptr<SuggestionBackend> backend);
    std::shared_ptr<SuggestionBackend> backend(const std::string& task_id) const;

    Session open_session(const std::string& user_id, std::chrono::milliseconds ttl);
    std::optional<User> user_for_token(const std::string& token);

    Storage& storage() { return *storage_; }
    Timestamp now() const { return options_.clock(); }

private:
    struct Lease {
        std::string annotator_id;
        Timestamp served_at = 0;
        Timestamp expires_at = 0;
        std::optional<std::vector<ResultValue>> suggestion;
    };

    Task require_task(const std::string& task_id);
    User require_user(const std::string& user_id);
    std::string fresh_task_id();

    std::unique_ptr<Storage> storage_;
    StoreOptions options_;

    mutable std::mutex mutex_;  // leases, backends, and the submit critical section
    std::map<std::string, std::map<std::size_t, std::vector<Lease>>> leases_;
    std::map<std::string, std::shared_ptr<SuggestionBackend>> backends_;
    std::uint64_t task_counter_ = 0;
};

}  // namespace anno
