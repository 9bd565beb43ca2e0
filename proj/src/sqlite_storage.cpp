#include <sqlite3.h>

#include <mutex>

#include "anno/store.hpp"

namespace anno {

namespace {

[[noreturn]] void storage_fail(sqlite3* db, const std::string& what) {
    throw Error(ErrorCode::StorageError, what + ": " + (db ? sqlite3_errmsg(db) : "no database"));
}

class Statement {
public:
    Statement(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) storage_fail(db, "prepare");
    }
    ~Statement() { sqlite3_finalize(stmt_); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    Statement& bind(int i, const std::string& v) {
        sqlite3_bind_text(stmt_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
        return *this;
    }
    Statement& bind(int i, std::int64_t v) {
        sqlite3_bind_int64(stmt_, i, v);
        return *this;
    }
    Statement& bind_null(int i) {
        sqlite3_bind_null(stmt_, i);
        return *this;
    }
    template <class T>
    Statement& bind_opt(int i, const std::optional<T>& v) {
        if (v) return bind(i, *v);
        return bind_null(i);
    }

    bool step() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        storage_fail(db_, "step");
    }
    void run() {
        while (step()) {
        }
    }

    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), sqlite3_column_bytes(stmt_, col)) : std::string();
    }
    std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
    bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

private:
    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

#define RECORD_COLUMNS                                                                                    \
    "record_id, task_id, idx, annotator_id, results, submitted_at, served_at, duration_ms, suggestion, " \
    "accepted_unchanged, latest, idempotency_key"

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS users (
  user_id TEXT PRIMARY KEY,
  name TEXT NOT NULL UNIQUE,
  role TEXT NOT NULL,
  demographics TEXT NOT NULL,
  password_hash TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
  task_id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  interface TEXT NOT NULL,
  backend TEXT NOT NULL,
  backend_config TEXT NOT NULL,
  policy TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS instances (
  task_id TEXT NOT NULL,
  idx INTEGER NOT NULL,
  source TEXT NOT NULL,
  question TEXT NOT NULL,
  result TEXT NOT NULL,
  done INTEGER NOT NULL,
  PRIMARY KEY (task_id, idx)
);
CREATE TABLE IF NOT EXISTS assignments (
  task_id TEXT NOT NULL,
  user_id TEXT NOT NULL,
  PRIMARY KEY (task_id, user_id)
);
CREATE TABLE IF NOT EXISTS records (
  record_id INTEGER PRIMARY KEY AUTOINCREMENT,
  task_id TEXT NOT NULL,
  idx INTEGER NOT NULL,
  annotator_id TEXT NOT NULL,
  results TEXT NOT NULL,
  submitted_at INTEGER NOT NULL,
  served_at INTEGER,
  duration_ms INTEGER,
  suggestion TEXT,
  accepted_unchanged INTEGER NOT NULL,
  latest INTEGER NOT NULL,
  idempotency_key TEXT,
  UNIQUE (task_id, idempotency_key)
);
CREATE INDEX IF NOT EXISTS records_by_task ON records (task_id, idx);
CREATE TABLE IF NOT EXISTS sessions (
  token TEXT PRIMARY KEY,
  user_id TEXT NOT NULL,
  issued_at INTEGER NOT NULL,
  expires_at INTEGER NOT NULL
);
)sql";

class SqliteStorage final : public Storage {
public:
    explicit SqliteStorage(const std::string& path) {
        if (sqlite3_open_v2(path.c_str(), &db_,
                            SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                            nullptr) != SQLITE_OK) {
            std::string message = db_ ? sqlite3_errmsg(db_) : "out of memory";
            sqlite3_close(db_);
            throw Error(ErrorCode::StorageError, "cannot open " + path + ": " + message);
        }
        sqlite3_busy_timeout(db_, 5000);
        exec("PRAGMA journal_mode=WAL;");
        exec("PRAGMA foreign_keys=ON;");
        exec(kSchema);
    }
    ~SqliteStorage() override { sqlite3_close(db_); }

    void put_user(const User& user, const std::string& password_hash) override {
        std::lock_guard lock(mutex_);
        Statement st(db_,
                     "INSERT INTO users (user_id, name, role, demographics, password_hash) VALUES (?,?,?,?,?) "
                     "ON CONFLICT(user_id) DO UPDATE SET name=excluded.name, role=excluded.role, "
                     "demographics=excluded.demographics, password_hash=excluded.password_hash");
        st.bind(1, user.user_id).bind(2, user.name).bind(3, std::string(to_string(user.role)));
        st.bind(4, user.demographics.dump()).bind(5, password_hash);
        st.run();
    }

    std::optional<User> find_user(const std::string& user_id) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT user_id, name, role, demographics FROM users WHERE user_id = ?");
        st.bind(1, user_id);
        if (!st.step()) return std::nullopt;
        return read_user(st);
    }

    std::optional<User> find_user_by_name(const std::string& name) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT user_id, name, role, demographics FROM users WHERE name = ?");
        st.bind(1, name);
        if (!st.step()) return std::nullopt;
        return read_user(st);
    }

    std::optional<std::string> password_hash(const std::string& user_id) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT password_hash FROM users WHERE user_id = ?");
        st.bind(1, user_id);
        if (!st.step()) return std::nullopt;
        return st.text(0);
    }

    std::vector<User> list_users() override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT user_id, name, role, demographics FROM users ORDER BY user_id");
        std::vector<User> out;
        while (st.step()) out.push_back(read_user(st));
        return out;
    }

    void insert_task(const Task& task) override {
        std::lock_guard lock(mutex_);
        Transaction tx(*this);
        {
            Statement st(db_,
                         "INSERT INTO tasks (task_id, name, interface, backend, backend_config, policy) "
                         "VALUES (?,?,?,?,?,?)");
            st.bind(1, task.task_id).bind(2, task.name).bind(3, to_json(task.interface).dump());
            st.bind(4, std::string(to_string(task.backend))).bind(5, task.backend_config.dump());
            st.bind(6, std::string(to_string(task.policy)));
            st.run();
        }
        const auto& doc = task.document;
        for (std::size_t i = 0; i < doc.size(); ++i) {
            Statement st(db_,
                         "INSERT INTO instances (task_id, idx, source, question, result, done) VALUES (?,?,?,?,?,?)");
            st.bind(1, task.task_id).bind(2, static_cast<std::int64_t>(i)).bind(3, to_json(doc.source[i]).dump());
            st.bind(4, json(doc.question[i]).dump()).bind(5, results_to_json(doc.result[i]).dump());
            st.bind(6, static_cast<std::int64_t>(doc.done[i]));
            st.run();
        }
        for (const auto& user : task.assignees) {
            Statement st(db_, "INSERT OR IGNORE INTO assignments (task_id, user_id) VALUES (?,?)");
            st.bind(1, task.task_id).bind(2, user);
            st.run();
        }
        tx.commit();
    }

    std::optional<Task> find_task(const std::string& task_id) override {
        std::lock_guard lock(mutex_);
        Task task;
        {
            Statement st(db_,
                         "SELECT task_id, name, interface, backend, backend_config, policy FROM tasks WHERE task_id = ?");
            st.bind(1, task_id);
            if (!st.step()) return std::nullopt;
            task.task_id = st.text(0);
            task.name = st.text(1);
            task.interface = parse_interface_spec(json{{"format", json::parse(st.text(2))}});
            task.backend = backend_from_string(st.text(3));
            task.backend_config = json::parse(st.text(4));
            task.policy = policy_from_string(st.text(5));
        }
        {
            Statement st(db_, "SELECT source, question, result, done FROM instances WHERE task_id = ? ORDER BY idx");
            st.bind(1, task_id);
            auto& doc = task.document;
            while (st.step()) {
                doc.source.push_back(parse_payload(json::parse(st.text(0))));
                doc.question.push_back(json::parse(st.text(1)).get<std::vector<std::string>>());
                doc.result.push_back(parse_results(json::parse(st.text(2))));
                doc.done.push_back(static_cast<int>(st.integer(3)));
            }
        }
        // Stored results are canonical; re-conform so span kinds match the components.
        for (std::size_t i = 0; i < task.document.size(); ++i) {
            auto& row = task.document.result[i];
            for (std::size_t j = 0; j < row.size() && j < task.interface.size(); ++j) {
                try {
                    row[j] = conform_result(row[j], task.interface.components[j], task.document.source[i]);
                } catch (const Error&) {
                }
            }
        }
        {
            Statement st(db_, "SELECT user_id FROM assignments WHERE task_id = ?");
            st.bind(1, task_id);
            while (st.step()) task.assignees.insert(st.text(0));
        }
        return task;
    }

    std::vector<std::string> list_task_ids() override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT task_id FROM tasks ORDER BY rowid");
        std::vector<std::string> out;
        while (st.step()) out.push_back(st.text(0));
        return out;
    }

    void add_assignee(const std::string& task_id, const std::string& user_id) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "INSERT OR IGNORE INTO assignments (task_id, user_id) VALUES (?,?)");
        st.bind(1, task_id).bind(2, user_id);
        st.run();
    }

    AnnotationRecord commit_submission(const std::string& task_id, std::size_t instance,
                                       const std::vector<ResultValue>& results,
                                       AnnotationRecord record) override {
        std::lock_guard lock(mutex_);
        Transaction tx(*this);
        {
            Statement st(db_, "UPDATE instances SET result = ?, done = 1 WHERE task_id = ? AND idx = ?");
            st.bind(1, results_to_json(results).dump()).bind(2, task_id).bind(3, static_cast<std::int64_t>(instance));
            st.run();
            if (sqlite3_changes(db_) != 1) storage_fail(db_, "instance row missing");
        }
        {
            Statement st(db_, "UPDATE records SET latest = 0 WHERE task_id = ? AND idx = ? AND annotator_id = ?");
            st.bind(1, task_id).bind(2, static_cast<std::int64_t>(instance)).bind(3, record.annotator_id);
            st.run();
        }
        record.task_id = task_id;
        record.instance_index = instance;
        record.latest = true;
        insert_record(record, true);
        record.record_id = sqlite3_last_insert_rowid(db_);
        tx.commit();
        return record;
    }

    AnnotationRecord append_record(AnnotationRecord record) override {
        std::lock_guard lock(mutex_);
        insert_record(record, record.latest);
        record.record_id = sqlite3_last_insert_rowid(db_);
        return record;
    }

    std::vector<AnnotationRecord> records(const std::string& task_id) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT " RECORD_COLUMNS " FROM records WHERE task_id = ? ORDER BY record_id");
        st.bind(1, task_id);
        std::vector<AnnotationRecord> out;
        while (st.step()) out.push_back(read_record(st));
        return out;
    }

    std::optional<AnnotationRecord> find_by_idempotency_key(const std::string& task_id,
                                                            const std::string& key) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT " RECORD_COLUMNS " FROM records WHERE task_id = ? AND idempotency_key = ?");
        st.bind(1, task_id).bind(2, key);
        if (!st.step()) return std::nullopt;
        return read_record(st);
    }

    void put_session(const Session& session) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "INSERT OR REPLACE INTO sessions (token, user_id, issued_at, expires_at) VALUES (?,?,?,?)");
        st.bind(1, session.token).bind(2, session.user_id).bind(3, session.issued_at).bind(4, session.expires_at);
        st.run();
    }

    std::optional<Session> find_session(const std::string& token) override {
        std::lock_guard lock(mutex_);
        Statement st(db_, "SELECT token, user_id, issued_at, expires_at FROM sessions WHERE token = ?");
        st.bind(1, token);
        if (!st.step()) return std::nullopt;
        return Session{st.text(0), st.text(1), st.integer(2), st.integer(3)};
    }

private:
    class Transaction {
    public:
        explicit Transaction(SqliteStorage& owner) : owner_(owner) { owner_.exec("BEGIN IMMEDIATE;"); }
        ~Transaction() {
            if (!committed_) sqlite3_exec(owner_.db_, "ROLLBACK;", nullptr, nullptr, nullptr);
        }
        void commit() {
            owner_.exec("COMMIT;");
            committed_ = true;
        }

    private:
        SqliteStorage& owner_;
        bool committed_ = false;
    };

    void exec(const char* sql) {
        char* err = nullptr;
        if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
            std::string message = err ? err : "unknown";
            sqlite3_free(err);
            throw Error(ErrorCode::StorageError, message);
        }
    }

    void insert_record(const AnnotationRecord& record, bool latest) {
        Statement st(db_,
                     "INSERT INTO records (task_id, idx, annotator_id, results, submitted_at, served_at, "
                     "duration_ms, suggestion, accepted_unchanged, latest, idempotency_key) "
                     "VALUES (?,?,?,?,?,?,?,?,?,?,?)");
        st.bind(1, record.task_id).bind(2, static_cast<std::int64_t>(record.instance_index));
        st.bind(3, record.annotator_id).bind(4, results_to_json(record.results).dump());
        st.bind(5, record.submitted_at).bind_opt(6, record.served_at).bind_opt(7, record.duration_ms);
        if (record.suggestion_shown)
            st.bind(8, results_to_json(*record.suggestion_shown).dump());
        else
            st.bind_null(8);
        st.bind(9, static_cast<std::int64_t>(record.accepted_unchanged ? 1 : 0));
        st.bind(10, static_cast<std::int64_t>(latest ? 1 : 0));
        st.bind_opt(11, record.idempotency_key);
        st.run();
    }

    static User read_user(const Statement& st) {
        User u;
        u.user_id = st.text(0);
        u.name = st.text(1);
        u.role = role_from_string(st.text(2));
        u.demographics = json::parse(st.text(3));
        return u;
    }

    static AnnotationRecord read_record(const Statement& st) {
        AnnotationRecord r;
        r.record_id = st.integer(0);
        r.task_id = st.text(1);
        r.instance_index = static_cast<std::size_t>(st.integer(2));
        r.annotator_id = st.text(3);
        r.results = parse_results(json::parse(st.text(4)));
        r.submitted_at = st.integer(5);
        if (!st.is_null(6)) r.served_at = st.integer(6);
        if (!st.is_null(7)) r.duration_ms = st.integer(7);
        if (!st.is_null(8)) r.suggestion_shown = parse_results(json::parse(st.text(8)));
        r.accepted_unchanged = st.integer(9) != 0;
        r.latest = st.integer(10) != 0;
        if (!st.is_null(11)) r.idempotency_key = st.text(11);
        return r;
    }

    sqlite3* db_ = nullptr;
    std::recursive_mutex mutex_;
};

}  // namespace

std::unique_ptr<Storage> open_sqlite_storage(const std::string& path) {
    return std::make_unique<SqliteStorage>(path);
}

}  // namespace anno
