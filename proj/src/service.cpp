#include "anno/service.hpp"

#include <thread>

#include "anno/text.hpp"
// after Eigen: resolv.h, pulled in by httplib, defines `_res`
#include <httplib.h>

namespace anno {

namespace {

const char* reason(int status) {
    switch (status) {
        case 200: return "OK";
        case 201: return "Created";
        case 204: return "No Content";
        case 400: return "Bad Request";
        case 401: return "Unauthorized";
        case 403: return "Forbidden";
        case 404: return "Not Found";
        case 405: return "Method Not Allowed";
        case 409: return "Conflict";
        case 422: return "Unprocessable Content";
        default: return "Internal Server Error";
    }
}

ApiResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

ApiResponse problem(int status, ErrorCode code, const std::string& detail) {
    return {status, "application/problem+json", problem_details(status, code, detail).dump()};
}

// Thrown by the routing layer for conditions that have no ErrorCode.
struct HttpFailure {
    int status;
    std::string detail;
};

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::string part;
    for (char c : path.substr(0, path.find('?'))) {
        if (c == '/') {
            if (!part.empty()) out.push_back(std::move(part));
            part.clear();
        } else {
            part += c;
        }
    }
    if (!part.empty()) out.push_back(std::move(part));
    return out;
}

json parse_body(const ApiRequest& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw HttpFailure{400, std::string("request body is not JSON: ") + e.what()};
    }
}

json task_summary(const Task& t) {
    std::size_t completed = 0;
    for (int d : t.document.done) completed += d != 0;
    return {{"task_id", t.task_id},
            {"name", t.name},
            {"backend", to_string(t.backend)},
            {"policy", to_string(t.policy)},
            {"instances", t.document.size()},
            {"completed", completed},
            {"assignees", t.assignees}};
}

json served_to_json(const ServedInstance& s) {
    json out{{"instance_index", s.instance_index},
             {"source", to_json(s.payload)},
             {"questions", s.questions},
             {"current", results_to_json(s.current)},
             {"served_at", s.served_at},
             {"lease_expires_at", s.lease_expires_at}};
    if (s.suggestion) out["suggestion"] = to_json(*s.suggestion);
    return out;
}

InterfaceSpec interface_from(const json& node) {
    if (node.is_string()) {
        const auto& presets = predefined_interfaces();
        auto it = presets.find(node.get<std::string>());
        if (it == presets.end())
            throw Error(ErrorCode::InvalidParams, "no predefined interface `" + node.get<std::string>() + "`");
        return it->second;
    }
    if (node.is_array()) return parse_interface_spec(json{{"format", node}});
    return parse_interface_spec(node);
}

}  // namespace

int http_status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Unauthenticated: return 401;
        case ErrorCode::PermissionDenied:
        case ErrorCode::NotAssigned: return 403;
        case ErrorCode::UnknownTask:
        case ErrorCode::UnknownUser: return 404;
        case ErrorCode::LeaseExpired: return 409;
        case ErrorCode::MalformedDocument:
        case ErrorCode::UnknownComponentKind:
        case ErrorCode::InvalidProperties:
        case ErrorCode::IndexOutOfRange:
        case ErrorCode::ArityMismatch:
        case ErrorCode::InvalidResult:
        case ErrorCode::ValidationFailed:
        case ErrorCode::RoleMismatch:
        case ErrorCode::InvalidParams:
        case ErrorCode::MissingFeature: return 422;
        default: return 500;
    }
}

json problem_details(int status, ErrorCode code, const std::string& detail) {
    return {{"status", status}, {"code", to_string(code)}, {"title", reason(status)}, {"detail", detail}};
}

const std::map<std::string, InterfaceSpec>& predefined_interfaces() {
    static const std::map<std::string, InterfaceSpec> presets = [] {
        std::map<std::string, InterfaceSpec> m;
        auto add = [&](const std::string& name, const char* format) {
            m[name] = parse_interface_spec(json{{"format", json::parse(format)}});
        };
        add("text_summarization", R"([{"type": "textbox"}])");
        add("fake_news_detection", R"([{"type": "button", "properties": {"contents": ["Real", "Fake"]}}])");
        add("word_segmentation", R"([{"type": "selection", "properties": {"contents": []}}])");
        add("text_to_sql", R"([{"type": "table", "properties": {"columns": []}}, {"type": "textbox"}])");
        add("text_chunking",
            R"([{"type": "dropdown", "properties": {"contents": ["NP", "VP", "PP", "ADJP", "ADVP"]}}])");
        add("semantic_similarity",
            R"([{"type": "text"}, {"type": "slider", "properties": {"min": 0, "max": 5, "step": 1}}])");
        add("evidence_qa", R"([{"type": "selection", "properties": {"contents": []}}, {"type": "textbox"}])");
        add("sentiment_analysis",
            R"([{"type": "button", "properties": {"contents": ["Positive", "Neutral", "Negative"]}}])");
        add("named_entity_recognition",
            R"([{"type": "selection", "properties": {"contents": ["PER", "ORG", "LOC", "MISC"]}}])");
        return m;
    }();
    return presets;
}

ApiService::ApiService(AnnotationStore& store, ServiceOptions options) : store_(store), options_(std::move(options)) {
    for (const auto& id : store_.storage().list_task_ids()) attach_backend(id, true);
}

void ApiService::attach_backend(const std::string& task_id, bool replay) {
    const Task task = store_.task(task_id);
    auto backend = make_backend(task, options_.completion);
    if (!backend) return;
    if (replay) {
        for (const auto& r : store_.latest_records(task_id))
            if (auto user = store_.find_user(r.annotator_id)) backend->on_submit(task, r, *user);
    }
    store_.set_backend(task_id, std::move(backend));
}

ApiResponse ApiService::handle(const ApiRequest& req) {
    const auto parts = split_path(req.path);
    const std::string& method = req.method;
    auto is = [&](std::initializer_list<const char*> pattern) {
        if (pattern.size() != parts.size()) return false;
        std::size_t i = 0;
        for (const char* p : pattern) {
            if (std::string_view(p) != "*" && parts[i] != p) return false;
            ++i;
        }
        return true;
    };

    try {
        auto wrong_method = [] { throw HttpFailure{405, "method not allowed"}; };

        if (is({"health"})) {
            if (method != "GET") wrong_method();
            return json_response(200, {{"status", "ok"}});
        }
        if (is({"login"})) {
            if (method != "POST") wrong_method();
            const json body = parse_body(req);
            const std::string password = body.value("password", std::string());
            std::optional<User> user;
            if (body.contains("user_id")) user = store_.find_user(body.at("user_id").get<std::string>());
            else if (body.contains("name")) user = store_.find_user_by_name(body.at("name").get<std::string>());
            if (!user || password.empty() || !store_.check_password(user->user_id, password))
                throw Error(ErrorCode::Unauthenticated, "unknown user or wrong password");
            const auto session = store_.open_session(user->user_id, options_.session_ttl);
            return json_response(200, {{"token", session.token},
                                       {"user_id", user->user_id},
                                       {"role", to_string(user->role)},
                                       {"expires_at", session.expires_at}});
        }

        // Everything below needs a session.
        std::optional<User> caller;
        if (auto it = req.headers.find("authorization"); it != req.headers.end() && it->second.rfind("Bearer ", 0) == 0)
            caller = store_.user_for_token(it->second.substr(7));
        const bool known_route = is({"interfaces"}) || is({"schema", "validate"}) || is({"users"}) || is({"tasks"}) ||
                                 is({"tasks", "*"}) || is({"tasks", "*", "assign"}) || is({"tasks", "*", "next"}) ||
                                 is({"tasks", "*", "annotations"}) || is({"tasks", "*", "export"}) ||
                                 is({"tasks", "*", "records"});
        if (!known_route) throw HttpFailure{404, "no route for " + req.path};
        if (!caller) throw Error(ErrorCode::Unauthenticated, "missing, unknown or expired bearer token");
        const bool admin = caller->role == Role::Administrator;
        auto require_admin = [&] {
            if (!admin) throw Error(ErrorCode::PermissionDenied, "administrators only");
        };
        auto require_annotator = [&] {
            if (admin) throw Error(ErrorCode::PermissionDenied, "annotators only");
        };

        if (is({"interfaces"})) {
            if (method != "GET") wrong_method();
            json out = json::array();
            for (const auto& [name, spec] : predefined_interfaces())
                out.push_back({{"name", name}, {"format", to_json(spec)}});
            return json_response(200, out);
        }
        if (is({"schema", "validate"})) {
            if (method != "POST") wrong_method();
            const json body = parse_body(req);
            const TaskFile file = parse_task_file(body);
            json violations = json::array();
            for (const auto& v : validate_task_document(file.document, file.interface)) violations.push_back(to_json(v));
            return json_response(200, {{"valid", violations.empty()}, {"violations", violations}});
        }
        if (is({"users"})) {
            require_admin();
            if (method == "GET") {
                json out = json::array();
                for (const auto& u : store_.storage().list_users()) out.push_back(to_json(u));
                return json_response(200, out);
            }
            if (method != "POST") wrong_method();
            const json body = parse_body(req);
            User user;
            user.user_id = body.value("user_id", std::string());
            user.name = body.value("name", std::string());
            user.role = role_from_string(body.value("role", std::string("annotator")));
            user.demographics = body.value("demographics", json::object());
            const std::string password = body.value("password", std::string());
            if (password.empty()) throw Error(ErrorCode::InvalidParams, "password must not be empty");
            const std::string id = user.user_id.empty() ? user.name : user.user_id;
            if (!id.empty() && store_.find_user(id)) throw HttpFailure{409, "user `" + id + "` already exists"};
            return json_response(201, to_json(store_.register_user(std::move(user), password)));
        }
        if (is({"tasks"})) {
            if (method == "GET") {
                json out = json::array();
                for (const auto& t : store_.tasks_for(*caller)) out.push_back(task_summary(t));
                return json_response(200, out);
            }
            if (method != "POST") wrong_method();
            require_admin();
            json body = parse_body(req);
            const auto backend = backend_from_string(body.value("backend", std::string("none")));
            json config = body.value("backend_config", json::object());
            const auto policy = policy_from_string(body.value("policy", std::string("exclusive")));
            const std::string name = body.value("name", std::string());
            std::string id;
            if (body.contains("records")) {
                id = store_.import_task(*caller, body, backend, config, policy, name);
            } else {
                if (!body.contains("data")) throw Error(ErrorCode::MalformedDocument, "missing \"data\"");
                const json* iface = body.contains("interface") ? &body.at("interface")
                                    : body.contains("format")  ? &body.at("format")
                                                               : nullptr;
                if (!iface) throw Error(ErrorCode::MalformedDocument, "missing \"interface\" or \"format\"");
                InterfaceSpec spec = interface_from(*iface);
                TaskDocument doc = parse_task_document(body.at("data"));
                if (body.contains("backend") && backend != BackendKind::None)
                    make_backend(Task{"", name, spec, doc, {}, backend, config, policy});  // config check
                id = store_.create_task(*caller, std::move(spec), std::move(doc), backend, config, policy, name);
            }
            for (const auto& who : body.value("assignees", json::array())) {
                const std::string key = who.get<std::string>();
                auto user = store_.find_user(key);
                if (!user) user = store_.find_user_by_name(key);
                if (!user) throw Error(ErrorCode::UnknownUser, "no user `" + key + "`");
                store_.assign(id, user->user_id);
            }
            attach_backend(id, body.contains("records"));
            return json_response(201, task_summary(store_.task(id)));
        }

        const std::string& task_id = parts[1];
        if (is({"tasks", "*"})) {
            if (method != "GET") wrong_method();
            const Task task = store_.task(task_id);
            if (!admin && !task.assignees.count(caller->user_id))
                throw Error(ErrorCode::NotAssigned, "not assigned to " + task_id);
            json out = task_summary(task);
            out["format"] = to_json(task.interface);
            return json_response(200, out);
        }
        if (is({"tasks", "*", "assign"})) {
            if (method != "POST") wrong_method();
            require_admin();
            const json body = parse_body(req);
            std::vector<std::string> names;
            if (body.contains("annotator")) names.push_back(body.at("annotator").get<std::string>());
            for (const auto& n : body.value("annotators", json::array())) names.push_back(n.get<std::string>());
            if (names.empty()) throw Error(ErrorCode::InvalidParams, "name an annotator");
            store_.task(task_id);
            for (const auto& key : names) {
                auto user = store_.find_user(key);
                if (!user) user = store_.find_user_by_name(key);
                if (!user) throw Error(ErrorCode::UnknownUser, "no user `" + key + "`");
                store_.assign(task_id, user->user_id);
            }
            return json_response(200, task_summary(store_.task(task_id)));
        }
        if (is({"tasks", "*", "next"})) {
            if (method != "GET") wrong_method();
            require_annotator();
            const auto served = store_.next_instance(task_id, caller->user_id);
            if (!served) return {204, "application/json", ""};
            return json_response(200, served_to_json(*served));
        }
        if (is({"tasks", "*", "annotations"})) {
            if (method != "POST") wrong_method();
            const json body = parse_body(req);
            if (!body.contains("instance_index") || !body.at("instance_index").is_number_unsigned())
                throw Error(ErrorCode::InvalidParams, "instance_index must be a non-negative integer");
            if (!body.contains("results")) throw Error(ErrorCode::InvalidParams, "missing \"results\"");
            SubmitOptions opts;
            if (body.contains("accepted_unchanged")) opts.accepted_unchanged = body.at("accepted_unchanged").get<bool>();
            if (auto it = req.headers.find("idempotency-key"); it != req.headers.end()) opts.idempotency_key = it->second;
            else if (body.contains("idempotency_key")) opts.idempotency_key = body.at("idempotency_key").get<std::string>();
            const auto record = store_.submit_annotation(task_id, caller->user_id, body.at("instance_index").get<std::size_t>(),
                                                         parse_results(body.at("results")), opts);
            return json_response(200, to_json(record));
        }
        if (is({"tasks", "*", "export"})) {
            if (method != "GET") wrong_method();
            require_admin();
            return json_response(200, store_.export_task(task_id));
        }
        if (is({"tasks", "*", "records"})) {
            if (method != "GET") wrong_method();
            require_admin();
            return {200, "application/x-ndjson", store_.export_records_ndjson(task_id)};
        }
        throw HttpFailure{404, "no route for " + req.path};
    } catch (const HttpFailure& f) {
        const ErrorCode code = f.status == 400 ? ErrorCode::MalformedDocument : ErrorCode::InvalidParams;
        json body = problem_details(f.status, code, f.detail);
        if (f.status == 404) body["code"] = "NoRoute";
        if (f.status == 405) body["code"] = "MethodNotAllowed";
        if (f.status == 409) body["code"] = "Conflict";
        return {f.status, "application/problem+json", body.dump()};
    } catch (const ValidationError& e) {
        const int status = http_status_for(e.code());
        json body = problem_details(status, e.code(), e.what());
        body["violations"] = json::array();
        for (const auto& v : e.violations()) body["violations"].push_back(to_json(v));
        return {status, "application/problem+json", body.dump()};
    } catch (const Error& e) {
        return problem(http_status_for(e.code()), e.code(), e.what());
    } catch (const json::exception& e) {
        return problem(422, ErrorCode::MalformedDocument, e.what());
    } catch (const std::exception& e) {
        return problem(500, ErrorCode::StorageError, e.what());
    }
}

struct HttpServer::Impl {
    ApiService& service;
    httplib::Server server;
    std::thread thread;

    explicit Impl(ApiService& s) : service(s) {
        auto forward = [this](const httplib::Request& req, httplib::Response& res) {
            ApiRequest r;
            r.method = req.method;
            r.path = req.path;
            r.body = req.body;
            for (const auto& [k, v] : req.headers) r.headers[to_lower(k)] = v;
            const auto out = service.handle(r);
            res.status = out.status;
            if (!out.body.empty()) res.set_content(out.body, out.content_type);
        };
        server.Get(".*", forward);
        server.Post(".*", forward);
        server.Put(".*", forward);
        server.Delete(".*", forward);
        server.Patch(".*", forward);
    }
};

HttpServer::HttpServer(ApiService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port))
        throw Error(ErrorCode::InvalidParams, "cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::start() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace anno
