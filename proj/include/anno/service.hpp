#pragma once

// JSON REST surface over the annotation store.
//
//   GET  /health                      anyone
//   POST /login                       anyone
//   GET  /interfaces                  any session (predefined interfaces)
//   POST /schema/validate             any session
//   GET  /tasks                       any session; annotators see assigned tasks only
//   GET  /tasks/{id}                  administrators, or an assigned annotator
//   POST /users, GET /users           administrators
//   POST /tasks                       administrators
//   POST /tasks/{id}/assign           administrators
//   GET  /tasks/{id}/export           administrators
//   GET  /tasks/{id}/records          administrators (NDJSON)
//   GET  /tasks/{id}/next             annotators
//   POST /tasks/{id}/annotations      annotators; administrators may override
//
// Errors are problem-details bodies: {"status", "code", "title", "detail"},
// plus "violations" for validation failures.

#include <chrono>
#include <map>
#include <memory>
#include <string>

#include "anno/backends.hpp"
#include "anno/store.hpp"

namespace anno {

struct ApiRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> headers;  // lower-case names
    std::string body;
};

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    json json_body() const { return body.empty() ? json() : json::parse(body); }
};

int http_status_for(ErrorCode code);
json problem_details(int status, ErrorCode code, const std::string& detail);

// Interfaces offered by name at task creation.
const std::map<std::string, InterfaceSpec>& predefined_interfaces();

struct ServiceOptions {
    std::chrono::milliseconds session_ttl{std::chrono::hours(12)};
    CompletionFn completion;  // overrides the prompt back-end's API client when set
};

class ApiService {
public:
    // Attaches back-ends to the store's existing tasks and replays their
    // latest records into them.
    explicit ApiService(AnnotationStore& store, ServiceOptions options = {});

    ApiResponse handle(const ApiRequest& request);

    AnnotationStore& store() { return store_; }

private:
    struct Route;

    void attach_backend(const std::string& task_id, bool replay);

    AnnotationStore& store_;
    ServiceOptions options_;
};

// Serves an ApiService over HTTP/1.1.
class HttpServer {
public:
    explicit HttpServer(ApiService& service);
    ~HttpServer();

    // Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    void start();   // serve on a background thread
    void listen();  // serve on the calling thread until stop()
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace anno
