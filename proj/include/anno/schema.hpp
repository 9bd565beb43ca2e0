#pragma once

// Declarative annotation interfaces and the task-document data model.
//
// An interface is an ordered list of components. A task document carries,
// per instance, the source payload, one question per component, one result
// per component and a done flag. Both are exchanged as JSON with the keys
// "format", "type", "properties", "contents", "data", "source", "question",
// "result" and "done".

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "anno/error.hpp"

namespace anno {

using json = nlohmann::json;

enum class ComponentKind { Text, Textbox, Button, Selection, Dropdown, Slider, Table };

std::string_view to_string(ComponentKind kind);
std::optional<ComponentKind> component_kind_from_string(std::string_view name);

struct ComponentSpec {
    ComponentKind kind = ComponentKind::Textbox;
    std::vector<std::string> contents;  // button, dropdown, selection
    double min = 0.0;                   // slider
    double max = 0.0;
    double step = 0.0;
    std::vector<std::string> columns;  // table

    // Text and table components present data and collect nothing.
    bool collects_result() const {
        return kind != ComponentKind::Text && kind != ComponentKind::Table;
    }
    // Span components whose spans carry a label drawn from `contents`.
    bool labeled_spans() const {
        return kind == ComponentKind::Dropdown ||
               (kind == ComponentKind::Selection && !contents.empty());
    }

    friend bool operator==(const ComponentSpec&, const ComponentSpec&) = default;
};

struct InterfaceSpec {
    std::vector<ComponentSpec> components;

    std::size_t size() const { return components.size(); }
    friend bool operator==(const InterfaceSpec&, const InterfaceSpec&) = default;
};

struct TablePayload {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    friend bool operator==(const TablePayload&, const TablePayload&) = default;
};

using Payload = std::variant<std::string, TablePayload>;

// Half-open [start, end) offsets counted in Unicode code points of the source.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    friend bool operator==(const Span&, const Span&) = default;
};

struct LabeledSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string label;
    friend bool operator==(const LabeledSpan&, const LabeledSpan&) = default;
};

struct NoResult {
    friend bool operator==(const NoResult&, const NoResult&) = default;
};
struct TextAnswer {
    std::string text;
    friend bool operator==(const TextAnswer&, const TextAnswer&) = default;
};
struct ChoiceAnswer {
    std::int64_t index = 0;
    friend bool operator==(const ChoiceAnswer&, const ChoiceAnswer&) = default;
};
struct SpanSet {
    std::vector<Span> spans;
    friend bool operator==(const SpanSet&, const SpanSet&) = default;
};
struct LabeledSpanSet {
    std::vector<LabeledSpan> spans;
    friend bool operator==(const LabeledSpanSet&, const LabeledSpanSet&) = default;
};
struct ScoreAnswer {
    double value = 0.0;
    friend bool operator==(const ScoreAnswer&, const ScoreAnswer&) = default;
};

using ResultValue =
    std::variant<NoResult, TextAnswer, ChoiceAnswer, SpanSet, LabeledSpanSet, ScoreAnswer>;

struct TaskDocument {
    std::vector<Payload> source;
    std::vector<std::vector<std::string>> question;
    std::vector<std::vector<ResultValue>> result;
    std::vector<int> done;

    std::size_t size() const { return source.size(); }
    friend bool operator==(const TaskDocument&, const TaskDocument&) = default;
};

// Interface plus document, the shape of an uploaded or exported file.
struct TaskFile {
    InterfaceSpec interface;
    TaskDocument document;
};

struct Violation {
    enum class Rule {
        LengthMismatch,
        ArityMismatch,
        QuestionArityMismatch,
        InvalidResult,
        InvalidDoneFlag,
    };
    Rule rule;
    std::optional<std::size_t> instance;
    std::optional<std::size_t> component;
    std::string detail;
};

std::string_view to_string(Violation::Rule rule);
json to_json(const Violation& v);

// --- parsing and serialization -------------------------------------------

InterfaceSpec parse_interface_spec(std::string_view document);
InterfaceSpec parse_interface_spec(const json& document);
inline InterfaceSpec parse_interface_spec(const std::string& document) {
    return parse_interface_spec(std::string_view(document));
}
inline InterfaceSpec parse_interface_spec(const char* document) {
    return parse_interface_spec(std::string_view(document));
}
ComponentSpec parse_component(const json& node, std::size_t index);

json to_json(const ComponentSpec& component);
json to_json(const InterfaceSpec& spec);

// Structural decode: null, string, integer, float and span arrays map onto
// the variant alternatives. Whether a value suits a component is decided by
// conform_result().
ResultValue parse_result_value(const json& node);
json to_json(const ResultValue& value);

Payload parse_payload(const json& node);
json to_json(const Payload& payload);

// `data` is the object under the "data" key.
TaskDocument parse_task_document(const json& data);
json to_json(const TaskDocument& doc);

TaskFile parse_task_file(std::string_view document);
TaskFile parse_task_file(const json& document);
inline TaskFile parse_task_file(const std::string& document) { return parse_task_file(std::string_view(document)); }
inline TaskFile parse_task_file(const char* document) { return parse_task_file(std::string_view(document)); }
json to_json(const TaskFile& file);

// --- semantics ------------------------------------------------------------

// Returns the canonical form of `value` for `component` (button labels become
// indices, integer slider values become scores, an empty span list becomes an
// empty labeled span list where labels are expected). Throws InvalidResult.
ResultValue conform_result(const ResultValue& value, const ComponentSpec& component,
                           const Payload& payload);

std::vector<Violation> validate_task_document(const TaskDocument& doc, const InterfaceSpec& spec);

ResultValue empty_result_for(const ComponentSpec& component);

// A document with every result at its empty value and every done flag clear.
TaskDocument make_document(const InterfaceSpec& spec, std::vector<Payload> sources,
                           std::vector<std::vector<std::string>> questions);

TaskDocument merge_annotation(const TaskDocument& doc, const InterfaceSpec& spec,
                              std::size_t instance, const std::vector<ResultValue>& results);

std::vector<ResultValue> parse_results(const json& node);
json results_to_json(const std::vector<ResultValue>& results);

// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

}  // namespace anno
