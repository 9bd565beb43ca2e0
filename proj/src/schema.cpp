#include "anno/schema.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace anno {

namespace {

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

std::string component_label(std::size_t index) { return "component " + std::to_string(index); }

std::vector<std::string> string_list(const json& node, const std::string& where) {
    if (!node.is_array()) fail(ErrorCode::InvalidProperties, where + ": expected a list of strings");
    std::vector<std::string> out;
    out.reserve(node.size());
    for (const auto& item : node) {
        if (!item.is_string())
            fail(ErrorCode::InvalidProperties, where + ": expected a list of strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

double number_property(const json& props, const char* key, const std::string& where) {
    auto it = props.find(key);
    if (it == props.end() || !it->is_number())
        fail(ErrorCode::InvalidProperties, where + ": `" + key + "` must be a number");
    return it->get<double>();
}

const std::set<std::string>& allowed_keys(ComponentKind kind) {
    static const std::set<std::string> none;
    static const std::set<std::string> contents{"contents"};
    static const std::set<std::string> slider{"min", "max", "step"};
    static const std::set<std::string> table{"columns"};
    switch (kind) {
        case ComponentKind::Text:
        case ComponentKind::Textbox: return none;
        case ComponentKind::Button:
        case ComponentKind::Selection:
        case ComponentKind::Dropdown: return contents;
        case ComponentKind::Slider: return slider;
        case ComponentKind::Table: return table;
    }
    return none;
}

std::size_t payload_length(const Payload& payload) {
    if (const auto* text = std::get_if<std::string>(&payload)) return utf8_length(*text);
    return 0;
}

std::string span_problem(std::size_t start, std::size_t end, std::size_t length) {
    if (start >= end)
        return "span (" + std::to_string(start) + "," + std::to_string(end) + ") is empty or reversed";
    if (end > length)
        return "span (" + std::to_string(start) + "," + std::to_string(end) +
               ") exceeds source length " + std::to_string(length);
    return {};
}

std::size_t span_offset(const json& node) {
    if (!node.is_number_integer() || node.get<std::int64_t>() < 0)
        fail(ErrorCode::MalformedDocument, "span offsets must be non-negative integers");
    return node.get<std::size_t>();
}

}  // namespace

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedDocument: return "MalformedDocument";
        case ErrorCode::UnknownComponentKind: return "UnknownComponentKind";
        case ErrorCode::InvalidProperties: return "InvalidProperties";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::ArityMismatch: return "ArityMismatch";
        case ErrorCode::InvalidResult: return "InvalidResult";
        case ErrorCode::PermissionDenied: return "PermissionDenied";
        case ErrorCode::ValidationFailed: return "ValidationFailed";
        case ErrorCode::UnknownTask: return "UnknownTask";
        case ErrorCode::UnknownUser: return "UnknownUser";
        case ErrorCode::RoleMismatch: return "RoleMismatch";
        case ErrorCode::NotAssigned: return "NotAssigned";
        case ErrorCode::LeaseExpired: return "LeaseExpired";
        case ErrorCode::StorageError: return "StorageError";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::UnknownTaskHead: return "UnknownTask";
        case ErrorCode::EmptyPool: return "EmptyPool";
        case ErrorCode::MissingAlpha: return "MissingAlpha";
        case ErrorCode::NoLabeledData: return "NoLabeledData";
        case ErrorCode::UntrainedModel: return "UntrainedModel";
        case ErrorCode::InvalidModel: return "InvalidModel";
        case ErrorCode::MissingFeature: return "MissingFeature";
        case ErrorCode::EmptyExamples: return "EmptyExamples";
        case ErrorCode::PoolTooSmall: return "PoolTooSmall";
        case ErrorCode::EmbedderUnavailable: return "EmbedderUnavailable";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::ContextLengthExceeded: return "ContextLengthExceeded";
        case ErrorCode::ApiError: return "ApiError";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::MissingGold: return "MissingGold";
        case ErrorCode::InvalidParams: return "InvalidParams";
        case ErrorCode::Unauthenticated: return "Unauthenticated";
    }
    return "Unknown";
}

std::string_view to_string(ComponentKind kind) {
    switch (kind) {
        case ComponentKind::Text: return "text";
        case ComponentKind::Textbox: return "textbox";
        case ComponentKind::Button: return "button";
        case ComponentKind::Selection: return "selection";
        case ComponentKind::Dropdown: return "dropdown";
        case ComponentKind::Slider: return "slider";
        case ComponentKind::Table: return "table";
    }
    return "text";
}

std::optional<ComponentKind> component_kind_from_string(std::string_view name) {
    for (auto kind : {ComponentKind::Text, ComponentKind::Textbox, ComponentKind::Button,
                      ComponentKind::Selection, ComponentKind::Dropdown, ComponentKind::Slider,
                      ComponentKind::Table}) {
        if (to_string(kind) == name) return kind;
    }
    return std::nullopt;
}

std::string_view to_string(Violation::Rule rule) {
    switch (rule) {
        case Violation::Rule::LengthMismatch: return "LengthMismatch";
        case Violation::Rule::ArityMismatch: return "ArityMismatch";
        case Violation::Rule::QuestionArityMismatch: return "QuestionArityMismatch";
        case Violation::Rule::InvalidResult: return "InvalidResult";
        case Violation::Rule::InvalidDoneFlag: return "InvalidDoneFlag";
    }
    return "Unknown";
}

json to_json(const Violation& v) {
    json out{{"rule", to_string(v.rule)}, {"detail", v.detail}};
    out["instance"] = v.instance ? json(*v.instance) : json(nullptr);
    out["component"] = v.component ? json(*v.component) : json(nullptr);
    return out;
}

std::size_t utf8_length(std::string_view text) {
    std::size_t count = 0;
    for (unsigned char c : text) {
        if ((c & 0xC0) != 0x80) ++count;
    }
    return count;
}

// --- interface spec ---------------------------------------------------------

ComponentSpec parse_component(const json& node, std::size_t index) {
    const std::string where = component_label(index);
    if (!node.is_object()) fail(ErrorCode::MalformedDocument, where + ": expected an object");
    auto type = node.find("type");
    if (type == node.end() || !type->is_string())
        fail(ErrorCode::MalformedDocument, where + ": missing string `type`");
    auto kind = component_kind_from_string(type->get<std::string>());
    if (!kind)
        fail(ErrorCode::UnknownComponentKind,
             where + ": unknown component kind `" + type->get<std::string>() + "`");

    json props = json::object();
    if (auto it = node.find("properties"); it != node.end()) {
        if (!it->is_object()) fail(ErrorCode::InvalidProperties, where + ": `properties` must be an object");
        props = *it;
    }
    const auto& allowed = allowed_keys(*kind);
    for (const auto& [key, _] : props.items()) {
        if (!allowed.count(key))
            fail(ErrorCode::InvalidProperties, where + ": unknown property `" + key + "` for " +
                                                   std::string(to_string(*kind)));
    }

    ComponentSpec spec;
    spec.kind = *kind;
    switch (*kind) {
        case ComponentKind::Text:
        case ComponentKind::Textbox: break;
        case ComponentKind::Button:
        case ComponentKind::Dropdown: {
            auto it = props.find("contents");
            if (it == props.end()) fail(ErrorCode::InvalidProperties, where + ": `contents` is required");
            spec.contents = string_list(*it, where);
            if (spec.contents.empty())
                fail(ErrorCode::InvalidProperties, where + ": `contents` must not be empty");
            break;
        }
        case ComponentKind::Selection:
            if (auto it = props.find("contents"); it != props.end())
                spec.contents = string_list(*it, where);
            break;
        case ComponentKind::Slider:
            spec.min = number_property(props, "min", where);
            spec.max = number_property(props, "max", where);
            spec.step = number_property(props, "step", where);
            if (!(spec.min < spec.max)) fail(ErrorCode::InvalidProperties, where + ": slider needs min < max");
            if (!(spec.step > 0)) fail(ErrorCode::InvalidProperties, where + ": slider needs step > 0");
            break;
        case ComponentKind::Table:
            if (auto it = props.find("columns"); it != props.end())
                spec.columns = string_list(*it, where);
            break;
    }
    return spec;
}

InterfaceSpec parse_interface_spec(const json& document) {
    if (!document.is_object()) fail(ErrorCode::MalformedDocument, "interface document must be an object");
    auto format = document.find("format");
    if (format == document.end() || !format->is_array())
        fail(ErrorCode::MalformedDocument, "interface document needs a `format` array");
    if (format->empty()) fail(ErrorCode::InvalidProperties, "`format` must list at least one component");
    InterfaceSpec spec;
    for (std::size_t i = 0; i < format->size(); ++i) spec.components.push_back(parse_component((*format)[i], i));
    return spec;
}

InterfaceSpec parse_interface_spec(std::string_view document) {
    json parsed = json::parse(document, nullptr, false);
    if (parsed.is_discarded()) fail(ErrorCode::MalformedDocument, "interface document is not valid JSON");
    return parse_interface_spec(parsed);
}

json to_json(const ComponentSpec& component) {
    json props = json::object();
    switch (component.kind) {
        case ComponentKind::Text:
        case ComponentKind::Textbox: break;
        case ComponentKind::Button:
        case ComponentKind::Selection:
        case ComponentKind::Dropdown: props["contents"] = component.contents; break;
        case ComponentKind::Slider:
            props["min"] = component.min;
            props["max"] = component.max;
            props["step"] = component.step;
            break;
        case ComponentKind::Table:
            if (!component.columns.empty()) props["columns"] = component.columns;
            break;
    }
    return json{{"type", to_string(component.kind)}, {"properties", props}};
}

json to_json(const InterfaceSpec& spec) {
    json format = json::array();
    for (const auto& c : spec.components) format.push_back(to_json(c));
    return format;
}

// --- values -----------------------------------------------------------------

ResultValue parse_result_value(const json& node) {
    if (node.is_null()) return NoResult{};
    if (node.is_string()) return TextAnswer{node.get<std::string>()};
    if (node.is_number_integer()) return ChoiceAnswer{node.get<std::int64_t>()};
    if (node.is_number_float()) return ScoreAnswer{node.get<double>()};
    if (node.is_array()) {
        if (node.empty()) return SpanSet{};
        const std::size_t width = node.front().is_array() ? node.front().size() : 0;
        if (width == 2) {
            SpanSet set;
            for (const auto& s : node) {
                if (!s.is_array() || s.size() != 2)
                    fail(ErrorCode::MalformedDocument, "mixed span shapes in one result");
                set.spans.push_back({span_offset(s[0]), span_offset(s[1])});
            }
            return set;
        }
        if (width == 3) {
            LabeledSpanSet set;
            for (const auto& s : node) {
                if (!s.is_array() || s.size() != 3 || !s[2].is_string())
                    fail(ErrorCode::MalformedDocument, "labeled spans are [start, end, label]");
                set.spans.push_back({span_offset(s[0]), span_offset(s[1]), s[2].get<std::string>()});
            }
            return set;
        }
    }
    fail(ErrorCode::MalformedDocument, "unrecognised result value: " + node.dump());
}

json to_json(const ResultValue& value) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, NoResult>) {
                return nullptr;
            } else if constexpr (std::is_same_v<T, TextAnswer>) {
                return v.text;
            } else if constexpr (std::is_same_v<T, ChoiceAnswer>) {
                return v.index;
            } else if constexpr (std::is_same_v<T, SpanSet>) {
                json out = json::array();
                for (const auto& s : v.spans) out.push_back({s.start, s.end});
                return out;
            } else if constexpr (std::is_same_v<T, LabeledSpanSet>) {
                json out = json::array();
                for (const auto& s : v.spans) out.push_back({s.start, s.end, s.label});
                return out;
            } else {
                double whole = 0.0;
                if (std::modf(v.value, &whole) == 0.0 && std::abs(whole) < 9.0e15)
                    return static_cast<std::int64_t>(whole);
                return v.value;
            }
        },
        value);
}

std::vector<ResultValue> parse_results(const json& node) {
    if (!node.is_array()) fail(ErrorCode::MalformedDocument, "results must be a list");
    std::vector<ResultValue> out;
    out.reserve(node.size());
    for (const auto& entry : node) {
        if (entry.is_object()) {
            auto it = entry.find("result");
            if (it == entry.end()) fail(ErrorCode::MalformedDocument, "result entries need a `result` key");
            out.push_back(parse_result_value(*it));
        } else {
            out.push_back(parse_result_value(entry));
        }
    }
    return out;
}

json results_to_json(const std::vector<ResultValue>& results) {
    json out = json::array();
    for (const auto& r : results) out.push_back(json{{"result", to_json(r)}});
    return out;
}

Payload parse_payload(const json& node) {
    if (node.is_string()) return node.get<std::string>();
    if (node.is_object() && node.contains("columns") && node.contains("rows")) {
        TablePayload table;
        try {
            table.columns = node.at("columns").get<std::vector<std::string>>();
            table.rows = node.at("rows").get<std::vector<std::vector<std::string>>>();
        } catch (const json::exception& e) {
            fail(ErrorCode::MalformedDocument, std::string("table payload: ") + e.what());
        }
        return table;
    }
    fail(ErrorCode::MalformedDocument, "source entries are strings or {columns, rows} tables");
}

json to_json(const Payload& payload) {
    if (const auto* text = std::get_if<std::string>(&payload)) return *text;
    const auto& table = std::get<TablePayload>(payload);
    return json{{"columns", table.columns}, {"rows", table.rows}};
}

TaskDocument parse_task_document(const json& data) {
    if (!data.is_object()) fail(ErrorCode::MalformedDocument, "`data` must be an object");
    for (const char* key : {"source", "question", "result", "done"}) {
        if (!data.contains(key) || !data.at(key).is_array())
            fail(ErrorCode::MalformedDocument, std::string("`data.") + key + "` must be a list");
    }
    TaskDocument doc;
    for (const auto& s : data.at("source")) doc.source.push_back(parse_payload(s));
    for (const auto& q : data.at("question")) {
        if (!q.is_array()) fail(ErrorCode::MalformedDocument, "each `question` entry is a list of strings");
        std::vector<std::string> row;
        for (const auto& item : q) {
            if (!item.is_string()) fail(ErrorCode::MalformedDocument, "questions must be strings");
            row.push_back(item.get<std::string>());
        }
        doc.question.push_back(std::move(row));
    }
    for (const auto& r : data.at("result")) doc.result.push_back(parse_results(r));
    for (const auto& d : data.at("done")) {
        if (!d.is_number_integer()) fail(ErrorCode::MalformedDocument, "done flags must be integers");
        doc.done.push_back(d.get<int>());
    }
    return doc;
}

json to_json(const TaskDocument& doc) {
    json source = json::array();
    for (const auto& s : doc.source) source.push_back(to_json(s));
    json result = json::array();
    for (const auto& r : doc.result) result.push_back(results_to_json(r));
    return json{{"source", source}, {"question", doc.question}, {"result", result}, {"done", doc.done}};
}

TaskFile parse_task_file(const json& document) {
    if (!document.is_object() || !document.contains("data"))
        fail(ErrorCode::MalformedDocument, "task file needs `data` and `format`");
    return TaskFile{parse_interface_spec(document), parse_task_document(document.at("data"))};
}

TaskFile parse_task_file(std::string_view document) {
    json parsed = json::parse(document, nullptr, false);
    if (parsed.is_discarded()) fail(ErrorCode::MalformedDocument, "task file is not valid JSON");
    return parse_task_file(parsed);
}

json to_json(const TaskFile& file) {
    return json{{"data", to_json(file.document)}, {"format", to_json(file.interface)}};
}

// --- semantics --------------------------------------------------------------

ResultValue conform_result(const ResultValue& value, const ComponentSpec& component,
                           const Payload& payload) {
    const auto kind_name = std::string(to_string(component.kind));
    auto reject = [&](const std::string& why) -> ResultValue {
        fail(ErrorCode::InvalidResult, kind_name + ": " + why);
    };

    switch (component.kind) {
        case ComponentKind::Text:
        case ComponentKind::Table:
            if (std::holds_alternative<NoResult>(value)) return value;
            return reject("display components carry no result");
        case ComponentKind::Textbox:
            if (std::holds_alternative<TextAnswer>(value)) return value;
            return reject("expected free text");
        case ComponentKind::Button: {
            const auto n = static_cast<std::int64_t>(component.contents.size());
            if (const auto* c = std::get_if<ChoiceAnswer>(&value)) {
                if (c->index < 0 || c->index >= n)
                    return reject("choice index " + std::to_string(c->index) + " outside [0, " +
                                  std::to_string(n) + ")");
                return value;
            }
            if (const auto* t = std::get_if<TextAnswer>(&value)) {
                auto it = std::find(component.contents.begin(), component.contents.end(), t->text);
                if (it == component.contents.end()) return reject("unknown option `" + t->text + "`");
                return ChoiceAnswer{it - component.contents.begin()};
            }
            return reject("expected an option index or label");
        }
        case ComponentKind::Slider: {
            double score = 0.0;
            if (const auto* s = std::get_if<ScoreAnswer>(&value)) {
                score = s->value;
            } else if (const auto* c = std::get_if<ChoiceAnswer>(&value)) {
                score = static_cast<double>(c->index);
            } else {
                return reject("expected a number");
            }
            if (!std::isfinite(score) || score < component.min || score > component.max)
                return reject("score outside slider bounds");
            return ScoreAnswer{score};
        }
        case ComponentKind::Selection:
        case ComponentKind::Dropdown: break;
    }

    // span components
    const std::size_t length = payload_length(payload);
    if (component.labeled_spans()) {
        LabeledSpanSet set;
        if (const auto* plain = std::get_if<SpanSet>(&value)) {
            if (!plain->spans.empty()) return reject("spans need labels from `contents`");
        } else if (const auto* labeled = std::get_if<LabeledSpanSet>(&value)) {
            set = *labeled;
        } else {
            return reject("expected labeled spans");
        }
        for (const auto& s : set.spans) {
            if (auto why = span_problem(s.start, s.end, length); !why.empty()) return reject(why);
            if (std::find(component.contents.begin(), component.contents.end(), s.label) ==
                component.contents.end())
                return reject("label `" + s.label + "` not among contents");
        }
        return set;
    }

    const auto* plain = std::get_if<SpanSet>(&value);
    if (!plain) return reject("expected unlabeled spans");
    std::vector<Span> sorted = plain->spans;
    for (const auto& s : sorted) {
        if (auto why = span_problem(s.start, s.end, length); !why.empty()) return reject(why);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].start < sorted[i - 1].end) return reject("spans overlap");
    }
    return value;
}

std::vector<Violation> validate_task_document(const TaskDocument& doc, const InterfaceSpec& spec) {
    using Rule = Violation::Rule;
    std::vector<Violation> out;
    const std::size_t n = doc.source.size();
    if (doc.question.size() != n || doc.result.size() != n || doc.done.size() != n) {
        out.push_back({Rule::LengthMismatch, std::nullopt, std::nullopt,
                       "source=" + std::to_string(n) + " question=" + std::to_string(doc.question.size()) +
                           " result=" + std::to_string(doc.result.size()) +
                           " done=" + std::to_string(doc.done.size())});
    }
    const std::size_t m = spec.size();

    for (std::size_t i = 0; i < doc.question.size(); ++i) {
        if (doc.question[i].size() != m)
            out.push_back({Rule::QuestionArityMismatch, i, std::nullopt,
                           std::to_string(doc.question[i].size()) + " questions for " +
                               std::to_string(m) + " components"});
    }
    for (std::size_t i = 0; i < doc.result.size(); ++i) {
        if (doc.result[i].size() != m) {
            out.push_back({Rule::ArityMismatch, i, std::nullopt,
                           std::to_string(doc.result[i].size()) + " results for " + std::to_string(m) +
                               " components"});
            continue;
        }
        if (i >= doc.source.size()) continue;
        for (std::size_t j = 0; j < m; ++j) {
            try {
                conform_result(doc.result[i][j], spec.components[j], doc.source[i]);
            } catch (const Error& e) {
                out.push_back({Rule::InvalidResult, i, j, e.what()});
            }
        }
    }
    for (std::size_t i = 0; i < doc.done.size(); ++i) {
        if (doc.done[i] != 0 && doc.done[i] != 1)
            out.push_back({Rule::InvalidDoneFlag, i, std::nullopt, "done flags are 0 or 1"});
    }
    return out;
}

ResultValue empty_result_for(const ComponentSpec& component) {
    switch (component.kind) {
        case ComponentKind::Text:
        case ComponentKind::Table: return NoResult{};
        case ComponentKind::Textbox: return TextAnswer{};
        case ComponentKind::Button: return ChoiceAnswer{0};
        case ComponentKind::Selection:
            if (component.contents.empty()) return SpanSet{};
            return LabeledSpanSet{};
        case ComponentKind::Dropdown: return LabeledSpanSet{};
        case ComponentKind::Slider: return ScoreAnswer{component.min};
    }
    return NoResult{};
}

TaskDocument make_document(const InterfaceSpec& spec, std::vector<Payload> sources,
                           std::vector<std::vector<std::string>> questions) {
    TaskDocument doc;
    doc.source = std::move(sources);
    doc.question = std::move(questions);
    std::vector<ResultValue> empty;
    for (const auto& c : spec.components) empty.push_back(empty_result_for(c));
    doc.result.assign(doc.source.size(), empty);
    doc.done.assign(doc.source.size(), 0);
    return doc;
}

TaskDocument merge_annotation(const TaskDocument& doc, const InterfaceSpec& spec, std::size_t instance,
                              const std::vector<ResultValue>& results) {
    if (instance >= doc.source.size() || instance >= doc.result.size() || instance >= doc.done.size())
        fail(ErrorCode::IndexOutOfRange, "instance " + std::to_string(instance) + " out of range");
    if (results.size() != spec.size())
        fail(ErrorCode::ArityMismatch, std::to_string(results.size()) + " results for " +
                                           std::to_string(spec.size()) + " components");
    std::vector<ResultValue> canonical;
    canonical.reserve(results.size());
    for (std::size_t j = 0; j < results.size(); ++j)
        canonical.push_back(conform_result(results[j], spec.components[j], doc.source[instance]));

    TaskDocument updated = doc;
    updated.result[instance] = std::move(canonical);
    updated.done[instance] = 1;
    return updated;
}

}  // namespace anno
