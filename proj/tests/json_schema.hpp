#pragma once

// Validator for the JSON-schema subset used by the published response
// schemas: $ref (sibling file), allOf, anyOf, type, enum, properties,
// required, additionalProperties: false, items, prefixItems, minItems,
// maxItems, minLength and minimum.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "support.hpp"

namespace anno::test {

class SchemaValidator {
public:
    explicit SchemaValidator(std::string dir = fixture_path("schemas")) : dir_(std::move(dir)) {}

    // Empty when `value` conforms to the schema file `name`.
    std::vector<std::string> check(const nlohmann::json& value, const std::string& name) const {
        std::vector<std::string> errors;
        walk(value, load(name), "$", errors);
        return errors;
    }

    bool valid(const nlohmann::json& value, const std::string& name) const { return check(value, name).empty(); }

private:
    nlohmann::json load(const std::string& name) const {
        return nlohmann::json::parse(read_fixture_at(dir_ + "/" + name));
    }

    static std::string read_fixture_at(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("missing schema " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    static bool has_type(const nlohmann::json& v, const std::string& type) {
        if (type == "null") return v.is_null();
        if (type == "boolean") return v.is_boolean();
        if (type == "string") return v.is_string();
        if (type == "integer") return v.is_number_integer();
        if (type == "number") return v.is_number();
        if (type == "array") return v.is_array();
        if (type == "object") return v.is_object();
        throw std::runtime_error("unsupported schema type " + type);
    }

    void walk(const nlohmann::json& v, const nlohmann::json& s, const std::string& at,
              std::vector<std::string>& errors) const {
        auto fail = [&](const std::string& what) { errors.push_back(at + ": " + what); };
        if (s.contains("$ref")) walk(v, load(s.at("$ref")), at, errors);
        if (s.contains("allOf"))
            for (const auto& sub : s.at("allOf")) walk(v, sub, at, errors);
        if (s.contains("anyOf")) {
            bool any = false;
            for (const auto& sub : s.at("anyOf")) {
                std::vector<std::string> local;
                walk(v, sub, at, local);
                any = any || local.empty();
            }
            if (!any) fail("matches no alternative");
        }
        if (s.contains("type")) {
            const auto& t = s.at("type");
            bool ok = false;
            if (t.is_string()) ok = has_type(v, t);
            else
                for (const auto& x : t) ok = ok || has_type(v, x);
            if (!ok) return fail("expected type " + t.dump() + ", got " + v.dump());
        }
        if (s.contains("enum")) {
            const auto& e = s.at("enum");
            if (std::find(e.begin(), e.end(), v) == e.end()) fail(v.dump() + " not in " + e.dump());
        }
        if (s.contains("minLength") && v.is_string() && v.get<std::string>().size() < s.at("minLength").get<std::size_t>())
            fail("string too short");
        if (s.contains("minimum") && v.is_number() && v.get<double>() < s.at("minimum").get<double>())
            fail("below minimum");
        if (v.is_object()) {
            for (const auto& r : s.value("required", nlohmann::json::array()))
                if (!v.contains(r.get<std::string>())) fail("missing property " + r.get<std::string>());
            const auto props = s.value("properties", nlohmann::json::object());
            for (const auto& [key, sub] : v.items()) {
                if (props.contains(key)) walk(sub, props.at(key), at + "." + key, errors);
                else if (s.contains("additionalProperties") && s.at("additionalProperties") == false)
                    fail("unexpected property " + key);
            }
        }
        if (v.is_array()) {
            if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>()) fail("too few items");
            if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>()) fail("too many items");
            const auto prefix = s.value("prefixItems", nlohmann::json::array());
            for (std::size_t i = 0; i < v.size(); ++i) {
                const std::string here = at + "[" + std::to_string(i) + "]";
                if (i < prefix.size()) walk(v[i], prefix[i], here, errors);
                else if (s.contains("items")) walk(v[i], s.at("items"), here, errors);
            }
        }
    }

    std::string dir_;
};

}  // namespace anno::test
