#include "anno/demographic.hpp"

#include <cmath>

namespace anno {

namespace {

std::string format_number(double v) {
    if (std::floor(v) == v && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    return json(v).dump();
}

bool integral(double v) { return std::floor(v) == v; }

}  // namespace

Binning Binning::decades(double lo, double hi) {
    Binning b;
    for (double e = lo; e <= hi; e += 10) b.edges.push_back(e);
    return b;
}

std::string Binning::label(double value) const {
    if (edges.empty()) return format_number(value);
    if (value < edges.front()) return "<" + format_number(edges.front());
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        const double lo = edges[i], hi = edges[i + 1];
        if (value >= lo && value < hi) {
            if (integral(lo) && integral(hi)) return format_number(lo) + "-" + format_number(hi - 1);
            return format_number(lo) + "-" + format_number(hi);
        }
    }
    return ">=" + format_number(edges.back());
}

DemographicConfig DemographicConfig::from_json(const json& node) {
    DemographicConfig cfg;
    if (!node.is_object()) throw Error(ErrorCode::InvalidParams, "demographic config must be an object");
    if (node.contains("features")) {
        cfg.features = node.at("features").get<std::vector<std::string>>();
    } else {
        cfg.features = {"age"};
    }
    if (!node.contains("bins")) {
        cfg.bins["age"] = Binning::decades();
    } else {
        for (const auto& [name, spec] : node.at("bins").items()) {
            if (spec.is_null()) continue;
            if (spec.is_string() && spec.get<std::string>() == "decade") {
                cfg.bins[name] = Binning::decades();
            } else if (spec.is_array()) {
                Binning b{spec.get<std::vector<double>>()};
                if (b.edges.size() < 2 || !std::is_sorted(b.edges.begin(), b.edges.end()) ||
                    std::adjacent_find(b.edges.begin(), b.edges.end()) != b.edges.end())
                    throw Error(ErrorCode::InvalidParams, "bins for `" + name + "` need two or more increasing edges");
                cfg.bins[name] = std::move(b);
            } else {
                throw Error(ErrorCode::InvalidParams, "unsupported bins for `" + name + "`");
            }
        }
    }
    return cfg;
}

json DemographicConfig::to_json() const {
    json bins_node = json::object();
    for (const auto& [name, b] : bins) bins_node[name] = b.edges;
    return {{"features", features}, {"bins", bins_node}};
}

std::vector<std::string> encode_demographics(const json& profile, const DemographicConfig& config) {
    std::vector<std::string> out;
    for (const auto& name : config.features) {
        if (!profile.is_object() || !profile.contains(name) || profile.at(name).is_null())
            throw Error(ErrorCode::MissingFeature, "profile lacks demographic feature `" + name + "`");
        const json& value = profile.at(name);
        std::string rendered;
        if (value.is_number()) {
            auto it = config.bins.find(name);
            rendered = it == config.bins.end() ? format_number(value.get<double>()) : it->second.label(value.get<double>());
        } else if (value.is_string()) {
            rendered = value.get<std::string>();
        } else if (value.is_boolean()) {
            rendered = value.get<bool>() ? "true" : "false";
        } else {
            throw Error(ErrorCode::MissingFeature, "demographic feature `" + name + "` is not a scalar");
        }
        if (rendered.empty()) throw Error(ErrorCode::MissingFeature, "demographic feature `" + name + "` is empty");
        out.push_back(name + "=" + rendered);
    }
    return out;
}

Instance augment(const Instance& inst, const json& profile, const DemographicConfig& config) {
    Instance out = inst;
    if (config.features.empty()) return out;
    auto demo = encode_demographics(profile, config);
    out.tokens = demo;
    out.tokens.insert(out.tokens.end(), inst.tokens.begin(), inst.tokens.end());
    out.prefix_len = inst.prefix_len + demo.size();
    return out;
}

}  // namespace anno
