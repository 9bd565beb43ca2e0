#pragma once

// Annotator attributes rendered as pseudo-tokens and placed ahead of the words.

#include <map>
#include <string>
#include <vector>

#include "anno/active.hpp"
#include "anno/schema.hpp"

namespace anno {

// Half-open bins [edges[i], edges[i+1]). Integral edges render as "20-29".
struct Binning {
    std::vector<double> edges;

    static Binning decades(double lo = 0, double hi = 130);
    std::string label(double value) const;
};

struct DemographicConfig {
    std::vector<std::string> features;     // declared order; empty disables augmentation
    std::map<std::string, Binning> bins;   // features without bins render their raw value

    // {"features": [...], "bins": {"age": "decade" | [edges...] | null}}.
    // Absent "bins" means decade bins for "age"; absent "features" means ["age"].
    static DemographicConfig from_json(const json& node);
    json to_json() const;
};

// One "name=value" pseudo-token per declared feature. Throws MissingFeature.
std::vector<std::string> encode_demographics(const json& profile, const DemographicConfig& config);

// Pseudo-tokens followed by the instance's words; labels are untouched.
Instance augment(const Instance& inst, const json& profile, const DemographicConfig& config);

template <typename Scalar>
std::map<std::string, TaskSuggestion> suggest_for_annotator(const BasicMultiTaskModel<Scalar>& model,
                                                            const Instance& inst, const json& profile,
                                                            const DemographicConfig& config,
                                                            ConfidenceAgg agg = ConfidenceAgg::Mean) {
    return suggest(model, augment(inst, profile, config), agg);
}

}  // namespace anno
