#include "anno/metrics.hpp"

#include <algorithm>

#include "anno/error.hpp"
#include "anno/text.hpp"

namespace anno {

std::vector<Chunk> extract_chunks(const std::vector<std::string>& tags) {
    std::vector<Chunk> out;
    bool open = false;
    Chunk current;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& tag = tags[i];
        const bool begin = is_begin(tag);
        const bool inside = is_inside(tag);
        const std::string type = begin || inside ? std::string(tag_type(tag)) : std::string();
        const bool continues = open && inside && type == current.type;
        if (open && !continues) {
            current.end = i;
            out.push_back(current);
            open = false;
        }
        if ((begin || inside) && !continues) {
            current = Chunk{i, i, type};
            open = true;
        }
    }
    if (open) {
        current.end = tags.size();
        out.push_back(current);
    }
    return out;
}

SequenceMetrics evaluate_sequence_labeling(const std::vector<std::vector<std::string>>& predictions,
                                           const std::vector<std::vector<std::string>>& golds, LabelScheme) {
    if (predictions.size() != golds.size())
        throw Error(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " predicted sequences for " +
                                                   std::to_string(golds.size()) + " gold sequences");
    SequenceMetrics m;
    for (std::size_t s = 0; s < golds.size(); ++s) {
        const auto& pred = predictions[s];
        const auto& gold = golds[s];
        if (pred.size() != gold.size())
            throw Error(ErrorCode::LengthMismatch, "sequence " + std::to_string(s) + " has " +
                                                       std::to_string(pred.size()) + " predicted tags for " +
                                                       std::to_string(gold.size()) + " gold tags");
        m.tokens += gold.size();
        for (std::size_t i = 0; i < gold.size(); ++i) m.correct_tokens += pred[i] == gold[i];
        auto gc = extract_chunks(gold);
        auto pc = extract_chunks(pred);
        m.gold_chunks += gc.size();
        m.predicted_chunks += pc.size();
        for (const auto& c : pc) m.matched_chunks += std::find(gc.begin(), gc.end(), c) != gc.end();
    }
    m.accuracy = m.tokens ? static_cast<double>(m.correct_tokens) / static_cast<double>(m.tokens) : 1.0;
    if (m.gold_chunks == 0 && m.predicted_chunks == 0) {
        m.precision = m.recall = m.f1 = 1.0;
        return m;
    }
    m.precision = m.predicted_chunks ? static_cast<double>(m.matched_chunks) / static_cast<double>(m.predicted_chunks) : 0.0;
    m.recall = m.gold_chunks ? static_cast<double>(m.matched_chunks) / static_cast<double>(m.gold_chunks) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

}  // namespace anno
