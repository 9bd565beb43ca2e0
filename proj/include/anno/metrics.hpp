#pragma once

// Token accuracy and entity-level precision/recall/F1 over BIO tag sequences.

#include <string>
#include <vector>

namespace anno {

// Token span [begin, end) with its entity type.
struct Chunk {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string type;

    bool operator==(const Chunk&) const = default;
};

enum class LabelScheme { BIO };

// Chunks in conlleval's reading of BIO: I-X after O or after another type
// opens a chunk. Tags that are neither B-* nor I-* count as outside.
std::vector<Chunk> extract_chunks(const std::vector<std::string>& tags);

struct SequenceMetrics {
    double accuracy = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t tokens = 0;
    std::size_t correct_tokens = 0;
    std::size_t gold_chunks = 0;
    std::size_t predicted_chunks = 0;
    std::size_t matched_chunks = 0;
};

// With no gold and no predicted chunks P, R and F1 are 1. Throws LengthMismatch.
SequenceMetrics evaluate_sequence_labeling(const std::vector<std::vector<std::string>>& predictions,
                                           const std::vector<std::vector<std::string>>& golds,
                                           LabelScheme scheme = LabelScheme::BIO);

}  // namespace anno
