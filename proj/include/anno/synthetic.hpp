#pragma once

// Desk-scale corpora: a two-layer tagged corpus (chunks and entities) and a
// five-way sentiment corpus whose labels depend on the annotator's age.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anno/schema.hpp"

namespace anno {

struct TaggedSentence {
    std::vector<std::string> tokens;
    std::map<std::string, std::vector<std::string>> tags;  // task -> one tag per token
};

struct SequenceCorpus {
    std::vector<std::string> task_ids;
    std::map<std::string, std::vector<std::string>> label_sets;  // sorted, "O" first when present
    std::vector<TaggedSentence> sentences;
};

// Rebuilds label_sets from the sentences.
void collect_label_sets(SequenceCorpus& corpus);

enum class WordClass { Det, Adj, Noun, First, Last, Org, OrgSuffix, Loc, Verb, Prep, Punct };

// A generator state emits one word of `words` tagged with `chunk` and `entity`.
struct TagState {
    WordClass words = WordClass::Noun;
    std::string chunk;
    std::string entity;
};

struct TransitionTable {
    std::map<std::string, TagState> states;
    // from -> (to, weight); "START" and "END" are implicit.
    std::map<std::string, std::vector<std::pair<std::string, double>>> edges;
};

// Entity-bearing and entity-free grammars used by default.
TransitionTable default_entity_table();
TransitionTable default_plain_table();

// Throws InvalidParams when an edge can place I-X after anything but B-X/I-X
// in either tag layer, or when a state is unreachable or undefined.
void validate_transition_table(const TransitionTable& table);

struct SyntheticParams {
    std::size_t sentences = 2400;
    double plain_fraction = 0.5;     // share of sentences drawn from the entity-free table
    std::size_t first_names = 120;
    std::size_t last_names = 120;
    std::size_t locations = 80;
    std::size_t organisations = 60;
    std::size_t nouns = 200;
    std::size_t adjectives = 60;
    std::size_t verbs = 60;
    std::size_t shared_last_loc = 20;  // surnames that double as place names
    std::size_t max_tokens = 30;
    TransitionTable entity_table = default_entity_table();
    TransitionTable plain_table = default_plain_table();
};

// Tasks "cp" (chunks) and "ner" (entities). Deterministic per seed.
SequenceCorpus generate_two_task_corpus(const SyntheticParams& params, std::uint64_t seed);

// CoNLL-style columns, blank-line separated; -DOCSTART- lines are skipped.
// `columns` maps a task id to its column index (token is column 0).
SequenceCorpus read_conll(const std::string& path, const std::map<std::string, std::size_t>& columns);
SequenceCorpus parse_conll(std::string_view text, const std::map<std::string, std::size_t>& columns);

struct DemographicParams {
    std::size_t classes = 20;
    std::size_t keywords_per_class = 6;
    std::size_t keywords_per_statement = 2;
    std::size_t filler_vocab = 120;
    std::size_t filler_per_statement = 4;
    std::size_t train_items = 2000;
    std::size_t test_items = 1000;
    int old_threshold = 50;
    int min_age = 18;
    int max_age = 79;
};

struct DemographicItem {
    std::vector<std::string> tokens;
    std::size_t text_class = 0;
    int age = 0;
    json profile;
    std::string label;
};

struct DemographicCorpus {
    std::vector<std::string> labels;   // negative .. positive
    std::vector<bool> age_dependent;   // per text class
    std::vector<DemographicItem> train;
    std::vector<DemographicItem> test;
};

const std::vector<std::string>& sentiment_labels();

// Class c has base label c mod 5; for positive-leaning classes (base >= 3)
// annotators at or above the age threshold give the mirrored label 4 - base.
std::string demographic_label(std::size_t text_class, int age, const DemographicParams& params);
bool is_age_dependent(std::size_t text_class);

// Classes are stratified in both splits; test ages alternate young/old.
DemographicCorpus generate_demographic_corpus(const DemographicParams& params, std::uint64_t seed);

// Best accuracy any text-only predictor can reach on `items`, by enumerating
// the (class, label) counts.
double text_only_bayes_accuracy(const std::vector<DemographicItem>& items);

}  // namespace anno
