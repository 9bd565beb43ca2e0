#include "anno/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "anno/error.hpp"
#include "anno/text.hpp"

namespace anno {

namespace {

const std::vector<std::string> kOnsets = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                          "br", "dr", "st", "tr", "gl", "sk", "ch", "sh", "th", "pl"};
const std::vector<std::string> kVowels = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};
const std::vector<std::string> kCodas = {"", "", "", "n", "r", "l", "s", "m", "k"};

std::string syllables(std::mt19937_64& rng, std::size_t count) {
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        out += kOnsets[rng() % kOnsets.size()];
        out += kVowels[rng() % kVowels.size()];
        out += kCodas[rng() % kCodas.size()];
    }
    return out;
}

std::string capitalize(std::string word) {
    if (!word.empty() && word[0] >= 'a' && word[0] <= 'z') word[0] = static_cast<char>(word[0] - 'a' + 'A');
    return word;
}

// Draws `count` distinct words; `used` keeps vocabularies disjoint.
std::vector<std::string> make_vocab(std::mt19937_64& rng, std::set<std::string>& used, std::size_t count,
                                    std::size_t min_syll, std::size_t max_syll,
                                    const std::vector<std::string>& suffixes, bool capital) {
    std::vector<std::string> out;
    std::size_t attempts = 0;
    while (out.size() < count) {
        if (++attempts > count * 1000) throw Error(ErrorCode::InvalidParams, "vocabulary request too large");
        const std::size_t n = min_syll + rng() % (max_syll - min_syll + 1);
        std::string word = syllables(rng, n);
        if (!suffixes.empty()) word += suffixes[rng() % suffixes.size()];
        if (capital) word = capitalize(word);
        if (used.insert(word).second) out.push_back(word);
    }
    return out;
}

// Zipf-like weights so that each vocabulary has frequent and rare words.
std::discrete_distribution<std::size_t> zipf(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), 0.8);
    return {w.begin(), w.end()};
}

TagState st(WordClass words, std::string chunk, std::string entity = "O") {
    return TagState{words, std::move(chunk), std::move(entity)};
}

// Noun phrase states under a prefix (S_, O_, P_) for subject, object and
// prepositional positions.
void add_common_np(TransitionTable& t, const std::string& p, std::vector<std::pair<std::string, double>> after) {
    t.states[p + "DET"] = st(WordClass::Det, "B-NP");
    t.states[p + "ADJ"] = st(WordClass::Adj, "I-NP");
    t.states[p + "NOUN"] = st(WordClass::Noun, "I-NP");
    t.edges[p + "DET"] = {{p + "ADJ", 0.4}, {p + "NOUN", 0.6}};
    t.edges[p + "ADJ"] = {{p + "ADJ", 0.15}, {p + "NOUN", 0.85}};
    t.edges[p + "NOUN"] = std::move(after);
}

}  // namespace

void collect_label_sets(SequenceCorpus& corpus) {
    corpus.label_sets.clear();
    for (const auto& task : corpus.task_ids) {
        std::set<std::string> seen;
        for (const auto& s : corpus.sentences) {
            auto it = s.tags.find(task);
            if (it != s.tags.end()) seen.insert(it->second.begin(), it->second.end());
        }
        std::vector<std::string> labels;
        if (seen.erase("O")) labels.push_back("O");
        labels.insert(labels.end(), seen.begin(), seen.end());
        corpus.label_sets[task] = std::move(labels);
    }
}

TransitionTable default_entity_table() {
    TransitionTable t;
    const std::vector<std::pair<std::string, double>> after_object = {{"PREP", 0.4}, {"PUNCT", 0.6}};
    const std::vector<std::pair<std::string, double>> after_pp = {{"PREP", 0.3}, {"PUNCT", 0.7}};

    t.edges["START"] = {{"S_DET", 0.4}, {"S_FIRST", 0.3}, {"S_ORG", 0.3}};
    add_common_np(t, "S_", {{"VERB", 1.0}});
    t.states["S_FIRST"] = st(WordClass::First, "B-NP", "B-PER");
    t.states["S_LAST"] = st(WordClass::Last, "I-NP", "I-PER");
    t.states["S_ORG"] = st(WordClass::Org, "B-NP", "B-ORG");
    t.states["S_ORGSFX"] = st(WordClass::OrgSuffix, "I-NP", "I-ORG");
    t.edges["S_FIRST"] = {{"S_LAST", 0.6}, {"VERB", 0.4}};
    t.edges["S_LAST"] = {{"VERB", 1.0}};
    t.edges["S_ORG"] = {{"S_ORGSFX", 0.7}, {"VERB", 0.3}};
    t.edges["S_ORGSFX"] = {{"VERB", 1.0}};

    t.states["VERB"] = st(WordClass::Verb, "B-VP");
    t.edges["VERB"] = {{"O_DET", 0.3}, {"O_FIRST", 0.2}, {"O_ORG", 0.15}, {"PREP", 0.25}, {"PUNCT", 0.1}};

    add_common_np(t, "O_", after_object);
    t.states["O_FIRST"] = st(WordClass::First, "B-NP", "B-PER");
    t.states["O_LAST"] = st(WordClass::Last, "I-NP", "I-PER");
    t.states["O_ORG"] = st(WordClass::Org, "B-NP", "B-ORG");
    t.states["O_ORGSFX"] = st(WordClass::OrgSuffix, "I-NP", "I-ORG");
    t.edges["O_FIRST"] = {{"O_LAST", 0.6}, {"PREP", 0.2}, {"PUNCT", 0.2}};
    t.edges["O_LAST"] = after_object;
    t.edges["O_ORG"] = {{"O_ORGSFX", 0.7}, {"PREP", 0.15}, {"PUNCT", 0.15}};
    t.edges["O_ORGSFX"] = after_object;

    t.states["PREP"] = st(WordClass::Prep, "B-PP");
    t.edges["PREP"] = {{"P_DET", 0.35}, {"P_LOC", 0.45}, {"P_ORG", 0.2}};
    add_common_np(t, "P_", after_pp);
    t.states["P_LOC"] = st(WordClass::Loc, "B-NP", "B-LOC");
    t.states["P_ORG"] = st(WordClass::Org, "B-NP", "B-ORG");
    t.states["P_ORGSFX"] = st(WordClass::OrgSuffix, "I-NP", "I-ORG");
    t.edges["P_LOC"] = after_pp;
    t.edges["P_ORG"] = {{"P_ORGSFX", 0.7}, {"PREP", 0.1}, {"PUNCT", 0.2}};
    t.edges["P_ORGSFX"] = after_pp;

    t.states["PUNCT"] = st(WordClass::Punct, "O");
    t.edges["PUNCT"] = {{"END", 1.0}};
    return t;
}

TransitionTable default_plain_table() {
    TransitionTable t;
    t.edges["START"] = {{"S_DET", 1.0}};
    add_common_np(t, "S_", {{"VERB", 1.0}});
    t.states["VERB"] = st(WordClass::Verb, "B-VP");
    t.edges["VERB"] = {{"O_DET", 0.45}, {"PREP", 0.35}, {"PUNCT", 0.2}};
    add_common_np(t, "O_", {{"PREP", 0.4}, {"PUNCT", 0.6}});
    t.states["PREP"] = st(WordClass::Prep, "B-PP");
    t.edges["PREP"] = {{"P_DET", 1.0}};
    add_common_np(t, "P_", {{"PREP", 0.3}, {"PUNCT", 0.7}});
    t.states["PUNCT"] = st(WordClass::Punct, "O");
    t.edges["PUNCT"] = {{"END", 1.0}};
    return t;
}

void validate_transition_table(const TransitionTable& table) {
    auto tag_of = [&](const std::string& state, bool chunk) -> std::string {
        if (state == "START" || state == "END") return "O";
        auto it = table.states.find(state);
        if (it == table.states.end()) throw Error(ErrorCode::InvalidParams, "undefined state " + state);
        return chunk ? it->second.chunk : it->second.entity;
    };
    auto may_follow = [](const std::string& prev, const std::string& next) {
        if (!is_inside(next)) return true;
        return (is_begin(prev) || is_inside(prev)) && tag_type(prev) == tag_type(next);
    };
    if (!table.edges.count("START")) throw Error(ErrorCode::InvalidParams, "transition table has no START edges");
    for (const auto& [from, outs] : table.edges) {
        if (outs.empty()) throw Error(ErrorCode::InvalidParams, "state " + from + " has no outgoing edges");
        for (const auto& [to, weight] : outs) {
            if (!(weight > 0)) throw Error(ErrorCode::InvalidParams, "edge " + from + "->" + to + " has weight <= 0");
            if (to != "END" && !table.edges.count(to))
                throw Error(ErrorCode::InvalidParams, "state " + to + " has no outgoing edges");
            for (bool chunk : {true, false}) {
                const auto prev = tag_of(from, chunk);
                const auto next = tag_of(to, chunk);
                if (!may_follow(prev, next))
                    throw Error(ErrorCode::InvalidParams,
                                "edge " + from + "->" + to + " puts " + next + " after " + prev);
            }
        }
    }
    // Every named state must be reachable from START.
    std::set<std::string> seen{"START"};
    std::vector<std::string> frontier{"START"};
    while (!frontier.empty()) {
        auto s = frontier.back();
        frontier.pop_back();
        auto it = table.edges.find(s);
        if (it == table.edges.end()) continue;
        for (const auto& [to, w] : it->second)
            if (seen.insert(to).second) frontier.push_back(to);
    }
    for (const auto& [name, state] : table.states)
        if (!seen.count(name)) throw Error(ErrorCode::InvalidParams, "state " + name + " is unreachable");
}

SequenceCorpus generate_two_task_corpus(const SyntheticParams& params, std::uint64_t seed) {
    validate_transition_table(params.entity_table);
    validate_transition_table(params.plain_table);
    if (params.plain_fraction < 0 || params.plain_fraction > 1)
        throw Error(ErrorCode::InvalidParams, "plain_fraction must lie in [0, 1]");
    if (params.shared_last_loc > params.last_names)
        throw Error(ErrorCode::InvalidParams, "shared_last_loc exceeds last_names");

    std::mt19937_64 rng(seed);
    std::set<std::string> used{"The", "the", "a", "this", "every", "some", "in", "on", "near", "with", "from", "at", "."};
    std::map<WordClass, std::vector<std::string>> vocab;
    vocab[WordClass::Det] = {"the", "a", "this", "every", "some"};
    vocab[WordClass::Prep] = {"in", "on", "near", "with", "from", "at"};
    vocab[WordClass::Punct] = {"."};
    vocab[WordClass::OrgSuffix] = {"Corp", "Inc", "Group", "Union", "Bank", "Agency"};
    for (const auto& s : vocab[WordClass::OrgSuffix]) used.insert(s);
    vocab[WordClass::First] = make_vocab(rng, used, params.first_names, 1, 2, {"a", "o", "el", "in"}, true);
    vocab[WordClass::Last] = make_vocab(rng, used, params.last_names, 1, 2, {"son", "ez", "ski", "ov", "ard"}, true);
    vocab[WordClass::Loc] = make_vocab(rng, used, params.locations - std::min(params.locations, params.shared_last_loc),
                                       1, 2, {"burg", "ville", "ton", "ia", "stad"}, true);
    for (std::size_t i = 0; i < params.shared_last_loc && i < params.locations; ++i)
        vocab[WordClass::Loc].push_back(vocab[WordClass::Last][i * 3 % params.last_names]);
    std::shuffle(vocab[WordClass::Loc].begin(), vocab[WordClass::Loc].end(), rng);
    vocab[WordClass::Org] = make_vocab(rng, used, params.organisations, 2, 3, {}, true);
    vocab[WordClass::Noun] = make_vocab(rng, used, params.nouns, 1, 2, {}, false);
    vocab[WordClass::Adj] = make_vocab(rng, used, params.adjectives, 1, 2, {"ous", "ive", "al", "ic"}, false);
    vocab[WordClass::Verb] = make_vocab(rng, used, params.verbs, 1, 2, {"ed", "es"}, false);
    for (const auto& [cls, words] : vocab)
        if (words.empty()) throw Error(ErrorCode::InvalidParams, "empty vocabulary");

    std::map<WordClass, std::discrete_distribution<std::size_t>> pick;
    for (const auto& [cls, words] : vocab) pick.emplace(cls, zipf(words.size()));

    auto walk = [&](const TransitionTable& table, TaggedSentence& out) {
        std::string state = "START";
        for (;;) {
            const auto& outs = table.edges.at(state);
            std::vector<double> w;
            for (const auto& e : outs) w.push_back(e.second);
            std::discrete_distribution<std::size_t> next(w.begin(), w.end());
            state = outs[next(rng)].first;
            if (state == "END") return;
            const TagState& s = table.states.at(state);
            out.tokens.push_back(vocab[s.words][pick.at(s.words)(rng)]);
            out.tags["cp"].push_back(s.chunk);
            out.tags["ner"].push_back(s.entity);
        }
    };

    SequenceCorpus corpus;
    corpus.task_ids = {"cp", "ner"};
    std::bernoulli_distribution plain(params.plain_fraction);
    while (corpus.sentences.size() < params.sentences) {
        TaggedSentence s;
        walk(plain(rng) ? params.plain_table : params.entity_table, s);
        if (s.tokens.empty() || s.tokens.size() > params.max_tokens) continue;
        s.tokens[0] = capitalize(s.tokens[0]);
        corpus.sentences.push_back(std::move(s));
    }
    collect_label_sets(corpus);
    return corpus;
}

SequenceCorpus parse_conll(std::string_view text, const std::map<std::string, std::size_t>& columns) {
    if (columns.empty()) throw Error(ErrorCode::InvalidParams, "no task columns given");
    SequenceCorpus corpus;
    for (const auto& [task, col] : columns) {
        if (col == 0) throw Error(ErrorCode::InvalidParams, "column 0 holds the token, not task " + task);
        corpus.task_ids.push_back(task);
    }
    TaggedSentence current;
    auto flush = [&] {
        if (!current.tokens.empty()) corpus.sentences.push_back(std::move(current));
        current = TaggedSentence{};
    };
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        auto fields = split_whitespace(line);
        if (fields.empty()) {
            flush();
            continue;
        }
        if (fields[0] == "-DOCSTART-") continue;
        current.tokens.push_back(fields[0]);
        for (const auto& [task, col] : columns) {
            if (col >= fields.size())
                throw Error(ErrorCode::ValidationFailed, "line " + std::to_string(line_no) + " has " +
                                                             std::to_string(fields.size()) + " columns, task " + task +
                                                             " reads column " + std::to_string(col));
            current.tags[task].push_back(fields[col]);
        }
        if (nl == text.size()) break;
    }
    flush();
    collect_label_sets(corpus);
    return corpus;
}

SequenceCorpus read_conll(const std::string& path, const std::map<std::string, std::size_t>& columns) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidParams, "cannot open corpus " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_conll(buf.str(), columns);
}

const std::vector<std::string>& sentiment_labels() {
    static const std::vector<std::string> labels = {"negative", "somewhat negative", "neutral", "somewhat positive",
                                                    "positive"};
    return labels;
}

bool is_age_dependent(std::size_t text_class) { return text_class % 5 >= 3; }

std::string demographic_label(std::size_t text_class, int age, const DemographicParams& params) {
    const std::size_t base = text_class % 5;
    const bool old = age >= params.old_threshold;
    return sentiment_labels()[is_age_dependent(text_class) && old ? 4 - base : base];
}

DemographicCorpus generate_demographic_corpus(const DemographicParams& params, std::uint64_t seed) {
    if (params.classes == 0 || params.keywords_per_statement > params.keywords_per_class ||
        params.min_age >= params.old_threshold || params.old_threshold > params.max_age)
        throw Error(ErrorCode::InvalidParams, "inconsistent demographic corpus parameters");
    std::mt19937_64 rng(seed);
    std::set<std::string> used;
    std::vector<std::vector<std::string>> keywords;
    for (std::size_t c = 0; c < params.classes; ++c)
        keywords.push_back(make_vocab(rng, used, params.keywords_per_class, 2, 3, {}, false));
    const auto filler = make_vocab(rng, used, params.filler_vocab, 1, 2, {}, false);

    DemographicCorpus corpus;
    corpus.labels = sentiment_labels();
    for (std::size_t c = 0; c < params.classes; ++c) corpus.age_dependent.push_back(is_age_dependent(c));

    auto statement = [&](std::size_t c) {
        std::vector<std::string> kw = keywords[c];
        std::shuffle(kw.begin(), kw.end(), rng);
        std::vector<std::string> tokens(kw.begin(), kw.begin() + static_cast<std::ptrdiff_t>(params.keywords_per_statement));
        for (std::size_t i = 0; i < params.filler_per_statement; ++i) tokens.push_back(filler[rng() % filler.size()]);
        std::shuffle(tokens.begin(), tokens.end(), rng);
        return tokens;
    };
    auto item = [&](std::size_t c, int age) {
        DemographicItem it;
        it.tokens = statement(c);
        it.text_class = c;
        it.age = age;
        it.profile = json{{"age", age}};
        it.label = demographic_label(c, age, params);
        return it;
    };
    std::uniform_int_distribution<int> any_age(params.min_age, params.max_age);
    std::uniform_int_distribution<int> young(params.min_age, params.old_threshold - 1);
    std::uniform_int_distribution<int> old(params.old_threshold, params.max_age);
    for (std::size_t i = 0; i < params.train_items; ++i) corpus.train.push_back(item(i % params.classes, any_age(rng)));
    for (std::size_t i = 0; i < params.test_items; ++i) {
        const bool is_old = (i / params.classes) % 2 == 1;
        corpus.test.push_back(item(i % params.classes, is_old ? old(rng) : young(rng)));
    }
    return corpus;
}

double text_only_bayes_accuracy(const std::vector<DemographicItem>& items) {
    if (items.empty()) return 1.0;
    std::map<std::size_t, std::map<std::string, std::size_t>> counts;
    for (const auto& it : items) ++counts[it.text_class][it.label];
    std::size_t best = 0;
    for (const auto& [c, by_label] : counts) {
        std::size_t m = 0;
        for (const auto& [label, n] : by_label) m = std::max(m, n);
        best += m;
    }
    return static_cast<double>(best) / static_cast<double>(items.size());
}

}  // namespace anno
