#include "anno/text.hpp"

#include <cctype>

namespace anno {

namespace {
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t cp = 0;
    Token current;
    bool inside = false;
    for (unsigned char c : text) {
        const bool continuation = (c & 0xC0) == 0x80;
        if (!continuation && is_space(c)) {
            if (inside) {
                current.end = cp;
                tokens.push_back(std::move(current));
                current = Token{};
                inside = false;
            }
        } else {
            if (!inside) {
                current.start = cp;
                inside = true;
            }
            current.text.push_back(static_cast<char>(c));
        }
        if (!continuation) ++cp;
    }
    if (inside) {
        current.end = cp;
        tokens.push_back(std::move(current));
    }
    return tokens;
}

std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.text);
    return out;
}

std::vector<std::string> split_whitespace(std::string_view text) { return token_texts(tokenize(text)); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

bool is_begin(std::string_view tag) { return tag.size() > 2 && tag.substr(0, 2) == "B-"; }
bool is_inside(std::string_view tag) { return tag.size() > 2 && tag.substr(0, 2) == "I-"; }

std::string_view tag_type(std::string_view tag) {
    if (is_begin(tag) || is_inside(tag)) return tag.substr(2);
    return {};
}

LabeledSpanSet tags_to_spans(const std::vector<Token>& tokens, const std::vector<std::string>& tags) {
    LabeledSpanSet out;
    const std::size_t n = std::min(tokens.size(), tags.size());
    std::size_t i = 0;
    while (i < n) {
        if (!is_begin(tags[i]) && !is_inside(tags[i])) {
            ++i;
            continue;
        }
        const std::string_view type = tag_type(tags[i]);
        std::size_t j = i + 1;
        while (j < n && is_inside(tags[j]) && tag_type(tags[j]) == type) ++j;
        out.spans.push_back({tokens[i].start, tokens[j - 1].end, std::string(type)});
        i = j;
    }
    return out;
}

std::vector<std::string> spans_to_tags(const std::vector<Token>& tokens, const LabeledSpanSet& spans) {
    std::vector<std::string> tags(tokens.size(), "O");
    for (const auto& span : spans.spans) {
        bool first = true;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i].start >= span.start && tokens[i].end <= span.end) {
                tags[i] = (first ? "B-" : "I-") + span.label;
                first = false;
            }
        }
    }
    return tags;
}

std::string to_lower(std::string_view text) {
    std::string out(text);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace anno
