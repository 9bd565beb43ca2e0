#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "anno/schema.hpp"

namespace anno {

struct Token {
    std::string text;
    std::size_t start = 0;  // code-point offsets into the source
    std::size_t end = 0;
};

// Whitespace tokenization keeping code-point offsets, so token tags can be
// mapped onto character spans and back.
std::vector<Token> tokenize(std::string_view text);
std::vector<std::string> token_texts(const std::vector<Token>& tokens);

std::vector<std::string> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// B-X / I-X / O helpers. Tags without a B- or I- prefix count as outside.
std::string_view tag_type(std::string_view tag);
bool is_begin(std::string_view tag);
bool is_inside(std::string_view tag);

LabeledSpanSet tags_to_spans(const std::vector<Token>& tokens, const std::vector<std::string>& tags);
// Tokens lying inside a span take B-/I- of its label; all others are "O".
std::vector<std::string> spans_to_tags(const std::vector<Token>& tokens, const LabeledSpanSet& spans);

std::string to_lower(std::string_view text);

}  // namespace anno
