#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace enrolkit {

using TokenList = std::vector<std::string>;

// Transcript normalisation: lowercase, drop punctuation code points,
// split on whitespace. Operates on UTF-8; lowercasing covers ASCII,
// Latin-1 Supplement and Latin Extended-A (enough for Icelandic and most
// European orthographies).
TokenList tokenize_transcript(std::string_view text);

bool is_punctuation(char32_t cp);
char32_t to_lower(char32_t cp);

// Decodes UTF-8; malformed bytes are mapped to U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace enrolkit
