#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hncse/errors.hpp"

namespace hncse {

/// Decodes one UTF-8 code point starting at `pos`. Returns the code point and
/// advances `pos`, or returns -1 on malformed input (pos left unchanged).
inline std::int64_t utf8_next(std::string_view s, std::size_t& pos) {
    if (pos >= s.size()) return -1;
    const auto b0 = static_cast<unsigned char>(s[pos]);
    std::size_t len;
    std::uint32_t cp;
    if (b0 < 0x80) {
        pos += 1;
        return b0;
    } else if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return -1;
    }
    if (pos + len > s.size()) return -1;
    for (std::size_t i = 1; i < len; ++i) {
        const auto b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xC0) != 0x80) return -1;
        cp = (cp << 6) | (b & 0x3F);
    }
    // reject overlong encodings and surrogate/range violations
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return -1;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return -1;
    pos += len;
    return cp;
}

inline bool is_valid_utf8(std::string_view s) {
    std::size_t pos = 0;
    while (pos < s.size()) {
        if (utf8_next(s, pos) < 0) return false;
    }
    return true;
}

inline bool is_unicode_space(std::int64_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
        case 0x20: case 0x85: case 0xA0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

/// Splits text into tokens: split on Unicode whitespace, ASCII-lowercase,
/// strip leading/trailing ASCII punctuation per token. Tokens that become
/// empty are dropped. Throws Utf8Error on malformed input.
inline std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t pos = 0;
    auto flush = [&] {
        std::size_t b = 0, e = current.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
        if (e > b) tokens.emplace_back(current.substr(b, e - b));
        current.clear();
    };
    while (pos < text.size()) {
        const std::size_t start = pos;
        const std::int64_t cp = utf8_next(text, pos);
        if (cp < 0) raise(ErrorKind::Utf8Error, "split_tokens: malformed UTF-8");
        if (is_unicode_space(cp)) {
            flush();
        } else if (cp < 0x80) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(cp))));
        } else {
            current.append(text.substr(start, pos - start));
        }
    }
    flush();
    return tokens;
}

}  // namespace hncse
