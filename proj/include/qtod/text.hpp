// Copyright 2026 The qtod Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace qtod {

inline bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Bytes >= 0x80 are treated as word characters so UTF-8 text survives tokenization.
inline bool is_word_char(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline bool is_ascii_punct(unsigned char c) {
    return c < 0x80 && !is_word_char(c) && !is_space(c) && c > 0x20 && c != 0x7f;
}

inline char ascii_lower(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = ascii_lower(c);
    return out;
}

inline std::string_view trim(std::string_view s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && is_space(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && is_space(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

template <typename Range>
std::string join(const Range& parts, std::string_view sep) {
    std::string out;
    bool first = true;
    for (const auto& part : parts) {
        if (!first) out += sep;
        out += part;
        first = false;
    }
    return out;
}

inline std::vector<std::string> split(std::string_view s, std::string_view sep) {
    std::vector<std::string> out;
    if (sep.empty()) {
        out.emplace_back(s);
        return out;
    }
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            return out;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + sep.size();
    }
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Retrieval tokenizer: lowercase maximal runs of word characters.
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string current;
    for (char ch : s) {
        if (is_word_char(static_cast<unsigned char>(ch))) {
            current.push_back(ascii_lower(ch));
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

/// Canonical form used for entity matching and dedup keys.
///
/// Lowercases ASCII, maps '_' and every ASCII punctuation character to a space,
/// collapses whitespace runs and trims. Idempotent.
struct Canonicalizer {
    std::string operator()(std::string_view s) const {
        std::string out;
        out.reserve(s.size());
        bool pending_space = false;
        for (char ch : s) {
            auto c = static_cast<unsigned char>(ch);
            if (is_space(c) || c == '_' || is_ascii_punct(c) || c < 0x20 || c == 0x7f) {
                pending_space = !out.empty();
                continue;
            }
            if (pending_space) {
                out.push_back(' ');
                pending_space = false;
            }
            out.push_back(ascii_lower(ch));
        }
        return out;
    }
};

inline std::string canonicalize(std::string_view s) { return Canonicalizer{}(s); }

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace qtod
