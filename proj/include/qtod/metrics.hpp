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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qtod/error.hpp"
#include "qtod/text.hpp"

namespace qtod {

// ---------------------------------------------------------------------------
// Entities
// ---------------------------------------------------------------------------

/// Longest-match entity scanner over canonicalized text. At each token the
/// longest lexicon phrase starting there wins and the scan resumes after it.
class EntityMatcher {
public:
    EntityMatcher() = default;

    template <typename Range>
    explicit EntityMatcher(const Range& lexicon) {
        for (const auto& entry : lexicon) add(entry);
    }

    void add(std::string_view entity) {
        auto canonical = canonicalize(entity);
        if (canonical.empty()) return;
        auto tokens = split_whitespace(canonical);
        max_len_ = std::max(max_len_, tokens.size());
        phrases_[tokens.front()].insert(std::move(canonical));
        ++size_;
    }

    std::size_t size() const noexcept { return size_; }

    std::set<std::string> extract(std::string_view text) const {
        std::set<std::string> out;
        const auto tokens = split_whitespace(canonicalize(text));
        std::size_t i = 0;
        while (i < tokens.size()) {
            auto it = phrases_.find(tokens[i]);
            std::size_t matched = 0;
            if (it != phrases_.end()) {
                const auto limit = std::min(max_len_, tokens.size() - i);
                std::string candidate;
                for (std::size_t len = 1; len <= limit; ++len) {
                    if (len > 1) candidate += ' ';
                    candidate += tokens[i + len - 1];
                    if (it->second.count(candidate)) matched = len;
                }
            }
            if (matched > 0) {
                std::string entity = tokens[i];
                for (std::size_t k = 1; k < matched; ++k) entity += ' ' + tokens[i + k];
                out.insert(std::move(entity));
                i += matched;
            } else {
                ++i;
            }
        }
        return out;
    }

private:
    std::unordered_map<std::string, std::set<std::string>> phrases_;  // first token -> phrases
    std::size_t max_len_ = 0;
    std::size_t size_ = 0;
};

inline std::set<std::string> extract_entities(std::string_view text, const EntityMatcher& matcher) {
    return matcher.extract(text);
}

struct EntityCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t turns = 0;  // turns that contributed (non-empty gold set)

    EntityCounts& operator+=(const EntityCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        turns += o.turns;
        return *this;
    }
    friend EntityCounts operator+(EntityCounts a, const EntityCounts& b) { return a += b; }
    friend bool operator==(const EntityCounts&, const EntityCounts&) = default;
};

struct EntityScore {
    EntityCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline EntityScore score_counts(const EntityCounts& c) {
    EntityScore s;
    s.counts = c;
    s.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    s.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

/// Counts for one turn. A turn whose gold set is empty contributes nothing.
inline EntityCounts entity_counts(const std::set<std::string>& pred, const std::set<std::string>& gold) {
    EntityCounts c;
    if (gold.empty()) return c;
    c.turns = 1;
    for (const auto& e : pred) {
        if (gold.count(e)) {
            ++c.tp;
        } else {
            ++c.fp;
        }
    }
    for (const auto& e : gold) {
        if (!pred.count(e)) ++c.fn;
    }
    return c;
}

/// Micro Entity-F1 over aligned prediction/gold response lists.
inline EntityScore entity_f1(std::span<const std::string> preds, std::span<const std::string> golds,
                             const EntityMatcher& matcher) {
    if (preds.size() != golds.size()) {
        throw ContractViolation("entity_f1: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(golds.size()) + " references");
    }
    EntityCounts total;
    for (std::size_t i = 0; i < preds.size(); ++i) total += entity_counts(matcher.extract(preds[i]), matcher.extract(golds[i]));
    return score_counts(total);
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Lowercases and splits on whitespace, with every ASCII punctuation character
/// its own token.
inline std::vector<std::string> bleu_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_space(c)) {
            flush();
        } else if (is_ascii_punct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            current.push_back(ascii_lower(ch));
        }
    }
    flush();
    return out;
}

struct BleuStats {
    std::array<std::uint64_t, 4> matches{};
    std::array<std::uint64_t, 4> totals{};
    std::uint64_t candidate_length = 0;
    std::uint64_t reference_length = 0;

    BleuStats& operator+=(const BleuStats& o) {
        for (std::size_t k = 0; k < 4; ++k) {
            matches[k] += o.matches[k];
            totals[k] += o.totals[k];
        }
        candidate_length += o.candidate_length;
        reference_length += o.reference_length;
        return *this;
    }
};

inline BleuStats bleu_sentence_stats(std::string_view pred, std::string_view ref) {
    BleuStats s;
    const auto p = bleu_tokens(pred);
    const auto r = bleu_tokens(ref);
    s.candidate_length = p.size();
    s.reference_length = r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, std::uint64_t> ref_counts;
        if (r.size() >= n) {
            for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
        }
        std::map<std::vector<std::string>, std::uint64_t> pred_counts;
        if (p.size() >= n) {
            for (std::size_t i = 0; i + n <= p.size(); ++i) ++pred_counts[{p.begin() + i, p.begin() + i + n}];
        }
        for (const auto& [gram, count] : pred_counts) {
            s.totals[n - 1] += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) s.matches[n - 1] += std::min(count, it->second);
        }
    }
    return s;
}

/// Corpus BLEU-4 from pooled statistics: uniform weights, brevity penalty, no
/// smoothing. Orders for which the corpus has no candidate n-grams at all are
/// left out and the remaining weights renormalized.
inline double bleu_from_stats(const BleuStats& s) {
    if (s.candidate_length == 0) return 0.0;
    double log_sum = 0.0;
    std::size_t orders = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        if (s.totals[k] == 0) continue;
        if (s.matches[k] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(s.matches[k]) / static_cast<double>(s.totals[k]));
        ++orders;
    }
    if (orders == 0) return 0.0;
    const double c = static_cast<double>(s.candidate_length);
    const double r = static_cast<double>(s.reference_length);
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / static_cast<double>(orders));
}

inline double bleu(std::span<const std::string> preds, std::span<const std::string> refs) {
    if (preds.size() != refs.size()) {
        throw ContractViolation("bleu: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(refs.size()) + " references");
    }
    BleuStats total;
    for (std::size_t i = 0; i < preds.size(); ++i) total += bleu_sentence_stats(preds[i], refs[i]);
    return bleu_from_stats(total);
}

// ---------------------------------------------------------------------------
// Retrieval recall
// ---------------------------------------------------------------------------

/// Fraction of turns whose gold record ids all appear in the first n retrieved
/// ids. Turns without gold ids (absent or empty) are not counted; with no
/// countable turn the result is 0.
inline double recall_at_n(std::span<const std::vector<std::string>> retrieved,
                          std::span<const std::optional<std::vector<std::string>>> gold, std::size_t n) {
    if (retrieved.size() != gold.size()) {
        throw ContractViolation("recall_at_n: " + std::to_string(retrieved.size()) + " retrievals vs " +
                                std::to_string(gold.size()) + " gold sets");
    }
    std::size_t eligible = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (!gold[i] || gold[i]->empty()) continue;
        ++eligible;
        const auto end = retrieved[i].begin() + static_cast<std::ptrdiff_t>(std::min(n, retrieved[i].size()));
        const bool all = std::all_of(gold[i]->begin(), gold[i]->end(), [&](const std::string& id) {
            return std::find(retrieved[i].begin(), end, id) != end;
        });
        if (all) ++hits;
    }
    return eligible == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(eligible);
}

// ---------------------------------------------------------------------------
// Domain-wise reports
// ---------------------------------------------------------------------------

inline constexpr std::string_view kOtherDomain = "other";

struct TaggedTurn {
    std::string domain;
    std::string pred;
    std::string gold;
};

/// Entity-F1 per domain tag. Empty tags, and tags outside `known` when it is
/// given, are grouped under "other".
inline std::map<std::string, EntityScore> domainwise_report(std::span<const TaggedTurn> turns,
                                                            const EntityMatcher& matcher,
                                                            const std::set<std::string>* known = nullptr) {
    std::map<std::string, EntityCounts> counts;
    for (const auto& t : turns) {
        std::string tag = t.domain;
        if (tag.empty() || (known != nullptr && known->count(tag) == 0)) tag = std::string(kOtherDomain);
        counts[tag] += entity_counts(matcher.extract(t.pred), matcher.extract(t.gold));
    }
    std::map<std::string, EntityScore> out;
    for (const auto& [tag, c] : counts) out[tag] = score_counts(c);
    return out;
}

}  // namespace qtod
