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

// Knowledge retrieval: rank the records of one knowledge base against a query
// and keep the top n. Lexical (Okapi BM25 over an inverted index) and dense
// (exhaustive inner-product / cosine) indexes share one retrieve() entry point;
// rerank() re-orders candidates with an external relevance model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qtod/dialogue.hpp"
#include "qtod/error.hpp"
#include "qtod/kb.hpp"
#include "qtod/text.hpp"

namespace qtod {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Document count, average length and document frequencies of one corpus.
class CorpusStats {
public:
    CorpusStats() = default;

    static CorpusStats from_documents(std::span<const std::vector<std::string>> docs) {
        CorpusStats stats;
        stats.doc_count_ = docs.size();
        std::size_t total = 0;
        for (const auto& doc : docs) {
            total += doc.size();
            std::vector<std::string> unique(doc.begin(), doc.end());
            std::sort(unique.begin(), unique.end());
            unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
            for (auto& term : unique) ++stats.df_[term];
        }
        stats.avg_len_ = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
        return stats;
    }

    std::size_t document_count() const noexcept { return doc_count_; }
    double average_length() const noexcept { return avg_len_; }
    std::size_t document_frequency(const std::string& term) const {
        auto it = df_.find(term);
        return it == df_.end() ? 0 : it->second;
    }
    std::size_t vocabulary_size() const noexcept { return df_.size(); }

private:
    std::size_t doc_count_ = 0;
    double avg_len_ = 0.0;
    std::unordered_map<std::string, std::size_t> df_;
};

/// ln(1 + (N - df + 0.5) / (df + 0.5)), floored at 0.
inline double bm25_idf(std::size_t doc_count, std::size_t df) {
    const double n = static_cast<double>(doc_count);
    const double d = static_cast<double>(df);
    return std::max(0.0, std::log(1.0 + (n - d + 0.5) / (d + 0.5)));
}

/// Saturated, length-normalized term weight for one query-token occurrence.
inline double bm25_term_weight(double idf, double tf, double doc_len, double avg_len, const Bm25Params& p) {
    const double norm = avg_len > 0.0 ? doc_len / avg_len : 1.0;
    return idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

/// Okapi BM25. Every query token occurrence contributes, in query order.
inline double bm25_score(std::span<const std::string> query_tokens, std::span<const std::string> doc_tokens,
                         const CorpusStats& stats, double k1 = 1.2, double b = 0.75) {
    std::unordered_map<std::string, std::size_t> tf;
    for (const auto& t : doc_tokens) ++tf[t];
    const Bm25Params params{k1, b};
    double score = 0.0;
    for (const auto& term : query_tokens) {
        auto it = tf.find(term);
        if (it == tf.end()) continue;
        const double idf = bm25_idf(stats.document_count(), stats.document_frequency(term));
        score += bm25_term_weight(idf, static_cast<double>(it->second), static_cast<double>(doc_tokens.size()),
                                  stats.average_length(), params);
    }
    return score;
}

enum class DenseMetric { dot, cosine };

inline double dense_score(std::span<const double> query_vec, std::span<const double> doc_vec,
                          DenseMetric metric = DenseMetric::cosine) {
    if (query_vec.size() != doc_vec.size()) {
        throw ContractViolation("dense_score: dimension mismatch (" + std::to_string(query_vec.size()) + " vs " +
                                std::to_string(doc_vec.size()) + ")");
    }
    double dot = 0.0;
    double qq = 0.0;
    double dd = 0.0;
    for (std::size_t i = 0; i < query_vec.size(); ++i) {
        dot += query_vec[i] * doc_vec[i];
        qq += query_vec[i] * query_vec[i];
        dd += doc_vec[i] * doc_vec[i];
    }
    if (metric == DenseMetric::dot) return dot;
    if (qq == 0.0 || dd == 0.0) return 0.0;
    return dot / (std::sqrt(qq) * std::sqrt(dd));
}

/// Text embedding model. Implementations must be deterministic per instance
/// and safe to call concurrently.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<double> embed(std::string_view text) const = 0;
    virtual std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) const {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed(t));
        return out;
    }
};

/// Bag-of-words vectors from FNV-1a token hashes. Needs no model; used for
/// tests and desk runs of the dense path.
class HashingEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HashingEmbeddingProvider(std::size_t dimension) : dim_(dimension) {
        if (dimension == 0) throw ConfigError("embedding dimension must be positive");
    }

    std::size_t dimension() const override { return dim_; }

    std::vector<double> embed(std::string_view text) const override {
        std::vector<double> v(dim_, 0.0);
        for (const auto& token : tokenize(text)) v[fnv1a(token) % dim_] += 1.0;
        return v;
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }

private:
    std::size_t dim_;
};

enum class IndexKind { bm25, dense };

struct IndexConfig {
    IndexKind kind = IndexKind::bm25;
    Bm25Params bm25;
    DenseMetric metric = DenseMetric::cosine;
    std::shared_ptr<const EmbeddingProvider> provider;
    LinearizationStyle style = LinearizationStyle::values;
};

struct RetrievalEntry {
    std::string record_id;
    double score = 0.0;

    friend bool operator==(const RetrievalEntry&, const RetrievalEntry&) = default;
};

/// Ranked top-n records: scores non-increasing, ids unique, at most n entries.
struct RetrievalResult {
    std::vector<RetrievalEntry> entries;
    std::string query_echo;

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.record_id);
        return out;
    }
};

struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;
};

/// Immutable index over one knowledge base snapshot.
class RetrieverIndex {
public:
    IndexKind kind() const noexcept { return config_.kind; }
    const IndexConfig& config() const noexcept { return config_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::vector<std::string>& record_ids() const noexcept { return ids_; }
    const std::vector<std::string>& texts() const noexcept { return texts_; }
    const CorpusStats& stats() const noexcept { return stats_; }
    const std::vector<std::vector<double>>& vectors() const noexcept { return vectors_; }

    const std::string* text_of(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &texts_[it->second];
    }

    std::size_t postings_size(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

private:
    friend RetrieverIndex build_index(const KnowledgeBase& kb, const IndexConfig& config);
    friend RetrievalResult retrieve(const RetrieverIndex& index, std::string_view query, std::size_t n);

    IndexConfig config_;
    std::vector<std::string> ids_;
    std::vector<std::string> texts_;
    std::unordered_map<std::string, std::size_t> by_id_;
    // bm25
    CorpusStats stats_;
    std::vector<std::uint32_t> doc_len_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    // dense
    std::vector<std::vector<double>> vectors_;
};

inline RetrieverIndex build_index(const KnowledgeBase& kb, const IndexConfig& config = {}) {
    if (config.kind == IndexKind::dense && !config.provider) {
        throw ConfigError("dense index requires an embedding provider");
    }
    RetrieverIndex index;
    index.config_ = config;
    index.ids_.reserve(kb.size());
    index.texts_.reserve(kb.size());
    for (std::size_t i = 0; i < kb.size(); ++i) {
        const auto& record = kb.records()[i];
        index.ids_.push_back(record.id);
        index.texts_.push_back(linearize_record(record, config.style));
        index.by_id_.emplace(record.id, i);
    }
    if (config.kind == IndexKind::bm25) {
        std::vector<std::vector<std::string>> docs;
        docs.reserve(kb.size());
        for (const auto& text : index.texts_) docs.push_back(tokenize(text));
        index.stats_ = CorpusStats::from_documents(docs);
        index.doc_len_.reserve(docs.size());
        for (std::size_t d = 0; d < docs.size(); ++d) {
            index.doc_len_.push_back(static_cast<std::uint32_t>(docs[d].size()));
            std::unordered_map<std::string, std::uint32_t> tf;
            for (const auto& t : docs[d]) ++tf[t];
            for (auto& [term, count] : tf) {
                index.postings_[term].push_back({static_cast<std::uint32_t>(d), count});
            }
        }
    } else {
        index.vectors_ = config.provider->embed_batch(index.texts_);
        for (const auto& v : index.vectors_) {
            if (v.size() != config.provider->dimension()) {
                throw BackendError(BackendErrorKind::protocol, "embedding provider returned a vector of dimension " +
                                                                   std::to_string(v.size()) + ", expected " +
                                                                   std::to_string(config.provider->dimension()));
            }
        }
    }
    return index;
}

namespace detail {

// Best first; ties by ascending record id.
inline void rank_and_truncate(std::vector<RetrievalEntry>& entries, std::size_t n) {
    auto better = [](const RetrievalEntry& a, const RetrievalEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.record_id < b.record_id;
    };
    if (entries.size() > n) {
        std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(n), entries.end(), better);
        entries.resize(n);
    } else {
        std::sort(entries.begin(), entries.end(), better);
    }
}

}  // namespace detail

/// Top-n records for a query text. Under BM25, records scoring 0 are left out,
/// so the result may be shorter than n.
inline RetrievalResult retrieve(const RetrieverIndex& index, std::string_view query, std::size_t n) {
    if (n == 0) throw ContractViolation("retrieve: n must be at least 1");
    RetrievalResult result;
    result.query_echo = std::string(query);
    if (index.size() == 0) return result;

    std::vector<RetrievalEntry> entries;
    if (index.kind() == IndexKind::bm25) {
        std::vector<double> scores(index.size(), 0.0);
        std::vector<char> touched(index.size(), 0);
        const auto& params = index.config_.bm25;
        const double avg = index.stats_.average_length();
        for (const auto& term : tokenize(query)) {
            auto it = index.postings_.find(term);
            if (it == index.postings_.end()) continue;
            const double idf = bm25_idf(index.stats_.document_count(), it->second.size());
            for (const auto& posting : it->second) {
                scores[posting.doc] += bm25_term_weight(idf, static_cast<double>(posting.tf),
                                                        static_cast<double>(index.doc_len_[posting.doc]), avg, params);
                touched[posting.doc] = 1;
            }
        }
        for (std::size_t d = 0; d < scores.size(); ++d) {
            if (touched[d] && scores[d] > 0.0) entries.push_back({index.ids_[d], scores[d]});
        }
    } else {
        const auto qv = index.config_.provider->embed(query);
        entries.reserve(index.size());
        for (std::size_t d = 0; d < index.size(); ++d) {
            entries.push_back({index.ids_[d], dense_score(qv, index.vectors_[d], index.config_.metric)});
        }
    }
    detail::rank_and_truncate(entries, n);
    result.entries = std::move(entries);
    return result;
}

inline RetrievalResult retrieve(const RetrieverIndex& index, const Query& query, std::size_t n) {
    if (query.is_null()) throw ContractViolation("retrieve: null query (callers must short-circuit)");
    return retrieve(index, query.text(), n);
}

/// (query text, linearized record) -> probability the record matches, in [0, 1].
using RelevanceFn = std::function<double(std::string_view, std::string_view)>;

/// Re-sorts candidates by relevance; equal relevance keeps the original rank.
/// Entry scores are replaced by the relevance scores.
inline RetrievalResult rerank(const RetrieverIndex& index, std::string_view query, const RetrievalResult& candidates,
                              const RelevanceFn& relevance) {
    struct Scored {
        RetrievalEntry entry;
        std::size_t rank;
    };
    std::vector<Scored> scored;
    scored.reserve(candidates.entries.size());
    for (std::size_t i = 0; i < candidates.entries.size(); ++i) {
        const auto& id = candidates.entries[i].record_id;
        const auto* text = index.text_of(id);
        if (text == nullptr) throw ContractViolation("rerank: record '" + id + "' is not in the index");
        double score = 0.0;
        try {
            score = relevance(query, *text);
        } catch (const BackendError& e) {
            throw BackendError(e.kind(), "relevance for record '" + id + "': " + e.detail(), Stage::rerank);
        } catch (const std::exception& e) {
            throw BackendError(BackendErrorKind::protocol, "relevance for record '" + id + "': " + e.what(),
                               Stage::rerank);
        }
        if (!(score >= 0.0 && score <= 1.0)) {
            throw BackendError(BackendErrorKind::protocol,
                               "relevance for record '" + id + "' outside [0, 1]: " + std::to_string(score),
                               Stage::rerank);
        }
        scored.push_back({{id, score}, i});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const Scored& a, const Scored& b) { return a.entry.score > b.entry.score; });
    RetrievalResult out;
    out.query_echo = candidates.query_echo;
    out.entries.reserve(scored.size());
    for (auto& s : scored) out.entries.push_back(std::move(s.entry));
    return out;
}

}  // namespace qtod
