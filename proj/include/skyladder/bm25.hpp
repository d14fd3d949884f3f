#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "skyladder/corpus.hpp"
#include "skyladder/errors.hpp"

namespace skyladder {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

using TermExtractor = std::function<std::vector<std::string>(const Document&)>;

/// Lower-cased alphanumeric words of the decoded text.
template <Tokenizer Tok>
TermExtractor word_terms(Tok tokenizer) {
    return [tokenizer](const Document& doc) {
        auto text = tokenizer.decode(doc.tokens);
        std::vector<std::string> terms;
        std::string cur;
        for (unsigned char c : text) {
            if (std::isalnum(c)) {
                cur.push_back(static_cast<char>(std::tolower(c)));
            } else if (!cur.empty()) {
                terms.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) terms.push_back(std::move(cur));
        return terms;
    };
}

/// Every token id is its own term.
inline TermExtractor token_terms() {
    return [](const Document& doc) {
        std::vector<std::string> terms;
        terms.reserve(doc.tokens.size());
        for (auto t : doc.tokens) terms.push_back(std::to_string(t));
        return terms;
    };
}

/// Okapi BM25 over a fixed document collection. Documents are addressed by
/// their position in the collection the index was built from.
class Bm25Index {
  public:
    static Bm25Index build(std::span<const Document> docs, const TermExtractor& extract, Bm25Params params = {}) {
        Bm25Index index;
        index.params_ = params;
        index.doc_terms_.resize(docs.size());
        index.doc_len_.resize(docs.size());
        index.doc_ids_.reserve(docs.size());
        double total_len = 0;
        for (std::size_t d = 0; d < docs.size(); ++d) {
            index.doc_ids_.push_back(docs[d].id);
            std::unordered_map<std::uint32_t, std::uint32_t> counts;
            auto terms = extract(docs[d]);
            for (auto& term : terms) ++counts[index.intern(term)];
            auto& row = index.doc_terms_[d];
            row.assign(counts.begin(), counts.end());
            std::sort(row.begin(), row.end());
            index.doc_len_[d] = static_cast<double>(terms.size());
            total_len += static_cast<double>(terms.size());
        }
        index.df_.assign(index.terms_.size(), 0);
        index.postings_.assign(index.terms_.size(), {});
        for (std::size_t d = 0; d < docs.size(); ++d) {
            for (auto [term, tf] : index.doc_terms_[d]) {
                ++index.df_[term];
                index.postings_[term].emplace_back(static_cast<std::uint32_t>(d), tf);
            }
        }
        index.avg_len_ = docs.empty() ? 0.0 : total_len / static_cast<double>(docs.size());
        if (!docs.empty() && index.avg_len_ <= 0) {
            throw DataValidationError("BM25 index needs at least one term in the corpus");
        }
        return index;
    }

    std::size_t num_docs() const { return doc_len_.size(); }
    double avg_len() const { return avg_len_; }
    const Bm25Params& params() const { return params_; }
    std::uint64_t doc_id(std::size_t d) const { return doc_ids_.at(d); }
    double doc_len(std::size_t d) const { return doc_len_.at(d); }

    std::uint32_t df(const std::string& term) const {
        auto it = term_ids_.find(term);
        return it == term_ids_.end() ? 0 : df_[it->second];
    }

    std::uint32_t tf(std::size_t d, const std::string& term) const {
        auto it = term_ids_.find(term);
        if (it == term_ids_.end()) return 0;
        const auto& row = doc_terms_.at(d);
        auto pos = std::lower_bound(row.begin(), row.end(), std::pair{it->second, 0u});
        return pos != row.end() && pos->first == it->second ? pos->second : 0;
    }

    /// Distinct terms of document d in lexicographic order.
    std::vector<std::string> query_terms(std::size_t d) const {
        std::vector<std::string> out;
        for (auto [term, tf] : doc_terms_.at(d)) out.push_back(terms_[term]);
        std::sort(out.begin(), out.end());
        return out;
    }

    double idf(std::uint32_t df) const {
        auto n = static_cast<double>(num_docs());
        auto f = static_cast<double>(df);
        return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
    }

    double term_weight(double idf, double tf, double len) const {
        auto norm = 1.0 - params_.b + params_.b * len / avg_len_;
        return idf * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
    }

    /// Score of document d for the query; terms unseen in the corpus add 0.
    double score(std::span<const std::string> query, std::size_t d) const {
        double total = 0;
        for (const auto& term : query) {
            auto it = term_ids_.find(term);
            if (it == term_ids_.end()) continue;
            auto f = tf(d, term);
            if (f == 0) continue;
            total += term_weight(idf(df_[it->second]), f, doc_len_[d]);
        }
        return total;
    }

    /// Scores every document at once through the postings lists. Terms are
    /// accumulated in query order, so results equal score() bit for bit.
    std::vector<double> score_all(std::span<const std::string> query) const {
        std::vector<double> scores(num_docs(), 0.0);
        for (const auto& term : query) {
            auto it = term_ids_.find(term);
            if (it == term_ids_.end()) continue;
            auto w_idf = idf(df_[it->second]);
            for (auto [d, f] : postings_[it->second]) scores[d] += term_weight(w_idf, f, doc_len_[d]);
        }
        return scores;
    }

  private:
    std::uint32_t intern(const std::string& term) {
        auto [it, inserted] = term_ids_.try_emplace(term, static_cast<std::uint32_t>(terms_.size()));
        if (inserted) terms_.push_back(term);
        return it->second;
    }

    Bm25Params params_;
    std::unordered_map<std::string, std::uint32_t> term_ids_;
    std::vector<std::string> terms_;
    std::vector<std::uint32_t> df_;
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings_;
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> doc_terms_;
    std::vector<double> doc_len_;
    std::vector<std::uint64_t> doc_ids_;
    double avg_len_ = 0;
};

/// Free-function form addressing the document by its id.
inline double bm25_score(std::span<const std::string> query, std::uint64_t doc_id, const Bm25Index& index) {
    for (std::size_t d = 0; d < index.num_docs(); ++d) {
        if (index.doc_id(d) == doc_id) return index.score(query, d);
    }
    throw InputError("document id " + std::to_string(doc_id) + " not in index");
}

}  // namespace skyladder
