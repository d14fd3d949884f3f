#pragma once

// Brute-force reference for BM25 greedy packing: after every placement all
// unused documents are re-scored from raw term counts.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "skyladder/packing.hpp"

namespace skyladder::testing {

inline std::map<std::string, int> token_counts(const Document& d) {
    std::map<std::string, int> counts;
    for (auto t : d.tokens) ++counts[std::to_string(t)];
    return counts;
}

/// Okapi BM25 of document d for the distinct terms of document q, terms
/// summed in lexicographic order.
inline double oracle_bm25(const std::vector<Document>& docs, std::size_t q, std::size_t d, double k1 = 1.2,
                          double b = 0.75) {
    const double n = static_cast<double>(docs.size());
    double avg = 0;
    for (const auto& doc : docs) avg += static_cast<double>(doc.tokens.size());
    avg /= n;
    auto target = token_counts(docs[d]);
    double score = 0;
    for (const auto& [term, _] : token_counts(docs[q])) {
        auto it = target.find(term);
        if (it == target.end()) continue;
        double df = 0;
        for (const auto& doc : docs) df += token_counts(doc).count(term) ? 1 : 0;
        double idf = std::log(1 + (n - df + 0.5) / (df + 0.5));
        double tf = it->second;
        double len = static_cast<double>(docs[d].tokens.size());
        score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg));
    }
    return score;
}

inline std::vector<std::size_t> oracle_bm25_order(const std::vector<Document>& docs, Offset length,
                                                  std::uint64_t seed) {
    const auto seeds = seeded_order(docs.size(), seed);
    std::vector<bool> used(docs.size(), false);
    std::vector<std::size_t> order;
    Offset fill = 0;
    auto place = [&](std::size_t d) {
        used[d] = true;
        order.push_back(d);
        fill = (fill + static_cast<Offset>(docs[d].tokens.size()) + 1) % length;
    };
    while (order.size() < docs.size()) {
        std::size_t seed_doc = 0;
        for (auto s : seeds) {
            if (!used[s]) {
                seed_doc = s;
                break;
            }
        }
        place(seed_doc);
        while (fill != 0 && order.size() < docs.size()) {
            std::size_t best = docs.size();
            double best_score = -1;
            for (std::size_t d = 0; d < docs.size(); ++d) {
                if (used[d]) continue;
                double s = oracle_bm25(docs, seed_doc, d);
                if (s > best_score || (s == best_score && docs[d].id < docs[best].id)) {
                    best = d;
                    best_score = s;
                }
            }
            place(best);
        }
    }
    return order;
}

/// Up to 20 short documents over a small alphabet, so terms overlap and
/// scores tie often.
inline std::vector<Document> small_random_corpus(std::uint64_t seed, std::size_t max_docs = 20) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> count(1, max_docs);
    std::uniform_int_distribution<std::size_t> len(1, 24);
    std::uniform_int_distribution<TokenId> token(1, 9);
    std::vector<Document> docs(count(rng));
    for (std::size_t i = 0; i < docs.size(); ++i) {
        docs[i].id = 100 + i;
        docs[i].tokens.resize(len(rng));
        for (auto& t : docs[i].tokens) t = token(rng);
    }
    return docs;
}

}  // namespace skyladder::testing
