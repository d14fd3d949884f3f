#pragma once

// Packing documents into fixed-length sequences, plus the binary dataset
// format and per-token context statistics.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skyladder/bm25.hpp"
#include "skyladder/corpus.hpp"
#include "skyladder/errors.hpp"
#include "skyladder/masking.hpp"

namespace skyladder {

struct Provenance {
    std::uint64_t doc_id = 0;
    Offset begin = 0;  // span [begin, end) within the packed sequence
    Offset end = 0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PackedSequence {
    std::vector<TokenId> tokens;
    // End offsets (EOS position + 1) of documents finishing inside this sequence.
    std::vector<Offset> doc_boundaries;
    std::vector<Provenance> origin;

    Offset length() const { return static_cast<Offset>(tokens.size()); }

    friend bool operator==(const PackedSequence&, const PackedSequence&) = default;
};

/// Concatenates documents (each followed by one EOS) into a single stream and
/// cuts it into consecutive length-L sequences. A document crossing a cut
/// continues in the next sequence; the trailing partial sequence is dropped.
class StreamChunker {
  public:
    StreamChunker(Offset length, TokenId eos) : length_(length), eos_(eos) {
        if (length < 2) throw InputError("packed length must be >= 2");
        start_sequence();
    }

    void push(const Document& doc) {
        validate_document(doc, eos_);
        std::size_t pos = 0;
        while (pos <= doc.tokens.size()) {
            auto room = static_cast<std::size_t>(length_ - current_.length());
            auto remaining = doc.tokens.size() + 1 - pos;  // + EOS
            auto take = std::min(room, remaining);
            auto begin = current_.length();
            for (std::size_t k = 0; k < take; ++k) {
                auto idx = pos + k;
                current_.tokens.push_back(idx < doc.tokens.size() ? doc.tokens[idx] : eos_);
            }
            current_.origin.push_back({doc.id, begin, current_.length()});
            pos += take;
            if (pos == doc.tokens.size() + 1) current_.doc_boundaries.push_back(current_.length());
            if (current_.length() == length_) {
                done_.push_back(std::move(current_));
                start_sequence();
            }
            if (pos == doc.tokens.size() + 1) break;
        }
    }

    /// Tokens already placed in the sequence being filled.
    Offset fill() const { return current_.length(); }

    std::vector<PackedSequence> take() { return std::exchange(done_, {}); }

  private:
    void start_sequence() {
        current_ = PackedSequence{};
        current_.tokens.reserve(static_cast<std::size_t>(length_));
    }

    Offset length_;
    TokenId eos_;
    PackedSequence current_;
    std::vector<PackedSequence> done_;
};

inline std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// Random packing: seeded shuffle, then stream-chunk.
inline std::vector<PackedSequence> pack_random(std::span<const Document> corpus, Offset length, TokenId eos,
                                               std::uint64_t seed) {
    if (corpus.empty()) throw InputError("cannot pack an empty corpus");
    StreamChunker chunker(length, eos);
    for (auto d : seeded_order(corpus.size(), seed)) chunker.push(corpus[d]);
    return chunker.take();
}

/// Order in which pack_bm25 visits the documents (indices into the corpus).
inline std::vector<std::size_t> bm25_visit_order(std::span<const Document> corpus, const Bm25Index& index,
                                                 Offset length, TokenId eos, std::uint64_t seed,
                                                 StreamChunker* chunker = nullptr) {
    if (corpus.empty()) throw InputError("cannot pack an empty corpus");
    if (index.num_docs() != corpus.size()) throw InputError("BM25 index was built over a different corpus");
    StreamChunker local(length, eos);
    StreamChunker& sink = chunker ? *chunker : local;

    auto seeds = seeded_order(corpus.size(), seed);
    std::vector<bool> used(corpus.size(), false);
    std::vector<std::size_t> visit;
    visit.reserve(corpus.size());
    std::size_t seed_pos = 0;
    auto use = [&](std::size_t d) {
        used[d] = true;
        visit.push_back(d);
        sink.push(corpus[d]);
    };

    while (visit.size() < corpus.size()) {
        while (used[seeds[seed_pos]]) ++seed_pos;
        auto seed_doc = seeds[seed_pos];
        use(seed_doc);
        if (sink.fill() == 0) continue;

        auto query = index.query_terms(seed_doc);
        auto scores = index.score_all(query);
        std::vector<std::size_t> ranked;
        for (std::size_t d = 0; d < corpus.size(); ++d) {
            if (!used[d]) ranked.push_back(d);
        }
        std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return corpus[a].id < corpus[b].id;
        });
        for (auto d : ranked) {
            if (sink.fill() == 0) break;
            use(d);
        }
    }
    return visit;
}

/// Semantic packing: each sequence starts from a seed document and is filled
/// with the unused documents scoring highest against it.
inline std::vector<PackedSequence> pack_bm25(std::span<const Document> corpus, const Bm25Index& index,
                                             Offset length, TokenId eos, std::uint64_t seed) {
    StreamChunker chunker(length, eos);
    bm25_visit_order(corpus, index, length, eos, seed, &chunker);
    return chunker.take();
}

/// counts[c] = number of token positions with exactly c visible keys, c in 0..L.
struct ContextHistogram {
    std::vector<std::uint64_t> counts;

    std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
};

inline ContextHistogram context_window_histogram(std::span<const PackedSequence> sequences, MaskBase base,
                                                 bool intradoc, Offset w) {
    ContextHistogram hist;
    MaskMode mode{base, intradoc, w};
    for (const auto& seq : sequences) {
        auto length = seq.length();
        if (hist.counts.empty()) hist.counts.assign(static_cast<std::size_t>(length + 1), 0);
        if (static_cast<Offset>(hist.counts.size()) != length + 1) {
            throw InputError("sequences of different lengths in one histogram");
        }
        auto docs = interior_boundaries(seq.doc_boundaries, length);
        auto lo = row_lower_bounds(mode, length, docs);
        for (Offset i = 0; i < length; ++i) ++hist.counts[static_cast<std::size_t>(i - lo[static_cast<std::size_t>(i)] + 1)];
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Binary packed dataset: "CLDR", u8 version, u32 L, then per sequence
// L x u32 tokens, u16 boundary count, count x u32 boundaries. Little endian.

inline constexpr std::uint8_t kPackedFormatVersion = 1;

struct PackedDataset {
    Offset length = 0;
    std::vector<PackedSequence> sequences;
};

namespace detail {

template <typename UInt>
void write_le(std::ostream& out, UInt value) {
    char bytes[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt read_le(std::istream& in) {
    unsigned char bytes[sizeof(UInt)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) throw InputError("unexpected end of file");
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
    return value;
}

}  // namespace detail

inline void write_packed_dataset(std::ostream& out, Offset length, std::span<const PackedSequence> sequences) {
    out.write("CLDR", 4);
    detail::write_le<std::uint8_t>(out, kPackedFormatVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(length));
    for (const auto& seq : sequences) {
        if (seq.length() != length) throw InputError("sequence length differs from dataset length");
        if (seq.doc_boundaries.size() > 0xFFFF) throw InputError("too many boundaries for the dataset format");
        for (auto t : seq.tokens) detail::write_le<std::uint32_t>(out, t);
        detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(seq.doc_boundaries.size()));
        for (auto b : seq.doc_boundaries) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(b));
    }
    if (!out) throw InputError("failed writing packed dataset");
}

inline PackedDataset read_packed_dataset(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "CLDR") throw InputError("not a packed dataset (bad magic)");
    auto version = detail::read_le<std::uint8_t>(in);
    if (version != kPackedFormatVersion) throw InputError("unsupported packed dataset version");
    PackedDataset ds;
    ds.length = detail::read_le<std::uint32_t>(in);
    if (ds.length < 2) throw InputError("packed dataset length must be >= 2");
    while (in.peek() != std::char_traits<char>::eof()) {
        PackedSequence seq;
        seq.tokens.resize(static_cast<std::size_t>(ds.length));
        for (auto& t : seq.tokens) t = detail::read_le<std::uint32_t>(in);
        auto count = detail::read_le<std::uint16_t>(in);
        seq.doc_boundaries.resize(count);
        for (auto& b : seq.doc_boundaries) b = detail::read_le<std::uint32_t>(in);
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

}  // namespace skyladder
