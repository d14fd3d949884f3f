#pragma once

#include <concepts>
#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skyladder/errors.hpp"

namespace skyladder {

using TokenId = std::uint32_t;

/// Anything that maps text to token ids and reserves one id for EOS.
template <typename T>
concept Tokenizer = requires(const T& tok, std::string_view text, std::span<const TokenId> ids) {
    { tok.encode(text) } -> std::convertible_to<std::vector<TokenId>>;
    { tok.decode(ids) } -> std::convertible_to<std::string>;
    { tok.eos() } -> std::convertible_to<TokenId>;
    { tok.vocab_size() } -> std::convertible_to<std::size_t>;
};

/// Raw bytes as ids 0..255, EOS = 256.
class ByteTokenizer {
  public:
    static constexpr TokenId kEos = 256;

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(c);
        return ids;
    }

    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        out.reserve(ids.size());
        for (auto id : ids) {
            if (id < 256) out.push_back(static_cast<char>(id));
        }
        return out;
    }

    TokenId eos() const { return kEos; }
    std::size_t vocab_size() const { return 257; }
};

static_assert(Tokenizer<ByteTokenizer>);

struct Document {
    std::uint64_t id = 0;
    std::vector<TokenId> tokens;

    std::size_t length() const { return tokens.size(); }
};

/// Throws DataValidationError if the document is empty or contains `eos`.
inline void validate_document(const Document& doc, TokenId eos) {
    if (doc.tokens.empty()) {
        throw DataValidationError("document " + std::to_string(doc.id) + " is empty");
    }
    for (auto t : doc.tokens) {
        if (t == eos) {
            throw DataValidationError("document " + std::to_string(doc.id) + " contains the EOS id");
        }
    }
}

/// Reads line-delimited JSON records {"text": "..."}; document ids are the
/// zero-based record index. Blank lines are skipped.
template <Tokenizer Tok>
std::vector<Document> read_corpus_jsonl(std::istream& in, const Tok& tokenizer) {
    std::vector<Document> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError("line " + std::to_string(line_no) + ": malformed JSON record (" + e.what() + ")");
        }
        if (!record.is_object() || !record.contains("text") || !record["text"].is_string()) {
            throw InputError("line " + std::to_string(line_no) + ": record lacks a string \"text\" field");
        }
        const auto& text = record["text"].get_ref<const std::string&>();
        if (text.empty()) {
            throw InputError("line " + std::to_string(line_no) + ": empty document text");
        }
        Document doc{docs.size(), tokenizer.encode(text)};
        try {
            validate_document(doc, tokenizer.eos());
        } catch (const DataValidationError& e) {
            throw DataValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        docs.push_back(std::move(doc));
    }
    if (docs.empty()) throw InputError("corpus contains no documents");
    return docs;
}

}  // namespace skyladder
