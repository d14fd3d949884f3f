#pragma once

// Sliding-window perplexity over validation documents.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skyladder/corpus.hpp"
#include "skyladder/errors.hpp"
#include "skyladder/model.hpp"
#include "skyladder/parallel.hpp"

namespace skyladder {

/// Anything that maps a token window to next-token logits under full causal masking.
template <typename M>
concept LanguageModel = requires(const M& m, std::span<const TokenId> window) {
    { m.logits(window) } -> std::convertible_to<Mat<double>>;
    { m.context() } -> std::convertible_to<Offset>;
};

template <typename T>
class TransformerLM {
  public:
    TransformerLM(ModelConfig cfg, Parameters<T> params) : cfg_(cfg), params_(std::move(params)) {}

    Offset context() const { return cfg_.max_context; }

    Mat<double> logits(std::span<const TokenId> window) const {
        const auto n = static_cast<Offset>(window.size());
        std::vector<Offset> pos(window.size());
        for (Offset i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
        SegmentSpec seg;
        seg.cu_seqlens = {0, n};
        seg.max_seqlen = n;
        auto tr = forward(params_, cfg_, window, std::span<const Offset>(pos), AttentionLayout::from_segments(seg));
        return tr.logits.template cast<double>();
    }

  private:
    ModelConfig cfg_;
    Parameters<T> params_;
};

struct EvalConfig {
    Offset window = 256;
    Offset stride = 0;  // 0 means stride = window (disjoint chunks)

    Offset effective_stride() const { return stride == 0 ? window : stride; }

    void validate() const {
        if (window < 2) throw ConfigError("eval window must be >= 2");
        auto s = effective_stride();
        if (s < 1 || s > window) throw ConfigError("eval stride must lie in [1, window]");
    }
};

struct EvalResult {
    Offset window = 0;
    std::int64_t tokens = 0;  // predicted positions
    double total_nll = 0;

    double mean_nll() const { return total_nll / static_cast<double>(tokens); }
    double ppl() const { return std::exp(mean_nll()); }
};

/// NLL sum and count for one document. Windows start every `stride` tokens;
/// each position is scored once, by the first window that sees it with at
/// least one token of history inside the window.
template <LanguageModel M>
std::pair<double, std::int64_t> document_nll(const M& model, std::span<const TokenId> doc, const EvalConfig& cfg) {
    const auto n = static_cast<Offset>(doc.size());
    const auto stride = cfg.effective_stride();
    double nll = 0;
    std::int64_t count = 0;
    Offset scored_until = 0;  // positions < scored_until already have a prediction
    for (Offset start = 0; start + 1 < n; start += stride) {
        const auto end = std::min(n, start + cfg.window);
        const auto from = std::max(start + 1, scored_until);
        if (from < end) {
            auto logits = model.logits(doc.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(end - start)));
            for (Offset p = from; p < end; ++p) {
                auto row = logits.row(p - 1 - start);
                double peak = row.maxCoeff();
                double lse = peak + std::log((row.array() - peak).exp().sum());
                nll += lse - row(doc[static_cast<std::size_t>(p)]);
                ++count;
            }
            scored_until = end;
        }
        if (end == n) break;
    }
    return {nll, count};
}

/// Token-weighted perplexity: exp(total NLL / total predicted positions).
template <LanguageModel M>
EvalResult sliding_ppl(const M& model, std::span<const Document> docs, const EvalConfig& cfg) {
    cfg.validate();
    if (cfg.window > model.context()) throw ConfigError("eval window exceeds the model context");
    if (docs.empty()) throw InputError("validation set is empty");
    std::vector<std::pair<double, std::int64_t>> parts(docs.size());
    parallel_for(docs.size(), [&](std::size_t i) { parts[i] = document_nll(model, std::span<const TokenId>(docs[i].tokens), cfg); });
    EvalResult res;
    res.window = cfg.window;
    for (const auto& [nll, count] : parts) {
        res.total_nll += nll;
        res.tokens += count;
    }
    if (res.tokens == 0) throw InputError("validation set has no predictable tokens");
    return res;
}

}  // namespace skyladder
