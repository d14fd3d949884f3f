#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "skyladder/model.hpp"

namespace skyladder {

struct TensorCheck {
    std::string name;
    double max_rel_error = 0;
    double max_abs_error = 0;
    std::size_t worst_index = 0;
};

struct GradcheckReport {
    std::vector<TensorCheck> tensors;
    double tolerance = 1e-5;

    bool passed() const {
        return std::all_of(tensors.begin(), tensors.end(),
                           [&](const TensorCheck& t) { return t.max_rel_error <= tolerance; });
    }

    double worst() const {
        double w = 0;
        for (const auto& t : tensors) w = std::max(w, t.max_rel_error);
        return w;
    }
};

/// Problem the check differentiates: mean next-token cross-entropy of one batch.
struct GradcheckProblem {
    ModelConfig config;
    std::vector<TokenId> tokens;
    std::vector<Offset> positions;
    AttentionLayout layout;
    Offset seq_len = 0;
};

inline double gradcheck_loss(const Parameters<double>& params, const GradcheckProblem& prob) {
    auto tr = forward(params, prob.config, std::span<const TokenId>(prob.tokens), std::span<const Offset>(prob.positions),
                      prob.layout);
    auto targets = next_token_targets(prob.tokens, prob.seq_len);
    return cross_entropy(tr.logits, std::span<const std::int64_t>(targets), false).loss;
}

inline Parameters<double> analytic_gradient(const Parameters<double>& params, const GradcheckProblem& prob) {
    auto tr = forward(params, prob.config, std::span<const TokenId>(prob.tokens), std::span<const Offset>(prob.positions),
                      prob.layout);
    auto targets = next_token_targets(prob.tokens, prob.seq_len);
    auto res = cross_entropy(tr.logits, std::span<const std::int64_t>(targets));
    return backward(params, prob.config, tr, res.d_logits);
}

using GradientFn = std::function<Parameters<double>(const Parameters<double>&, const GradcheckProblem&)>;

/// Compares analytic gradients with central differences on every parameter.
/// Relative error per entry is |a - n| / max(|a|, |n|, abs_floor); the floor
/// keeps entries whose true gradient is ~0 from dominating.
inline GradcheckReport gradcheck(Parameters<double> params, const GradcheckProblem& prob, double step = 1e-5,
                                 double tolerance = 1e-5, double abs_floor = 1e-4,
                                 const GradientFn& gradient = analytic_gradient) {
    GradcheckReport report;
    report.tolerance = tolerance;
    auto analytic = gradient(params, prob);
    auto analytic_views = analytic.views();
    auto views = params.views();
    for (std::size_t t = 0; t < views.size(); ++t) {
        TensorCheck check{views[t].name};
        for (std::size_t i = 0; i < views[t].size; ++i) {
            double saved = views[t].data[i];
            views[t].data[i] = saved + step;
            double up = gradcheck_loss(params, prob);
            views[t].data[i] = saved - step;
            double down = gradcheck_loss(params, prob);
            views[t].data[i] = saved;
            double numeric = (up - down) / (2 * step);
            double a = analytic_views[t].data[i];
            double abs_err = std::abs(a - numeric);
            double rel = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
            check.max_abs_error = std::max(check.max_abs_error, abs_err);
            if (rel > check.max_rel_error) {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
        }
        report.tensors.push_back(std::move(check));
    }
    return report;
}

/// Initial weights scaled up so activations and gradients are far from zero;
/// at the usual 0.02 scale most entries fall under the relative-error floor.
inline Parameters<double> gradcheck_parameters(const ModelConfig& cfg, std::uint64_t seed, double scale = 20.0) {
    auto params = Parameters<double>::init(cfg, seed);
    for (auto& v : params.views()) {
        if (!v.decay) continue;
        for (auto& x : v.values()) x *= scale;
    }
    return params;
}

/// Toy problem under 10k parameters: two sequences with document boundaries.
inline GradcheckProblem toy_gradcheck_problem(bool rope, bool intradoc, MaskBase base = MaskBase::local_causal,
                                              Offset window = 4) {
    GradcheckProblem prob;
    prob.config = ModelConfig{2, 2, 16, 32, 16, 10000.0, rope, 1e-5, 16};
    prob.seq_len = 12;
    const std::vector<std::vector<Offset>> docs = {{5}, {3, 9}};
    std::vector<SegmentSpec> parts;
    std::vector<Offset> bounds;
    MaskMode mode{base, intradoc, window};
    for (std::size_t s = 0; s < docs.size(); ++s) {
        for (Offset i = 0; i < prob.seq_len; ++i) {
            prob.tokens.push_back(static_cast<TokenId>((7 * i + 3 * s + i * i) % 16));
            prob.positions.push_back(i);
        }
        if (mode.is_block()) {
            parts.push_back(mode_segments(mode, prob.seq_len, docs[s]));
        } else {
            auto lo = row_lower_bounds(mode, prob.seq_len, docs[s]);
            for (auto b : lo) bounds.push_back(b + static_cast<Offset>(s) * prob.seq_len);
        }
    }
    prob.layout = mode.is_block() ? AttentionLayout::from_segments(SegmentSpec::concat(parts))
                                  : AttentionLayout::from_bounds(std::move(bounds));
    return prob;
}

}  // namespace skyladder
