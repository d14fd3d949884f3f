#pragma once

// Training-stability metrics and attention diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "skyladder/errors.hpp"
#include "skyladder/model.hpp"

namespace skyladder {

// ---------------------------------------------------------------------------
// Stability metrics over a loss (or gradient-norm) trace

/// Mean over t of the population std of the trailing `window` values; the
/// first window-1 positions use whatever prefix exists.
inline double volatility(std::span<const double> trace, std::size_t window = 10) {
    if (trace.size() < 2) throw InputError("volatility needs at least two values");
    if (window < 1) throw InputError("volatility window must be >= 1");
    double total = 0;
    for (std::size_t t = 0; t < trace.size(); ++t) {
        auto first = t + 1 >= window ? t + 1 - window : 0;
        auto n = static_cast<double>(t + 1 - first);
        double mean = 0;
        for (auto i = first; i <= t; ++i) mean += trace[i];
        mean /= n;
        double var = 0;
        for (auto i = first; i <= t; ++i) var += (trace[i] - mean) * (trace[i] - mean);
        total += std::sqrt(var / n);
    }
    return total / static_cast<double>(trace.size());
}

/// Average absolute change between consecutive steps.
inline double smoothness(std::span<const double> trace) {
    if (trace.size() < 2) throw InputError("smoothness needs at least two values");
    double total = 0;
    for (std::size_t t = 1; t < trace.size(); ++t) total += std::abs(trace[t] - trace[t - 1]);
    return total / static_cast<double>(trace.size() - 1);
}

/// Mean of L_t / min(L_1..L_{t-1}) over t >= 2.
inline double mean_loss_ratio(std::span<const double> trace) {
    if (trace.size() < 2) throw InputError("mean_loss_ratio needs at least two values");
    for (auto v : trace) {
        if (!(v > 0)) throw InputError("mean_loss_ratio needs positive losses");
    }
    double running_min = trace[0];
    double total = 0;
    for (std::size_t t = 1; t < trace.size(); ++t) {
        total += trace[t] / running_min;
        running_min = std::min(running_min, trace[t]);
    }
    return total / static_cast<double>(trace.size() - 1);
}

/// Mean of min(G_t, 1).
inline double avg_grad_norm(std::span<const double> grad_norms) {
    if (grad_norms.empty()) throw InputError("avg_grad_norm needs at least one value");
    double total = 0;
    for (auto g : grad_norms) total += std::min(g, 1.0);
    return total / static_cast<double>(grad_norms.size());
}

// ---------------------------------------------------------------------------
// Attention snapshots

/// Permitted keys of one query row: keys [first, first + weights.size()).
struct AttentionRow {
    Offset first = 0;
    std::vector<double> weights;
    std::vector<double> logits;  // q.k / sqrt(dh), the softmax input
};

struct AttentionSnapshot {
    // rows[layer][head][query]
    std::vector<std::vector<std::vector<AttentionRow>>> rows;

    std::size_t layers() const { return rows.size(); }
    std::size_t heads() const { return rows.empty() ? 0 : rows[0].size(); }
};

/// Extracts weights and logits for every layer, head and row of a trace. Dense
/// layouts keep only the permitted keys of each row.
template <typename T>
AttentionSnapshot snapshot_attention(const ForwardTrace<T>& trace, const ModelConfig& cfg) {
    AttentionSnapshot snap;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& layout = trace.layout;
    snap.rows.resize(trace.layers.size());
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& lt = trace.layers[l];
        snap.rows[l].resize(static_cast<std::size_t>(cfg.n_heads));
        for (int h = 0; h < cfg.n_heads; ++h) {
            auto& out = snap.rows[l][static_cast<std::size_t>(h)];
            out.resize(static_cast<std::size_t>(layout.rows()));
            for (Offset i = 0; i < layout.rows(); ++i) {
                auto [first, last] = layout.key_range(i);
                auto w = attention_row(layout, lt.attn, h, i);
                AttentionRow row;
                row.first = -1;
                for (Offset j = first; j < last; ++j) {
                    if (!layout.permitted(i, j)) continue;
                    if (row.first < 0) row.first = j;
                    double dot = 0;
                    for (int c = 0; c < dh; ++c) {
                        dot += static_cast<double>(lt.q(i, h * dh + c)) * static_cast<double>(lt.k(j, h * dh + c));
                    }
                    row.weights.push_back(static_cast<double>(w[static_cast<std::size_t>(j - first)]));
                    row.logits.push_back(dot * scale);
                }
                out[static_cast<std::size_t>(i)] = std::move(row);
            }
        }
    }
    return snap;
}

inline double row_entropy(std::span<const double> weights) {
    double h = 0;
    for (auto p : weights) {
        if (p > 0) h -= p * std::log(p);
    }
    return h;
}

/// Largest softmax input over permitted entries of every layer and head.
inline double max_attention_logit(const AttentionSnapshot& snap) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& layer : snap.rows) {
        for (const auto& head : layer) {
            for (const auto& row : head) {
                for (auto v : row.logits) best = std::max(best, v);
            }
        }
    }
    return best;
}

/// Mean Shannon entropy (nats) over all layers, heads and query rows.
inline double attention_entropy(const AttentionSnapshot& snap) {
    double total = 0;
    std::size_t n = 0;
    for (const auto& layer : snap.rows) {
        for (const auto& head : layer) {
            for (const auto& row : head) {
                total += row_entropy(row.weights);
                ++n;
            }
        }
    }
    if (n == 0) throw InputError("empty attention snapshot");
    return total / static_cast<double>(n);
}

/// Fraction of (layer, head, query) triples putting more than epsilon of their
/// weight on the first key they can see.
inline double attention_sink(const AttentionSnapshot& snap, double epsilon = 0.3) {
    std::size_t hits = 0, n = 0;
    for (const auto& layer : snap.rows) {
        for (const auto& head : layer) {
            for (const auto& row : head) {
                if (!row.weights.empty() && row.weights.front() > epsilon) ++hits;
                ++n;
            }
        }
    }
    if (n == 0) throw InputError("empty attention snapshot");
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct HeadStats {
    std::size_t layer = 0;
    std::size_t head = 0;
    double entropy = 0;
    double sink = 0;
    double max_logit = 0;
};

/// The three attention diagnostics restricted to each (layer, head).
inline std::vector<HeadStats> per_head_stats(const AttentionSnapshot& snap, double epsilon = 0.3) {
    std::vector<HeadStats> out;
    for (std::size_t l = 0; l < snap.rows.size(); ++l) {
        for (std::size_t h = 0; h < snap.rows[l].size(); ++h) {
            AttentionSnapshot one;
            one.rows = {{snap.rows[l][h]}};
            out.push_back({l, h, attention_entropy(one), attention_sink(one, epsilon), max_attention_logit(one)});
        }
    }
    return out;
}

}  // namespace skyladder
