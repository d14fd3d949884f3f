#pragma once

// Training-compute accounting under a context-window schedule.

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "skyladder/errors.hpp"
#include "skyladder/masking.hpp"
#include "skyladder/model.hpp"
#include "skyladder/schedule.hpp"

namespace skyladder {

/// Shape facts needed for parameter counting; covers grouped-query attention
/// and tied heads, which the trainable model itself does not use.
struct FlopsShape {
    std::int64_t n_layers = 22;
    std::int64_t d_model = 2048;
    std::int64_t d_ff = 5632;
    std::int64_t n_heads = 32;
    std::int64_t n_kv_heads = 4;
    std::int64_t vocab_size = 32000;
    bool tied_embeddings = false;

    static FlopsShape from_model(const ModelConfig& cfg) {
        return {cfg.n_layers, cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.n_heads, cfg.vocab_size, false};
    }

    std::int64_t head_dim() const { return d_model / n_heads; }

    /// Attention, SwiGLU and norm weights, plus the final norm.
    std::int64_t non_embedding_params() const {
        auto kv = 2 * d_model * n_kv_heads * head_dim();
        auto per_layer = 2 * d_model * d_model + kv + 3 * d_model * d_ff + 2 * d_model;
        return n_layers * per_layer + d_model;
    }

    std::int64_t total_params() const {
        return non_embedding_params() + (tied_embeddings ? 1 : 2) * vocab_size * d_model;
    }
};

/// causal_pairs: 6 N_nonembed + 12 l d C, C the mean number of permitted keys.
/// dense_blocks: 6 N_total + 12 l d C, C the mean length of the block a token
/// sits in (a block is charged in full, as dense attention kernels do).
enum class FlopsAccounting { causal_pairs, dense_blocks };

inline std::string_view to_string(FlopsAccounting a) {
    return a == FlopsAccounting::causal_pairs ? "causal_pairs" : "dense_blocks";
}

inline FlopsAccounting parse_flops_accounting(std::string_view name) {
    if (name == "causal_pairs") return FlopsAccounting::causal_pairs;
    if (name == "dense_blocks") return FlopsAccounting::dense_blocks;
    throw ConfigError("unknown FLOPs accounting '" + std::string(name) + "'");
}

/// Permitted (query, key) pairs in one length-L sequence without documents.
inline std::int64_t attended_pairs_per_sequence(MaskBase base, Offset length, Offset w) {
    if (base == MaskBase::causal_full || w >= length) return length * (length + 1) / 2;
    if (base == MaskBase::local_causal) {
        auto q = length / w, r = length % w;
        return q * (w * (w + 1) / 2) + r * (r + 1) / 2;
    }
    // sliding: row i sees min(i, w) + 1 keys
    return w * (w + 1) / 2 + (length - w) * (w + 1);
}

/// Mean attention context per token at window w.
inline double mean_context(MaskBase base, Offset length, Offset w, FlopsAccounting acct) {
    if (acct == FlopsAccounting::causal_pairs) {
        return static_cast<double>(attended_pairs_per_sequence(base, length, w)) / static_cast<double>(length);
    }
    if (base == MaskBase::causal_full || w >= length) return static_cast<double>(length);
    if (base == MaskBase::local_causal) {
        auto q = length / w, r = length % w;
        return static_cast<double>(q * w * w + r * r) / static_cast<double>(length);
    }
    return static_cast<double>(std::min(w + 1, length));
}

struct FlopsStep {
    std::int64_t step = 0;
    std::int64_t window = 0;
    double mean_context = 0;
    double cum_flops_sched = 0;
    double cum_flops_const = 0;
};

struct FlopsReport {
    FlopsAccounting accounting = FlopsAccounting::causal_pairs;
    double total_sched = 0;
    double total_const = 0;
    double attention_sched = 0;
    double attention_const = 0;
    std::int64_t attended_sched = 0;  // permitted pairs over the whole run
    std::int64_t attended_const = 0;
    std::vector<FlopsStep> steps;

    double saving() const { return 1.0 - total_sched / total_const; }
    double attention_saving() const { return 1.0 - attention_sched / attention_const; }

    void write_csv(std::ostream& out) const {
        out << "step,window,mean_context,cum_flops_sched,cum_flops_const\n";
        out.precision(17);
        for (const auto& s : steps) {
            out << s.step << ',' << s.window << ',' << s.mean_context << ',' << s.cum_flops_sched << ','
                << s.cum_flops_const << '\n';
        }
    }
};

/// Compares training compute of `schedule` (windows capped at L = schedule.w_e)
/// with a constant full window over the same steps and tokens.
inline FlopsReport flops_report(const FlopsShape& shape, const ScheduleSpec& schedule, std::int64_t total_steps,
                                std::int64_t batch_tokens, FlopsAccounting acct = FlopsAccounting::causal_pairs,
                                MaskBase base = MaskBase::local_causal) {
    schedule.validate();
    if (total_steps < 1 || batch_tokens < 1) throw InputError("total_steps and batch_tokens must be positive");
    const Offset length = schedule.w_e;
    if (batch_tokens % length != 0) throw InputError("batch_tokens must be a multiple of w_e");
    const auto sequences = batch_tokens / length;
    const double n_params = static_cast<double>(
        acct == FlopsAccounting::causal_pairs ? shape.non_embedding_params() : shape.total_params());
    const double dense_per_token = 6.0 * n_params;
    const double attn_coef = 12.0 * static_cast<double>(shape.n_layers) * static_cast<double>(shape.d_model);
    const double tokens = static_cast<double>(batch_tokens);

    FlopsReport rep;
    rep.accounting = acct;
    const double c_full = mean_context(base, length, length, acct);
    const auto pairs_full = attended_pairs_per_sequence(base, length, length);
    rep.steps.reserve(static_cast<std::size_t>(total_steps));
    std::int64_t last_w = -1;
    double c = 0;
    std::int64_t pairs = 0;
    for (std::int64_t t = 0; t < total_steps; ++t) {
        auto w = std::min<std::int64_t>(length, window_at(schedule, std::min(t, schedule.total_steps)));
        if (w != last_w) {
            c = mean_context(base, length, w, acct);
            pairs = attended_pairs_per_sequence(base, length, w);
            last_w = w;
        }
        rep.attention_sched += tokens * attn_coef * c;
        rep.attention_const += tokens * attn_coef * c_full;
        rep.total_sched += tokens * (dense_per_token + attn_coef * c);
        rep.total_const += tokens * (dense_per_token + attn_coef * c_full);
        rep.attended_sched += pairs * sequences;
        rep.attended_const += pairs_full * sequences;
        rep.steps.push_back({t, w, c, rep.total_sched, rep.total_const});
    }
    return rep;
}

}  // namespace skyladder
