#pragma once

// Schedule-aware pretraining loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "skyladder/digest.hpp"
#include "skyladder/errors.hpp"
#include "skyladder/masking.hpp"
#include "skyladder/model.hpp"
#include "skyladder/optim.hpp"
#include "skyladder/packing.hpp"
#include "skyladder/schedule.hpp"

namespace skyladder {

struct StepRecord {
    std::int64_t step = 0;
    std::int64_t tokens = 0;  // cumulative, including this step
    std::int64_t window = 0;
    double loss = 0;
    double grad_norm = 0;  // before clipping
    double lr = 0;
    double seconds = 0;  // wall time since the run started
    std::int64_t attended = 0;  // permitted (query, key) pairs this step
};

inline constexpr const char* kRunLogHeader = "step,tokens,window,loss,grad_norm,lr,seconds";

inline void write_run_log_row(std::ostream& out, const StepRecord& r) {
    out << r.step << ',' << r.tokens << ',' << r.window << ',' << std::setprecision(17) << r.loss << ','
        << r.grad_norm << ',' << r.lr << ',' << std::setprecision(6) << r.seconds << '\n';
}

struct RunLog {
    std::vector<StepRecord> records;
    std::string stream_digest;  // SHA-256 of every token consumed, in order

    void write_csv(std::ostream& out) const {
        out << kRunLogHeader << '\n';
        for (const auto& r : records) write_run_log_row(out, r);
    }

    static RunLog read_csv(std::istream& in) {
        RunLog log;
        std::string line;
        if (!std::getline(in, line) || line != kRunLogHeader) throw InputError("run log lacks the expected header");
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream fields(line);
            StepRecord r;
            std::string loss, grad;
            if (!(fields >> r.step >> r.tokens >> r.window >> loss >> grad >> r.lr >> r.seconds)) {
                throw InputError("run log line " + std::to_string(line_no) + " is malformed");
            }
            r.loss = std::stod(loss);
            r.grad_norm = std::stod(grad);
            log.records.push_back(r);
        }
        return log;
    }

    std::vector<double> losses() const {
        std::vector<double> out;
        for (const auto& r : records) out.push_back(r.loss);
        return out;
    }

    std::vector<double> grad_norms() const {
        std::vector<double> out;
        for (const auto& r : records) out.push_back(r.grad_norm);
        return out;
    }
};

/// Whole packed sequences stacked row-wise.
struct Batch {
    Offset seq_len = 0;
    std::vector<TokenId> tokens;
    std::vector<std::vector<Offset>> doc_boundaries;  // interior boundaries per sequence

    std::size_t sequences() const { return doc_boundaries.size(); }

    void append(const PackedSequence& seq) {
        if (seq.length() != seq_len) throw InputError("sequence length differs from batch length");
        tokens.insert(tokens.end(), seq.tokens.begin(), seq.tokens.end());
        doc_boundaries.push_back(interior_boundaries(seq.doc_boundaries, seq_len));
    }
};

/// Attention layout for a batch under `mode` (its w already resolved).
inline AttentionLayout batch_layout(const MaskMode& mode, const Batch& batch) {
    if (mode.is_block()) {
        std::vector<SegmentSpec> parts;
        parts.reserve(batch.sequences());
        for (const auto& docs : batch.doc_boundaries) parts.push_back(mode_segments(mode, batch.seq_len, docs));
        return AttentionLayout::from_segments(SegmentSpec::concat(parts));
    }
    std::vector<Offset> bounds;
    bounds.reserve(batch.tokens.size());
    for (std::size_t s = 0; s < batch.sequences(); ++s) {
        auto base = static_cast<Offset>(s) * batch.seq_len;
        for (auto lo : row_lower_bounds(mode, batch.seq_len, batch.doc_boundaries[s])) bounds.push_back(base + lo);
    }
    return AttentionLayout::from_bounds(std::move(bounds));
}

/// Number of permitted (query, key) pairs in a layout.
inline std::int64_t attended_pairs(const AttentionLayout& layout) {
    std::int64_t total = 0;
    for (Offset i = 0; i < layout.rows(); ++i) {
        if (layout.kind() == AttentionLayout::Kind::dense) {
            for (Offset j = 0; j < layout.rows(); ++j) total += layout.permitted(i, j) ? 1 : 0;
        } else {
            auto [first, last] = layout.key_range(i);
            total += last - first;
        }
    }
    return total;
}

/// Mask for step t: the schedule sets w for local and sliding modes.
inline MaskMode step_mask(const MaskMode& mode, const ScheduleSpec& schedule, std::int64_t t, Offset seq_len) {
    MaskMode out = mode;
    if (mode.base == MaskBase::causal_full) {
        out.w = seq_len;
    } else {
        out.w = std::min<Offset>(seq_len, window_at(schedule, t));
    }
    return out;
}

template <typename T>
struct ModelState {
    ModelConfig config;
    Parameters<T> params;
    AdamW<T> optimizer;
    std::int64_t step = 0;

    static ModelState create(const ModelConfig& cfg, std::uint64_t seed) {
        return {cfg, Parameters<T>::init(cfg, seed), AdamW<T>(cfg), 0};
    }
};

/// One optimizer step: forward, loss, backward, clip, AdamW.
template <typename T>
StepRecord train_step(ModelState<T>& state, const Batch& batch, const AttentionLayout& layout, const TrainConfig& cfg) {
    if (static_cast<std::int64_t>(batch.tokens.size()) != cfg.batch_tokens) {
        throw InputError("batch holds " + std::to_string(batch.tokens.size()) + " tokens, expected " +
                         std::to_string(cfg.batch_tokens));
    }
    StepRecord rec;
    rec.step = state.step;
    rec.lr = lr_at(cfg, std::min(state.step, cfg.total_steps));
    rec.attended = attended_pairs(layout);

    auto positions = stacked_positions(static_cast<Offset>(batch.tokens.size()), batch.seq_len);
    auto trace = forward(state.params, state.config, std::span<const TokenId>(batch.tokens),
                         std::span<const Offset>(positions), layout);
    auto targets = next_token_targets(batch.tokens, batch.seq_len);
    auto res = cross_entropy(trace.logits, std::span<const std::int64_t>(targets));
    rec.loss = res.loss;
    auto grads = backward(state.params, state.config, trace, res.d_logits);
    rec.grad_norm = clip_grad_norm(grads, cfg.grad_clip);
    if (!std::isfinite(rec.grad_norm)) throw NumericalError("non-finite gradient norm", -1);
    state.optimizer.update(state.params, grads, rec.lr, cfg);
    ++state.step;
    return rec;
}

template <typename T>
StepRecord train_step(ModelState<T>& state, const Batch& batch, const SegmentSpec& seg, const TrainConfig& cfg) {
    return train_step(state, batch, AttentionLayout::from_segments(seg), cfg);
}

/// Serves packed sequences in a seeded order; epoch e is shuffled with seed + e.
class SequenceStream {
  public:
    SequenceStream(const PackedDataset& data, std::uint64_t seed, bool cycle)
        : data_(&data), seed_(seed), cycle_(cycle) {
        if (data.sequences.empty()) throw InputError("packed dataset is empty");
        reshuffle();
    }

    const PackedSequence& next() {
        if (pos_ == order_.size()) {
            if (!cycle_) throw InputError("packed dataset exhausted and cycling is disabled");
            ++epoch_;
            reshuffle();
        }
        return data_->sequences[order_[pos_++]];
    }

    std::uint64_t epoch() const { return epoch_; }

  private:
    void reshuffle() {
        order_ = seeded_order(data_->sequences.size(), seed_ + epoch_);
        pos_ = 0;
    }

    const PackedDataset* data_;
    std::uint64_t seed_;
    bool cycle_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

template <typename T>
struct RunResult {
    RunLog log;
    ModelState<T> state;
};

struct RunOptions {
    std::ostream* log_csv = nullptr;  // rows are written and flushed as they happen
    std::function<void(const StepRecord&)> on_step;
};

/// Trains for train.total_steps steps. The data stream depends only on the
/// seed; the schedule only changes the mask.
template <typename T>
RunResult<T> run(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const ScheduleSpec& schedule,
                 const PackedDataset& data, const MaskMode& mode, const RunOptions& options = {}) {
    model_cfg.validate();
    train_cfg.validate();
    if (mode.base != MaskBase::causal_full) {
        schedule.validate();
        if (schedule.total_steps < train_cfg.total_steps - 1) {
            throw ConfigError("schedule covers fewer steps than the run");
        }
    }
    if (data.length > model_cfg.max_context) throw ConfigError("packed length exceeds the model context");
    if (train_cfg.batch_tokens % data.length != 0) throw ConfigError("batch_tokens must be a multiple of L");
    const auto per_batch = static_cast<std::size_t>(train_cfg.batch_tokens / data.length);

    RunResult<T> result{{}, ModelState<T>::create(model_cfg, train_cfg.seed)};
    SequenceStream stream(data, train_cfg.seed, train_cfg.cycle_data);
    Sha256 digest;
    if (options.log_csv) *options.log_csv << kRunLogHeader << '\n' << std::flush;
    const auto start = std::chrono::steady_clock::now();
    std::int64_t tokens_seen = 0;

    for (std::int64_t t = 0; t < train_cfg.total_steps; ++t) {
        Batch batch{data.length, {}, {}};
        for (std::size_t s = 0; s < per_batch; ++s) batch.append(stream.next());
        digest.update_u32(batch.tokens);

        auto step_mode = step_mask(mode, schedule, t, data.length);
        auto layout = batch_layout(step_mode, batch);
        StepRecord rec;
        try {
            rec = train_step(result.state, batch, layout, train_cfg);
        } catch (const NumericalError&) {
            rec.step = t;
            rec.window = step_mode.w;
            rec.loss = std::numeric_limits<double>::quiet_NaN();
            rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
            rec.lr = lr_at(train_cfg, t);
            if (options.log_csv) write_run_log_row(*options.log_csv, rec), options.log_csv->flush();
            result.log.records.push_back(rec);
            throw;
        }
        tokens_seen += static_cast<std::int64_t>(batch.tokens.size());
        rec.tokens = tokens_seen;
        rec.window = step_mode.w;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.records.push_back(rec);
        if (options.log_csv) {
            write_run_log_row(*options.log_csv, rec);
            options.log_csv->flush();
        }
        if (options.on_step) options.on_step(rec);
    }
    result.log.stream_digest = digest.hex();
    return result;
}

}  // namespace skyladder
