#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "skyladder/analytics.hpp"
#include "skyladder/flops.hpp"

using namespace skyladder;

namespace {

AttentionSnapshot one_head(std::vector<std::vector<double>> rows) {
    AttentionSnapshot snap;
    snap.rows = {{{}}};
    for (auto& w : rows) snap.rows[0][0].push_back({0, w, std::vector<double>(w.size(), 0.0)});
    return snap;
}

ScheduleSpec linear(std::int64_t w_s, std::int64_t w_e, Rational alpha, std::int64_t total) {
    ScheduleSpec s;
    s.w_s = w_s;
    s.w_e = w_e;
    s.alpha = alpha;
    s.total_steps = total;
    return s;
}

}  // namespace

TEST(Stability, ConstantTraces) {
    std::vector<double> flat(25, 2.5);
    EXPECT_EQ(volatility(flat), 0.0);
    EXPECT_EQ(smoothness(flat), 0.0);
    EXPECT_EQ(mean_loss_ratio(flat), 1.0);
}

TEST(Stability, SmallFixtures) {
    std::vector<double> t{2, 1, 2};
    EXPECT_DOUBLE_EQ(volatility(t, 2), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(smoothness(t), 1.0);
    EXPECT_DOUBLE_EQ(mean_loss_ratio(t), 1.25);
    std::vector<double> g{0.5, 2.0};
    EXPECT_DOUBLE_EQ(avg_grad_norm(g), 0.75);
    std::vector<double> big{1.5, 3.0, 1.0};
    EXPECT_EQ(avg_grad_norm(big), 1.0);
    std::vector<double> zeros{0, 0};
    EXPECT_EQ(avg_grad_norm(zeros), 0.0);
}

TEST(Stability, Properties) {
    std::vector<double> t{5, 4.2, 4.4, 3.9, 3.1, 3.3, 2.8, 2.9, 2.5, 2.6, 2.2, 2.1};
    auto scaled = t;
    for (auto& x : scaled) x *= 3;
    EXPECT_NEAR(volatility(scaled, 4), 3 * volatility(t, 4), 1e-12);
    std::vector<double> down{9, 7, 6, 2, 1};
    EXPECT_DOUBLE_EQ(smoothness(down), (9.0 - 1.0) / 4);
    EXPECT_LT(mean_loss_ratio(down), 1.0);
    // window 1 has no spread
    EXPECT_EQ(volatility(t, 1), 0.0);
}

TEST(Stability, Errors) {
    std::vector<double> one{1.0};
    EXPECT_THROW(volatility(one), InputError);
    EXPECT_THROW(smoothness(one), InputError);
    EXPECT_THROW(mean_loss_ratio(one), InputError);
    std::vector<double> bad{1.0, 0.0};
    EXPECT_THROW(mean_loss_ratio(bad), InputError);
    EXPECT_THROW(avg_grad_norm(std::vector<double>{}), InputError);
}

TEST(AttentionEntropy, HandValues) {
    EXPECT_NEAR(row_entropy(std::vector<double>(4, 0.25)), std::log(4.0), 1e-15);
    EXPECT_EQ(row_entropy(std::vector<double>{0, 1, 0}), 0.0);
    auto snap = one_head({{1.0}, {0.5, 0.5}, {0.2, 0.3, 0.5}});
    double expect = (0 + std::log(2.0) - (0.2 * std::log(0.2) + 0.3 * std::log(0.3) + 0.5 * std::log(0.5))) / 3;
    EXPECT_NEAR(attention_entropy(snap), expect, 1e-15);
    // moving mass toward one entry lowers entropy
    auto sharper = one_head({{1.0}, {0.5, 0.5}, {0.1, 0.2, 0.7}});
    EXPECT_LT(attention_entropy(sharper), attention_entropy(snap));
}

TEST(AttentionSink, ThresholdOnFirstVisibleKey) {
    auto snap = one_head({{1.0}, {0.5, 0.5}, {0.2, 0.3, 0.5}, {0.31, 0.69}});
    EXPECT_DOUBLE_EQ(attention_sink(snap, 0.3), 3.0 / 4.0);
    EXPECT_DOUBLE_EQ(attention_sink(snap, 0.5), 1.0 / 4.0);
    auto uniform = one_head({std::vector<double>(5, 0.2), std::vector<double>(4, 0.25)});
    EXPECT_EQ(attention_sink(uniform, 0.3), 0.0);
    auto all_first = one_head({{1.0, 0.0}, {1.0, 0.0, 0.0}});
    EXPECT_EQ(attention_sink(all_first, 0.3), 1.0);
    EXPECT_THROW(attention_sink(AttentionSnapshot{}), InputError);
}

TEST(Snapshot, ZeroModelIsUniform) {
    ModelConfig cfg{2, 2, 8, 8, 11, 10000.0, true, 1e-5, 64};
    auto p = Parameters<double>::zeros(cfg);
    std::vector<TokenId> tokens(12, 3);
    auto pos = stacked_positions(12, 12);
    auto seg = local_boundaries(12, 5, {}, false);  // blocks of 5, 5, 2
    auto tr = forward(p, cfg, std::span<const TokenId>(tokens), std::span<const Offset>(pos),
                      AttentionLayout::from_segments(seg));
    auto snap = snapshot_attention(tr, cfg);
    ASSERT_EQ(snap.layers(), 2u);
    ASSERT_EQ(snap.heads(), 2u);
    EXPECT_EQ(max_attention_logit(snap), 0.0);
    // row i sees (i mod 5) + 1 keys, uniformly
    double mean_h = 0;
    for (int i = 0; i < 12; ++i) mean_h += std::log(static_cast<double>(i % 5 + 1));
    EXPECT_NEAR(attention_entropy(snap), mean_h / 12, 1e-12);
    // first-key weight 1/k > 0.3 only for k <= 3: rows with 1, 2 or 3 keys
    EXPECT_DOUBLE_EQ(attention_sink(snap, 0.3), 8.0 / 12.0);
    for (const auto& row : snap.rows[1][0]) {
        EXPECT_NEAR(std::accumulate(row.weights.begin(), row.weights.end(), 0.0), 1.0, 1e-12);
    }
    EXPECT_EQ(snap.rows[0][0][7].first, 5);
    EXPECT_EQ(snap.rows[0][0][7].weights.size(), 3u);
    auto heads = per_head_stats(snap);
    ASSERT_EQ(heads.size(), 4u);
    EXPECT_NEAR(heads[3].entropy, mean_h / 12, 1e-12);
}

TEST(Snapshot, LogitsAreScaledDotProducts) {
    ModelConfig cfg{1, 1, 4, 4, 5, 10000.0, false, 1e-5, 16};
    auto p = Parameters<double>::init(cfg, 2);
    for (auto& v : p.views()) {
        if (v.decay) {
            for (auto& x : v.values()) x *= 50;
        }
    }
    std::vector<TokenId> tokens{1, 4, 2, 0, 3, 3};
    auto pos = stacked_positions(6, 6);
    MaskMode mode{MaskBase::local_causal, true, 4};
    std::vector<Offset> docs{2};
    auto tr = forward(p, cfg, std::span<const TokenId>(tokens), std::span<const Offset>(pos),
                      AttentionLayout::from_dense(dense_mask(mode, 6, docs)));
    auto snap = snapshot_attention(tr, cfg);
    // hand route: logits from the cached q and k over permitted pairs only
    double best = -1e300;
    for (Offset i = 0; i < 6; ++i) {
        const auto& row = snap.rows[0][0][static_cast<std::size_t>(i)];
        std::size_t n = 0;
        for (Offset j = 0; j < 6; ++j) {
            if (!dense_mask(mode, 6, docs).permitted(i, j)) continue;
            double s = tr.layers[0].q.row(i).dot(tr.layers[0].k.row(j)) / 2.0;
            EXPECT_NEAR(row.logits[n], s, 1e-12);
            best = std::max(best, s);
            ++n;
        }
        EXPECT_EQ(row.weights.size(), n);
        double z = 0;
        for (auto l : row.logits) z += std::exp(l);
        EXPECT_NEAR(row.weights.front(), std::exp(row.logits.front()) / z, 1e-12);
    }
    EXPECT_EQ(max_attention_logit(snap), best);
}

TEST(Flops, MeanContextMatchesBruteForce) {
    for (Offset length : {1, 7, 16, 100, 256}) {
        for (Offset w = 1; w <= length; w += (length > 40 ? 13 : 1)) {
            for (auto base : {MaskBase::causal_full, MaskBase::local_causal, MaskBase::sliding_window}) {
                auto counts = per_token_context(dense_mask({base, false, w}, length, {}));
                auto total = std::accumulate(counts.begin(), counts.end(), Offset{0});
                EXPECT_EQ(attended_pairs_per_sequence(base, length, w), total);
                EXPECT_DOUBLE_EQ(mean_context(base, length, w, FlopsAccounting::causal_pairs),
                                 static_cast<double>(total) / static_cast<double>(length));
            }
            // dense_blocks charges the full block: mean of the block size over tokens
            auto seg = local_boundaries(length, w, {}, false);
            double charged = 0;
            for (std::size_t s = 0; s < seg.size(); ++s) {
                auto len = static_cast<double>(seg.cu_seqlens[s + 1] - seg.cu_seqlens[s]);
                charged += len * len;
            }
            EXPECT_DOUBLE_EQ(mean_context(MaskBase::local_causal, length, w, FlopsAccounting::dense_blocks),
                             charged / static_cast<double>(length));
        }
    }
    EXPECT_DOUBLE_EQ(mean_context(MaskBase::local_causal, 64, 8, FlopsAccounting::causal_pairs), 4.5);
}

TEST(Flops, ParameterCounts) {
    FlopsShape s;  // 1B-class shape
    EXPECT_EQ(s.head_dim(), 64);
    const std::int64_t per_layer = 2 * 2048 * 2048 + 2 * 2048 * 256 + 3 * 2048 * 5632 + 2 * 2048;
    EXPECT_EQ(s.non_embedding_params(), 22 * per_layer + 2048);
    EXPECT_EQ(s.total_params(), s.non_embedding_params() + 2 * 32000 * 2048);
    EXPECT_NEAR(static_cast<double>(s.total_params()), 1.1e9, 0.01e9);
}

TEST(Flops, ConstantScheduleSavesNothing) {
    auto s = linear(256, 256, {1, 1}, 50);
    s.kind = ScheduleKind::constant;
    auto rep = flops_report(FlopsShape{}, s, 50, 1024);
    EXPECT_EQ(rep.saving(), 0.0);
    EXPECT_EQ(rep.attended_sched, rep.attended_const);
}

TEST(Flops, OneBillionModelSavings) {
    const std::int64_t batch = 1 << 20;
    for (auto acct : {FlopsAccounting::causal_pairs, FlopsAccounting::dense_blocks}) {
        auto r8 = flops_report(FlopsShape{}, linear(32, 8192, {1, 8}, 100000), 100000, batch, acct);
        auto r32 = flops_report(FlopsShape{}, linear(32, 32768, {1, 2}, 100000), 100000, batch, acct);
        EXPECT_NEAR(r8.saving(), 0.147, 0.05) << to_string(acct);
        EXPECT_NEAR(r32.saving(), 0.263, 0.05) << to_string(acct);
        EXPECT_LE(r8.attention_sched, r8.attention_const);
    }
}

TEST(Flops, SlowerGrowthSavesMore) {
    double previous = -1;
    for (auto alpha : {Rational{1, 1}, Rational{1, 2}, Rational{1, 4}, Rational{1, 8}}) {
        auto rep = flops_report(FlopsShape{}, linear(8, 512, alpha, 3000), 3000, 4096);
        EXPECT_GT(rep.attention_saving(), previous);
        EXPECT_LE(rep.attention_sched, rep.attention_const);
        previous = rep.attention_saving();
    }
}

TEST(Flops, PerStepRowsAndErrors) {
    auto s = linear(2, 8, {1, 1}, 10);
    auto rep = flops_report(FlopsShape{}, s, 10, 16);
    ASSERT_EQ(rep.steps.size(), 10u);
    EXPECT_EQ(rep.steps[0].window, 2);
    EXPECT_EQ(rep.steps[9].window, 8);
    EXPECT_DOUBLE_EQ(rep.steps[9].cum_flops_sched, rep.total_sched);
    EXPECT_THROW(flops_report(FlopsShape{}, s, 10, 12), InputError);
    EXPECT_THROW(flops_report(FlopsShape{}, s, 0, 16), InputError);
    EXPECT_THROW(parse_flops_accounting("bogus"), ConfigError);
}
