#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "skyladder/schedule.hpp"

using namespace skyladder;

namespace {

ScheduleSpec linear(std::int64_t w_s, std::int64_t w_e, Rational alpha, std::int64_t total = 100000) {
    ScheduleSpec s;
    s.kind = ScheduleKind::linear;
    s.w_s = w_s;
    s.w_e = w_e;
    s.alpha = alpha;
    s.total_steps = total;
    return s;
}

ScheduleSpec with_kind(ScheduleSpec s, ScheduleKind k) {
    s.kind = k;
    return s;
}

const ScheduleKind kAllKinds[] = {
    ScheduleKind::constant,       ScheduleKind::linear,       ScheduleKind::stepwise_linear,
    ScheduleKind::sinusoidal,     ScheduleKind::exponential,  ScheduleKind::step_switch,
    ScheduleKind::cyclic_gradual, ScheduleKind::cyclic_jump,  ScheduleKind::long_to_short,
};

ScheduleSpec small_spec(ScheduleKind k) {
    auto s = linear(8, 300, Rational{3, 7}, 2000);
    s.kind = k;
    s.rounding_r = 64;
    s.switch_step = 500;
    s.cycles = 3;
    return s;
}

}  // namespace

TEST(Rational, ParsesAndNormalizes) {
    EXPECT_EQ(Rational::parse("2/8"), (Rational{1, 4}));
    EXPECT_EQ(Rational::parse("3"), (Rational{3, 1}));
    EXPECT_THROW(Rational::parse("1/0"), ConfigError);
    EXPECT_THROW(Rational::parse("x"), ConfigError);
}

TEST(Rational, FloorMulIsExact) {
    Rational a{1, 8};
    EXPECT_EQ(a.floor_mul(65280), 8160);
    EXPECT_EQ(a.floor_mul(7), 0);
    EXPECT_EQ((Rational{31, 225}).floor_mul(1800), 248);
    EXPECT_EQ((Rational{31, 225}).floor_mul(1799), 247);
}

TEST(WindowAt, LinearExamples) {
    auto s = linear(32, 8192, {1, 8});
    EXPECT_EQ(window_at(s, 0), 32);
    EXPECT_EQ(window_at(s, 65279), 8191);
    EXPECT_EQ(window_at(s, 65280), 8192);
    EXPECT_EQ(window_at(s, 100000), 8192);
    EXPECT_EQ(window_at(s, 8), 33);
    EXPECT_EQ(window_at(s, 15), 33);
}

TEST(WindowAt, StepwiseRoundsLinearDown) {
    auto s = with_kind(linear(32, 8192, {1, 1}), ScheduleKind::stepwise_linear);
    s.rounding_r = 1024;
    // linear value 32 + 2468 = 2500 -> 2048
    EXPECT_EQ(window_at(s, 2468), 2048);
    EXPECT_EQ(window_at(s, 0), 32);  // max(w_s, 0)
    EXPECT_EQ(window_at(s, 992), 1024);
    EXPECT_EQ(window_at(s, 8160), 8192);
}

TEST(WindowAt, SinusoidalMatchesClosedForm) {
    auto s = with_kind(linear(32, 8192, {1, 8}), ScheduleKind::sinusoidal);
    for (std::int64_t t : {0, 1, 100, 1000, 30000, 65279}) {
        long double x = static_cast<long double>(t) / 8;
        long double v = 32 + 8160 * std::sin(std::numbers::pi_v<long double> * x / (2 * 8160));
        EXPECT_EQ(window_at(s, t), static_cast<std::int64_t>(std::floor(v))) << t;
    }
    EXPECT_EQ(window_at(s, 65280), 8192);
    EXPECT_EQ(window_at(s, 99999), 8192);
}

TEST(WindowAt, ExponentialMatchesClosedForm) {
    auto s = with_kind(linear(32, 8192, {1, 8}), ScheduleKind::exponential);
    for (std::int64_t t : {0, 1, 100, 1000, 30000, 65279}) {
        long double x = static_cast<long double>(t) / 8;
        long double v = 32 * std::pow(256.0L, x / 8160);
        EXPECT_EQ(window_at(s, t), static_cast<std::int64_t>(std::floor(v))) << t;
    }
    EXPECT_EQ(window_at(s, 65280), 8192);
}

TEST(WindowAt, StepSwitch) {
    auto s = with_kind(linear(4096, 32768, {1, 2}, 1000), ScheduleKind::step_switch);
    s.switch_step = 600;
    EXPECT_EQ(window_at(s, 0), 4096);
    EXPECT_EQ(window_at(s, 599), 4096);
    EXPECT_EQ(window_at(s, 600), 32768);
    EXPECT_EQ(steps_to_target(s), 600);
}

TEST(WindowAt, CyclicShapes) {
    auto s = linear(8, 24, {1, 1}, 100);
    s.cycle_tokens = 400;
    s.tokens_per_step = 10;  // 40-step cycles
    s.kind = ScheduleKind::cyclic_jump;
    EXPECT_EQ(window_at(s, 0), 8);
    EXPECT_EQ(window_at(s, 16), 24);
    EXPECT_EQ(window_at(s, 39), 24);
    EXPECT_EQ(window_at(s, 40), 8);
    EXPECT_EQ(window_at(s, 45), 13);

    s.kind = ScheduleKind::cyclic_gradual;
    EXPECT_EQ(window_at(s, 0), 8);
    EXPECT_EQ(window_at(s, 10), 18);
    EXPECT_EQ(window_at(s, 20), 24);
    EXPECT_EQ(window_at(s, 30), 17);  // min(30, 9) = 9 steps from the end
    EXPECT_EQ(window_at(s, 39), 8);
    EXPECT_EQ(window_at(s, 40), 8);
}

TEST(WindowAt, CyclesSplitTotalSteps) {
    auto s = linear(8, 24, {1, 1}, 90);
    s.kind = ScheduleKind::cyclic_jump;
    s.cycles = 3;
    EXPECT_EQ(s.cycle_steps(), 30);
    EXPECT_EQ(window_at(s, 30), 8);
    EXPECT_EQ(window_at(s, 29), 24);
}

TEST(WindowAt, LongToShortMirrorsLinear) {
    auto s = with_kind(linear(32, 1024, {1, 1}, 2000), ScheduleKind::long_to_short);
    EXPECT_EQ(window_at(s, 0), 1024);
    EXPECT_EQ(window_at(s, 100), 924);
    EXPECT_EQ(window_at(s, 991), 33);
    // ramp length equals the mirrored linear schedule's: 992 steps
    EXPECT_EQ(window_at(s, 992), 1024);
    EXPECT_EQ(window_at(s, 1999), 1024);
}

TEST(WindowAt, Errors) {
    auto s = linear(32, 8192, {1, 8}, 100);
    EXPECT_THROW(window_at(s, -1), InputError);
    EXPECT_THROW(window_at(s, 101), InputError);
    EXPECT_NO_THROW(window_at(s, 100));
    auto bad = s;
    bad.w_s = 9000;
    EXPECT_THROW(window_at(bad, 0), ConfigError);
    bad = s;
    bad.alpha = Rational{0, 1};
    EXPECT_THROW(window_at(bad, 0), ConfigError);
    bad = with_kind(s, ScheduleKind::step_switch);
    bad.switch_step = 100;
    EXPECT_THROW(window_at(bad, 0), ConfigError);
    EXPECT_THROW(parse_schedule_kind("quadratic"), ConfigError);
    bad = with_kind(s, ScheduleKind::cyclic_jump);
    EXPECT_THROW(window_at(bad, 0), ConfigError);
}

TEST(StepsToTarget, Examples) {
    EXPECT_EQ(steps_to_target(linear(32, 8192, {1, 8})), 65280);
    EXPECT_EQ(steps_to_target(linear(32, 32768, {1, 2})), 65472);
    EXPECT_EQ(steps_to_target(with_kind(linear(32, 8192, {1, 8}), ScheduleKind::constant)), 0);
    EXPECT_EQ(steps_to_target(linear(8, 256, {31, 225}, 3000)), 1800);
}

TEST(StepsToTarget, IsFirstStepAtTarget) {
    for (auto k : {ScheduleKind::linear, ScheduleKind::stepwise_linear, ScheduleKind::sinusoidal,
                   ScheduleKind::exponential, ScheduleKind::step_switch}) {
        auto s = small_spec(k);
        auto t = steps_to_target(s);
        ASSERT_LE(t, s.total_steps) << to_string(k);
        EXPECT_EQ(window_at(s, t), s.w_e) << to_string(k);
        if (t > 0) EXPECT_LT(window_at(s, t - 1), s.w_e) << to_string(k);
    }
}

TEST(StepsToTarget, RejectsNonMonotoneKinds) {
    for (auto k : {ScheduleKind::cyclic_gradual, ScheduleKind::cyclic_jump, ScheduleKind::long_to_short}) {
        EXPECT_THROW(steps_to_target(small_spec(k)), UnsupportedKindError) << to_string(k);
    }
}

TEST(ExpansionFraction, Examples) {
    EXPECT_DOUBLE_EQ(expansion_fraction(linear(32, 8192, {1, 8}, 100000)), 0.6528);
    EXPECT_DOUBLE_EQ(expansion_fraction(with_kind(linear(32, 8192, {1, 8}), ScheduleKind::constant)), 0.0);
    EXPECT_DOUBLE_EQ(expansion_fraction(linear(32, 8192, {1, 8}, 1000)), 1.0);
    // alpha = 1 under a 12,500-step budget: 8160 / 12500, reported as "64%"
    auto f = expansion_fraction(linear(32, 8192, {1, 1}, 12500));
    EXPECT_DOUBLE_EQ(f, 0.6528);
    EXPECT_NEAR(f, 0.64, 0.02);
    EXPECT_DOUBLE_EQ(expansion_fraction(linear(8, 256, {31, 225}, 3000)), 0.6);
}

TEST(ScheduleProperties, RangeBoundaryMonotoneClampDeterminism) {
    for (auto k : kAllKinds) {
        auto s = small_spec(k);
        std::int64_t prev = 0;
        for (std::int64_t t = 0; t <= s.total_steps; ++t) {
            auto w = window_at(s, t);
            ASSERT_GE(w, s.w_s) << to_string(k) << " t=" << t;
            ASSERT_LE(w, s.w_e) << to_string(k) << " t=" << t;
            ASSERT_EQ(w, window_at(s, t));
            if (k != ScheduleKind::cyclic_gradual && k != ScheduleKind::cyclic_jump &&
                k != ScheduleKind::long_to_short && t > 0) {
                ASSERT_GE(w, prev) << to_string(k) << " t=" << t;
            }
            prev = w;
        }
        if (k != ScheduleKind::constant && k != ScheduleKind::step_switch && k != ScheduleKind::long_to_short) {
            EXPECT_EQ(window_at(s, 0), s.w_s) << to_string(k);
        }
        if (is_monotone(k)) {
            for (auto t = steps_to_target(s); t <= s.total_steps; ++t) ASSERT_EQ(window_at(s, t), s.w_e);
        }
    }
}

TEST(ScheduleProperties, StepwiseWithinOneRoundingOfLinear) {
    auto lin = small_spec(ScheduleKind::linear);
    auto step = small_spec(ScheduleKind::stepwise_linear);
    for (std::int64_t t = 0; t <= lin.total_steps; ++t) {
        auto a = window_at(lin, t), b = window_at(step, t);
        ASSERT_LE(b, a);
        ASSERT_LT(a - b, step.rounding_r);
    }
}
