#pragma once

// Context-window schedules: w(t) as a pure function of the training step.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <string_view>

#include "skyladder/errors.hpp"

namespace skyladder {

/// Exact non-negative rational, used for the expansion rate so the linear
/// schedule never accumulates floating-point error.
struct Rational {
    std::int64_t num = 1;
    std::int64_t den = 1;

    constexpr double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

    /// floor(num * t / den) for t >= 0.
    constexpr std::int64_t floor_mul(std::int64_t t) const { return (num * t) / den; }

    /// Parses "1/8" or a plain integer such as "2".
    static Rational parse(std::string_view text) {
        auto parse_int = [&](std::string_view part) {
            std::int64_t value = 0;
            auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
            if (ec != std::errc{} || ptr != part.data() + part.size() || part.empty()) {
                throw ConfigError("cannot parse rational '" + std::string(text) + "'");
            }
            return value;
        };
        auto slash = text.find('/');
        if (slash == std::string_view::npos) return normalized({parse_int(text), 1});
        return normalized({parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1))});
    }

    static Rational normalized(Rational r) {
        if (r.den == 0) throw ConfigError("rational with zero denominator");
        if (r.den < 0) {
            r.num = -r.num;
            r.den = -r.den;
        }
        auto g = std::gcd(r.num, r.den);
        if (g > 1) {
            r.num /= g;
            r.den /= g;
        }
        return r;
    }

    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

    friend constexpr bool operator==(const Rational&, const Rational&) = default;
};

enum class ScheduleKind {
    constant,
    linear,
    stepwise_linear,
    sinusoidal,
    exponential,
    step_switch,
    cyclic_gradual,
    cyclic_jump,
    long_to_short,
};

inline std::string_view to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::constant: return "constant";
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::stepwise_linear: return "stepwise_linear";
        case ScheduleKind::sinusoidal: return "sinusoidal";
        case ScheduleKind::exponential: return "exponential";
        case ScheduleKind::step_switch: return "step_switch";
        case ScheduleKind::cyclic_gradual: return "cyclic_gradual";
        case ScheduleKind::cyclic_jump: return "cyclic_jump";
        case ScheduleKind::long_to_short: return "long_to_short";
    }
    throw ConfigError("unknown schedule kind");
}

inline ScheduleKind parse_schedule_kind(std::string_view name) {
    for (auto kind : {ScheduleKind::constant, ScheduleKind::linear, ScheduleKind::stepwise_linear,
                      ScheduleKind::sinusoidal, ScheduleKind::exponential, ScheduleKind::step_switch,
                      ScheduleKind::cyclic_gradual, ScheduleKind::cyclic_jump,
                      ScheduleKind::long_to_short}) {
        if (to_string(kind) == name) return kind;
    }
    throw ConfigError("unknown schedule kind '" + std::string(name) + "'");
}

inline bool is_cyclic(ScheduleKind kind) {
    return kind == ScheduleKind::cyclic_gradual || kind == ScheduleKind::cyclic_jump;
}

/// Kinds whose window never decreases over training.
inline bool is_monotone(ScheduleKind kind) {
    return !is_cyclic(kind) && kind != ScheduleKind::long_to_short;
}

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::linear;
    std::int64_t w_s = 32;
    std::int64_t w_e = 8192;
    Rational alpha{1, 8};
    std::int64_t rounding_r = 1024;
    std::int64_t switch_step = 0;
    // Cycle length is cycle_tokens / tokens_per_step steps. When cycle_tokens
    // is zero, `cycles` evenly divides total_steps instead.
    std::int64_t cycle_tokens = 0;
    std::int64_t tokens_per_step = 1;
    std::int64_t cycles = 0;
    std::int64_t total_steps = 100000;

    void validate() const {
        if (w_s < 1 || w_s > w_e) throw ConfigError("schedule requires 1 <= w_s <= w_e");
        if (alpha.num <= 0 || alpha.den <= 0) throw ConfigError("schedule requires alpha > 0");
        if (rounding_r < 1) throw ConfigError("schedule requires rounding_r >= 1");
        if (total_steps < 1) throw ConfigError("schedule requires total_steps >= 1");
        if (kind == ScheduleKind::step_switch && (switch_step < 0 || switch_step >= total_steps)) {
            throw ConfigError("step_switch requires 0 <= switch_step < total_steps");
        }
        if (is_cyclic(kind)) {
            if (tokens_per_step < 1) throw ConfigError("tokens_per_step must be >= 1");
            if (cycle_tokens <= 0 && cycles <= 0) {
                throw ConfigError("cyclic schedule needs cycle_tokens or cycles");
            }
            if (cycle_steps() < 2) throw ConfigError("cycle shorter than two steps");
        }
    }

    std::int64_t cycle_steps() const {
        if (cycle_tokens > 0) return cycle_tokens / tokens_per_step;
        return (total_steps + cycles - 1) / cycles;
    }
};

namespace detail {

// Linear ramp from w_s, clamped at w_e.
inline std::int64_t linear_ramp(const ScheduleSpec& s, std::int64_t t) {
    auto span = s.w_e - s.w_s;
    auto grown = s.alpha.floor_mul(t);
    return grown >= span ? s.w_e : s.w_s + grown;
}

// First step at which the linear ramp hits w_e: ceil(span * den / num).
inline std::int64_t linear_target_step(const ScheduleSpec& s) {
    auto span = s.w_e - s.w_s;
    return (span * s.alpha.den + s.alpha.num - 1) / s.alpha.num;
}

inline std::int64_t floor_clamped(const ScheduleSpec& s, double value) {
    auto w = static_cast<std::int64_t>(std::floor(value));
    return std::clamp(w, s.w_s, s.w_e);
}

}  // namespace detail

/// Window size w(t) for 0 <= t <= total_steps.
inline std::int64_t window_at(const ScheduleSpec& s, std::int64_t t) {
    if (t < 0 || t > s.total_steps) {
        throw InputError("step " + std::to_string(t) + " outside [0, " + std::to_string(s.total_steps) + "]");
    }
    s.validate();
    const auto span = s.w_e - s.w_s;
    // alpha * t reaching the span ends every continuous ramp
    const bool ramp_done = s.alpha.floor_mul(t) >= span;

    switch (s.kind) {
        case ScheduleKind::constant:
            return s.w_e;
        case ScheduleKind::linear:
            return detail::linear_ramp(s, t);
        case ScheduleKind::stepwise_linear: {
            auto lin = detail::linear_ramp(s, t);
            if (lin >= s.w_e) return s.w_e;
            return std::max(s.w_s, s.rounding_r * (lin / s.rounding_r));
        }
        case ScheduleKind::sinusoidal: {
            if (span == 0 || ramp_done) return s.w_e;
            double x = s.alpha.to_double() * static_cast<double>(t);
            double phase = std::numbers::pi * x / (2.0 * static_cast<double>(span));
            return detail::floor_clamped(s, static_cast<double>(s.w_s) + static_cast<double>(span) * std::sin(phase));
        }
        case ScheduleKind::exponential: {
            if (span == 0 || ramp_done) return s.w_e;
            double x = s.alpha.to_double() * static_cast<double>(t);
            double ratio = static_cast<double>(s.w_e) / static_cast<double>(s.w_s);
            return detail::floor_clamped(s, static_cast<double>(s.w_s) * std::pow(ratio, x / static_cast<double>(span)));
        }
        case ScheduleKind::step_switch:
            return t < s.switch_step ? s.w_s : s.w_e;
        case ScheduleKind::cyclic_jump: {
            auto u = t % s.cycle_steps();
            return detail::linear_ramp(s, u);
        }
        case ScheduleKind::cyclic_gradual: {
            auto period = s.cycle_steps();
            auto u = t % period;
            return detail::linear_ramp(s, std::min(u, period - 1 - u));
        }
        case ScheduleKind::long_to_short: {
            if (t >= detail::linear_target_step(s)) return s.w_e;
            return std::max(s.w_s, s.w_e - s.alpha.floor_mul(t));
        }
    }
    throw ConfigError("unknown schedule kind");
}

/// Smallest step at which a monotone schedule reaches w_e.
inline std::int64_t steps_to_target(const ScheduleSpec& s) {
    if (!is_monotone(s.kind)) {
        throw UnsupportedKindError("steps_to_target undefined for schedule kind " +
                                   std::string(to_string(s.kind)));
    }
    switch (s.kind) {
        case ScheduleKind::constant: return 0;
        case ScheduleKind::step_switch: return s.switch_step;
        case ScheduleKind::linear: return detail::linear_target_step(s);
        default: break;
    }
    // Remaining kinds are monotone and reach w_e no later than the linear ramp.
    std::int64_t lo = 0;
    std::int64_t hi = detail::linear_target_step(s);
    auto eval = [&](std::int64_t t) {
        ScheduleSpec unbounded = s;
        unbounded.total_steps = std::max(s.total_steps, hi);
        return window_at(unbounded, t);
    };
    while (lo < hi) {
        auto mid = lo + (hi - lo) / 2;
        if (eval(mid) >= s.w_e) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    return lo;
}

/// Fraction of training spent growing the window, clamped to 1.
inline double expansion_fraction(const ScheduleSpec& s) {
    if (s.total_steps <= 0) throw InputError("expansion_fraction requires total_steps > 0");
    auto steps = steps_to_target(s);
    return std::min(1.0, static_cast<double>(steps) / static_cast<double>(s.total_steps));
}

}  // namespace skyladder
