#pragma once

// Run configuration: one JSON document with model / train / schedule / data /
// eval sections. Any field can be overridden by its dotted name.

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "skyladder/errors.hpp"
#include "skyladder/eval.hpp"
#include "skyladder/masking.hpp"
#include "skyladder/model.hpp"
#include "skyladder/optim.hpp"
#include "skyladder/schedule.hpp"

namespace skyladder {

struct DataConfig {
    std::string corpus;      // JSONL, one {"text": ...} record per line
    std::string validation;  // JSONL validation documents
    std::string packed;      // packed dataset file
    std::string packing = "random";  // random | bm25
    Offset seq_len = 256;
    std::uint64_t seed = 0;
    MaskBase mask = MaskBase::local_causal;
    bool intradoc = false;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    ScheduleSpec schedule;
    DataConfig data;
    EvalConfig eval;

    MaskMode mask_mode() const { return {data.mask, data.intradoc, data.seq_len}; }
};

using nlohmann::json;

inline json to_json(const RunConfig& c) {
    const auto& m = c.model;
    const auto& t = c.train;
    const auto& s = c.schedule;
    const auto& d = c.data;
    return json{
        {"model",
         {{"n_layers", m.n_layers},
          {"n_heads", m.n_heads},
          {"d_model", m.d_model},
          {"d_ff", m.d_ff},
          {"vocab_size", m.vocab_size},
          {"rope_theta", m.rope_theta},
          {"rope_enabled", m.rope_enabled},
          {"norm_epsilon", m.norm_epsilon},
          {"max_context", m.max_context}}},
        {"train",
         {{"peak_lr", t.peak_lr},
          {"min_lr", t.min_lr},
          {"warmup_steps", t.warmup_steps},
          {"total_steps", t.total_steps},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"weight_decay", t.weight_decay},
          {"grad_clip", t.grad_clip},
          {"batch_tokens", t.batch_tokens},
          {"seed", t.seed},
          {"cycle_data", t.cycle_data}}},
        {"schedule",
         {{"kind", std::string(to_string(s.kind))},
          {"w_s", s.w_s},
          {"w_e", s.w_e},
          {"alpha", s.alpha.str()},
          {"rounding_r", s.rounding_r},
          {"switch_step", s.switch_step},
          {"cycle_tokens", s.cycle_tokens},
          {"tokens_per_step", s.tokens_per_step},
          {"cycles", s.cycles},
          {"total_steps", s.total_steps}}},
        {"data",
         {{"corpus", d.corpus},
          {"validation", d.validation},
          {"packed", d.packed},
          {"packing", d.packing},
          {"seq_len", d.seq_len},
          {"seed", d.seed},
          {"mask", std::string(to_string(d.mask))},
          {"intradoc", d.intradoc}}},
        {"eval", {{"window", c.eval.window}, {"stride", c.eval.stride}}},
    };
}

namespace detail {

template <typename V>
void take(const json& section, const char* key, V& out, const std::string& where) {
    if (!section.contains(key)) return;
    try {
        section.at(key).get_to(out);
    } catch (const json::exception&) {
        throw ConfigError("bad value for " + where + "." + key);
    }
}

inline void reject_unknown(const json& section, const json& known, const std::string& where) {
    if (!section.is_object()) throw ConfigError("section '" + where + "' must be an object");
    for (const auto& [key, _] : section.items()) {
        if (!known.contains(key)) throw ConfigError("unknown field " + where + "." + key);
    }
}

}  // namespace detail

/// Fills a RunConfig from JSON; missing fields keep their defaults, unknown
/// ones are rejected. schedule.total_steps defaults to train.total_steps.
inline RunConfig from_json(const json& j) {
    RunConfig c;
    const json known = to_json(c);
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown section '" + key + "'");
    }
    auto section = [&](const char* name) -> json {
        if (!j.contains(name)) return json::object();
        detail::reject_unknown(j.at(name), known.at(name), name);
        return j.at(name);
    };

    auto m = section("model");
    detail::take(m, "n_layers", c.model.n_layers, "model");
    detail::take(m, "n_heads", c.model.n_heads, "model");
    detail::take(m, "d_model", c.model.d_model, "model");
    detail::take(m, "d_ff", c.model.d_ff, "model");
    detail::take(m, "vocab_size", c.model.vocab_size, "model");
    detail::take(m, "rope_theta", c.model.rope_theta, "model");
    detail::take(m, "rope_enabled", c.model.rope_enabled, "model");
    detail::take(m, "norm_epsilon", c.model.norm_epsilon, "model");
    detail::take(m, "max_context", c.model.max_context, "model");

    auto t = section("train");
    detail::take(t, "peak_lr", c.train.peak_lr, "train");
    detail::take(t, "min_lr", c.train.min_lr, "train");
    detail::take(t, "warmup_steps", c.train.warmup_steps, "train");
    detail::take(t, "total_steps", c.train.total_steps, "train");
    detail::take(t, "adam_beta1", c.train.adam_beta1, "train");
    detail::take(t, "adam_beta2", c.train.adam_beta2, "train");
    detail::take(t, "adam_eps", c.train.adam_eps, "train");
    detail::take(t, "weight_decay", c.train.weight_decay, "train");
    detail::take(t, "grad_clip", c.train.grad_clip, "train");
    detail::take(t, "batch_tokens", c.train.batch_tokens, "train");
    detail::take(t, "seed", c.train.seed, "train");
    detail::take(t, "cycle_data", c.train.cycle_data, "train");

    auto s = section("schedule");
    std::string kind = std::string(to_string(c.schedule.kind));
    detail::take(s, "kind", kind, "schedule");
    c.schedule.kind = parse_schedule_kind(kind);
    detail::take(s, "w_s", c.schedule.w_s, "schedule");
    detail::take(s, "w_e", c.schedule.w_e, "schedule");
    if (s.contains("alpha")) {
        const auto& a = s.at("alpha");
        if (a.is_string()) {
            c.schedule.alpha = Rational::parse(a.get<std::string>());
        } else if (a.is_number_integer()) {
            c.schedule.alpha = Rational{a.get<std::int64_t>(), 1};
        } else {
            throw ConfigError("schedule.alpha must be an integer or a \"p/q\" string");
        }
    }
    detail::take(s, "rounding_r", c.schedule.rounding_r, "schedule");
    detail::take(s, "switch_step", c.schedule.switch_step, "schedule");
    detail::take(s, "cycle_tokens", c.schedule.cycle_tokens, "schedule");
    detail::take(s, "tokens_per_step", c.schedule.tokens_per_step, "schedule");
    detail::take(s, "cycles", c.schedule.cycles, "schedule");
    c.schedule.total_steps = c.train.total_steps;
    detail::take(s, "total_steps", c.schedule.total_steps, "schedule");

    auto d = section("data");
    detail::take(d, "corpus", c.data.corpus, "data");
    detail::take(d, "validation", c.data.validation, "data");
    detail::take(d, "packed", c.data.packed, "data");
    detail::take(d, "packing", c.data.packing, "data");
    detail::take(d, "seq_len", c.data.seq_len, "data");
    detail::take(d, "seed", c.data.seed, "data");
    std::string mask = std::string(to_string(c.data.mask));
    detail::take(d, "mask", mask, "data");
    c.data.mask = parse_mask_base(mask);
    detail::take(d, "intradoc", c.data.intradoc, "data");
    if (c.data.packing != "random" && c.data.packing != "bm25") {
        throw ConfigError("data.packing must be random or bm25");
    }

    auto e = section("eval");
    detail::take(e, "window", c.eval.window, "eval");
    detail::take(e, "stride", c.eval.stride, "eval");
    return c;
}

/// Applies `section.field = text` to a JSON config. The text is read as JSON
/// when the existing field is not a string (numbers, booleans).
inline void apply_override(json& j, std::string_view dotted, const std::string& text) {
    auto dot = dotted.find('.');
    if (dot == std::string_view::npos || dotted.find('.', dot + 1) != std::string_view::npos) {
        throw ConfigError("override '" + std::string(dotted) + "' must look like section.field");
    }
    std::string section(dotted.substr(0, dot)), field(dotted.substr(dot + 1));
    const json defaults = to_json(RunConfig{});
    if (!defaults.contains(section) || !defaults.at(section).contains(field)) {
        throw ConfigError("unknown setting '" + std::string(dotted) + "'");
    }
    if (defaults.at(section).at(field).is_string()) {
        j[section][field] = text;
        return;
    }
    try {
        j[section][field] = json::parse(text);
    } catch (const json::exception&) {
        throw ConfigError("cannot parse value '" + text + "' for " + std::string(dotted));
    }
}

inline json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
}

}  // namespace skyladder
