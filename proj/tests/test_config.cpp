#include <gtest/gtest.h>

#include "skyladder/config.hpp"

using namespace skyladder;

TEST(Config, DefaultsRoundTrip) {
    RunConfig c;
    auto j = to_json(c);
    EXPECT_EQ(to_json(from_json(j)), j);
}

TEST(Config, EditedValuesRoundTrip) {
    RunConfig c;
    c.model.n_layers = 3;
    c.model.rope_enabled = false;
    c.train.peak_lr = 1.5e-3;
    c.train.total_steps = 77;
    c.schedule.kind = ScheduleKind::cyclic_gradual;
    c.schedule.alpha = {3, 7};
    c.schedule.total_steps = 50;
    c.data.mask = MaskBase::sliding_window;
    c.data.intradoc = true;
    c.data.packing = "bm25";
    c.eval.stride = 16;
    auto back = from_json(to_json(c));
    EXPECT_EQ(back.model.n_layers, 3);
    EXPECT_FALSE(back.model.rope_enabled);
    EXPECT_EQ(back.train.peak_lr, 1.5e-3);
    EXPECT_EQ(back.schedule.kind, ScheduleKind::cyclic_gradual);
    EXPECT_EQ(back.schedule.alpha.num, 3);
    EXPECT_EQ(back.schedule.alpha.den, 7);
    EXPECT_EQ(back.schedule.total_steps, 50);
    EXPECT_EQ(back.data.mask, MaskBase::sliding_window);
    EXPECT_TRUE(back.data.intradoc);
    EXPECT_EQ(back.data.packing, "bm25");
    EXPECT_EQ(back.eval.stride, 16);
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, ScheduleStepsFollowTrainingByDefault) {
    auto c = from_json(json::parse(R"({"train": {"total_steps": 321}})"));
    EXPECT_EQ(c.schedule.total_steps, 321);
    auto d = from_json(json::parse(R"({"train": {"total_steps": 321}, "schedule": {"total_steps": 9}})"));
    EXPECT_EQ(d.schedule.total_steps, 9);
}

TEST(Config, AlphaForms) {
    EXPECT_EQ(from_json(json::parse(R"({"schedule": {"alpha": 2}})")).schedule.alpha.num, 2);
    auto c = from_json(json::parse(R"({"schedule": {"alpha": "1/8"}})"));
    EXPECT_EQ(c.schedule.alpha.num, 1);
    EXPECT_EQ(c.schedule.alpha.den, 8);
    EXPECT_THROW(from_json(json::parse(R"({"schedule": {"alpha": 0.125}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"schedule": {"alpha": "x/8"}})")), ConfigError);
}

TEST(Config, RejectsUnknownAndMistyped) {
    EXPECT_THROW(from_json(json::parse(R"({"modle": {}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"model": {"layers": 2}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"model": {"n_layers": "two"}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"model": 3})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"([1, 2])")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"data": {"packing": "greedy"}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"data": {"mask": "diagonal"}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"schedule": {"kind": "quadratic"}})")), ConfigError);
}

TEST(Config, Overrides) {
    json j = json::object();
    apply_override(j, "train.total_steps", "40");
    apply_override(j, "schedule.alpha", "1/4");
    apply_override(j, "data.intradoc", "true");
    apply_override(j, "data.mask", "sliding_window");
    auto c = from_json(j);
    EXPECT_EQ(c.train.total_steps, 40);
    EXPECT_EQ(c.schedule.total_steps, 40);
    EXPECT_EQ(c.schedule.alpha.den, 4);
    EXPECT_TRUE(c.data.intradoc);
    EXPECT_EQ(c.data.mask, MaskBase::sliding_window);
    EXPECT_THROW(apply_override(j, "train.nope", "1"), ConfigError);
    EXPECT_THROW(apply_override(j, "total_steps", "1"), ConfigError);
    EXPECT_THROW(apply_override(j, "a.b.c", "1"), ConfigError);
    EXPECT_THROW(apply_override(j, "train.peak_lr", "fast"), ConfigError);
}

TEST(Config, LoadErrors) {
    EXPECT_THROW(load_config_json("/nonexistent/config.json"), InputError);
}
