#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "skyladder/errors.hpp"
#include "skyladder/model.hpp"

namespace skyladder {

struct TrainConfig {
    double peak_lr = 4e-4;
    double min_lr = 4e-5;
    std::int64_t warmup_steps = 2000;
    std::int64_t total_steps = 100000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    std::int64_t batch_tokens = 1 << 20;
    std::uint64_t seed = 42;
    bool cycle_data = true;

    void validate() const {
        if (min_lr > peak_lr) throw ConfigError("min_lr must not exceed peak_lr");
        if (warmup_steps < 0 || warmup_steps >= total_steps) throw ConfigError("need 0 <= warmup_steps < total_steps");
        if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
        if (batch_tokens < 1) throw ConfigError("batch_tokens must be positive");
    }
};

/// Linear warmup from 0 to peak_lr, then cosine decay to min_lr at total_steps.
inline double lr_at(const TrainConfig& cfg, std::int64_t t) {
    if (t < 0 || t > cfg.total_steps) throw InputError("step outside [0, total_steps]");
    if (t < cfg.warmup_steps) {
        return cfg.peak_lr * static_cast<double>(t) / static_cast<double>(cfg.warmup_steps);
    }
    double progress = static_cast<double>(t - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double global_grad_norm(const Parameters<T>& grads) {
    double sq = 0;
    for (const auto& v : grads.views()) {
        for (auto g : v.values()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

/// Scales gradients in place so their global norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(Parameters<T>& grads, double max_norm) {
    double norm = global_grad_norm(grads);
    if (norm > max_norm) {
        auto scale = static_cast<T>(max_norm / norm);
        for (auto& v : grads.views()) {
            for (auto& g : v.values()) g *= scale;
        }
    }
    return norm;
}

/// AdamW with decoupled weight decay, applied to tensors flagged `decay`.
template <typename T>
class AdamW {
  public:
    AdamW() = default;
    explicit AdamW(const ModelConfig& cfg) : m_(Parameters<T>::zeros(cfg)), v_(Parameters<T>::zeros(cfg)) {}

    std::int64_t steps() const { return step_; }
    const Parameters<T>& first_moment() const { return m_; }
    const Parameters<T>& second_moment() const { return v_; }

    void update(Parameters<T>& params, const Parameters<T>& grads, double lr, const TrainConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step_));
        auto pv = params.views();
        auto gv = grads.views();
        auto mv = m_.views();
        auto vv = v_.views();
        for (std::size_t t = 0; t < pv.size(); ++t) {
            const double decay = pv[t].decay ? lr * cfg.weight_decay : 0.0;
            for (std::size_t i = 0; i < pv[t].size; ++i) {
                const double g = gv[t].data[i];
                double m = cfg.adam_beta1 * mv[t].data[i] + (1.0 - cfg.adam_beta1) * g;
                double v = cfg.adam_beta2 * vv[t].data[i] + (1.0 - cfg.adam_beta2) * g * g;
                mv[t].data[i] = static_cast<T>(m);
                vv[t].data[i] = static_cast<T>(v);
                double p = pv[t].data[i];
                p -= decay * p;
                p -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
                pv[t].data[i] = static_cast<T>(p);
            }
        }
        ++params.version;
    }

  private:
    Parameters<T> m_;
    Parameters<T> v_;
    std::int64_t step_ = 0;
};

}  // namespace skyladder
