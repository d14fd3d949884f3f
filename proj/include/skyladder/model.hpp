#pragma once

// Small pre-norm decoder-only transformer (RMSNorm, RoPE, SwiGLU, no biases,
// untied output head) with a hand-written reverse pass.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "skyladder/attention.hpp"
#include "skyladder/corpus.hpp"
#include "skyladder/errors.hpp"
#include "skyladder/masking.hpp"

namespace skyladder {

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 16;
    int d_ff = 32;
    int vocab_size = 257;
    double rope_theta = 10000.0;
    bool rope_enabled = true;
    double norm_epsilon = 1e-5;
    Offset max_context = 256;

    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_context < 1) {
            throw ConfigError("model dimensions must be positive");
        }
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
        if (!(rope_theta > 0)) throw ConfigError("rope_theta must be positive");
        if (!(norm_epsilon > 0)) throw ConfigError("norm_epsilon must be positive");
        if (rope_enabled && head_dim() % 2 != 0) throw ConfigError("RoPE needs an even head dimension");
    }
};

template <typename T>
struct LayerParams {
    Vec<T> attn_norm;             // [d]
    Mat<T> wq, wk, wv, wo;        // [d x d]
    Vec<T> ffn_norm;              // [d]
    Mat<T> w_gate, w_up;          // [d x ff]
    Mat<T> w_down;                // [ff x d]
};

/// Flat view of one parameter tensor, used by the optimizer, checkpoints and
/// gradient checks.
template <typename T>
struct TensorView {
    std::string name;
    T* data = nullptr;
    std::size_t size = 0;
    std::vector<std::uint32_t> dims;
    bool decay = true;  // normalization gains are exempt from weight decay

    std::span<T> values() const { return {data, size}; }
};

template <typename T>
struct Parameters {
    Mat<T> embedding;  // [vocab x d]
    std::vector<LayerParams<T>> layers;
    Vec<T> final_norm;  // [d]
    Mat<T> head;        // [d x vocab]
    // Bumped on every in-place update; a forward trace remembers the value it saw.
    std::uint64_t version = 0;

    static Parameters zeros(const ModelConfig& cfg) {
        cfg.validate();
        Parameters p;
        const auto d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size;
        p.embedding = Mat<T>::Zero(v, d);
        p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (auto& l : p.layers) {
            l.attn_norm = Vec<T>::Zero(d);
            l.wq = Mat<T>::Zero(d, d);
            l.wk = Mat<T>::Zero(d, d);
            l.wv = Mat<T>::Zero(d, d);
            l.wo = Mat<T>::Zero(d, d);
            l.ffn_norm = Vec<T>::Zero(d);
            l.w_gate = Mat<T>::Zero(d, ff);
            l.w_up = Mat<T>::Zero(d, ff);
            l.w_down = Mat<T>::Zero(ff, d);
        }
        p.final_norm = Vec<T>::Zero(d);
        p.head = Mat<T>::Zero(d, v);
        return p;
    }

    /// N(0, 0.02) weights, residual output projections scaled by
    /// 1/sqrt(2 * n_layers), unit norm gains.
    static Parameters init(const ModelConfig& cfg, std::uint64_t seed) {
        auto p = zeros(cfg);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double std_base = 0.02;
        const double std_resid = std_base / std::sqrt(2.0 * cfg.n_layers);
        for (auto& view : p.views()) {
            if (!view.decay) {
                std::fill(view.data, view.data + view.size, T(1));
                continue;
            }
            bool residual = view.name.ends_with(".wo") || view.name.ends_with(".w_down");
            double sd = residual ? std_resid : std_base;
            for (std::size_t i = 0; i < view.size; ++i) view.data[i] = static_cast<T>(sd * normal(rng));
        }
        return p;
    }

    std::vector<TensorView<T>> views() {
        std::vector<TensorView<T>> out;
        auto mat = [&](const std::string& name, auto& m) {
            out.push_back({name, m.data(), static_cast<std::size_t>(m.size()),
                           {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, true});
        };
        auto vec = [&](const std::string& name, auto& v) {
            out.push_back({name, v.data(), static_cast<std::size_t>(v.size()), {static_cast<std::uint32_t>(v.size())}, false});
        };
        mat("embedding", embedding);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto prefix = "layers." + std::to_string(i);
            auto& l = layers[i];
            vec(prefix + ".attn_norm", l.attn_norm);
            mat(prefix + ".wq", l.wq);
            mat(prefix + ".wk", l.wk);
            mat(prefix + ".wv", l.wv);
            mat(prefix + ".wo", l.wo);
            vec(prefix + ".ffn_norm", l.ffn_norm);
            mat(prefix + ".w_gate", l.w_gate);
            mat(prefix + ".w_up", l.w_up);
            mat(prefix + ".w_down", l.w_down);
        }
        vec("final_norm", final_norm);
        mat("head", head);
        return out;
    }

    std::vector<TensorView<const T>> views() const {
        std::vector<TensorView<const T>> out;
        for (auto& v : const_cast<Parameters*>(this)->views()) out.push_back({v.name, v.data, v.size, v.dims, v.decay});
        return out;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& v : views()) n += v.size;
        return n;
    }

    bool all_finite() const {
        for (const auto& v : views()) {
            for (auto x : v.values()) {
                if (!std::isfinite(x)) return false;
            }
        }
        return true;
    }

    template <typename U>
    Parameters<U> cast() const {
        Parameters<U> out;
        out.embedding = embedding.template cast<U>();
        out.layers.resize(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& a = layers[i];
            auto& b = out.layers[i];
            b.attn_norm = a.attn_norm.template cast<U>();
            b.wq = a.wq.template cast<U>();
            b.wk = a.wk.template cast<U>();
            b.wv = a.wv.template cast<U>();
            b.wo = a.wo.template cast<U>();
            b.ffn_norm = a.ffn_norm.template cast<U>();
            b.w_gate = a.w_gate.template cast<U>();
            b.w_up = a.w_up.template cast<U>();
            b.w_down = a.w_down.template cast<U>();
        }
        out.final_norm = final_norm.template cast<U>();
        out.head = head.template cast<U>();
        return out;
    }
};

// ---------------------------------------------------------------------------
// RoPE

/// Rotates consecutive pairs (2k, 2k+1) of every head by position * theta^(-2k/dh).
/// `positions[r]` is the position of row r. Pass inverse = true for the
/// transpose rotation used in the reverse pass.
template <typename T>
void rope_apply(Mat<T>& x, std::span<const Offset> positions, int n_heads, double theta, bool inverse = false) {
    if (x.cols() % n_heads != 0) throw ConfigError("columns not divisible by head count");
    const auto dh = static_cast<int>(x.cols() / n_heads);
    if (dh % 2 != 0) throw ConfigError("RoPE needs an even head dimension");
    if (static_cast<Eigen::Index>(positions.size()) != x.rows()) throw InputError("one position per row required");
    const int half = dh / 2;
    std::vector<double> freq(static_cast<std::size_t>(half));
    for (int k = 0; k < half; ++k) freq[static_cast<std::size_t>(k)] = std::pow(theta, -2.0 * k / dh);
    // Stacked sequences repeat positions, so the trig values are tabulated once.
    Offset max_pos = 0;
    for (auto p : positions) {
        if (p < 0) throw InputError("negative position");
        max_pos = std::max(max_pos, p);
    }
    std::vector<T> cos_tab(static_cast<std::size_t>((max_pos + 1) * half)), sin_tab(cos_tab.size());
    for (Offset p = 0; p <= max_pos; ++p) {
        for (int k = 0; k < half; ++k) {
            const double angle = static_cast<double>(p) * freq[static_cast<std::size_t>(k)];
            const auto at = static_cast<std::size_t>(p * half + k);
            cos_tab[at] = static_cast<T>(std::cos(angle));
            sin_tab[at] = static_cast<T>(inverse ? -std::sin(angle) : std::sin(angle));
        }
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const auto base = static_cast<std::size_t>(positions[static_cast<std::size_t>(r)] * half);
        for (int k = 0; k < half; ++k) {
            const T c = cos_tab[base + static_cast<std::size_t>(k)];
            const T s = sin_tab[base + static_cast<std::size_t>(k)];
            for (int h = 0; h < n_heads; ++h) {
                auto col = static_cast<Eigen::Index>(h * dh + 2 * k);
                const T a = x(r, col);
                const T b = x(r, col + 1);
                x(r, col) = a * c - b * s;
                x(r, col + 1) = a * s + b * c;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct LayerTrace {
    Mat<T> x_in;
    Vec<T> inv_rms1;
    Mat<T> h1;
    Mat<T> q, k, v;  // q and k after RoPE
    AttentionCache<T> attn;
    Mat<T> attn_out;
    Mat<T> x_mid;
    Vec<T> inv_rms2;
    Mat<T> h2;
    Mat<T> gate, up, act;
};

template <typename T>
struct ForwardTrace {
    std::vector<TokenId> tokens;
    std::vector<Offset> positions;
    AttentionLayout layout;
    std::vector<LayerTrace<T>> layers;
    Mat<T> x_final;
    Vec<T> inv_rms_final;
    Mat<T> h_final;
    Mat<T> logits;  // [rows x vocab]
    const void* params_identity = nullptr;
    std::uint64_t params_version = 0;
};

namespace detail {

template <typename T>
void rms_norm_forward(const Mat<T>& x, const Vec<T>& gain, double eps, Vec<T>& inv_rms, Mat<T>& y) {
    inv_rms.resize(x.rows());
    y.resize(x.rows(), x.cols());
    const T d = static_cast<T>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        T ms = x.row(r).squaredNorm() / d;
        inv_rms(r) = T(1) / std::sqrt(ms + static_cast<T>(eps));
        y.row(r) = (x.row(r) * inv_rms(r)).cwiseProduct(gain.transpose());
    }
}

// Accumulates d(gain) and writes d(x) += ...
template <typename T>
void rms_norm_backward(const Mat<T>& x, const Vec<T>& gain, const Vec<T>& inv_rms, const Mat<T>& dy, Vec<T>& dgain,
                       Mat<T>& dx) {
    const T d = static_cast<T>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        auto xhat = x.row(r) * inv_rms(r);
        dgain.noalias() += dy.row(r).cwiseProduct(xhat).transpose();
        auto dxhat = dy.row(r).cwiseProduct(gain.transpose());
        T proj = dxhat.dot(xhat) / d;
        dx.row(r).noalias() += (dxhat - xhat * proj) * inv_rms(r);
    }
}

template <typename T>
auto sigmoid(const Mat<T>& a) {
    return (T(1) + (-a.array()).exp()).inverse();
}

template <typename T>
void check_finite(const Mat<T>& m, int layer, const char* what) {
    if (!m.allFinite()) {
        throw NumericalError(std::string("non-finite ") + what + (layer >= 0 ? " in layer " + std::to_string(layer) : ""),
                             layer);
    }
}

}  // namespace detail

/// Positions 0..seq_len-1 repeated for every stacked sequence.
inline std::vector<Offset> stacked_positions(Offset rows, Offset seq_len) {
    std::vector<Offset> pos(static_cast<std::size_t>(rows));
    for (Offset r = 0; r < rows; ++r) pos[static_cast<std::size_t>(r)] = r % seq_len;
    return pos;
}

/// Runs the model over `tokens` (one or more stacked sequences). `positions`
/// gives each row's RoPE position; masking is entirely described by `layout`.
template <typename T>
ForwardTrace<T> forward(const Parameters<T>& params, const ModelConfig& cfg, std::span<const TokenId> tokens,
                        std::span<const Offset> positions, AttentionLayout layout) {
    cfg.validate();
    const auto rows = static_cast<Offset>(tokens.size());
    if (layout.rows() != rows) throw InputError("mask does not match the number of tokens");
    if (static_cast<Offset>(positions.size()) != rows) throw InputError("one position per token required");
    if (static_cast<int>(params.layers.size()) != cfg.n_layers || params.embedding.cols() != cfg.d_model ||
        params.embedding.rows() != cfg.vocab_size) {
        throw InputError("parameters do not match the model config");
    }
    for (auto p : positions) {
        if (p < 0 || p >= cfg.max_context) throw InputError("position beyond the model context");
    }

    ForwardTrace<T> tr;
    tr.tokens.assign(tokens.begin(), tokens.end());
    tr.positions.assign(positions.begin(), positions.end());
    tr.layout = std::move(layout);
    tr.params_identity = &params;
    tr.params_version = params.version;

    const AttentionDims<T> dims{cfg.n_heads, cfg.head_dim()};
    Mat<T> x(rows, cfg.d_model);
    for (Offset r = 0; r < rows; ++r) {
        auto id = tokens[static_cast<std::size_t>(r)];
        if (id >= static_cast<TokenId>(cfg.vocab_size)) throw InputError("token id outside the vocabulary");
        x.row(r) = params.embedding.row(id);
    }

    tr.layers.resize(params.layers.size());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& lp = params.layers[li];
        auto& lt = tr.layers[li];
        lt.x_in = x;
        detail::rms_norm_forward(x, lp.attn_norm, cfg.norm_epsilon, lt.inv_rms1, lt.h1);
        lt.q.noalias() = lt.h1 * lp.wq;
        lt.k.noalias() = lt.h1 * lp.wk;
        lt.v.noalias() = lt.h1 * lp.wv;
        if (cfg.rope_enabled) {
            rope_apply(lt.q, tr.positions, cfg.n_heads, cfg.rope_theta);
            rope_apply(lt.k, tr.positions, cfg.n_heads, cfg.rope_theta);
        }
        attention_forward(lt.q, lt.k, lt.v, tr.layout, dims, lt.attn_out, lt.attn);
        lt.x_mid.noalias() = x + lt.attn_out * lp.wo;
        detail::rms_norm_forward(lt.x_mid, lp.ffn_norm, cfg.norm_epsilon, lt.inv_rms2, lt.h2);
        lt.gate.noalias() = lt.h2 * lp.w_gate;
        lt.up.noalias() = lt.h2 * lp.w_up;
        lt.act = lt.gate.array() * detail::sigmoid(lt.gate) * lt.up.array();
        x.noalias() = lt.x_mid + lt.act * lp.w_down;
        detail::check_finite(x, static_cast<int>(li), "activation");
    }
    tr.x_final = x;
    detail::rms_norm_forward(x, params.final_norm, cfg.norm_epsilon, tr.inv_rms_final, tr.h_final);
    tr.logits.noalias() = tr.h_final * params.head;
    detail::check_finite(tr.logits, -1, "logits");
    return tr;
}

/// Parameter gradients for upstream d(logits). The trace must come from a
/// forward over the same, unmodified parameters.
template <typename T>
Parameters<T> backward(const Parameters<T>& params, const ModelConfig& cfg, const ForwardTrace<T>& tr,
                       const Mat<T>& d_logits) {
    if (tr.params_identity != &params || tr.params_version != params.version) {
        throw ContractError("forward trace is stale: parameters changed since the forward pass");
    }
    if (d_logits.rows() != tr.logits.rows() || d_logits.cols() != tr.logits.cols()) {
        throw InputError("upstream gradient shape differs from logits");
    }
    auto g = Parameters<T>::zeros(cfg);
    const AttentionDims<T> dims{cfg.n_heads, cfg.head_dim()};

    g.head.noalias() = tr.h_final.transpose() * d_logits;
    Mat<T> dh_final = d_logits * params.head.transpose();
    Mat<T> dx = Mat<T>::Zero(tr.x_final.rows(), tr.x_final.cols());
    detail::rms_norm_backward(tr.x_final, params.final_norm, tr.inv_rms_final, dh_final, g.final_norm, dx);

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& lp = params.layers[li];
        const auto& lt = tr.layers[li];
        auto& lg = g.layers[li];

        // feed-forward branch: x = x_mid + act * w_down
        lg.w_down.noalias() = lt.act.transpose() * dx;
        Mat<T> d_act = dx * lp.w_down.transpose();
        const auto a = lt.gate.array();
        const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sg = detail::sigmoid(lt.gate);
        Mat<T> d_up = d_act.array() * a * sg;
        Mat<T> d_gate = d_act.array() * lt.up.array() * sg * (T(1) + a * (T(1) - sg));
        lg.w_gate.noalias() = lt.h2.transpose() * d_gate;
        lg.w_up.noalias() = lt.h2.transpose() * d_up;
        Mat<T> dh2 = d_gate * lp.w_gate.transpose();
        dh2.noalias() += d_up * lp.w_up.transpose();
        Mat<T> dx_mid = dx;
        detail::rms_norm_backward(lt.x_mid, lp.ffn_norm, lt.inv_rms2, dh2, lg.ffn_norm, dx_mid);

        // attention branch: x_mid = x_in + attn_out * wo
        lg.wo.noalias() = lt.attn_out.transpose() * dx_mid;
        Mat<T> d_attn = dx_mid * lp.wo.transpose();
        Mat<T> dq, dk, dv;
        attention_backward(lt.q, lt.k, lt.v, tr.layout, dims, lt.attn, d_attn, dq, dk, dv);
        if (cfg.rope_enabled) {
            rope_apply(dq, tr.positions, cfg.n_heads, cfg.rope_theta, true);
            rope_apply(dk, tr.positions, cfg.n_heads, cfg.rope_theta, true);
        }
        lg.wq.noalias() = lt.h1.transpose() * dq;
        lg.wk.noalias() = lt.h1.transpose() * dk;
        lg.wv.noalias() = lt.h1.transpose() * dv;
        Mat<T> dh1 = dq * lp.wq.transpose();
        dh1.noalias() += dk * lp.wk.transpose();
        dh1.noalias() += dv * lp.wv.transpose();
        dx = dx_mid;
        detail::rms_norm_backward(lt.x_in, lp.attn_norm, lt.inv_rms1, dh1, lg.attn_norm, dx);
    }

    for (std::size_t r = 0; r < tr.tokens.size(); ++r) {
        g.embedding.row(tr.tokens[r]) += dx.row(static_cast<Eigen::Index>(r));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr std::int64_t kIgnoreTarget = -1;

/// Next-token targets for stacked sequences of length seq_len; the last
/// position of every sequence has nothing to predict and is ignored.
inline std::vector<std::int64_t> next_token_targets(std::span<const TokenId> tokens, Offset seq_len) {
    std::vector<std::int64_t> targets(tokens.size(), kIgnoreTarget);
    for (std::size_t r = 0; r + 1 < tokens.size(); ++r) {
        if (static_cast<Offset>(r + 1) % seq_len != 0) targets[r] = tokens[r + 1];
    }
    return targets;
}

template <typename T>
struct LossResult {
    double loss = 0;        // mean NLL in nats
    double total_nll = 0;   // sum over counted positions
    std::size_t count = 0;  // counted positions
    Mat<T> d_logits;        // d(mean loss)/d(logits)
};

/// Mean cross-entropy over positions whose target is not kIgnoreTarget.
template <typename T>
LossResult<T> cross_entropy(const Mat<T>& logits, std::span<const std::int64_t> targets, bool want_grad = true) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) throw InputError("one target per row required");
    LossResult<T> res;
    if (want_grad) res.d_logits.resize(logits.rows(), logits.cols());
    Eigen::Array<T, Eigen::Dynamic, 1> probs(logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto target = targets[static_cast<std::size_t>(r)];
        if (target == kIgnoreTarget) {
            if (want_grad) res.d_logits.row(r).setZero();
            continue;
        }
        if (target < 0 || target >= logits.cols()) throw InputError("target outside the vocabulary");
        double peak = static_cast<double>(logits.row(r).maxCoeff());
        probs = (logits.row(r).transpose().array() - static_cast<T>(peak)).exp();
        const double sum = probs.template cast<double>().sum();
        res.total_nll += std::log(sum) + peak - static_cast<double>(logits(r, target));
        ++res.count;
        if (want_grad) {
            res.d_logits.row(r) = (probs / static_cast<T>(sum)).transpose();
            res.d_logits(r, target) -= T(1);
        }
    }
    if (res.count == 0) throw InputError("no positions to score");
    res.loss = res.total_nll / static_cast<double>(res.count);
    if (want_grad) res.d_logits /= static_cast<T>(res.count);
    if (!std::isfinite(res.loss)) throw NumericalError("non-finite loss", -1);
    return res;
}

}  // namespace skyladder
