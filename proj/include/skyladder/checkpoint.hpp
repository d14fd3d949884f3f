#pragma once

// Binary parameter checkpoints: "CLMD", version, dtype, config block, then
// every tensor in declaration order as rank, dims and little-endian values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "skyladder/errors.hpp"
#include "skyladder/model.hpp"
#include "skyladder/packing.hpp"

namespace skyladder {

inline constexpr std::uint8_t kCheckpointVersion = 1;

enum class Dtype : std::uint8_t { f32 = 4, f64 = 8 };

template <typename T>
constexpr Dtype dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

namespace detail {

inline void write_f64(std::ostream& out, double v) { write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

}  // namespace detail

/// Writes parameters as `Stored` (float or double), converting from T.
template <typename Stored, typename T>
void write_checkpoint(std::ostream& out, const ModelConfig& cfg, const Parameters<T>& params) {
    out.write("CLMD", 4);
    detail::write_le<std::uint8_t>(out, kCheckpointVersion);
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<Stored>()));
    for (int v : {cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_ff, cfg.vocab_size}) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.max_context));
    detail::write_le<std::uint8_t>(out, cfg.rope_enabled ? 1 : 0);
    detail::write_f64(out, cfg.rope_theta);
    detail::write_f64(out, cfg.norm_epsilon);
    for (const auto& view : params.views()) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(view.dims.size()));
        for (auto d : view.dims) detail::write_le<std::uint32_t>(out, d);
        for (auto x : view.values()) {
            auto s = static_cast<Stored>(x);
            if constexpr (std::is_same_v<Stored, float>) {
                detail::write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(s));
            } else {
                detail::write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(s));
            }
        }
    }
    if (!out) throw InputError("failed writing checkpoint");
}

template <typename T>
struct Checkpoint {
    ModelConfig config;
    Dtype stored = Dtype::f32;
    Parameters<T> params;
};

/// Reads a checkpoint of either dtype into Parameters<T>.
template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CLMD", 4) != 0) throw InputError("not a CLMD checkpoint");
    auto version = detail::read_le<std::uint8_t>(in);
    if (version != kCheckpointVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
    auto dtype = static_cast<Dtype>(detail::read_le<std::uint8_t>(in));
    if (dtype != Dtype::f32 && dtype != Dtype::f64) throw InputError("unknown checkpoint dtype");

    Checkpoint<T> ck;
    ck.stored = dtype;
    auto& cfg = ck.config;
    cfg.n_layers = static_cast<int>(detail::read_le<std::uint32_t>(in));
    cfg.n_heads = static_cast<int>(detail::read_le<std::uint32_t>(in));
    cfg.d_model = static_cast<int>(detail::read_le<std::uint32_t>(in));
    cfg.d_ff = static_cast<int>(detail::read_le<std::uint32_t>(in));
    cfg.vocab_size = static_cast<int>(detail::read_le<std::uint32_t>(in));
    cfg.max_context = detail::read_le<std::uint32_t>(in);
    cfg.rope_enabled = detail::read_le<std::uint8_t>(in) != 0;
    cfg.rope_theta = detail::read_f64(in);
    cfg.norm_epsilon = detail::read_f64(in);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw InputError(std::string("checkpoint config invalid: ") + e.what());
    }

    ck.params = Parameters<T>::zeros(cfg);
    for (auto& view : ck.params.views()) {
        auto rank = detail::read_le<std::uint32_t>(in);
        if (rank != view.dims.size()) throw InputError("tensor " + view.name + " has unexpected rank");
        for (auto d : view.dims) {
            if (detail::read_le<std::uint32_t>(in) != d) throw InputError("tensor " + view.name + " has unexpected shape");
        }
        for (auto& x : view.values()) {
            if (dtype == Dtype::f32) {
                x = static_cast<T>(std::bit_cast<float>(detail::read_le<std::uint32_t>(in)));
            } else {
                x = static_cast<T>(std::bit_cast<double>(detail::read_le<std::uint64_t>(in)));
            }
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw InputError("trailing bytes after checkpoint");
    return ck;
}

}  // namespace skyladder
