#pragma once

// Multi-head masked attention with exact backward.
//
// Three routes compute the same function:
//   segments  block-diagonal causal attention, one dense matmul per segment
//   windows   per-row key range [lo_i, i], O(rows * w) work (sliding mode)
//   dense     full Softmax(A + M) over every key with an additive mask
// The dense route exists to verify the other two.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "skyladder/errors.hpp"
#include "skyladder/masking.hpp"
#include "skyladder/parallel.hpp"

namespace skyladder {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Which keys each query row sees, over all stacked rows of a batch.
class AttentionLayout {
  public:
    enum class Kind { segments, windows, dense };

    static AttentionLayout from_segments(SegmentSpec seg) {
        seg.validate();
        AttentionLayout layout;
        layout.kind_ = Kind::segments;
        layout.rows_ = seg.length();
        layout.segments_ = std::move(seg);
        return layout;
    }

    static AttentionLayout from_bounds(std::vector<Offset> lower_bounds) {
        AttentionLayout layout;
        layout.kind_ = Kind::windows;
        layout.rows_ = static_cast<Offset>(lower_bounds.size());
        for (Offset i = 0; i < layout.rows_; ++i) {
            auto lo = lower_bounds[static_cast<std::size_t>(i)];
            if (lo < 0 || lo > i) throw InputError("row lower bound outside [0, i]");
        }
        layout.bounds_ = std::move(lower_bounds);
        return layout;
    }

    static AttentionLayout from_dense(DenseMask mask) {
        AttentionLayout layout;
        layout.kind_ = Kind::dense;
        layout.rows_ = mask.length();
        for (Offset i = 0; i < layout.rows_; ++i) {
            if (!mask.permitted(i, i)) throw InputError("dense mask must permit the diagonal");
        }
        layout.dense_ = std::move(mask);
        return layout;
    }

    Kind kind() const { return kind_; }
    Offset rows() const { return rows_; }
    const SegmentSpec& segments() const { return segments_; }
    const std::vector<Offset>& bounds() const { return bounds_; }
    const DenseMask& dense() const { return dense_; }

    /// Key range [first, last) scanned for row i (dense scans every key).
    std::pair<Offset, Offset> key_range(Offset i) const {
        switch (kind_) {
            case Kind::segments: {
                const auto& cu = segments_.cu_seqlens;
                auto it = std::upper_bound(cu.begin(), cu.end(), i);
                return {*(it - 1), i + 1};
            }
            case Kind::windows: return {bounds_[static_cast<std::size_t>(i)], i + 1};
            case Kind::dense: return {0, rows_};
        }
        return {0, 0};
    }

    bool permitted(Offset i, Offset j) const {
        if (kind_ == Kind::dense) return dense_.permitted(i, j);
        auto [first, last] = key_range(i);
        return j >= first && j < last;
    }

  private:
    Kind kind_ = Kind::segments;
    Offset rows_ = 0;
    SegmentSpec segments_;
    std::vector<Offset> bounds_;
    DenseMask dense_;
};

/// Attention probabilities kept for backward and for analytics.
///   segments: probs[h * n_seg + s] is the (len x len) block of segment s
///   rows:     row_probs[h] holds, per row, the weights over key_range(i)
template <typename T>
struct AttentionCache {
    std::vector<Mat<T>> block_probs;
    std::vector<std::vector<T>> row_probs;
    std::vector<std::size_t> row_offsets;  // start of row i inside row_probs[h]
};

template <typename T>
struct AttentionDims {
    int n_heads = 1;
    int head_dim = 1;
};

namespace detail {

template <typename T>
void softmax_row_inplace(T* row, Offset n) {
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> r(row, n);
    r = (r - r.maxCoeff()).exp();
    r /= r.sum();
}

}  // namespace detail

// Row tile height for causal blocks.
inline constexpr Offset kCausalTile = 64;

/// out = softmax(q k^T / sqrt(dh) + mask) v per head. q, k, v, out: [rows x (heads*dh)].
template <typename T>
void attention_forward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const AttentionLayout& layout,
                       AttentionDims<T> dims, Mat<T>& out, AttentionCache<T>& cache) {
    const auto rows = layout.rows();
    const int dh = dims.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    out.setZero(rows, static_cast<Eigen::Index>(dims.n_heads) * dh);
    cache = {};

    if (layout.kind() == AttentionLayout::Kind::segments) {
        const auto& cu = layout.segments().cu_seqlens;
        const auto n_seg = layout.segments().size();
        cache.block_probs.resize(static_cast<std::size_t>(dims.n_heads) * n_seg);
        parallel_for(cache.block_probs.size(), [&](std::size_t task) {
            const auto h = static_cast<Eigen::Index>(task / n_seg);
            const auto s = task % n_seg;
            const auto a = cu[s];
            const auto len = cu[s + 1] - a;
            auto qs = q.block(a, h * dh, len, dh);
            auto ks = k.block(a, h * dh, len, dh);
            auto vs = v.block(a, h * dh, len, dh);
            Mat<T>& p = cache.block_probs[task];
            p.setZero(len, len);
            // Row tiles only touch the causal key prefix; weights above the
            // diagonal stay exactly zero.
            for (Offset r0 = 0; r0 < len; r0 += kCausalTile) {
                const auto n = std::min(kCausalTile, len - r0);
                const auto keys = r0 + n;
                auto tile = p.block(r0, 0, n, keys);
                tile.noalias() = (qs.middleRows(r0, n) * ks.topRows(keys).transpose()) * scale;
                for (Offset i = 0; i < n; ++i) {
                    detail::softmax_row_inplace(p.row(r0 + i).data(), r0 + i + 1);
                    p.row(r0 + i).segment(r0 + i + 1, keys - r0 - i - 1).setZero();
                }
                out.block(a + r0, h * dh, n, dh).noalias() = tile * vs.topRows(keys);
            }
        });
        return;
    }

    cache.row_offsets.resize(static_cast<std::size_t>(rows) + 1);
    cache.row_offsets[0] = 0;
    for (Offset i = 0; i < rows; ++i) {
        auto [first, last] = layout.key_range(i);
        cache.row_offsets[static_cast<std::size_t>(i) + 1] = cache.row_offsets[static_cast<std::size_t>(i)] + static_cast<std::size_t>(last - first);
    }
    cache.row_probs.assign(static_cast<std::size_t>(dims.n_heads), std::vector<T>(cache.row_offsets.back()));
    const bool dense = layout.kind() == AttentionLayout::Kind::dense;
    parallel_for(static_cast<std::size_t>(dims.n_heads), [&](std::size_t hh) {
        const auto h = static_cast<Eigen::Index>(hh);
        for (Offset i = 0; i < rows; ++i) {
            auto [first, last] = layout.key_range(i);
            T* w = cache.row_probs[hh].data() + cache.row_offsets[static_cast<std::size_t>(i)];
            auto qi = q.row(i).segment(h * dh, dh);
            for (Offset j = first; j < last; ++j) {
                T score = qi.dot(k.row(j).segment(h * dh, dh)) * scale;
                if (dense) score += layout.dense().template additive<T>(i, j);
                w[j - first] = score;
            }
            detail::softmax_row_inplace(w, last - first);
            if (dense) {
                // vectorised exp clamps its input, leaving denormals where 0 belongs
                for (Offset j = first; j < last; ++j) {
                    if (!layout.dense().permitted(i, j)) w[j - first] = T(0);
                }
            }
            auto oi = out.row(i).segment(h * dh, dh);
            for (Offset j = first; j < last; ++j) oi.noalias() += w[j - first] * v.row(j).segment(h * dh, dh);
        }
    });
}

/// Gradients of attention_forward w.r.t. q, k, v given d(out).
template <typename T>
void attention_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const AttentionLayout& layout,
                        AttentionDims<T> dims, const AttentionCache<T>& cache, const Mat<T>& d_out, Mat<T>& dq,
                        Mat<T>& dk, Mat<T>& dv) {
    const auto rows = layout.rows();
    const int dh = dims.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    dq.setZero(q.rows(), q.cols());
    dk.setZero(k.rows(), k.cols());
    dv.setZero(v.rows(), v.cols());

    if (layout.kind() == AttentionLayout::Kind::segments) {
        const auto& cu = layout.segments().cu_seqlens;
        const auto n_seg = layout.segments().size();
        parallel_for(cache.block_probs.size(), [&](std::size_t task) {
            const auto h = static_cast<Eigen::Index>(task / n_seg);
            const auto s = task % n_seg;
            const auto a = cu[s];
            const auto len = cu[s + 1] - a;
            const Mat<T>& p = cache.block_probs[task];
            auto qs = q.block(a, h * dh, len, dh);
            auto ks = k.block(a, h * dh, len, dh);
            auto vs = v.block(a, h * dh, len, dh);
            auto dos = d_out.block(a, h * dh, len, dh);
            auto dks = dk.block(a, h * dh, len, dh);
            auto dvs = dv.block(a, h * dh, len, dh);
            for (Offset r0 = 0; r0 < len; r0 += kCausalTile) {
                const auto n = std::min(kCausalTile, len - r0);
                const auto keys = r0 + n;
                auto pt = p.block(r0, 0, n, keys);
                auto do_t = dos.middleRows(r0, n);
                Mat<T> dp = do_t * vs.topRows(keys).transpose();
                Vec<T> row_dot = pt.cwiseProduct(dp).rowwise().sum();
                Mat<T> ds = pt.cwiseProduct(dp.colwise() - row_dot) * scale;
                dq.block(a + r0, h * dh, n, dh).noalias() = ds * ks.topRows(keys);
                dks.topRows(keys).noalias() += ds.transpose() * qs.middleRows(r0, n);
                dvs.topRows(keys).noalias() += pt.transpose() * do_t;
            }
        });
        return;
    }

    // Row route: key gradients of one head touch many rows, so heads are the
    // unit of parallel work.
    parallel_for(static_cast<std::size_t>(dims.n_heads), [&](std::size_t hh) {
        const auto h = static_cast<Eigen::Index>(hh);
        std::vector<T> ds;
        for (Offset i = 0; i < rows; ++i) {
            auto [first, last] = layout.key_range(i);
            const T* w = cache.row_probs[hh].data() + cache.row_offsets[static_cast<std::size_t>(i)];
            auto doi = d_out.row(i).segment(h * dh, dh);
            ds.assign(static_cast<std::size_t>(last - first), T(0));
            T dot = 0;
            for (Offset j = first; j < last; ++j) {
                T dp = doi.dot(v.row(j).segment(h * dh, dh));
                ds[static_cast<std::size_t>(j - first)] = dp;
                dot += w[j - first] * dp;
            }
            auto qi = q.row(i).segment(h * dh, dh);
            auto dqi = dq.row(i).segment(h * dh, dh);
            for (Offset j = first; j < last; ++j) {
                const T pj = w[j - first];
                if (pj == T(0)) continue;
                const T g = pj * (ds[static_cast<std::size_t>(j - first)] - dot) * scale;
                dqi.noalias() += g * k.row(j).segment(h * dh, dh);
                dk.row(j).segment(h * dh, dh).noalias() += g * qi;
                dv.row(j).segment(h * dh, dh).noalias() += pj * doi;
            }
        }
    });
}

/// Attention weights of one head for row i, aligned with key_range(i).
template <typename T>
std::vector<T> attention_row(const AttentionLayout& layout, const AttentionCache<T>& cache, int head, Offset i) {
    auto [first, last] = layout.key_range(i);
    std::vector<T> out(static_cast<std::size_t>(last - first));
    if (layout.kind() == AttentionLayout::Kind::segments) {
        const auto& cu = layout.segments().cu_seqlens;
        auto s = static_cast<std::size_t>(std::upper_bound(cu.begin(), cu.end(), i) - cu.begin() - 1);
        const auto& p = cache.block_probs[static_cast<std::size_t>(head) * layout.segments().size() + s];
        for (Offset j = first; j < last; ++j) out[static_cast<std::size_t>(j - first)] = p(i - cu[s], j - cu[s]);
        return out;
    }
    const T* w = cache.row_probs[static_cast<std::size_t>(head)].data() + cache.row_offsets[static_cast<std::size_t>(i)];
    std::copy(w, w + (last - first), out.begin());
    return out;
}

}  // namespace skyladder
