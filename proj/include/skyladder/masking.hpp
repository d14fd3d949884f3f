#pragma once

// Attention masks in three equivalent representations:
//   SegmentSpec   - cumulative segment offsets (block-diagonal causal masks)
//   row bounds    - first visible key per query row (every mode here)
//   DenseMask     - explicit L x L permit grid, used for verification
//
// Every mode in this file permits a contiguous key range [lo_i, i] for query
// row i, which is what makes the row-bound form exact.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skyladder/errors.hpp"

namespace skyladder {

using Offset = std::int64_t;

enum class MaskBase { causal_full, local_causal, sliding_window };

inline std::string_view to_string(MaskBase base) {
    switch (base) {
        case MaskBase::causal_full: return "causal_full";
        case MaskBase::local_causal: return "local_causal";
        case MaskBase::sliding_window: return "sliding_window";
    }
    throw ConfigError("unknown mask base");
}

inline MaskBase parse_mask_base(std::string_view name) {
    for (auto base : {MaskBase::causal_full, MaskBase::local_causal, MaskBase::sliding_window}) {
        if (to_string(base) == name) return base;
    }
    throw ConfigError("unknown mask base '" + std::string(name) + "'");
}

struct MaskMode {
    MaskBase base = MaskBase::causal_full;
    bool intradoc = false;
    Offset w = 0;  // ignored for causal_full

    void validate() const {
        if (base != MaskBase::causal_full && w < 1) throw ConfigError("mask window must be >= 1");
    }

    /// Block modes can be expressed as a SegmentSpec; sliding windows cannot.
    bool is_block() const { return base != MaskBase::sliding_window; }
};

struct SegmentSpec {
    std::vector<Offset> cu_seqlens{0};
    Offset max_seqlen = 0;

    Offset length() const { return cu_seqlens.back(); }
    std::size_t size() const { return cu_seqlens.size() - 1; }

    /// Builds from strictly increasing offsets 0 = c_0 < ... < c_k = L.
    static SegmentSpec from_offsets(std::vector<Offset> offsets) {
        SegmentSpec seg;
        seg.cu_seqlens = std::move(offsets);
        seg.max_seqlen = 0;
        for (std::size_t i = 1; i < seg.cu_seqlens.size(); ++i) {
            seg.max_seqlen = std::max(seg.max_seqlen, seg.cu_seqlens[i] - seg.cu_seqlens[i - 1]);
        }
        seg.validate();
        return seg;
    }

    void validate() const {
        if (cu_seqlens.size() < 2 || cu_seqlens.front() != 0) {
            throw InputError("cu_seqlens must start at 0 and contain at least one segment");
        }
        Offset widest = 0;
        for (std::size_t i = 1; i < cu_seqlens.size(); ++i) {
            auto gap = cu_seqlens[i] - cu_seqlens[i - 1];
            if (gap < 1) throw InputError("cu_seqlens must be strictly increasing");
            widest = std::max(widest, gap);
        }
        if (widest != max_seqlen) throw InputError("max_seqlen does not match cu_seqlens");
    }

    /// Concatenates per-sequence specs into one spec over the stacked rows.
    static SegmentSpec concat(std::span<const SegmentSpec> parts) {
        std::vector<Offset> offsets{0};
        for (const auto& part : parts) {
            auto base = offsets.back();
            for (std::size_t i = 1; i < part.cu_seqlens.size(); ++i) offsets.push_back(base + part.cu_seqlens[i]);
        }
        return from_offsets(std::move(offsets));
    }

    friend bool operator==(const SegmentSpec&, const SegmentSpec&) = default;
};

/// L x L grid of permit/forbid entries. Row = query, column = key.
class DenseMask {
  public:
    /// Additive value for forbidden scores; exp() of it underflows to exactly
    /// zero in both float and double.
    template <typename T>
    static constexpr T forbidden_value() {
        return static_cast<T>(-1e30);
    }

    DenseMask() = default;
    explicit DenseMask(Offset length)
        : length_(length), permit_(static_cast<std::size_t>(length * length), 0) {}

    Offset length() const { return length_; }

    bool permitted(Offset i, Offset j) const { return permit_[index(i, j)] != 0; }
    void set(Offset i, Offset j, bool allow) { permit_[index(i, j)] = allow ? 1 : 0; }

    template <typename T>
    T additive(Offset i, Offset j) const {
        return permitted(i, j) ? T(0) : forbidden_value<T>();
    }

    friend bool operator==(const DenseMask&, const DenseMask&) = default;

  private:
    std::size_t index(Offset i, Offset j) const { return static_cast<std::size_t>(i * length_ + j); }

    Offset length_ = 0;
    std::vector<std::uint8_t> permit_;
};

/// Checks boundaries are strictly increasing and inside (0, L).
inline void validate_doc_boundaries(Offset length, std::span<const Offset> doc_boundaries) {
    Offset prev = 0;
    for (auto b : doc_boundaries) {
        if (b <= prev || b >= length) {
            throw InputError("document boundaries must be strictly increasing and inside (0, L)");
        }
        prev = b;
    }
}

/// Drops a trailing boundary equal to L (a document ending exactly at the
/// sequence end), which carries no masking information.
inline std::vector<Offset> interior_boundaries(std::span<const Offset> boundaries, Offset length) {
    std::vector<Offset> out;
    out.reserve(boundaries.size());
    for (auto b : boundaries) {
        if (b > 0 && b < length) out.push_back(b);
    }
    return out;
}

/// Segment list for the local causal mask of window w, optionally split at
/// document boundaries as well.
inline SegmentSpec local_boundaries(Offset length, Offset w, std::span<const Offset> doc_boundaries,
                                    bool intradoc) {
    if (length < 1) throw InputError("sequence length must be >= 1");
    if (w < 1) throw InputError("window must be >= 1");
    validate_doc_boundaries(length, doc_boundaries);

    std::vector<Offset> breaks;
    for (Offset b = w; b < length; b += w) breaks.push_back(b);
    if (intradoc) {
        std::vector<Offset> merged;
        merged.reserve(breaks.size() + doc_boundaries.size());
        std::set_union(breaks.begin(), breaks.end(), doc_boundaries.begin(), doc_boundaries.end(),
                       std::back_inserter(merged));
        breaks = std::move(merged);
    }
    std::vector<Offset> cu{0};
    cu.insert(cu.end(), breaks.begin(), breaks.end());
    cu.push_back(length);
    return SegmentSpec::from_offsets(std::move(cu));
}

/// Segment list for any block mode (causal_full is local with w = L).
inline SegmentSpec mode_segments(const MaskMode& mode, Offset length, std::span<const Offset> doc_boundaries) {
    if (!mode.is_block()) throw InputError("sliding-window masks have no segment representation");
    auto w = mode.base == MaskBase::causal_full ? length : std::min(mode.w, length);
    return local_boundaries(length, w, doc_boundaries, mode.intradoc);
}

/// First visible key for each query row of one sequence.
inline std::vector<Offset> row_lower_bounds(const MaskMode& mode, Offset length,
                                            std::span<const Offset> doc_boundaries) {
    mode.validate();
    validate_doc_boundaries(length, doc_boundaries);
    std::vector<Offset> lo(static_cast<std::size_t>(length));
    std::size_t next_doc = 0;
    Offset doc_start = 0;
    for (Offset i = 0; i < length; ++i) {
        while (next_doc < doc_boundaries.size() && doc_boundaries[next_doc] <= i) {
            doc_start = doc_boundaries[next_doc++];
        }
        Offset bound = 0;
        switch (mode.base) {
            case MaskBase::causal_full: bound = 0; break;
            case MaskBase::local_causal: bound = (i / mode.w) * mode.w; break;
            case MaskBase::sliding_window: bound = std::max<Offset>(0, i - mode.w); break;
        }
        if (mode.intradoc) bound = std::max(bound, doc_start);
        lo[static_cast<std::size_t>(i)] = bound;
    }
    return lo;
}

/// Row bounds implied by a segment list: each row sees back to its segment start.
inline std::vector<Offset> row_lower_bounds(const SegmentSpec& seg) {
    std::vector<Offset> lo(static_cast<std::size_t>(seg.length()));
    for (std::size_t s = 0; s < seg.size(); ++s) {
        for (auto i = seg.cu_seqlens[s]; i < seg.cu_seqlens[s + 1]; ++i) lo[static_cast<std::size_t>(i)] = seg.cu_seqlens[s];
    }
    return lo;
}

/// Dense mask built directly from the per-entry definitions of each mode.
inline DenseMask dense_mask(const MaskMode& mode, Offset length, std::span<const Offset> doc_boundaries) {
    mode.validate();
    validate_doc_boundaries(length, doc_boundaries);
    auto doc_of = [&](Offset pos) {
        return std::upper_bound(doc_boundaries.begin(), doc_boundaries.end(), pos) - doc_boundaries.begin();
    };
    DenseMask mask(length);
    for (Offset i = 0; i < length; ++i) {
        for (Offset j = 0; j <= i; ++j) {
            bool allow = true;
            switch (mode.base) {
                case MaskBase::causal_full: break;
                case MaskBase::local_causal: allow = (i / mode.w) * mode.w <= j; break;
                case MaskBase::sliding_window: allow = i - mode.w <= j; break;
            }
            if (mode.intradoc) allow = allow && doc_of(i) == doc_of(j);
            mask.set(i, j, allow);
        }
    }
    return mask;
}

/// Block-diagonal causal mask described by a segment list.
inline DenseMask segments_to_dense(const SegmentSpec& seg) {
    seg.validate();
    DenseMask mask(seg.length());
    for (std::size_t s = 0; s < seg.size(); ++s) {
        for (auto i = seg.cu_seqlens[s]; i < seg.cu_seqlens[s + 1]; ++i) {
            for (auto j = seg.cu_seqlens[s]; j <= i; ++j) mask.set(i, j, true);
        }
    }
    return mask;
}

/// Dense mask permitting exactly [lo_i, i] on each row.
inline DenseMask bounds_to_dense(std::span<const Offset> lower_bounds) {
    auto length = static_cast<Offset>(lower_bounds.size());
    DenseMask mask(length);
    for (Offset i = 0; i < length; ++i) {
        for (auto j = lower_bounds[static_cast<std::size_t>(i)]; j <= i; ++j) mask.set(i, j, true);
    }
    return mask;
}

/// C_i: number of keys row i may attend to.
inline std::vector<Offset> per_token_context(const DenseMask& mask) {
    std::vector<Offset> counts(static_cast<std::size_t>(mask.length()), 0);
    for (Offset i = 0; i < mask.length(); ++i) {
        for (Offset j = 0; j < mask.length(); ++j) {
            if (mask.permitted(i, j)) ++counts[static_cast<std::size_t>(i)];
        }
    }
    return counts;
}

/// Text grid of 0/1 (1 = permitted), one row per line.
inline std::string render_mask(const DenseMask& mask) {
    std::string out;
    out.reserve(static_cast<std::size_t>(mask.length() * (mask.length() + 1)));
    for (Offset i = 0; i < mask.length(); ++i) {
        for (Offset j = 0; j < mask.length(); ++j) out.push_back(mask.permitted(i, j) ? '1' : '0');
        out.push_back('\n');
    }
    return out;
}

}  // namespace skyladder
