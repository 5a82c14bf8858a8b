#include "capsed/metrics/error_rate.hpp"

#include <algorithm>
#include <cmath>

#include "capsed/common.hpp"

namespace capsed {

ErScore score_from_stats(const ErrorStats& s) {
    ErScore out;
    out.stats = s;
    const std::int64_t errors = s.substitutions + s.insertions + s.deletions;
    if (s.n_ref > 0) {
        out.er = static_cast<double>(errors) / static_cast<double>(s.n_ref);
        out.defined = true;
    } else {
        out.er = 0.0;
        out.defined = errors == 0;
    }
    return out;
}

ErrorStats segment_stats(const EventRoll& ref, const EventRoll& hyp, double segment_len) {
    if (segment_len <= 0.0) throw ShapeError("segment_stats: segment_len must be positive");
    if (ref.labels != hyp.labels)
        throw DataError("segment_stats: reference and hypothesis label sets differ");
    if (ref.n_frames() != hyp.n_frames() || ref.frame_hop != hyp.frame_hop)
        throw DataError("segment_stats: duration mismatch (" + std::to_string(ref.n_frames()) +
                        " vs " + std::to_string(hyp.n_frames()) + " frames)");

    const index_t T = ref.n_frames(), K = ref.n_classes();
    const index_t frames_per_seg =
        std::max<index_t>(1, static_cast<index_t>(std::llround(segment_len / ref.frame_hop)));
    const index_t n_segments = (T + frames_per_seg - 1) / frames_per_seg;

    ErrorStats acc;
    for (index_t s = 0; s < n_segments; ++s) {
        const index_t t0 = s * frames_per_seg;
        const index_t t1 = std::min(T, t0 + frames_per_seg);
        std::int64_t fp = 0, fn = 0, n_active = 0;
        for (index_t k = 0; k < K; ++k) {
            bool r = false, h = false;
            for (index_t t = t0; t < t1 && !(r && h); ++t) {
                r = r || ref.activity.at(t, k) != 0.0;
                h = h || hyp.activity.at(t, k) != 0.0;
            }
            if (r) ++n_active;
            if (h && !r) ++fp;
            if (r && !h) ++fn;
        }
        const std::int64_t sub = std::min(fp, fn);
        acc.substitutions += sub;
        acc.insertions += fp - sub;
        acc.deletions += fn - sub;
        acc.n_ref += n_active;
    }
    return acc;
}

ErScore segment_error_rate(const EventRoll& ref, const EventRoll& hyp, double segment_len) {
    return score_from_stats(segment_stats(ref, hyp, segment_len));
}

ErrorStats event_onset_stats(const EventList& ref, const EventList& hyp, double collar) {
    auto by_onset = [](const Event& a, const Event& b) {
        if (a.onset != b.onset) return a.onset < b.onset;
        return a.label < b.label;
    };
    EventList r = ref, h = hyp;
    std::sort(r.begin(), r.end(), by_onset);
    std::sort(h.begin(), h.end(), by_onset);

    std::vector<bool> r_used(r.size(), false), h_used(h.size(), false);
    // same-class greedy matching in onset order
    for (size_t hi = 0; hi < h.size(); ++hi) {
        for (size_t ri = 0; ri < r.size(); ++ri) {
            if (r_used[ri] || r[ri].label != h[hi].label) continue;
            if (std::abs(r[ri].onset - h[hi].onset) <= collar) {
                r_used[ri] = true;
                h_used[hi] = true;
                break;
            }
        }
    }
    // leftover cross-class pairs within the collar are substitutions
    ErrorStats st;
    st.n_ref = static_cast<std::int64_t>(r.size());
    for (size_t hi = 0; hi < h.size(); ++hi) {
        if (h_used[hi]) continue;
        for (size_t ri = 0; ri < r.size(); ++ri) {
            if (r_used[ri]) continue;
            if (std::abs(r[ri].onset - h[hi].onset) <= collar) {
                r_used[ri] = true;
                h_used[hi] = true;
                ++st.substitutions;
                break;
            }
        }
    }
    for (size_t hi = 0; hi < h.size(); ++hi)
        if (!h_used[hi]) ++st.insertions;
    for (size_t ri = 0; ri < r.size(); ++ri)
        if (!r_used[ri]) ++st.deletions;
    return st;
}

ErScore event_error_rate_onset(const EventList& ref, const EventList& hyp, double collar) {
    return score_from_stats(event_onset_stats(ref, hyp, collar));
}

}  // namespace capsed
