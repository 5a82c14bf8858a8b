#pragma once

#include <cstdint>

#include "capsed/metrics/events.hpp"

namespace capsed {

// Intermediate statistics accumulated over segments (or events): number of
// substitutions, insertions, deletions, and active reference events.
struct ErrorStats {
    std::int64_t substitutions = 0;
    std::int64_t insertions = 0;
    std::int64_t deletions = 0;
    std::int64_t n_ref = 0;

    ErrorStats& operator+=(const ErrorStats& o) {
        substitutions += o.substitutions;
        insertions += o.insertions;
        deletions += o.deletions;
        n_ref += o.n_ref;
        return *this;
    }
};

struct ErScore {
    ErrorStats stats;
    double er = 0.0;
    // false when n_ref == 0 with errors present (the 0/0 vs x/0 distinction);
    // er is 0 when n_ref == 0 and the hypothesis is empty too.
    bool defined = true;
};

ErScore score_from_stats(const ErrorStats& s);

// Segment-based error rate: per fixed-length segment a class counts as
// active if any frame inside is active; S = min(FP,FN), I = FP-S, D = FN-S
// accumulated over segments; ER = (S+I+D)/N. The final partial segment is
// scored as a full segment.
ErrorStats segment_stats(const EventRoll& ref, const EventRoll& hyp, double segment_len = 1.0);
ErScore segment_error_rate(const EventRoll& ref, const EventRoll& hyp, double segment_len = 1.0);

// Event-based error rate, onset-only condition: greedy same-class matching
// in onset order with |onset difference| <= collar; leftover cross-class
// pairs within the collar become substitutions; remaining hypotheses are
// insertions, remaining references deletions.
ErrorStats event_onset_stats(const EventList& ref, const EventList& hyp, double collar = 0.5);
ErScore event_error_rate_onset(const EventList& ref, const EventList& hyp, double collar = 0.5);

}  // namespace capsed
