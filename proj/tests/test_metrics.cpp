#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "capsed/metrics/error_rate.hpp"
#include "capsed/metrics/events.hpp"
#include "testutil.hpp"

using namespace capsed;

namespace {

// Independent set-based segment scorer (the brute-force oracle).
ErrorStats naive_segment_stats(const EventRoll& ref, const EventRoll& hyp, double segment_len) {
    const index_t frames_per_seg = static_cast<index_t>(std::llround(segment_len / ref.frame_hop));
    ErrorStats acc;
    for (index_t t0 = 0; t0 < ref.n_frames(); t0 += frames_per_seg) {
        std::set<index_t> r_active, h_active;
        for (index_t t = t0; t < std::min(ref.n_frames(), t0 + frames_per_seg); ++t)
            for (index_t k = 0; k < ref.n_classes(); ++k) {
                if (ref.activity.at(t, k) != 0.0) r_active.insert(k);
                if (hyp.activity.at(t, k) != 0.0) h_active.insert(k);
            }
        std::int64_t fp = 0, fn = 0;
        for (index_t k : h_active)
            if (!r_active.count(k)) ++fp;
        for (index_t k : r_active)
            if (!h_active.count(k)) ++fn;
        acc.substitutions += std::min(fp, fn);
        acc.insertions += fp - std::min(fp, fn);
        acc.deletions += fn - std::min(fp, fn);
        acc.n_ref += static_cast<std::int64_t>(r_active.size());
    }
    return acc;
}

EventRoll random_roll(Rng& rng, index_t frames, index_t k, double density) {
    EventRoll roll;
    std::vector<std::string> labels;
    for (index_t i = 0; i < k; ++i) labels.push_back("c" + std::to_string(i));
    roll.labels = labels;
    roll.frame_hop = 0.02;
    roll.activity = Tensor::zeros({frames, k});
    for (index_t i = 0; i < roll.activity.size(); ++i)
        roll.activity[i] = rng.uniform() < density ? 1.0 : 0.0;
    return roll;
}

// Exhaustive minimal-error matching for small event lists: maximizes
// 2*(same-class matches) + (cross-class substitutions) over all injective
// pairings within the collar.
struct MatchSearch {
    const EventList& ref;
    const EventList& hyp;
    double collar;
    std::vector<bool> used;

    std::int64_t best_error = INT64_MAX;

    void run(size_t hi, std::int64_t same, std::int64_t sub) {
        if (hi == hyp.size()) {
            const std::int64_t d = static_cast<std::int64_t>(ref.size()) - same - sub;
            const std::int64_t i = static_cast<std::int64_t>(hyp.size()) - same - sub;
            best_error = std::min(best_error, d + i + sub);
            return;
        }
        run(hi + 1, same, sub);  // leave hyp[hi] unmatched
        for (size_t ri = 0; ri < ref.size(); ++ri) {
            if (used[ri]) continue;
            if (std::abs(ref[ri].onset - hyp[hi].onset) > collar) continue;
            used[ri] = true;
            if (ref[ri].label == hyp[hi].label)
                run(hi + 1, same + 1, sub);
            else
                run(hi + 1, same, sub + 1);
            used[ri] = false;
        }
    }
};

}  // namespace

TEST_CASE("roll_from_events: forced arithmetic and errors") {
    const std::vector<std::string> labels{"car"};
    EventRoll roll = roll_from_events({{0.0, 0.10, "car"}}, 0.02, 10, labels);
    for (index_t t = 0; t < 5; ++t) CHECK(roll.activity.at(t, 0) == 1.0);
    for (index_t t = 5; t < 10; ++t) CHECK(roll.activity.at(t, 0) == 0.0);

    EventRoll empty = roll_from_events({}, 0.02, 4, labels);
    for (index_t i = 0; i < empty.activity.size(); ++i) CHECK(empty.activity[i] == 0.0);

    CHECK_THROWS_AS(roll_from_events({{0.0, 1.0, "bird"}}, 0.02, 10, labels), DataError);
}

TEST_CASE("events<->roll round trip preserves boundaries to one hop") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<std::string> labels{"a", "b", "c"};
        EventList events;
        const int n = 1 + static_cast<int>(rng.randint(0, 4));
        for (int i = 0; i < n; ++i) {
            const double onset = rng.uniform(0.0, 4.0);
            events.push_back({onset, onset + rng.uniform(0.1, 1.5),
                              labels[static_cast<size_t>(rng.randint(0, 2))]});
        }
        const EventRoll roll = roll_from_events(events, 0.02, 300, labels);
        const EventList back = events_from_roll(roll);
        for (const Event& e : events) {
            bool found = false;
            for (const Event& r : back)
                if (r.label == e.label && r.onset <= e.onset + 0.02 + 1e-9 &&
                    r.offset >= e.offset - 0.02 - 1e-9)
                    found = true;
            CHECK(found);
        }
    }
}

TEST_CASE("segment ER: trivial cases") {
    const std::vector<std::string> labels{"a", "b"};
    Rng rng(9);
    EventRoll ref = random_roll(rng, 200, 2, 0.2);

    // hyp == ref -> ER 0
    ErScore s = segment_error_rate(ref, ref);
    CHECK(s.er == 0.0);
    CHECK(s.stats.substitutions == 0);

    // empty hyp -> all deletions, ER 1 when ref nonempty
    EventRoll empty = ref;
    empty.activity.fill(0.0);
    s = segment_error_rate(ref, empty);
    CHECK(s.er == doctest::Approx(1.0));
    CHECK(s.stats.insertions == 0);
    CHECK(s.stats.substitutions == 0);

    // one segment, ref {A}, hyp {B} -> S=1, ER 1
    EventRoll r1, h1;
    r1.labels = h1.labels = labels;
    r1.frame_hop = h1.frame_hop = 0.02;
    r1.activity = Tensor::zeros({50, 2});
    h1.activity = Tensor::zeros({50, 2});
    r1.activity.at(3, 0) = 1.0;
    h1.activity.at(30, 1) = 1.0;
    s = segment_error_rate(r1, h1);
    CHECK(s.stats.substitutions == 1);
    CHECK(s.stats.insertions == 0);
    CHECK(s.stats.deletions == 0);
    CHECK(s.stats.n_ref == 1);
    CHECK(s.er == doctest::Approx(1.0));
}

TEST_CASE("segment ER: N=0 reported distinctly") {
    const std::vector<std::string> labels{"a"};
    EventRoll zero;
    zero.labels = labels;
    zero.frame_hop = 0.02;
    zero.activity = Tensor::zeros({50, 1});
    ErScore s = segment_error_rate(zero, zero);
    CHECK(s.er == 0.0);
    CHECK(s.defined);
    EventRoll ins = zero;
    ins.activity.at(2, 0) = 1.0;
    s = segment_error_rate(zero, ins);
    CHECK_FALSE(s.defined);
    CHECK(s.stats.insertions == 1);
}

TEST_CASE("segment ER: duration mismatch is an error") {
    const std::vector<std::string> labels{"a"};
    EventRoll a, b;
    a.labels = b.labels = labels;
    a.frame_hop = b.frame_hop = 0.02;
    a.activity = Tensor::zeros({50, 1});
    b.activity = Tensor::zeros({60, 1});
    CHECK_THROWS_AS(segment_error_rate(a, b), DataError);
}

TEST_CASE("segment ER: agreement with the naive scorer on random instances") {
    Rng rng(123);
    for (int trial = 0; trial < 400; ++trial) {
        const index_t frames = 10 + rng.randint(0, 190);
        const index_t k = 1 + rng.randint(0, 4);
        EventRoll ref = random_roll(rng, frames, k, rng.uniform(0.02, 0.4));
        EventRoll hyp = random_roll(rng, frames, k, rng.uniform(0.02, 0.4));
        hyp.labels = ref.labels;
        const ErrorStats got = segment_stats(ref, hyp);
        const ErrorStats want = naive_segment_stats(ref, hyp, 1.0);
        CHECK(got.substitutions == want.substitutions);
        CHECK(got.insertions == want.insertions);
        CHECK(got.deletions == want.deletions);
        CHECK(got.n_ref == want.n_ref);
    }
}

TEST_CASE("segment ER: swap symmetry and accumulation linearity") {
    Rng rng(321);
    for (int trial = 0; trial < 60; ++trial) {
        EventRoll a = random_roll(rng, 150, 3, 0.25);
        EventRoll b = random_roll(rng, 150, 3, 0.25);
        b.labels = a.labels;
        const ErrorStats fwd = segment_stats(a, b);
        const ErrorStats rev = segment_stats(b, a);
        CHECK(fwd.substitutions == rev.substitutions);
        CHECK(fwd.insertions == rev.deletions);
        CHECK(fwd.deletions == rev.insertions);
    }
    // joint scoring equals summed stats
    EventRoll r1 = random_roll(rng, 100, 2, 0.3);
    EventRoll h1 = random_roll(rng, 100, 2, 0.3);
    EventRoll r2 = random_roll(rng, 250, 2, 0.3);
    EventRoll h2 = random_roll(rng, 250, 2, 0.3);
    h1.labels = r1.labels;
    h2.labels = r2.labels;
    ErrorStats joint = segment_stats(r1, h1);
    joint += segment_stats(r2, h2);
    const ErScore total = score_from_stats(joint);
    const double manual =
        static_cast<double>(joint.substitutions + joint.insertions + joint.deletions) /
        static_cast<double>(joint.n_ref);
    CHECK(total.er == doctest::Approx(manual));
}

TEST_CASE("segment ER: final partial segment scored as full") {
    const std::vector<std::string> labels{"a"};
    EventRoll ref, hyp;
    ref.labels = hyp.labels = labels;
    ref.frame_hop = hyp.frame_hop = 0.02;
    ref.activity = Tensor::zeros({60, 1});  // 1.2 s -> 2 segments
    hyp.activity = Tensor::zeros({60, 1});
    ref.activity.at(55, 0) = 1.0;  // only in the partial segment
    const ErScore s = segment_error_rate(ref, hyp);
    CHECK(s.stats.n_ref == 1);
    CHECK(s.stats.deletions == 1);
}

TEST_CASE("event ER onset-only: collar cases") {
    const EventList ref{{1.0, 2.0, "a"}};
    CHECK(event_error_rate_onset(ref, ref).er == 0.0);

    const EventList close{{1.4, 2.0, "a"}};
    ErScore s = event_error_rate_onset(ref, close);
    CHECK(s.er == 0.0);  // 0.4 s within the 0.5 s collar

    const EventList far{{1.6, 2.0, "a"}};
    s = event_error_rate_onset(ref, far);
    CHECK(s.stats.deletions == 1);
    CHECK(s.stats.insertions == 1);
    CHECK(s.er == doctest::Approx(2.0));
}

TEST_CASE("event ER: cross-class pairs in the collar are substitutions") {
    const EventList ref{{1.0, 2.0, "a"}};
    const EventList hyp{{1.2, 2.0, "b"}};
    const ErScore s = event_error_rate_onset(ref, hyp);
    CHECK(s.stats.substitutions == 1);
    CHECK(s.stats.insertions == 0);
    CHECK(s.stats.deletions == 0);
    CHECK(s.er == doctest::Approx(1.0));
}

TEST_CASE("event ER: greedy equals exhaustive when onsets are separated") {
    Rng rng(777);
    const std::vector<std::string> labels{"a", "b"};
    for (int trial = 0; trial < 200; ++trial) {
        // onsets at least 2*collar apart within each list
        auto gen = [&](int n) {
            EventList ev;
            double t = rng.uniform(0.0, 0.4);
            for (int i = 0; i < n; ++i) {
                ev.push_back({t, t + 0.3, labels[static_cast<size_t>(rng.randint(0, 1))]});
                t += 1.0 + rng.uniform(0.05, 0.8);
            }
            return ev;
        };
        const EventList ref = gen(1 + static_cast<int>(rng.randint(0, 2)));
        const EventList hyp = gen(1 + static_cast<int>(rng.randint(0, 2)));
        const ErrorStats greedy = event_onset_stats(ref, hyp, 0.5);
        MatchSearch search{ref, hyp, 0.5, std::vector<bool>(ref.size(), false)};
        search.run(0, 0, 0);
        CHECK(greedy.substitutions + greedy.insertions + greedy.deletions == search.best_error);
    }
}

TEST_CASE("annotation files: parse and errors") {
    namespace fsys = std::filesystem;
    const std::string path = (fsys::temp_directory_path() / "capsed_ann.tsv").string();
    {
        std::ofstream out(path);
        out << "0.000\t1.500\tcar\n\n2.0\t3.0\tbird\n";
    }
    const EventList ev = parse_annotations(path);
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].label == "car");
    CHECK(ev[0].offset == doctest::Approx(1.5));

    CHECK_THROWS_WITH_AS(parse_annotations(path, {"car"}),
                         doctest::Contains("bird"), DataError);
    {
        std::ofstream out(path);
        out << "0.0 1.0 car\n";  // spaces, not tabs
    }
    CHECK_THROWS_AS(parse_annotations(path), DataError);
    {
        std::ofstream out(path);
        out << "abc\t1.0\tcar\n";
    }
    CHECK_THROWS_AS(parse_annotations(path), DataError);
    fsys::remove(path);

    // write/parse round trip
    const std::string p2 = (fsys::temp_directory_path() / "capsed_ann2.tsv").string();
    const EventList src{{0.1234567, 1.25, "a"}, {2.0, 2.75, "b"}};
    write_annotations(p2, src);
    const EventList rt = parse_annotations(p2);
    REQUIRE(rt.size() == 2);
    CHECK(rt[0].onset == doctest::Approx(0.1234567).epsilon(1e-5));
    fsys::remove(p2);
}
