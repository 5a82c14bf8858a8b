#include "capsed/metrics/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "capsed/common.hpp"

namespace capsed {

namespace {

index_t label_index(const std::vector<std::string>& labels, const std::string& label) {
    const auto it = std::find(labels.begin(), labels.end(), label);
    return it == labels.end() ? -1 : static_cast<index_t>(it - labels.begin());
}

}  // namespace

EventRoll roll_from_events(const EventList& events, double frame_hop, index_t n_frames,
                           const std::vector<std::string>& labels) {
    if (frame_hop <= 0.0) throw ShapeError("roll_from_events: frame_hop must be positive");
    if (n_frames < 1) throw ShapeError("roll_from_events: n_frames must be >= 1");
    EventRoll roll;
    roll.activity = Tensor::zeros({n_frames, static_cast<index_t>(labels.size())});
    roll.frame_hop = frame_hop;
    roll.labels = labels;
    for (const Event& e : events) {
        const index_t k = label_index(labels, e.label);
        if (k < 0) throw DataError("roll_from_events: unknown label '" + e.label + "'");
        if (e.offset < e.onset) throw DataError("roll_from_events: offset before onset");
        // frame t covers [t*hop, (t+1)*hop); candidate range widened by one
        // frame on each side, the intersection test below is definitive
        index_t first = static_cast<index_t>(std::floor(e.onset / frame_hop)) - 1;
        index_t last = static_cast<index_t>(std::ceil(e.offset / frame_hop));
        first = std::max<index_t>(first, 0);
        last = std::min<index_t>(last, n_frames - 1);
        for (index_t t = first; t <= last; ++t) {
            const double fs = static_cast<double>(t) * frame_hop;
            if (fs < e.offset && fs + frame_hop > e.onset) roll.activity.at(t, k) = 1.0;
        }
    }
    return roll;
}

EventList events_from_roll(const EventRoll& roll) {
    EventList out;
    const index_t T = roll.n_frames(), K = roll.n_classes();
    for (index_t k = 0; k < K; ++k) {
        index_t run_start = -1;
        for (index_t t = 0; t <= T; ++t) {
            const bool active = t < T && roll.activity.at(t, k) != 0.0;
            if (active && run_start < 0) run_start = t;
            if (!active && run_start >= 0) {
                out.push_back({static_cast<double>(run_start) * roll.frame_hop,
                               static_cast<double>(t) * roll.frame_hop, roll.labels[static_cast<size_t>(k)]});
                run_start = -1;
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const Event& a, const Event& b) {
        if (a.onset != b.onset) return a.onset < b.onset;
        if (a.offset != b.offset) return a.offset < b.offset;
        return a.label < b.label;
    });
    return out;
}

EventList parse_annotation_text(const std::string& text, const std::vector<std::string>& labels,
                                const std::string& origin) {
    EventList out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw DataError(origin + ":" + std::to_string(line_no) +
                            ": expected onset<TAB>offset<TAB>label");
        Event e;
        try {
            size_t used = 0;
            e.onset = std::stod(line.substr(0, t1), &used);
            e.offset = std::stod(line.substr(t1 + 1, t2 - t1 - 1), &used);
        } catch (const std::exception&) {
            throw DataError(origin + ":" + std::to_string(line_no) + ": malformed time value");
        }
        e.label = line.substr(t2 + 1);
        if (e.label.empty())
            throw DataError(origin + ":" + std::to_string(line_no) + ": empty label");
        if (e.offset < e.onset)
            throw DataError(origin + ":" + std::to_string(line_no) + ": offset before onset");
        if (!labels.empty() && label_index(labels, e.label) < 0)
            throw DataError(origin + ":" + std::to_string(line_no) + ": label '" + e.label +
                            "' not in the class vocabulary");
        out.push_back(std::move(e));
    }
    return out;
}

EventList parse_annotations(const std::string& path, const std::vector<std::string>& labels) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_annotation_text(ss.str(), labels, path);
}

void write_annotations(const std::string& path, const EventList& events) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    char buf[64];
    for (const Event& e : events) {
        std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\t", e.onset, e.offset);
        out << buf << e.label << "\n";
    }
    if (!out) throw DataError(path + ": write failed");
}

}  // namespace capsed
