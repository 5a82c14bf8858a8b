#pragma once

#include <string>
#include <vector>

#include "capsed/tensor.hpp"

namespace capsed {

struct Event {
    double onset = 0.0;
    double offset = 0.0;
    std::string label;
};

using EventList = std::vector<Event>;

// Frame-by-class binary activity matrix.
struct EventRoll {
    Tensor activity;  // [frames, K], entries in {0,1}
    double frame_hop = 0.02;
    std::vector<std::string> labels;

    index_t n_frames() const { return activity.dim(0); }
    index_t n_classes() const { return activity.dim(1); }
};

// Frame t is active for class k iff [t*hop, (t+1)*hop) intersects an event
// interval of that class.
EventRoll roll_from_events(const EventList& events, double frame_hop, index_t n_frames,
                           const std::vector<std::string>& labels);

// Merges maximal active runs back into events.
EventList events_from_roll(const EventRoll& roll);

// Tab-separated "onset<TAB>offset<TAB>label" annotation files; blank lines
// ignored. When `labels` is non-empty, unknown labels are an error.
EventList parse_annotations(const std::string& path, const std::vector<std::string>& labels = {});
EventList parse_annotation_text(const std::string& text, const std::vector<std::string>& labels,
                                const std::string& origin);
void write_annotations(const std::string& path, const EventList& events);

}  // namespace capsed
