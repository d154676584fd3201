#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

namespace umm {

// Piecewise-constant sampling schedule: how many candidates to draw per
// instance at a given epoch. Counts shrink as training progresses.
struct SFDSchedule {
    std::vector<std::pair<int, int>> milestones;  // (start_epoch, k)
};

inline void validate(const SFDSchedule& s) {
    if (s.milestones.empty())
        throw std::invalid_argument("SFD schedule: needs at least one milestone");
    if (s.milestones.front().first != 0)
        throw std::invalid_argument("SFD schedule: first milestone must start at epoch 0");
    for (std::size_t i = 0; i < s.milestones.size(); ++i) {
        if (s.milestones[i].second < 1)
            throw std::invalid_argument("SFD schedule: candidate counts must be positive");
        if (i > 0) {
            if (s.milestones[i].first <= s.milestones[i - 1].first)
                throw std::invalid_argument("SFD schedule: start epochs must be strictly increasing");
            if (s.milestones[i].second > s.milestones[i - 1].second)
                throw std::invalid_argument("SFD schedule: candidate counts must be non-increasing");
        }
    }
}

// k of the last milestone whose start epoch is <= epoch.
inline int candidates_for_epoch(const SFDSchedule& s, int epoch) {
    validate(s);
    if (epoch < 0) throw std::invalid_argument("candidates_for_epoch: epoch must be non-negative");
    int k = s.milestones.front().second;
    for (const auto& [start, count] : s.milestones) {
        if (start > epoch) break;
        k = count;
    }
    return k;
}

inline SFDSchedule default_sfd() { return SFDSchedule{{{0, 5}, {100, 3}, {150, 1}}}; }

}  // namespace umm
