#pragma once

#include <span>
#include <string>
#include <vector>

#include "viewdistill/take.hpp"

namespace viewdistill {

// Phase plan for curriculum training: the last phase gets a fixed
// share of the epochs, the earlier phases split the rest as evenly as
// possible with remainder epochs going to the earliest phases.
struct CurriculumSchedule {
  int total_epochs = 0;          // M
  int phases = 0;                // P
  int final_phase_epochs = 0;    // length of phase P
  std::vector<int> phase_lengths;     // P entries, sums to M
  std::vector<int> phase_boundaries;  // first epoch of each phase
};

// final_fraction is the share of epochs reserved for the last phase,
// rounded half away from zero. P = 1 collapses to one phase of M
// epochs regardless of the fraction.
CurriculumSchedule build_schedule(int total_epochs, int phases,
                                  double final_fraction);

// 1-based phase for an epoch in [0, M).
int phase_at(const CurriculumSchedule& schedule, int epoch);

// Rank of the distillation target for a source at rank `source_rank`
// during phase `phase`. Exo sources pull toward a view `phase` ranks
// better (clamped at the ego view, rank 0); the ego source always
// pulls toward the best exo view, rank 1.
int positive_rank(int source_rank, int phase, int n_views);

// Phase count used by the training loop: the widest view set (ego +
// exo) over the given takes.
int max_view_count(std::span<const Take> takes);

// JSON report with phase lengths and boundaries.
std::string schedule_report(const CurriculumSchedule& schedule);

}  // namespace viewdistill
