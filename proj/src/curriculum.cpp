#include "viewdistill/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "viewdistill/errors.hpp"

namespace viewdistill {

CurriculumSchedule build_schedule(int total_epochs, int phases,
                                  double final_fraction) {
  if (phases < 1) throw ConfigError("schedule: phases must be >= 1");
  if (total_epochs < phases) {
    std::ostringstream msg;
    msg << "schedule: " << total_epochs << " epochs cannot fill " << phases
        << " phases";
    throw ConfigError(msg.str());
  }

  CurriculumSchedule s;
  s.total_epochs = total_epochs;
  s.phases = phases;

  if (phases == 1) {
    s.final_phase_epochs = total_epochs;
    s.phase_lengths = {total_epochs};
  } else {
    if (!(final_fraction > 0.0 && final_fraction < 1.0))
      throw ConfigError("schedule: final fraction must lie in (0, 1)");
    // Round half away from zero, the llround convention.
    const int final_len = static_cast<int>(
        std::llround(final_fraction * static_cast<double>(total_epochs)));
    if (final_len < 1)
      throw ConfigError("schedule: final phase would get no epochs");
    if (final_len >= total_epochs)
      throw ConfigError("schedule: final phase would swallow every epoch");
    const int rest = total_epochs - final_len;
    const int base = rest / (phases - 1);
    const int remainder = rest % (phases - 1);
    s.final_phase_epochs = final_len;
    s.phase_lengths.assign(static_cast<size_t>(phases - 1), base);
    for (int i = 0; i < remainder; ++i) s.phase_lengths[static_cast<size_t>(i)] += 1;
    s.phase_lengths.push_back(final_len);
  }

  s.phase_boundaries.resize(s.phase_lengths.size());
  int start = 0;
  for (size_t i = 0; i < s.phase_lengths.size(); ++i) {
    s.phase_boundaries[i] = start;
    start += s.phase_lengths[i];
  }
  return s;
}

int phase_at(const CurriculumSchedule& schedule, int epoch) {
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    std::ostringstream msg;
    msg << "phase_at: epoch " << epoch << " outside [0, "
        << schedule.total_epochs << ")";
    throw ConfigError(msg.str());
  }
  // Last boundary <= epoch.
  const auto it = std::upper_bound(schedule.phase_boundaries.begin(),
                                   schedule.phase_boundaries.end(), epoch);
  return static_cast<int>(it - schedule.phase_boundaries.begin());
}

int positive_rank(int source_rank, int phase, int n_views) {
  if (source_rank < 0 || source_rank >= n_views)
    throw ConfigError("positive_rank: source rank outside the view set");
  if (phase < 1) throw ConfigError("positive_rank: phase must be >= 1");
  if (source_rank == 0) {
    // The ego view keeps distilling from the best exo view in every
    // phase; with no exo views there is nothing to point at.
    if (n_views < 2)
      throw ConfigError("positive_rank: ego source needs at least one exo view");
    return 1;
  }
  return std::max(0, source_rank - phase);
}

int max_view_count(std::span<const Take> takes) {
  if (takes.empty()) throw ConfigError("max_view_count: no takes");
  size_t widest = 0;
  for (const Take& take : takes)
    widest = std::max(widest, take.exo_views.size() + 1);
  return static_cast<int>(widest);
}

std::string schedule_report(const CurriculumSchedule& schedule) {
  std::ostringstream out;
  out << "{\n";
  out << "  \"total_epochs\": " << schedule.total_epochs << ",\n";
  out << "  \"phases\": " << schedule.phases << ",\n";
  out << "  \"final_phase_epochs\": " << schedule.final_phase_epochs << ",\n";
  out << "  \"phase_lengths\": [";
  for (size_t i = 0; i < schedule.phase_lengths.size(); ++i)
    out << (i ? "," : "") << schedule.phase_lengths[i];
  out << "],\n";
  out << "  \"phase_boundaries\": [";
  for (size_t i = 0; i < schedule.phase_boundaries.size(); ++i)
    out << (i ? "," : "") << schedule.phase_boundaries[i];
  out << "]\n";
  out << "}\n";
  return out.str();
}

}  // namespace viewdistill
