#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "viewdistill/exec.hpp"
#include "viewdistill/take.hpp"

namespace viewdistill {

struct HoiConfig {
  // Distance in meters from the ego camera along its gaze to the
  // assumed hand-object interaction point.
  double d_ego_hand = 0.6;
  GazeAxis gaze_axis = GazeAxis::PlusZ;
  // Slack on the front/back boundary: a view is "front" when
  // cos_xy(ego gaze, view gaze) <= front_tie_epsilon.
  double front_tie_epsilon = 0.0;
};

// Ranking of all views at one timestamp. `order` is best to worst and
// always starts with the ego view. `exo_ids` is ascending and aligns
// with `scores` (interaction alignment) and `front` (partition flag).
struct ViewRanking {
  int64_t timestamp = 0;
  std::vector<int> order;
  std::vector<int> exo_ids;
  std::vector<double> scores;
  std::vector<uint8_t> front;

  // Position of a view in `order` (0 = best). Throws if absent.
  int rank_of(int view_id) const;
};

struct RankingTimeline {
  std::vector<ViewRanking> per_second;  // one entry per integer second
};

// Estimated interaction point: d meters along the ego gaze from the
// ego camera center.
Eigen::Vector3d hoi_center(const Pose& ego_world, const HoiConfig& cfg);

// Cosine of the angle between the XY (ground-plane) projections of two
// vectors. Defined as 0 when either projection is near zero, which
// sends vertical gazes to the front partition rather than failing.
double cos_xy(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

// Cosine between an exo camera's gaze and the direction from its
// center to the interaction point. Throws DegenerateError when the
// camera sits on the interaction point.
double hoi_alignment(const Eigen::Vector3d& cam_center,
                     const Eigen::Vector3d& gaze,
                     const Eigen::Vector3d& p_center);

// Splits exo views into those facing the ego wearer (front) and those
// behind it, by the sign of the ground-plane gaze cosine. Order of ids
// within each group follows the input order.
struct FrontBackSplit {
  std::vector<int> front;
  std::vector<int> back;
};
FrontBackSplit partition_front_back(
    const Eigen::Vector3d& ego_gaze,
    std::span<const std::pair<int, Eigen::Vector3d>> exo_gazes,
    double tie_epsilon = 0.0);

// Orders exo views: front partition before back, alignment descending
// inside each partition, ties broken by ascending view id.
std::vector<int> order_exo_views(std::span<const int> ids,
                                 std::span<const double> scores,
                                 std::span<const uint8_t> front);

// Full per-timestamp ranking from camera-frame poses.
ViewRanking rank_views(const Pose& ego_camera_from_world,
                       std::span<const ExoCamera> exo_views,
                       const HoiConfig& cfg, int64_t timestamp);

// Ranking at every integer second of the take.
RankingTimeline rank_take(const Take& take, const HoiConfig& cfg,
                          ExecPolicy policy = ExecPolicy::Parallel);

// Ablation transforms. Both keep the ego view first and touch only the
// exo part of each per-second order; shuffling draws an independent
// permutation per timestamp from the seed.
void reverse_exo_order(RankingTimeline& timeline);
void shuffle_exo_order(RankingTimeline& timeline, uint64_t seed);

}  // namespace viewdistill
