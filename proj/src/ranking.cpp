#include "viewdistill/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "viewdistill/errors.hpp"
#include "viewdistill/rng.hpp"

namespace viewdistill {

namespace {
constexpr double kTinyNorm = 1e-12;
}

int ViewRanking::rank_of(int view_id) const {
  for (size_t i = 0; i < order.size(); ++i)
    if (order[i] == view_id) return static_cast<int>(i);
  std::ostringstream msg;
  msg << "rank_of: view " << view_id << " not in ranking";
  throw ValidationError(msg.str());
}

Eigen::Vector3d hoi_center(const Pose& ego_world, const HoiConfig& cfg) {
  return ego_world.translation +
         cfg.d_ego_hand * gaze_vector(ego_world, cfg.gaze_axis);
}

double cos_xy(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const Eigen::Vector2d axy = a.head<2>();
  const Eigen::Vector2d bxy = b.head<2>();
  const double na = axy.norm();
  const double nb = bxy.norm();
  if (na < kTinyNorm || nb < kTinyNorm) return 0.0;
  return axy.dot(bxy) / (na * nb);
}

double hoi_alignment(const Eigen::Vector3d& cam_center,
                     const Eigen::Vector3d& gaze,
                     const Eigen::Vector3d& p_center) {
  const Eigen::Vector3d to_target = p_center - cam_center;
  const double dist = to_target.norm();
  if (dist < kTinyNorm)
    throw DegenerateError(
        "hoi_alignment: camera coincides with the interaction point");
  const double gaze_norm = gaze.norm();
  if (gaze_norm < kTinyNorm)
    throw DegenerateError("hoi_alignment: zero gaze direction");
  return gaze.dot(to_target) / (gaze_norm * dist);
}

FrontBackSplit partition_front_back(
    const Eigen::Vector3d& ego_gaze,
    std::span<const std::pair<int, Eigen::Vector3d>> exo_gazes,
    double tie_epsilon) {
  FrontBackSplit split;
  for (const auto& [id, gaze] : exo_gazes) {
    if (cos_xy(ego_gaze, gaze) <= tie_epsilon)
      split.front.push_back(id);
    else
      split.back.push_back(id);
  }
  return split;
}

std::vector<int> order_exo_views(std::span<const int> ids,
                                 std::span<const double> scores,
                                 std::span<const uint8_t> front) {
  if (ids.size() != scores.size() || ids.size() != front.size())
    throw ValidationError("order_exo_views: length mismatch");
  std::vector<size_t> idx(ids.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (front[a] != front[b]) return front[a] > front[b];
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = ids[idx[i]];
  return out;
}

ViewRanking rank_views(const Pose& ego_camera_from_world,
                       std::span<const ExoCamera> exo_views,
                       const HoiConfig& cfg, int64_t timestamp) {
  const Pose ego_world = to_world(ego_camera_from_world);
  const Eigen::Vector3d ego_gaze = gaze_vector(ego_world, cfg.gaze_axis);
  const Eigen::Vector3d center = hoi_center(ego_world, cfg);

  ViewRanking out;
  out.timestamp = timestamp;
  out.exo_ids.reserve(exo_views.size());
  out.scores.reserve(exo_views.size());
  out.front.reserve(exo_views.size());

  for (const ExoCamera& cam : exo_views) {
    const Pose world = to_world(cam.pose);
    const Eigen::Vector3d gaze = gaze_vector(world, cfg.gaze_axis);
    out.exo_ids.push_back(cam.view_id);
    out.scores.push_back(hoi_alignment(world.translation, gaze, center));
    // A view faces the ego wearer when the ground-plane projections of
    // the two gazes are anti-parallel or orthogonal.
    out.front.push_back(cos_xy(ego_gaze, gaze) <= cfg.front_tie_epsilon ? 1
                                                                        : 0);
  }

  out.order.reserve(exo_views.size() + 1);
  out.order.push_back(kEgoViewId);
  const std::vector<int> exo_order =
      order_exo_views(out.exo_ids, out.scores, out.front);
  out.order.insert(out.order.end(), exo_order.begin(), exo_order.end());
  return out;
}

RankingTimeline rank_take(const Take& take, const HoiConfig& cfg,
                          ExecPolicy policy) {
  {
    std::ostringstream missing;
    int n_missing = 0;
    for (int t = 0; t < take.duration_s; ++t) {
      if (!take.ego_track.at(t)) {
        missing << (n_missing++ ? ", " : "") << t;
      }
    }
    if (n_missing > 0) {
      throw ValidationError("rank_take: ego track has no pose at seconds " +
                            missing.str());
    }
  }
  validate_take(take);
  const int n = take.duration_s;
  RankingTimeline timeline;
  timeline.per_second.resize(static_cast<size_t>(n));

  // Each second fills its own slot, so thread count cannot change the
  // result; failures are rethrown after the loop to keep OpenMP happy.
  std::exception_ptr failure = nullptr;
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < n; ++t) {
      try {
        const Pose ego = *take.ego_track.at(t);
        timeline.per_second[static_cast<size_t>(t)] =
            rank_views(ego, take.exo_views, cfg, t);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
  } else {
    for (int t = 0; t < n; ++t) {
      const Pose ego = *take.ego_track.at(t);
      timeline.per_second[static_cast<size_t>(t)] =
          rank_views(ego, take.exo_views, cfg, t);
    }
  }
  if (failure) std::rethrow_exception(failure);
  return timeline;
}

void reverse_exo_order(RankingTimeline& timeline) {
  for (ViewRanking& r : timeline.per_second) {
    if (r.order.empty() || r.order.front() != kEgoViewId)
      throw ValidationError("reverse_exo_order: ranking must start with ego");
    std::reverse(r.order.begin() + 1, r.order.end());
  }
}

void shuffle_exo_order(RankingTimeline& timeline, uint64_t seed) {
  for (ViewRanking& r : timeline.per_second) {
    if (r.order.empty() || r.order.front() != kEgoViewId)
      throw ValidationError("shuffle_exo_order: ranking must start with ego");
    Rng rng = stream(seed, static_cast<uint64_t>(r.timestamp));
    // Fisher-Yates over the exo block only.
    for (size_t i = r.order.size() - 1; i >= 2; --i) {
      const auto j = static_cast<size_t>(
          rng.uniform_int(1, static_cast<int64_t>(i) + 1));
      std::swap(r.order[i], r.order[j]);
    }
  }
}

}  // namespace viewdistill
