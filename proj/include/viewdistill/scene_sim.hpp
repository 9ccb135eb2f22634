#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "viewdistill/exec.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/rng.hpp"
#include "viewdistill/take.hpp"

namespace viewdistill {

// Vertical capsule standing in for the camera wearer's body. The axis
// runs straight up through the ego camera's ground position and tops
// out at the lens, so cameras behind the wearer have their line of
// sight to the hands blocked while cameras in front do not.
struct Capsule {
  Eigen::Vector3d bottom = Eigen::Vector3d::Zero();
  Eigen::Vector3d top = Eigen::Vector3d::Zero();
  double radius = 0.0;
};

// Default radius is tuned so the hand cloud straddles the body surface:
// rear views are then occluded across most of the back hemisphere while
// front views keep the outer half of the cloud.
struct CapsuleSpec {
  double radius = 0.42;
  double bottom_z = 0.1;          // keeps feet/floor out of the occluder
  double top_above_camera = 0.0;  // extra body above the lens, if any
};

enum class EgoPath { Static, Orbit, RandomWalk };

struct SceneConfig {
  int n_exo = 4;
  int duration_s = 16;
  double arena_radius = 2.5;  // exo cameras stand on this circle
  EgoPath ego_path = EgoPath::RandomWalk;
  uint64_t seed = 0;
  CapsuleSpec body;

  // Hand-object interaction cloud: points uniform in a ball centred
  // d_ego_hand metres along the ego gaze.
  int hoi_cloud_points = 64;
  double hoi_cloud_radius = 0.15;
  double d_ego_hand = 0.6;

  double ego_height = 1.55;
  double ego_pitch_deg = 45.0;  // downward tilt toward the hands
  double wander_frac = 0.40;    // ego stays inside this fraction of the arena

  double exo_height_min = 1.2;
  double exo_height_max = 2.0;
  double exo_aim_frac = 0.3;      // aim points land in this central disk
  double exo_angle_jitter = 0.25; // radians of placement jitter

  // Feature synthesis.
  int feature_dim = 16;
  double noise_sigma = 0.1;
  double latent_walk_sigma = 0.15;
  int keystep_min_len = 3;
  int keystep_max_len = 8;
};

void validate_scene_config(const SceneConfig& cfg);

// Simulated take plus the ground truth the simulator knows: per-view
// visible fractions, the occluder and interaction cloud per second,
// and (after feature synthesis) the latent activity trajectory.
struct SyntheticTake {
  Take take;
  std::vector<int> view_ids;                 // ego first, then exo ascending
  std::vector<std::vector<double>> visible;  // [view index][second]
  std::vector<Capsule> capsule_per_second;
  std::vector<std::vector<Eigen::Vector3d>> cloud_per_second;
  std::vector<Eigen::VectorXd> latent;       // unit activity vector per second
};

// Camera-from-world pose for a camera at `center` looking along
// `forward` (+Z optical axis, +X right, +Y down, world Z up). Throws
// ValidationError for zero or near-vertical forward vectors.
Pose make_camera_pose(const Eigen::Vector3d& center,
                      const Eigen::Vector3d& forward);

// Point lies in the 90-degree square frustum of a CameraFromWorld pose.
bool in_frustum(const Pose& camera_from_world, const Eigen::Vector3d& p);

// Smallest distance between segments [p1, q1] and [p2, q2].
double segment_segment_distance(const Eigen::Vector3d& p1,
                                const Eigen::Vector3d& q1,
                                const Eigen::Vector3d& p2,
                                const Eigen::Vector3d& q2);

// Body capsule for an ego camera centred at `ego_center`.
Capsule capsule_at(const Eigen::Vector3d& ego_center, const CapsuleSpec& spec);

// Fraction of cloud points that are inside the camera frustum and
// whose sight line from the camera clears the capsule.
double visible_fraction(const Pose& camera_from_world, const Capsule& body,
                        std::span<const Eigen::Vector3d> cloud);

// Geometry stage: ego trajectory, exo placement, per-second occluder,
// interaction cloud, and the visibility table. Streams and keysteps
// stay empty until synth_features.
SyntheticTake generate_scene(const SceneConfig& cfg,
                             ExecPolicy policy = ExecPolicy::Parallel);

// Feature stage: keystep intervals with unit base embeddings, a latent
// random walk through them, and per-view streams equal to
// visibility * latent + noise (the ego always sees its own hands, so
// its stream uses visibility 1).
void synth_features(SyntheticTake& scene, const SceneConfig& cfg);

// Recomputes one visible fraction from the stored geometry.
double visibility_oracle(const SyntheticTake& scene, int view_id, int t);

// Mean over seconds of the Spearman correlation between exo ranking
// position (negated, so better rank = larger value) and the oracle
// visible fraction. Seconds where either side has zero variance are
// skipped; NaN if every second is skipped.
double ranking_visibility_spearman(const SyntheticTake& scene,
                                   const RankingTimeline& timeline);

}  // namespace viewdistill
