#include "viewdistill/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "viewdistill/errors.hpp"
#include "viewdistill/stats.hpp"

namespace viewdistill {

namespace {

constexpr double kPi = std::numbers::pi_v<double>;

// Key-path tags keeping the simulator's random streams disjoint.
constexpr uint64_t kPathTag = 0x3c9f2d4e5b6a7081ull;
constexpr uint64_t kExoTag = 0x8d2e4f6a1b3c5d70ull;
constexpr uint64_t kCloudTag = 0x5e7a9c1b3d5f7092ull;
constexpr uint64_t kKeystepTag = 0x1f3e5d7c9b0a2846ull;
constexpr uint64_t kBaseTag = 0x6b4d2f0e8c7a5931ull;
constexpr uint64_t kLatentTag = 0x2a8c6e4f0d1b3957ull;
constexpr uint64_t kFeatureTag = 0x9e1d3c5b7a2f4068ull;

// Exo cameras aim at a point in this height band, where tabletop
// manipulation happens.
constexpr double kAimZMin = 0.8;
constexpr double kAimZMax = 1.3;

// Heading diffusion and step bounds of the random-walk ego path.
constexpr double kHeadingSigma = 0.6;
constexpr double kStepMin = 0.15;
constexpr double kStepMax = 0.45;

Eigen::Vector3d unit_gaussian(Rng& rng, double min_norm = 1e-9) {
  for (;;) {
    const Eigen::Vector3d g(rng.normal(), rng.normal(), rng.normal());
    const double n = g.norm();
    if (n >= min_norm) return g / n;
  }
}

}  // namespace

void validate_scene_config(const SceneConfig& cfg) {
  const auto fail = [](const std::string& what) {
    throw ConfigError("scene config: " + what);
  };
  if (cfg.n_exo < 1) fail("need at least one exo camera");
  if (cfg.duration_s < 1) fail("duration must be at least 1 s");
  if (!(cfg.arena_radius > 0.0)) fail("arena radius must be positive");
  if (!(cfg.body.radius > 0.0)) fail("body radius must be positive");
  if (!(cfg.body.bottom_z >= 0.0)) fail("body bottom must not be underground");
  if (!(cfg.body.top_above_camera >= 0.0))
    fail("body extension above the camera must be >= 0");
  if (!(cfg.body.bottom_z < cfg.ego_height))
    fail("body bottom must sit below the ego camera");
  if (cfg.hoi_cloud_points < 8) fail("need at least 8 interaction points");
  if (!(cfg.hoi_cloud_radius > 0.0)) fail("cloud radius must be positive");
  if (!(cfg.d_ego_hand > 0.0)) fail("hand distance must be positive");
  if (!(cfg.ego_height > 0.0)) fail("ego height must be positive");
  if (!(cfg.ego_pitch_deg > 0.0 && cfg.ego_pitch_deg < 90.0))
    fail("ego pitch must lie in (0, 90) degrees");
  if (!(cfg.wander_frac >= 0.0 && cfg.wander_frac < 1.0))
    fail("wander fraction must lie in [0, 1)");
  if (!(cfg.exo_height_min > 0.0 && cfg.exo_height_max >= cfg.exo_height_min))
    fail("exo height band is empty or non-positive");
  if (!(cfg.exo_aim_frac >= 0.0 && cfg.exo_aim_frac <= 1.0))
    fail("exo aim fraction must lie in [0, 1]");
  if (!(cfg.exo_angle_jitter >= 0.0)) fail("angle jitter must be >= 0");
  if (cfg.feature_dim < 2) fail("feature dimension must be at least 2");
  if (!(cfg.noise_sigma >= 0.0)) fail("noise sigma must be >= 0");
  if (!(cfg.latent_walk_sigma >= 0.0)) fail("walk sigma must be >= 0");
  if (cfg.keystep_min_len < 1 || cfg.keystep_max_len < cfg.keystep_min_len)
    fail("keystep length band is empty");
}

Pose make_camera_pose(const Eigen::Vector3d& center,
                      const Eigen::Vector3d& forward) {
  const double n = forward.norm();
  if (!(n > 1e-12))
    throw ValidationError("make_camera_pose: zero forward vector");
  const Eigen::Vector3d f = forward / n;
  // right = f x z_up; vanishes only for a vertical gaze.
  const Eigen::Vector3d rxy(f.y(), -f.x(), 0.0);
  const double rn = rxy.norm();
  if (!(rn > 1e-9))
    throw ValidationError("make_camera_pose: forward must not be vertical");
  const Eigen::Vector3d r = rxy / rn;
  const Eigen::Vector3d u = f.cross(r);  // points down: +Y image axis

  Pose pose;
  pose.rotation.row(0) = r;
  pose.rotation.row(1) = u;
  pose.rotation.row(2) = f;
  pose.translation = -(pose.rotation * center);
  pose.frame = Frame::CameraFromWorld;
  return pose;
}

bool in_frustum(const Pose& camera_from_world, const Eigen::Vector3d& p) {
  if (camera_from_world.frame != Frame::CameraFromWorld)
    throw ValidationError("in_frustum: pose must be CameraFromWorld");
  const Eigen::Vector3d v =
      camera_from_world.rotation * p + camera_from_world.translation;
  return v.z() > 0.0 && std::abs(v.x()) <= v.z() && std::abs(v.y()) <= v.z();
}

double segment_segment_distance(const Eigen::Vector3d& p1,
                                const Eigen::Vector3d& q1,
                                const Eigen::Vector3d& p2,
                                const Eigen::Vector3d& q2) {
  // Closest points of two segments via clamped quadratic minimisation.
  const Eigen::Vector3d d1 = q1 - p1;
  const Eigen::Vector3d d2 = q2 - p2;
  const Eigen::Vector3d r = p1 - p2;
  const double a = d1.dot(d1);
  const double e = d2.dot(d2);
  const double f = d2.dot(r);
  constexpr double kTinySq = 1e-30;

  double s = 0.0, t = 0.0;
  if (a <= kTinySq && e <= kTinySq) {
    return r.norm();
  }
  if (a <= kTinySq) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kTinySq) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      if (denom > 0.0) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  const Eigen::Vector3d c1 = p1 + d1 * s;
  const Eigen::Vector3d c2 = p2 + d2 * t;
  return (c1 - c2).norm();
}

Capsule capsule_at(const Eigen::Vector3d& ego_center,
                   const CapsuleSpec& spec) {
  Capsule c;
  c.bottom = Eigen::Vector3d(ego_center.x(), ego_center.y(), spec.bottom_z);
  c.top = Eigen::Vector3d(ego_center.x(), ego_center.y(),
                          ego_center.z() + spec.top_above_camera);
  c.radius = spec.radius;
  return c;
}

double visible_fraction(const Pose& camera_from_world, const Capsule& body,
                        std::span<const Eigen::Vector3d> cloud) {
  if (cloud.empty())
    throw ValidationError("visible_fraction: empty interaction cloud");
  if (!(body.radius > 0.0))
    throw ValidationError("visible_fraction: capsule radius must be positive");
  // Camera center in world coordinates: C = -R^T t.
  const Eigen::Vector3d cam =
      -(camera_from_world.rotation.transpose() * camera_from_world.translation);
  int visible = 0;
  for (const Eigen::Vector3d& p : cloud) {
    if (!in_frustum(camera_from_world, p)) continue;
    const double d = segment_segment_distance(cam, p, body.bottom, body.top);
    if (d >= body.radius) ++visible;
  }
  return static_cast<double>(visible) / static_cast<double>(cloud.size());
}

SyntheticTake generate_scene(const SceneConfig& cfg, ExecPolicy policy) {
  validate_scene_config(cfg);
  const int T = cfg.duration_s;
  const double pitch = cfg.ego_pitch_deg * kPi / 180.0;
  const double wander_radius = cfg.wander_frac * cfg.arena_radius;

  SyntheticTake out;
  out.take.take_id = "synthetic-" + std::to_string(cfg.seed);
  out.take.duration_s = T;

  // Ego trajectory on the ground plane, camera at a fixed height
  // looking down toward the hands.
  std::vector<Eigen::Vector3d> centers(static_cast<size_t>(T));
  std::vector<Eigen::Vector3d> forwards(static_cast<size_t>(T));
  {
    Rng path = stream(cfg.seed, kPathTag);
    Eigen::Vector2d pos(0.0, 0.0);
    double heading = path.uniform(0.0, 2.0 * kPi);
    const double orbit_phase = heading;  // reused as the orbit's start angle
    for (int t = 0; t < T; ++t) {
      switch (cfg.ego_path) {
        case EgoPath::Static:
          break;
        case EgoPath::Orbit: {
          const double th =
              orbit_phase + 2.0 * kPi * static_cast<double>(t) /
                                static_cast<double>(T);
          pos = wander_radius * Eigen::Vector2d(std::cos(th), std::sin(th));
          heading = th + kPi / 2.0;  // tangent, counter-clockwise
          break;
        }
        case EgoPath::RandomWalk: {
          if (t > 0) {
            heading += kHeadingSigma * path.normal();
            const double step = path.uniform(kStepMin, kStepMax);
            const Eigen::Vector2d dir(std::cos(heading), std::sin(heading));
            Eigen::Vector2d cand = pos + step * dir;
            if (cand.norm() > wander_radius) {  // bounce back inward
              heading += kPi;
              cand = pos + step * Eigen::Vector2d(std::cos(heading),
                                                  std::sin(heading));
              if (cand.norm() > wander_radius && cand.norm() > 0.0)
                cand *= wander_radius / cand.norm();
            }
            pos = cand;
          }
          break;
        }
      }
      centers[static_cast<size_t>(t)] =
          Eigen::Vector3d(pos.x(), pos.y(), cfg.ego_height);
      forwards[static_cast<size_t>(t)] =
          Eigen::Vector3d(std::cos(heading) * std::cos(pitch),
                          std::sin(heading) * std::cos(pitch),
                          -std::sin(pitch));
      out.take.ego_track.timestamps.push_back(t);
      out.take.ego_track.poses.push_back(make_camera_pose(
          centers[static_cast<size_t>(t)], forwards[static_cast<size_t>(t)]));
    }
  }

  // Static exo cameras on the arena circle, aimed into the central
  // interaction zone.
  for (int i = 0; i < cfg.n_exo; ++i) {
    Rng er = stream(cfg.seed, kExoTag, static_cast<uint64_t>(i));
    const double theta =
        2.0 * kPi * static_cast<double>(i) / static_cast<double>(cfg.n_exo) +
        cfg.exo_angle_jitter * er.uniform(-1.0, 1.0);
    const double height = er.uniform(cfg.exo_height_min, cfg.exo_height_max);
    const double aim_angle = er.uniform(0.0, 2.0 * kPi);
    const double aim_radius =
        cfg.exo_aim_frac * cfg.arena_radius * std::sqrt(er.uniform());
    const double aim_z = er.uniform(kAimZMin, kAimZMax);
    const Eigen::Vector3d center(cfg.arena_radius * std::cos(theta),
                                 cfg.arena_radius * std::sin(theta), height);
    const Eigen::Vector3d aim(aim_radius * std::cos(aim_angle),
                              aim_radius * std::sin(aim_angle), aim_z);
    ExoCamera cam;
    cam.view_id = i + 1;
    cam.pose = make_camera_pose(center, aim - center);
    out.take.exo_views.push_back(cam);
  }

  out.view_ids.push_back(kEgoViewId);
  for (const ExoCamera& cam : out.take.exo_views)
    out.view_ids.push_back(cam.view_id);

  // Occluder and interaction cloud per second.
  out.capsule_per_second.reserve(static_cast<size_t>(T));
  out.cloud_per_second.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    const Eigen::Vector3d& c = centers[static_cast<size_t>(t)];
    out.capsule_per_second.push_back(capsule_at(c, cfg.body));
    const Eigen::Vector3d hoi =
        c + cfg.d_ego_hand * forwards[static_cast<size_t>(t)];
    Rng cr = stream(cfg.seed, kCloudTag, static_cast<uint64_t>(t));
    auto& cloud = out.cloud_per_second[static_cast<size_t>(t)];
    cloud.reserve(static_cast<size_t>(cfg.hoi_cloud_points));
    for (int p = 0; p < cfg.hoi_cloud_points; ++p) {
      const Eigen::Vector3d dir = unit_gaussian(cr);
      const double rad = cfg.hoi_cloud_radius * std::cbrt(cr.uniform());
      cloud.push_back(hoi + rad * dir);
    }
  }

  // Visibility table: one independent job per (view, second) slot, so
  // the parallel result is byte-identical to the serial one.
  const int n_views = static_cast<int>(out.view_ids.size());
  out.visible.assign(static_cast<size_t>(n_views),
                     std::vector<double>(static_cast<size_t>(T), 0.0));
  const auto job = [&](int idx) {
    const int vi = idx / T;
    const int t = idx % T;
    const Pose& pose = vi == 0 ? out.take.ego_track.poses[static_cast<size_t>(t)]
                               : out.take.exo_views[static_cast<size_t>(vi - 1)].pose;
    out.visible[static_cast<size_t>(vi)][static_cast<size_t>(t)] =
        visible_fraction(pose, out.capsule_per_second[static_cast<size_t>(t)],
                         out.cloud_per_second[static_cast<size_t>(t)]);
  };
  const int n_jobs = n_views * T;
  std::exception_ptr failure = nullptr;
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(static)
    for (int idx = 0; idx < n_jobs; ++idx) {
      try {
        job(idx);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
  } else {
    for (int idx = 0; idx < n_jobs; ++idx) job(idx);
  }
  if (failure) std::rethrow_exception(failure);

  validate_take(out.take);
  return out;
}

void synth_features(SyntheticTake& scene, const SceneConfig& cfg) {
  validate_scene_config(cfg);
  const int T = scene.take.duration_s;
  if (T < 1) throw ValidationError("synth_features: empty take");
  if (scene.visible.size() != scene.view_ids.size())
    throw ValidationError("synth_features: visibility table mismatch");
  const int dim = cfg.feature_dim;

  // Keystep intervals tile [0, T); each carries a unit base embedding.
  scene.take.keysteps.entries.clear();
  std::vector<Eigen::VectorXd> bases;
  std::vector<int> step_of(static_cast<size_t>(T), 0);
  {
    Rng ks = stream(cfg.seed, kKeystepTag);
    int t0 = 0, j = 0;
    while (t0 < T) {
      const int len = static_cast<int>(
          ks.uniform_int(cfg.keystep_min_len, cfg.keystep_max_len + 1));
      const int end = std::min(t0 + len, T);
      Rng br = stream(cfg.seed, kBaseTag, static_cast<uint64_t>(j));
      Eigen::VectorXd base(dim);
      for (;;) {
        for (int d = 0; d < dim; ++d) base[d] = br.normal();
        const double n = base.norm();
        if (n >= 1e-9) {
          base /= n;
          break;
        }
      }
      bases.push_back(base);
      Keystep k;
      k.id = "k" + std::to_string(j);
      k.start_s = static_cast<double>(t0);
      k.end_s = static_cast<double>(end);
      k.embedding.resize(static_cast<size_t>(dim));
      for (int d = 0; d < dim; ++d)
        k.embedding[static_cast<size_t>(d)] = static_cast<float>(base[d]);
      scene.take.keysteps.entries.push_back(std::move(k));
      for (int t = t0; t < end; ++t) step_of[static_cast<size_t>(t)] = j;
      t0 = end;
      ++j;
    }
  }

  // Latent activity: resets to the keystep base at each interval start
  // and random-walks on the unit sphere inside the interval.
  scene.latent.assign(static_cast<size_t>(T), Eigen::VectorXd());
  {
    Rng lat = stream(cfg.seed, kLatentTag);
    Eigen::VectorXd a;
    for (int t = 0; t < T; ++t) {
      const int j = step_of[static_cast<size_t>(t)];
      if (t == 0 || step_of[static_cast<size_t>(t - 1)] != j) {
        a = bases[static_cast<size_t>(j)];
      } else {
        Eigen::VectorXd g(dim);
        for (int d = 0; d < dim; ++d) g[d] = lat.normal();
        a = a + cfg.latent_walk_sigma * g;
        const double n = a.norm();
        if (n >= 1e-9) a /= n;
        else a = bases[static_cast<size_t>(j)];
      }
      scene.latent[static_cast<size_t>(t)] = a;
    }
  }

  // Streams: the signal reaching a view scales with how much of the
  // interaction it can see; the ego wearer always sees its own hands.
  scene.take.streams.clear();
  for (size_t vi = 0; vi < scene.view_ids.size(); ++vi) {
    FeatureStream fs;
    fs.view_id = scene.view_ids[vi];
    fs.num_seconds = T;
    fs.dim = dim;
    fs.data.resize(static_cast<size_t>(T) * static_cast<size_t>(dim));
    for (int t = 0; t < T; ++t) {
      const double vis =
          vi == 0 ? 1.0 : scene.visible[vi][static_cast<size_t>(t)];
      Rng fr = stream(cfg.seed, kFeatureTag,
                      static_cast<uint64_t>(fs.view_id),
                      static_cast<uint64_t>(t));
      auto row = fs.row(t);
      const Eigen::VectorXd& a = scene.latent[static_cast<size_t>(t)];
      for (int d = 0; d < dim; ++d)
        row[static_cast<size_t>(d)] = static_cast<float>(
            vis * a[d] + cfg.noise_sigma * fr.normal());
    }
    scene.take.streams.push_back(std::move(fs));
  }

  validate_take(scene.take);
}

double visibility_oracle(const SyntheticTake& scene, int view_id, int t) {
  if (t < 0 || t >= scene.take.duration_s)
    throw ValidationError("visibility_oracle: second out of range");
  const Pose* pose = nullptr;
  if (view_id == kEgoViewId) {
    pose = &scene.take.ego_track.poses[static_cast<size_t>(t)];
  } else {
    for (const ExoCamera& cam : scene.take.exo_views)
      if (cam.view_id == view_id) pose = &cam.pose;
  }
  if (pose == nullptr)
    throw ValidationError("visibility_oracle: unknown view id " +
                          std::to_string(view_id));
  return visible_fraction(*pose, scene.capsule_per_second[static_cast<size_t>(t)],
                          scene.cloud_per_second[static_cast<size_t>(t)]);
}

double ranking_visibility_spearman(const SyntheticTake& scene,
                                   const RankingTimeline& timeline) {
  const size_t T = static_cast<size_t>(scene.take.duration_s);
  if (timeline.per_second.size() != T)
    throw ValidationError(
        "ranking_visibility_spearman: timeline does not cover the take");
  double sum = 0.0;
  int used = 0;
  for (size_t t = 0; t < T; ++t) {
    const ViewRanking& r = timeline.per_second[t];
    std::vector<double> rank_value, vis_value;
    for (size_t vi = 1; vi < scene.view_ids.size(); ++vi) {
      const int id = scene.view_ids[vi];
      rank_value.push_back(-static_cast<double>(r.rank_of(id)));
      vis_value.push_back(scene.visible[vi][t]);
    }
    if (rank_value.size() < 2) continue;
    const double rho = spearman(rank_value, vis_value);
    if (std::isnan(rho)) continue;  // zero variance on one side
    sum += rho;
    ++used;
  }
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(used);
}

}  // namespace viewdistill
