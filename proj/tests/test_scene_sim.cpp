#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "viewdistill/errors.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/rng.hpp"
#include "viewdistill/scene_sim.hpp"

using namespace viewdistill;

namespace {

Eigen::Vector3d camera_center(const Pose& camera_from_world) {
  return -(camera_from_world.rotation.transpose() *
           camera_from_world.translation);
}

Eigen::Vector3d mirror_y(const Eigen::Vector3d& v) {
  return {v.x(), -v.y(), v.z()};
}

// Uniform ball sample, matching nothing in the library on purpose.
Eigen::Vector3d ball_point(Rng& rng, const Eigen::Vector3d& center,
                           double radius) {
  for (;;) {
    const Eigen::Vector3d g(rng.normal(), rng.normal(), rng.normal());
    const double n = g.norm();
    if (n < 1e-9) continue;
    return center + radius * std::cbrt(rng.uniform()) * (g / n);
  }
}

}  // namespace

TEST_CASE("scene generation is deterministic in the seed") {
  SceneConfig cfg;
  cfg.seed = 314;
  cfg.duration_s = 12;
  cfg.n_exo = 3;
  SyntheticTake a = generate_scene(cfg);
  SyntheticTake b = generate_scene(cfg);
  synth_features(a, cfg);
  synth_features(b, cfg);

  REQUIRE(a.view_ids == b.view_ids);
  CHECK(a.visible == b.visible);
  CHECK(a.latent.size() == b.latent.size());
  for (size_t t = 0; t < a.latent.size(); ++t)
    CHECK(a.latent[t] == b.latent[t]);
  for (size_t t = 0; t < a.cloud_per_second.size(); ++t)
    for (size_t p = 0; p < a.cloud_per_second[t].size(); ++p)
      CHECK(a.cloud_per_second[t][p] == b.cloud_per_second[t][p]);
  REQUIRE(a.take.streams.size() == b.take.streams.size());
  for (size_t s = 0; s < a.take.streams.size(); ++s)
    CHECK(a.take.streams[s].data == b.take.streams[s].data);
  REQUIRE(a.take.exo_views.size() == b.take.exo_views.size());
  for (size_t e = 0; e < a.take.exo_views.size(); ++e) {
    CHECK(a.take.exo_views[e].pose.rotation == b.take.exo_views[e].pose.rotation);
    CHECK(a.take.exo_views[e].pose.translation ==
          b.take.exo_views[e].pose.translation);
  }
  REQUIRE(a.take.keysteps.entries.size() == b.take.keysteps.entries.size());
  for (size_t k = 0; k < a.take.keysteps.entries.size(); ++k) {
    CHECK(a.take.keysteps.entries[k].id == b.take.keysteps.entries[k].id);
    CHECK(a.take.keysteps.entries[k].embedding ==
          b.take.keysteps.entries[k].embedding);
  }

  // A different seed actually changes the scene.
  cfg.seed = 315;
  const SyntheticTake c = generate_scene(cfg);
  CHECK(c.visible != a.visible);
}

TEST_CASE("static ego path stays put; walks respect the wander bound") {
  SceneConfig cfg;
  cfg.seed = 9;
  cfg.duration_s = 10;
  cfg.ego_path = EgoPath::Static;
  const SyntheticTake fixed = generate_scene(cfg);
  const Eigen::Vector3d c0 = camera_center(fixed.take.ego_track.poses[0]);
  for (const Pose& p : fixed.take.ego_track.poses)
    CHECK((camera_center(p) - c0).norm() <= 1e-12);

  const double bound = cfg.wander_frac * cfg.arena_radius + 1e-9;
  for (EgoPath path : {EgoPath::Orbit, EgoPath::RandomWalk}) {
    cfg.ego_path = path;
    const SyntheticTake scene = generate_scene(cfg);
    bool moved = false;
    for (const Pose& p : scene.take.ego_track.poses) {
      const Eigen::Vector3d c = camera_center(p);
      CHECK(c.head<2>().norm() <= bound);
      CHECK(c.z() == doctest::Approx(cfg.ego_height).epsilon(1e-12));
      if ((c - camera_center(scene.take.ego_track.poses[0])).norm() > 1e-6)
        moved = true;
    }
    CHECK(moved);
  }
}

TEST_CASE("exo cameras stand on the arena circle and gaze inward") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.duration_s = 1;
    cfg.n_exo = int(3 + seed % 4);
    const SyntheticTake scene = generate_scene(cfg);
    REQUIRE(scene.take.exo_views.size() == size_t(cfg.n_exo));
    for (const ExoCamera& cam : scene.take.exo_views) {
      const Eigen::Vector3d c = camera_center(cam.pose);
      CHECK(c.head<2>().norm() ==
            doctest::Approx(cfg.arena_radius).epsilon(1e-9));
      CHECK(c.z() >= cfg.exo_height_min - 1e-12);
      CHECK(c.z() <= cfg.exo_height_max + 1e-12);
      // Optical axis points back toward the arena interior.
      const Eigen::Vector3d f = cam.pose.rotation.row(2);
      CHECK(f.x() * c.x() + f.y() * c.y() < 0.0);
    }
  }
}

TEST_CASE("camera pose construction") {
  const Eigen::Vector3d center(1.0, -2.0, 1.5);
  const Eigen::Vector3d forward = Eigen::Vector3d(3.0, 1.0, -0.5).normalized();
  const Pose pose = make_camera_pose(center, 10.0 * forward);
  CHECK(pose.frame == Frame::CameraFromWorld);
  CHECK((pose.rotation * pose.rotation.transpose() -
         Eigen::Matrix3d::Identity())
            .norm() <= 1e-12);
  CHECK(pose.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((pose.rotation.row(2).transpose() - forward).norm() <= 1e-12);
  // The camera center maps to the origin, and the image Y axis points
  // downward in the world.
  CHECK((pose.rotation * center + pose.translation).norm() <= 1e-12);
  CHECK(pose.rotation.row(1).z() < 0.0);

  CHECK_THROWS_AS(make_camera_pose(center, Eigen::Vector3d::Zero()),
                  ValidationError);
  CHECK_THROWS_AS(make_camera_pose(center, Eigen::Vector3d(0, 0, -1)),
                  ValidationError);
  CHECK_THROWS_AS(make_camera_pose(center, Eigen::Vector3d(1e-12, 0, 1)),
                  ValidationError);
}

TEST_CASE("square frustum membership") {
  const Pose cam = make_camera_pose(Eigen::Vector3d::Zero(),
                                    Eigen::Vector3d(1, 0, 0));
  CHECK(in_frustum(cam, {1.0, 0.0, 0.0}));
  CHECK(in_frustum(cam, {1.0, 1.0, 0.0}));    // edge of the 90 degree cone
  CHECK(in_frustum(cam, {1.0, 0.0, 1.0}));    // top edge
  CHECK(!in_frustum(cam, {1.0, 1.000001, 0.0}));
  CHECK(!in_frustum(cam, {-1.0, 0.0, 0.0}));  // behind
  CHECK(!in_frustum(cam, {0.0, 0.0, 0.0}));   // at the pinhole
  Pose world = cam;
  world.frame = Frame::WorldFromCamera;
  CHECK_THROWS_AS(in_frustum(world, {1.0, 0.0, 0.0}), ValidationError);
}

TEST_CASE("segment distance hand cases") {
  using V = Eigen::Vector3d;
  // Crossing at right angles with a vertical gap.
  CHECK(segment_segment_distance(V(-1, 0, 0), V(1, 0, 0), V(0, -1, 1),
                                 V(0, 1, 1)) == doctest::Approx(1.0));
  // Actually intersecting.
  CHECK(segment_segment_distance(V(-1, 0, 0), V(1, 0, 0), V(0, -1, 0),
                                 V(0, 1, 0)) <= 1e-12);
  // Parallel with a lateral offset.
  CHECK(segment_segment_distance(V(0, 0, 0), V(4, 0, 0), V(0, 3, 0),
                                 V(4, 3, 0)) == doctest::Approx(3.0));
  // Collinear, disjoint: gap between the near endpoints.
  CHECK(segment_segment_distance(V(0, 0, 0), V(1, 0, 0), V(3, 0, 0),
                                 V(5, 0, 0)) == doctest::Approx(2.0));
  // One or both segments degenerate to points.
  CHECK(segment_segment_distance(V(0, 0, 0), V(0, 0, 0), V(1, 1, 1),
                                 V(1, 1, 1)) == doctest::Approx(std::sqrt(3.0)));
  CHECK(segment_segment_distance(V(0, 0, 5), V(0, 0, 5), V(-1, 0, 0),
                                 V(1, 0, 0)) == doctest::Approx(5.0));
}

TEST_CASE("segment distance agrees with a dense grid search") {
  Rng rng(71);
  const int grid = 80;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector3d p1, q1, p2, q2;
    for (int i = 0; i < 3; ++i) {
      p1[i] = rng.uniform(-2.0, 2.0);
      q1[i] = rng.uniform(-2.0, 2.0);
      p2[i] = rng.uniform(-2.0, 2.0);
      q2[i] = rng.uniform(-2.0, 2.0);
    }
    const double got = segment_segment_distance(p1, q1, p2, q2);
    double brute = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= grid; ++i) {
      const Eigen::Vector3d a = p1 + (q1 - p1) * (double(i) / grid);
      for (int j = 0; j <= grid; ++j) {
        const Eigen::Vector3d b = p2 + (q2 - p2) * (double(j) / grid);
        brute = std::min(brute, (a - b).norm());
      }
    }
    CHECK(got <= brute + 1e-12);  // the true minimum can't exceed any sample
    const double slack =
        ((q1 - p1).norm() + (q2 - p2).norm()) / grid + 1e-9;
    CHECK(brute - got <= slack);
  }
}

TEST_CASE("capsule placement under the ego camera") {
  CapsuleSpec spec;
  spec.radius = 0.3;
  spec.bottom_z = 0.1;
  spec.top_above_camera = 0.2;
  const Capsule c = capsule_at({1.0, 2.0, 1.5}, spec);
  CHECK(c.bottom == Eigen::Vector3d(1.0, 2.0, 0.1));
  CHECK(c.top == Eigen::Vector3d(1.0, 2.0, 1.7));
  CHECK(c.radius == 0.3);
}

TEST_CASE("visible fraction extremes") {
  Rng rng(17);
  std::vector<Eigen::Vector3d> cloud;
  for (int i = 0; i < 64; ++i)
    cloud.push_back(ball_point(rng, {0.0, 0.0, 1.0}, 0.1));

  Capsule far_body{{20.0, 0.0, 0.0}, {20.0, 0.0, 2.0}, 0.3};
  const Pose toward = make_camera_pose({5.0, 0.0, 1.0}, {-1.0, 0.0, 0.0});
  CHECK(visible_fraction(toward, far_body, cloud) == 1.0);

  // A fat capsule planted between camera and cloud blocks every ray.
  Capsule wall{{2.5, 0.0, 0.0}, {2.5, 0.0, 3.0}, 1.0};
  CHECK(visible_fraction(toward, wall, cloud) == 0.0);

  // Same geometry, camera turned away: nothing in the frustum.
  const Pose away = make_camera_pose({5.0, 0.0, 1.0}, {1.0, 0.0, 0.0});
  CHECK(visible_fraction(away, far_body, cloud) == 0.0);

  CHECK_THROWS_AS(
      visible_fraction(toward, far_body, std::span<const Eigen::Vector3d>{}),
      ValidationError);
  Capsule flat = far_body;
  flat.radius = 0.0;
  CHECK_THROWS_AS(visible_fraction(toward, flat, cloud), ValidationError);
}

TEST_CASE("visible fraction is exactly mirror symmetric") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d cam_pos(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                                  rng.uniform(0.5, 2.5));
    Eigen::Vector3d fwd(rng.normal(), rng.normal(), 0.3 * rng.normal());
    if (fwd.head<2>().norm() < 0.1) fwd.x() += 1.0;
    const Eigen::Vector2d axis_xy(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    Capsule body{{axis_xy.x(), axis_xy.y(), 0.1},
                 {axis_xy.x(), axis_xy.y(), rng.uniform(1.0, 2.0)},
                 rng.uniform(0.2, 0.6)};
    std::vector<Eigen::Vector3d> cloud, cloud_m;
    const Eigen::Vector3d cc(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                             rng.uniform(0.8, 1.4));
    for (int i = 0; i < 48; ++i) {
      cloud.push_back(ball_point(rng, cc, 0.15));
      cloud_m.push_back(mirror_y(cloud.back()));
    }
    const Pose pose = make_camera_pose(cam_pos, fwd);
    const Pose pose_m = make_camera_pose(mirror_y(cam_pos), mirror_y(fwd));
    Capsule body_m{mirror_y(body.bottom), mirror_y(body.top), body.radius};
    CHECK(visible_fraction(pose, body, cloud) ==
          visible_fraction(pose_m, body_m, cloud_m));
  }
}

TEST_CASE("the wearer's body hides the hands from behind") {
  Rng rng(37);
  CapsuleSpec spec;  // library defaults
  int strict = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector3d ego(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                              1.55);
    const double heading = rng.uniform(0.0, 2.0 * 3.14159265358979);
    const double pitch = 45.0 * 3.14159265358979 / 180.0;
    const Eigen::Vector3d fwd(std::cos(heading) * std::cos(pitch),
                              std::sin(heading) * std::cos(pitch),
                              -std::sin(pitch));
    const Eigen::Vector3d hoi = ego + 0.6 * fwd;
    const Capsule body = capsule_at(ego, spec);
    std::vector<Eigen::Vector3d> cloud;
    for (int i = 0; i < 64; ++i) cloud.push_back(ball_point(rng, hoi, 0.15));

    const Eigen::Vector3d h_xy =
        Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0);
    const Eigen::Vector3d front_pos = ego + 2.0 * h_xy - Eigen::Vector3d(0, 0, 0.25);
    const Eigen::Vector3d behind_pos = ego - 2.0 * h_xy - Eigen::Vector3d(0, 0, 0.25);
    const Pose front = make_camera_pose(front_pos, hoi - front_pos);
    const Pose behind = make_camera_pose(behind_pos, hoi - behind_pos);
    const double vf = visible_fraction(front, body, cloud);
    const double vb = visible_fraction(behind, body, cloud);
    CHECK(vf >= vb);
    if (vf > vb) ++strict;
  }
  CHECK(strict == 100);
}

TEST_CASE("stored visibility matches the oracle recomputation") {
  SceneConfig cfg;
  cfg.seed = 77;
  cfg.duration_s = 8;
  cfg.n_exo = 4;
  const SyntheticTake scene = generate_scene(cfg);
  for (size_t vi = 0; vi < scene.view_ids.size(); ++vi)
    for (int t = 0; t < cfg.duration_s; ++t)
      CHECK(scene.visible[vi][size_t(t)] ==
            visibility_oracle(scene, scene.view_ids[vi], t));
  CHECK_THROWS_AS(visibility_oracle(scene, 1, -1), ValidationError);
  CHECK_THROWS_AS(visibility_oracle(scene, 1, cfg.duration_s), ValidationError);
  CHECK_THROWS_AS(visibility_oracle(scene, 42, 0), ValidationError);
}

TEST_CASE("keysteps tile the take and carry unit embeddings") {
  SceneConfig cfg;
  cfg.seed = 123;
  cfg.duration_s = 40;
  SyntheticTake scene = generate_scene(cfg);
  synth_features(scene, cfg);
  const auto& entries = scene.take.keysteps.entries;
  REQUIRE(!entries.empty());
  CHECK(entries.front().start_s == 0.0);
  CHECK(entries.back().end_s == double(cfg.duration_s));
  for (size_t j = 0; j < entries.size(); ++j) {
    CHECK(entries[j].id == "k" + std::to_string(j));
    if (j > 0) CHECK(entries[j].start_s == entries[j - 1].end_s);
    const double len = entries[j].end_s - entries[j].start_s;
    CHECK(len >= 1.0);
    CHECK(len <= double(cfg.keystep_max_len));
    if (entries[j].end_s < double(cfg.duration_s))
      CHECK(len >= double(cfg.keystep_min_len));
    double norm2 = 0.0;
    for (float x : entries[j].embedding) norm2 += double(x) * double(x);
    CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("noise-free features are the visibility-scaled latent") {
  SceneConfig cfg;
  cfg.seed = 55;
  cfg.duration_s = 10;
  cfg.n_exo = 3;
  cfg.noise_sigma = 0.0;
  SyntheticTake scene = generate_scene(cfg);
  synth_features(scene, cfg);
  REQUIRE(scene.take.streams.size() == 4);
  for (size_t vi = 0; vi < scene.view_ids.size(); ++vi) {
    const FeatureStream& fs = scene.take.streams[vi];
    REQUIRE(fs.view_id == scene.view_ids[vi]);
    for (int t = 0; t < cfg.duration_s; ++t) {
      const double vis = vi == 0 ? 1.0 : scene.visible[vi][size_t(t)];
      const auto row = fs.row(t);
      for (int d = 0; d < cfg.feature_dim; ++d)
        CHECK(row[size_t(d)] ==
              float(vis * scene.latent[size_t(t)][d]));
    }
  }
}

TEST_CASE("feature fidelity rises with visibility") {
  // Bin exo (view, second) pairs by visible fraction; the mean cosine
  // between feature and latent must increase across the bins.
  std::vector<double> cos_sum(4, 0.0);
  std::vector<int> cos_n(4, 0);
  for (uint64_t seed = 200; seed < 230; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.duration_s = 16;
    cfg.n_exo = 4;
    SyntheticTake scene = generate_scene(cfg);
    synth_features(scene, cfg);
    for (size_t vi = 1; vi < scene.view_ids.size(); ++vi) {
      const FeatureStream& fs = scene.take.streams[vi];
      for (int t = 0; t < cfg.duration_s; ++t) {
        const auto row = fs.row(t);
        Eigen::VectorXd f(cfg.feature_dim);
        for (int d = 0; d < cfg.feature_dim; ++d) f[d] = double(row[size_t(d)]);
        const double fn = f.norm();
        if (fn <= 1e-12) continue;
        const double c = f.dot(scene.latent[size_t(t)]) / fn;
        const double vis = scene.visible[vi][size_t(t)];
        const int bin = std::min(3, int(vis * 4.0));
        cos_sum[size_t(bin)] += c;
        cos_n[size_t(bin)] += 1;
      }
    }
  }
  // The body occluder makes visibility bimodal, so some middle bins
  // may be empty; monotonicity must hold across the populated ones.
  int populated = 0;
  double prev = -2.0;
  for (int b = 0; b < 4; ++b) {
    if (cos_n[size_t(b)] == 0) continue;
    REQUIRE(cos_n[size_t(b)] >= 30);
    ++populated;
    const double mean = cos_sum[size_t(b)] / cos_n[size_t(b)];
    CHECK(mean > prev);
    prev = mean;
  }
  REQUIRE(populated >= 2);
  CHECK(prev > 0.7);  // near-full visibility tracks the latent closely
}

TEST_CASE("ranking correlates with visibility, degenerates to NaN") {
  SceneConfig cfg;
  cfg.seed = 61;
  cfg.duration_s = 12;
  cfg.n_exo = 5;
  const SyntheticTake scene = generate_scene(cfg);
  const RankingTimeline tl = rank_take(scene.take, HoiConfig{});
  const double rho = ranking_visibility_spearman(scene, tl);
  CHECK(std::isfinite(rho));
  CHECK(rho > 0.5);

  RankingTimeline short_tl = tl;
  short_tl.per_second.pop_back();
  CHECK_THROWS_AS(ranking_visibility_spearman(scene, short_tl),
                  ValidationError);

  cfg.n_exo = 1;
  const SyntheticTake solo = generate_scene(cfg);
  const RankingTimeline solo_tl = rank_take(solo.take, HoiConfig{});
  CHECK(std::isnan(ranking_visibility_spearman(solo, solo_tl)));
}

TEST_CASE("scene config validation") {
  const auto broken = [](auto mutate) {
    SceneConfig cfg;
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS_AS(
      validate_scene_config(broken([](SceneConfig& c) { c.n_exo = 0; })),
      ConfigError);
  CHECK_THROWS_AS(
      validate_scene_config(broken([](SceneConfig& c) { c.duration_s = 0; })),
      ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.arena_radius = 0.0; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.body.radius = -0.1; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(broken(
                      [](SceneConfig& c) { c.body.bottom_z = c.ego_height; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.hoi_cloud_points = 7; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.ego_pitch_deg = 90.0; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.wander_frac = 1.0; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(broken([](SceneConfig& c) {
                    c.exo_height_max = c.exo_height_min - 0.1;
                  })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.feature_dim = 1; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(
                      broken([](SceneConfig& c) { c.noise_sigma = -0.1; })),
                  ConfigError);
  CHECK_THROWS_AS(validate_scene_config(broken([](SceneConfig& c) {
                    c.keystep_max_len = c.keystep_min_len - 1;
                  })),
                  ConfigError);
}
