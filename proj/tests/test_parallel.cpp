#include <vector>

#include <doctest.h>

#include "viewdistill/curriculum.hpp"
#include "viewdistill/distill.hpp"
#include "viewdistill/exec.hpp"
#include "viewdistill/io.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/scene_sim.hpp"

using namespace viewdistill;

// The parallel kernels must be bitwise interchangeable with their
// serial twins: every slot is an independent job and reductions run in
// a fixed order, so no tolerance is allowed here.

TEST_CASE("scene visibility tables are identical across exec policies") {
  for (uint64_t seed : {77ull, 1234ull}) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.duration_s = 24;
    cfg.n_exo = 5;
    const SyntheticTake serial = generate_scene(cfg, ExecPolicy::Serial);
    const SyntheticTake parallel = generate_scene(cfg, ExecPolicy::Parallel);
    CHECK(serial.visible == parallel.visible);
    REQUIRE(serial.take.exo_views.size() == parallel.take.exo_views.size());
    for (size_t e = 0; e < serial.take.exo_views.size(); ++e) {
      CHECK(serial.take.exo_views[e].pose.rotation ==
            parallel.take.exo_views[e].pose.rotation);
      CHECK(serial.take.exo_views[e].pose.translation ==
            parallel.take.exo_views[e].pose.translation);
    }
  }
}

TEST_CASE("view rankings are identical across exec policies") {
  SceneConfig cfg;
  cfg.seed = 501;
  cfg.duration_s = 32;
  cfg.n_exo = 5;
  const SyntheticTake scene = generate_scene(cfg);
  const RankingTimeline serial =
      rank_take(scene.take, HoiConfig{}, ExecPolicy::Serial);
  const RankingTimeline parallel =
      rank_take(scene.take, HoiConfig{}, ExecPolicy::Parallel);
  REQUIRE(serial.per_second.size() == parallel.per_second.size());
  for (size_t t = 0; t < serial.per_second.size(); ++t) {
    const ViewRanking& s = serial.per_second[t];
    const ViewRanking& p = parallel.per_second[t];
    CHECK(s.order == p.order);
    CHECK(s.exo_ids == p.exo_ids);
    CHECK(s.front == p.front);
    REQUIRE(s.scores.size() == p.scores.size());
    for (size_t i = 0; i < s.scores.size(); ++i)
      CHECK(s.scores[i] == p.scores[i]);  // bitwise, not approximate
  }
  // The serialized caches agree byte for byte.
  CHECK(serialize_ranking_cache(serial) == serialize_ranking_cache(parallel));
}

TEST_CASE("distillation training is identical across exec policies") {
  std::vector<Take> takes;
  std::vector<RankingTimeline> rankings;
  for (uint64_t seed : {91ull, 92ull}) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.duration_s = 12;
    cfg.n_exo = 3;
    cfg.feature_dim = 8;
    SyntheticTake scene = generate_scene(cfg);
    synth_features(scene, cfg);
    rankings.push_back(rank_take(scene.take, HoiConfig{}));
    takes.push_back(std::move(scene.take));
  }
  const CurriculumSchedule schedule = build_schedule(6, 2, 0.5);
  DistillConfig config;
  config.epochs = 6;
  config.learning_rate = 0.1;
  config.seed = 13;

  const TrainResult serial =
      train_distill(takes, rankings, schedule, config, ExecPolicy::Serial);
  const TrainResult parallel =
      train_distill(takes, rankings, schedule, config, ExecPolicy::Parallel);
  CHECK(metrics_csv(serial.metrics) == metrics_csv(parallel.metrics));
  CHECK(write_projection_head(serial.head) ==
        write_projection_head(parallel.head));
  REQUIRE(serial.metrics.size() == 6);
  // Fixed-order reduction means the raw doubles agree bit for bit.
  for (size_t e = 0; e < serial.metrics.size(); ++e) {
    CHECK(serial.metrics[e].mean_infonce == parallel.metrics[e].mean_infonce);
    CHECK(serial.metrics[e].avg_neg_cosine ==
          parallel.metrics[e].avg_neg_cosine);
    CHECK(serial.metrics[e].avg_pos_cosine ==
          parallel.metrics[e].avg_pos_cosine);
  }
}
