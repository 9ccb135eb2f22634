// Command-line frontend: scene simulation, view ranking, curriculum
// schedules, cross-view distillation training, and grounding
// evaluation. Exit codes: 0 success, 2 input/config error, 3 numeric
// failure during training.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "viewdistill/curriculum.hpp"
#include "viewdistill/distill.hpp"
#include "viewdistill/errors.hpp"
#include "viewdistill/ground_eval.hpp"
#include "viewdistill/io.hpp"
#include "viewdistill/log.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/scene_sim.hpp"

namespace fs = std::filesystem;
using namespace viewdistill;

namespace {

GazeAxis parse_gaze_axis(const std::string& s) {
  if (s == "+z" || s == "pz") return GazeAxis::PlusZ;
  if (s == "-z" || s == "mz") return GazeAxis::MinusZ;
  throw ConfigError("gaze axis must be one of +z, -z");
}

EgoPath parse_ego_path(const std::string& s) {
  if (s == "static") return EgoPath::Static;
  if (s == "orbit") return EgoPath::Orbit;
  if (s == "random-walk") return EgoPath::RandomWalk;
  throw ConfigError("ego path must be one of static, orbit, random-walk");
}

// Keystep annotations reference embedding rows as `<file>:<row>`;
// files resolve relative to the annotation file's directory.
class EmbeddingDirLoader {
 public:
  explicit EmbeddingDirLoader(fs::path dir) : dir_(std::move(dir)) {}

  const FeatureStream& operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it == cache_.end()) {
      const auto bytes = read_binary_file(dir_ / name);
      it = cache_.emplace(name, read_feature_stream(bytes)).first;
    }
    return it->second;
  }

 private:
  fs::path dir_;
  std::map<std::string, FeatureStream> cache_;
};

KeystepSet load_keysteps(const fs::path& path) {
  EmbeddingDirLoader loader(path.parent_path());
  return parse_keystep_annotations(read_text_file(path),
                                   std::ref(loader));
}

std::vector<FeatureStream> load_streams(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("features_", 0) == 0 &&
        entry.path().extension() == ".vdfs")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<FeatureStream> streams;
  for (const fs::path& f : files)
    streams.push_back(read_feature_stream(read_binary_file(f)));
  std::sort(streams.begin(), streams.end(),
            [](const FeatureStream& a, const FeatureStream& b) {
              return a.view_id < b.view_id;
            });
  return streams;
}

void print_rank_frequency(const RankingTimeline& timeline) {
  if (timeline.per_second.empty()) return;
  const std::vector<int>& first = timeline.per_second.front().order;
  std::vector<int> ids(first);
  std::sort(ids.begin() + 1, ids.end());
  std::printf("rank frequency over %zu seconds (columns are rank positions)\n",
              timeline.per_second.size());
  for (int id : ids) {
    std::vector<int64_t> counts(first.size(), 0);
    for (const ViewRanking& r : timeline.per_second)
      counts[static_cast<size_t>(r.rank_of(id))] += 1;
    std::printf("view %d:", id);
    for (int64_t c : counts) std::printf(" %lld", static_cast<long long>(c));
    std::printf("\n");
  }
}

// ---- simulate ----------------------------------------------------

struct SimulateArgs {
  std::string out;
  uint64_t seed = 0;
  int n_exo = 4;
  int duration = 16;
  std::string ego_path = "random-walk";
  double noise_sigma = 0.1;
  int dim = 16;
  double arena_radius = 2.5;
  double d_ego_hand = 0.6;
};

int cmd_simulate(const SimulateArgs& args) {
  SceneConfig cfg;
  cfg.seed = args.seed;
  cfg.n_exo = args.n_exo;
  cfg.duration_s = args.duration;
  cfg.ego_path = parse_ego_path(args.ego_path);
  cfg.noise_sigma = args.noise_sigma;
  cfg.feature_dim = args.dim;
  cfg.arena_radius = args.arena_radius;
  cfg.d_ego_hand = args.d_ego_hand;

  SyntheticTake scene = generate_scene(cfg);
  synth_features(scene, cfg);

  const fs::path out(args.out);
  fs::create_directories(out);
  write_file_atomic(out / "calibration.txt",
                    serialize_calibration(scene.take.exo_views));
  write_file_atomic(out / "trajectory.txt",
                    serialize_ego_trajectory(scene.take.ego_track));
  for (const FeatureStream& s : scene.take.streams) {
    const std::string name = "features_" + std::to_string(s.view_id) + ".vdfs";
    write_file_atomic(out / name, write_feature_stream(s));
  }

  // Keystep embeddings as one row per keystep, in annotation order.
  {
    FeatureStream emb;
    emb.view_id = 0;
    emb.num_seconds = static_cast<int>(scene.take.keysteps.entries.size());
    emb.dim = cfg.feature_dim;
    for (const Keystep& k : scene.take.keysteps.entries)
      emb.data.insert(emb.data.end(), k.embedding.begin(), k.embedding.end());
    write_file_atomic(out / "keystep_embeddings.vdfs",
                      write_feature_stream(emb));
    write_file_atomic(out / "keysteps.tsv",
                      serialize_keystep_annotations(scene.take.keysteps,
                                                    "keystep_embeddings.vdfs"));
  }

  // Honest oracle visibility for every view, the ego camera included
  // (its own sight line starts inside the body capsule, so its oracle
  // fraction is 0 even though its stream always carries the signal).
  {
    std::vector<VisibilityRecord> rows;
    for (int t = 0; t < scene.take.duration_s; ++t)
      for (size_t vi = 0; vi < scene.view_ids.size(); ++vi)
        rows.push_back(VisibilityRecord{
            t, scene.view_ids[vi],
            scene.visible[vi][static_cast<size_t>(t)]});
    write_file_atomic(out / "visibility.csv", serialize_visibility_csv(rows));
  }

  std::printf("wrote take '%s' to %s: %d exo views, %d s, %zu keysteps\n",
              scene.take.take_id.c_str(), out.string().c_str(), cfg.n_exo,
              cfg.duration_s, scene.take.keysteps.entries.size());
  return 0;
}

// ---- rank --------------------------------------------------------

struct RankArgs {
  std::string calib, traj, out;
  uint64_t seed = 0;
  double d_ego_hand = 0.6;
  std::string gaze_axis = "+z";
  bool reverse = false;
  bool random = false;
};

int cmd_rank(const RankArgs& args) {
  Take take;
  take.take_id = "cli-rank";
  take.exo_views = parse_calibration(read_text_file(args.calib));
  std::sort(take.exo_views.begin(), take.exo_views.end(),
            [](const ExoCamera& a, const ExoCamera& b) {
              return a.view_id < b.view_id;
            });
  take.ego_track = parse_ego_trajectory(read_text_file(args.traj));
  if (take.ego_track.timestamps.empty())
    throw ValidationError("trajectory is empty");
  take.duration_s = static_cast<int>(take.ego_track.timestamps.back()) + 1;

  HoiConfig cfg;
  cfg.d_ego_hand = args.d_ego_hand;
  cfg.gaze_axis = parse_gaze_axis(args.gaze_axis);

  RankingTimeline timeline = rank_take(take, cfg);
  if (args.reverse) reverse_exo_order(timeline);
  if (args.random) shuffle_exo_order(timeline, args.seed);

  write_file_atomic(fs::path(args.out), serialize_ranking_cache(timeline));
  print_rank_frequency(timeline);
  return 0;
}

// ---- schedule ----------------------------------------------------

int cmd_schedule(int epochs, int phases, double final_frac) {
  const CurriculumSchedule s = build_schedule(epochs, phases, final_frac);
  std::printf("%s\n", schedule_report(s).c_str());
  return 0;
}

// ---- train-distill -----------------------------------------------

struct TrainArgs {
  std::string take_dir;
  std::string calib, traj, features, keysteps, rankings, out;
  uint64_t seed = 0;
  double gamma = 0.1;
  int epochs = 200;
  int phases = 0;  // 0 = one phase per view
  double final_frac = 0.5;
  double lr = 0.1;
};

int cmd_train_distill(const TrainArgs& args) {
  const fs::path dir(args.take_dir);
  const auto pick = [&](const std::string& flag, const char* fallback) {
    return flag.empty() ? dir / fallback : fs::path(flag);
  };

  Take take;
  take.take_id = dir.filename().string().empty() ? "take"
                                                 : dir.filename().string();
  take.exo_views = parse_calibration(read_text_file(
      pick(args.calib, "calibration.txt")));
  std::sort(take.exo_views.begin(), take.exo_views.end(),
            [](const ExoCamera& a, const ExoCamera& b) {
              return a.view_id < b.view_id;
            });
  take.ego_track =
      parse_ego_trajectory(read_text_file(pick(args.traj, "trajectory.txt")));
  if (take.ego_track.timestamps.empty())
    throw ValidationError("trajectory is empty");
  take.duration_s = static_cast<int>(take.ego_track.timestamps.back()) + 1;
  take.streams =
      load_streams(args.features.empty() ? dir : fs::path(args.features));
  take.keysteps = load_keysteps(pick(args.keysteps, "keysteps.tsv"));

  const RankingTimeline timeline = parse_ranking_cache(
      read_text_file(pick(args.rankings, "rankings.txt")));

  std::vector<Take> takes;
  takes.push_back(std::move(take));
  std::vector<RankingTimeline> rankings{timeline};

  const int phases =
      args.phases > 0 ? args.phases : max_view_count(takes);
  const CurriculumSchedule schedule =
      build_schedule(args.epochs, phases, args.final_frac);

  DistillConfig cfg;
  cfg.gamma = args.gamma;
  cfg.seed = args.seed;
  cfg.learning_rate = args.lr;
  cfg.epochs = args.epochs;

  const TrainResult result = train_distill(takes, rankings, schedule, cfg);

  const fs::path out = args.out.empty() ? dir : fs::path(args.out);
  fs::create_directories(out);
  write_file_atomic(out / "head.vdph", write_projection_head(result.head));
  write_file_atomic(out / "metrics.csv", metrics_csv(result.metrics));

  const EpochMetrics& first = result.metrics.front();
  const EpochMetrics& last = result.metrics.back();
  std::printf("epoch %d: mean_infonce=%s  ->  epoch %d: mean_infonce=%s\n",
              first.epoch, format_double(first.mean_infonce).c_str(),
              last.epoch, format_double(last.mean_infonce).c_str());
  return 0;
}

// ---- eval-ground -------------------------------------------------

struct EvalArgs {
  std::vector<std::string> predictions;
  std::string keysteps, rankings, out;
  std::vector<double> thresholds{0.1, 0.3, 0.5, 0.7};
};

int cmd_eval_ground(const EvalArgs& args) {
  std::vector<ViewPredictions> preds;
  for (const std::string& spec : args.predictions) {
    ViewPredictions vp;
    std::string path = spec;
    const size_t eq = spec.find('=');
    if (eq != std::string::npos && eq > 0 &&
        spec.find_first_not_of("0123456789", 0) >= eq) {
      vp.view_id = std::stoi(spec.substr(0, eq));
      path = spec.substr(eq + 1);
    }
    vp.spans = parse_predictions(read_text_file(path));
    preds.push_back(std::move(vp));
  }

  const KeystepSet gts = load_keysteps(fs::path(args.keysteps));

  std::optional<RankingTimeline> timeline;
  if (!args.rankings.empty())
    timeline = parse_ranking_cache(read_text_file(args.rankings));

  const EvalReport report = build_eval_report(
      preds, gts, timeline ? &*timeline : nullptr, args.thresholds, 1);

  const std::string json = eval_report_json(report);
  std::printf("%s", json.c_str());
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    write_file_atomic(fs::path(args.out) / "eval_report.json", json);
    write_file_atomic(fs::path(args.out) / "eval_report.csv",
                      eval_report_csv(report));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "viewdistill: activity-centric view ranking, cross-view "
      "distillation, and temporal grounding evaluation"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate =
      app.add_subcommand("simulate", "generate a synthetic take directory");
  simulate->set_config("--config", "", "key=value config file");
  simulate->allow_config_extras(false);
  simulate->add_option("--out", sim.out, "output take directory")->required();
  simulate->add_option("--seed", sim.seed, "master seed");
  simulate->add_option("--n-exo", sim.n_exo, "number of exo cameras");
  simulate->add_option("--duration", sim.duration, "take length in seconds");
  simulate->add_option("--ego-path", sim.ego_path,
                       "ego motion: static, orbit, random-walk");
  simulate->add_option("--noise-sigma", sim.noise_sigma,
                       "feature noise level");
  simulate->add_option("--dim", sim.dim, "feature dimension");
  simulate->add_option("--arena-radius", sim.arena_radius,
                       "exo camera circle radius in meters");
  simulate->add_option("--d-ego-hand", sim.d_ego_hand,
                       "gaze-to-hands distance in meters");

  RankArgs rank;
  CLI::App* rank_cmd =
      app.add_subcommand("rank", "rank views per second into a cache file");
  rank_cmd->set_config("--config", "", "key=value config file");
  rank_cmd->allow_config_extras(false);
  rank_cmd->add_option("--calib", rank.calib, "exo calibration file")
      ->required();
  rank_cmd->add_option("--traj", rank.traj, "ego trajectory file")->required();
  rank_cmd->add_option("--out", rank.out, "ranking cache output path")
      ->required();
  rank_cmd->add_option("--seed", rank.seed, "seed for --random");
  rank_cmd->add_option("--d-ego-hand", rank.d_ego_hand,
                       "gaze-to-hands distance in meters");
  rank_cmd->add_option("--gaze-axis", rank.gaze_axis,
                       "camera optical axis: +z or -z");
  CLI::Option* rev = rank_cmd->add_flag("--reverse", rank.reverse,
                                        "reverse the exo order per second");
  rank_cmd->add_flag("--random", rank.random,
                     "shuffle the exo order per second")
      ->excludes(rev);

  int sched_epochs = 0;
  int sched_phases = 0;
  double sched_frac = 0.5;
  CLI::App* sched =
      app.add_subcommand("schedule", "print a curriculum phase schedule");
  sched->add_option("epochs", sched_epochs, "total epochs M")->required();
  sched->add_option("phases", sched_phases, "phase count P")->required();
  sched->add_option("final-fraction", sched_frac,
                    "fraction of epochs in the final phase")
      ->required();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand(
      "train-distill", "train the cross-view projection head on a take");
  train_cmd->set_config("--config", "", "key=value config file");
  train_cmd->allow_config_extras(false);
  train_cmd->add_option("take_dir", train.take_dir, "take directory")
      ->required();
  train_cmd->add_option("--calib", train.calib,
                        "calibration file (default <take>/calibration.txt)");
  train_cmd->add_option("--traj", train.traj,
                        "trajectory file (default <take>/trajectory.txt)");
  train_cmd->add_option("--features", train.features,
                        "directory with features_<id>.vdfs files");
  train_cmd->add_option("--keysteps", train.keysteps,
                        "keystep annotations (default <take>/keysteps.tsv)");
  train_cmd->add_option("--rankings", train.rankings,
                        "ranking cache (default <take>/rankings.txt)");
  train_cmd->add_option("--out", train.out,
                        "output directory (default the take dir)");
  train_cmd->add_option("--seed", train.seed, "master seed");
  train_cmd->add_option("--gamma", train.gamma, "softmax temperature");
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--phases", train.phases,
                        "curriculum phases (0 = one per view)");
  train_cmd->add_option("--final-frac", train.final_frac,
                        "fraction of epochs in the final phase");
  train_cmd->add_option("--lr", train.lr, "learning rate (0 = frozen head)");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval-ground", "score grounding predictions against keysteps");
  eval_cmd->set_config("--config", "", "key=value config file");
  eval_cmd->allow_config_extras(false);
  eval_cmd
      ->add_option("predictions", eval.predictions,
                   "prediction files, each `path` or `<view_id>=path`")
      ->required();
  eval_cmd->add_option("--keysteps", eval.keysteps,
                       "ground-truth keystep annotations")
      ->required();
  eval_cmd->add_option("--rankings", eval.rankings,
                       "ranking cache enabling best/mid/worst buckets");
  eval_cmd->add_option("--thresholds", eval.thresholds,
                       "IoU thresholds for recall");
  eval_cmd->add_option("--out", eval.out, "directory for report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim);
    if (rank_cmd->parsed()) return cmd_rank(rank);
    if (sched->parsed())
      return cmd_schedule(sched_epochs, sched_phases, sched_frac);
    if (train_cmd->parsed()) return cmd_train_distill(train);
    if (eval_cmd->parsed()) return cmd_eval_ground(eval);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;  // unreachable: a subcommand is required
}
