#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "viewdistill/geometry.hpp"

namespace viewdistill {

// The egocentric view is always view 0; exocentric views are >= 1.
inline constexpr int kEgoViewId = 0;

// Per-view feature sequence: one D-dimensional float row per second.
// Rows are stored as-is; cosine similarity downstream handles scale.
struct FeatureStream {
  int view_id = 0;
  int num_seconds = 0;
  int dim = 0;
  std::vector<float> data;  // row-major, num_seconds * dim

  std::span<const float> row(int t) const {
    return std::span<const float>(data).subspan(
        static_cast<size_t>(t) * static_cast<size_t>(dim),
        static_cast<size_t>(dim));
  }
  std::span<float> row(int t) {
    return std::span<float>(data).subspan(
        static_cast<size_t>(t) * static_cast<size_t>(dim),
        static_cast<size_t>(dim));
  }
};

// Annotated activity step: half-open interval [start_s, end_s) in
// seconds plus a text-embedding vector for the step label.
struct Keystep {
  std::string id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<float> embedding;
};

struct KeystepSet {
  std::vector<Keystep> entries;
};

struct ExoCamera {
  int view_id = 0;
  Pose pose;  // CameraFromWorld, static over the take
};

// One recorded activity: an ego camera walking through a set of fixed
// exo cameras, per-view feature streams, and keystep annotations.
struct Take {
  std::string take_id;
  int duration_s = 0;
  PoseTrack ego_track;               // CameraFromWorld per second
  std::vector<ExoCamera> exo_views;  // unique ids, ascending
  std::vector<FeatureStream> streams;
  KeystepSet keysteps;

  const FeatureStream* stream_for(int view_id) const;
};

// Cross-field contract checks: unique ascending exo ids, ego id not
// reused, streams match duration and share one dimension, ego track
// covers every integer second, keystep intervals inside [0, duration].
void validate_take(const Take& take);

}  // namespace viewdistill
