#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "viewdistill/ranking.hpp"
#include "viewdistill/take.hpp"

namespace viewdistill {

// Shortest decimal form that parses back to the same double. All text
// formats use this, which is what makes round-trips byte-exact.
std::string format_double(double v);
std::string format_float(float v);

// Calibration text: one `exo <view_id> <9 rotation> <3 translation>`
// line per camera, `#` comment lines allowed. Poses come back as
// CameraFromWorld with rotations repaired onto SO(3) when they are
// within 1e-3 of orthonormal.
std::vector<ExoCamera> parse_calibration(std::string_view text);
std::string serialize_calibration(std::span<const ExoCamera> cameras);

// Ego trajectory text: `<t_seconds> <9 rotation> <3 translation>` per
// line, integer timestamps strictly increasing.
PoseTrack parse_ego_trajectory(std::string_view text);
std::string serialize_ego_trajectory(const PoseTrack& track);

// Feature stream binary: magic "VDFS", u16 version = 1, u32 view_id,
// u32 T, u32 D, then exactly T*D little-endian f32, row-major. Rows
// must be finite and must not be all-zero (cosine needs a direction).
FeatureStream read_feature_stream(std::span<const std::byte> bytes);
std::vector<std::byte> write_feature_stream(const FeatureStream& stream);

// Keystep text: tab-separated `<id> <start_s> <end_s> <ref>` where
// `ref` is `<embedding_file>:<row>` into a feature-stream binary, or
// `-` for no embedding. The loader maps an embedding file name to its
// parsed stream; it may be null only if every ref is `-`.
using EmbeddingFileLoader =
    std::function<const FeatureStream&(const std::string& name)>;
KeystepSet parse_keystep_annotations(std::string_view text,
                                     const EmbeddingFileLoader& loader);
// Writes refs `<embedding_file_name>:<index>` (or `-` for entries
// without an embedding); the caller owns writing the embedding binary
// with matching row order.
std::string serialize_keystep_annotations(const KeystepSet& set,
                                          std::string_view embedding_file_name);

// Ranking cache text: `<t> <view_id ...>` best-to-worst per line,
// timestamps contiguous from 0, ego view first on every line. Parsed
// timelines carry only the order (no scores or partition flags).
RankingTimeline parse_ranking_cache(std::string_view text);
std::string serialize_ranking_cache(const RankingTimeline& timeline);

// Visibility CSV with header `t,view_id,visible_fraction`.
struct VisibilityRecord {
  int64_t t = 0;
  int view_id = 0;
  double visible_fraction = 0.0;
};
std::string serialize_visibility_csv(std::span<const VisibilityRecord> rows);
std::vector<VisibilityRecord> parse_visibility_csv(std::string_view text);

// Grounding predictions: keystep text format plus a trailing
// confidence column. Several rows may share a keystep id; together
// they form that keystep's ranked candidate list.
struct ScoredSpan {
  std::string keystep_id;
  double start_s = 0.0;
  double end_s = 0.0;
  double confidence = 0.0;
};
std::vector<ScoredSpan> parse_predictions(std::string_view text);
std::string serialize_predictions(std::span<const ScoredSpan> spans);

// Whole-file helpers. Writes go to a temp file in the target directory
// followed by a rename, so readers never observe a partial file.
std::string read_text_file(const std::filesystem::path& path);
std::vector<std::byte> read_binary_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> contents);

}  // namespace viewdistill
