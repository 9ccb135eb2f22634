#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewdistill/distill.hpp"
#include "viewdistill/io.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/take.hpp"

namespace viewdistill {

// Regressed span in chunk-relative coordinates.
struct SpanPrediction {
  std::string keystep_id;
  double center = 0.0;    // in [0, 1]
  double duration = 0.0;  // in [0, 1]
};

struct GroundingWeights {
  double lambda_c = 1.0;
  double lambda_d = 1.0;
  double lambda_iou = 1.0;
  double lambda_infonce = 1.0;
};

struct GroundTruthSpan {
  std::string keystep_id;
  double start_s = 0.0;
  double end_s = 0.0;
};

// Intersection-over-union of two closed intervals; 0 when the union
// has no length.
double span_iou(double a_start, double a_end, double b_start, double b_end);

// 1 - IoU between the decoded prediction and the ground-truth span,
// with partial derivatives in (center, duration). The decode is
// [(c - d/2) T, (c + d/2) T] clamped to [0, T] with duration floored
// at 1e-6; the reported loss uses the clamped span, while gradients
// follow the unclamped interior branch with a signed overlap, so
// disjoint spans still pull the center toward the ground truth.
struct IouLossResult {
  double loss = 0.0;
  double d_center = 0.0;
  double d_duration = 0.0;
};
IouLossResult iou_loss(const SpanPrediction& pred, double gt_start,
                       double gt_end, double chunk_len);

// Mean per-keystep grounding objective: center L1 + duration L1 +
// IoU loss, each weighted. Predictions and ground truth must align
// one-to-one by keystep id, in order.
double grounding_loss(std::span<const SpanPrediction> preds,
                      std::span<const GroundTruthSpan> gts,
                      const GroundingWeights& weights, double chunk_len);

// Joint objective: grounding plus weighted contrastive loss.
double combined_loss(double ground, double infonce,
                     const GroundingWeights& weights);

// Fraction of ground-truth keysteps whose top-K candidates (confidence
// descending, ties keep file order) contain a span with IoU >= theta.
double recall_at_k(std::span<const ScoredSpan> preds, const KeystepSet& gts,
                   double theta, int top_k);

// Mean IoU of each keystep's top-1 candidate, unrounded.
double miou(std::span<const ScoredSpan> preds, const KeystepSet& gts);

// Per-take view-quality buckets from rank frequencies: best = exo view
// most often ranked first, worst = most often ranked last among the
// others, mid = median mean-rank view of the rest. All ties break
// toward the lower view id. Fewer than 3 exo views leaves `mid` empty
// (noted), and a single exo view is both best and worst.
struct StratifiedViews {
  std::optional<int> best, mid, worst;
  std::vector<std::string> notes;
};
StratifiedViews stratify_by_view(const RankingTimeline& timeline);

// Grounding metrics for one bucket of views.
struct BucketMetrics {
  std::string bucket;  // "all", "B", "M", "W"
  std::vector<double> recall;  // aligned with EvalReport::thresholds
  double mean_iou = 0.0;
  int64_t keysteps = 0;
};

struct EvalReport {
  std::vector<double> thresholds;
  int top_k = 1;
  std::vector<BucketMetrics> buckets;
  std::vector<std::string> notes;
};

// Predictions for one view's grounding run over the shared keysteps.
struct ViewPredictions {
  int view_id = 0;
  std::vector<ScoredSpan> spans;
};

// Recall@K per threshold and mean IoU, overall and per view-quality
// bucket when a ranking timeline is supplied. Every prediction set
// must cover exactly the ground-truth keystep ids.
EvalReport build_eval_report(std::span<const ViewPredictions> predictions,
                             const KeystepSet& ground_truth,
                             const RankingTimeline* rankings,
                             std::span<const double> thresholds, int top_k);

std::string eval_report_json(const EvalReport& report);
std::string eval_report_csv(const EvalReport& report);

// Feature-alignment diagnostic: for every exo (view, second) anchor,
// InfoNCE with the synchronous ego feature as the positive against the
// worst-ranked synchronous view (skipped when the anchor is itself
// worst) and a same-view negative, all projected through the head.
// Aggregated overall and per view-quality bucket.
struct AlignmentEntry {
  int64_t anchors = 0;
  double mean_infonce = 0.0;
  double avg_neg_cosine = 0.0;
  double avg_pos_cosine = 0.0;
};

struct AlignmentReport {
  AlignmentEntry overall;
  AlignmentEntry best, mid, worst;
  std::vector<std::string> notes;
};

AlignmentReport alignment_report(std::span<const Take> takes,
                                 std::span<const RankingTimeline> rankings,
                                 const ProjectionHead& head, double gamma,
                                 uint64_t seed);

std::string alignment_report_text(const AlignmentReport& report);

}  // namespace viewdistill
