#include "viewdistill/ground_eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "viewdistill/errors.hpp"
#include "viewdistill/rng.hpp"

namespace viewdistill {

namespace {
constexpr double kDurationFloor = 1e-6;
constexpr uint64_t kAlignSampleTag = 0x51a2b3c4d5e6f708ull;
}  // namespace

double span_iou(double a_start, double a_end, double b_start, double b_end) {
  if (a_start > a_end || b_start > b_end)
    throw ValidationError("span_iou: interval start exceeds end");
  const double inter =
      std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

IouLossResult iou_loss(const SpanPrediction& pred, double gt_start,
                       double gt_end, double chunk_len) {
  if (chunk_len <= 0.0)
    throw ValidationError("iou_loss: chunk length must be positive");
  if (gt_start > gt_end)
    throw ValidationError("iou_loss: ground-truth start exceeds end");
  if (pred.center < 0.0 || pred.center > 1.0 || pred.duration < 0.0 ||
      pred.duration > 1.0)
    throw ValidationError("iou_loss: center/duration must lie in [0, 1]");

  const double d_eff = std::max(pred.duration, kDurationFloor);
  const double l_raw = (pred.center - 0.5 * d_eff) * chunk_len;
  const double r_raw = (pred.center + 0.5 * d_eff) * chunk_len;
  const double l = std::clamp(l_raw, 0.0, chunk_len);
  const double r = std::clamp(r_raw, 0.0, chunk_len);

  IouLossResult out;
  out.loss = 1.0 - span_iou(l, r, gt_start, gt_end);

  // Gradients use the unclamped span and a signed overlap: once the
  // spans are disjoint the plain IoU is locally flat, but the signed
  // ratio keeps shrinking as the prediction drifts away, so descent
  // still steers the center back toward the ground truth.
  const double inter_s =
      std::min(r_raw, gt_end) - std::max(l_raw, gt_start);  // may be < 0
  const double union_s =
      (r_raw - l_raw) + (gt_end - gt_start) - std::max(inter_s, 0.0);
  if (union_s <= kDurationFloor) return out;  // two zero-length spans

  const double di_dr = r_raw <= gt_end ? 1.0 : 0.0;
  const double di_dl = l_raw >= gt_start ? -1.0 : 0.0;
  const double du_dr = 1.0 - (inter_s > 0.0 ? di_dr : 0.0);
  const double du_dl = -1.0 - (inter_s > 0.0 ? di_dl : 0.0);
  const double inv_u2 = 1.0 / (union_s * union_s);
  const double dl_dl = -(di_dl * union_s - inter_s * du_dl) * inv_u2;
  const double dl_dr = -(di_dr * union_s - inter_s * du_dr) * inv_u2;

  out.d_center = chunk_len * (dl_dl + dl_dr);
  out.d_duration = 0.5 * chunk_len * (dl_dr - dl_dl);
  return out;
}

double grounding_loss(std::span<const SpanPrediction> preds,
                      std::span<const GroundTruthSpan> gts,
                      const GroundingWeights& weights, double chunk_len) {
  if (preds.empty()) throw ValidationError("grounding_loss: no predictions");
  if (preds.size() != gts.size())
    throw ValidationError(
        "grounding_loss: prediction/ground-truth count mismatch");
  if (weights.lambda_c < 0.0 || weights.lambda_d < 0.0 ||
      weights.lambda_iou < 0.0)
    throw ValidationError("grounding_loss: negative loss weight");
  if (chunk_len <= 0.0)
    throw ValidationError("grounding_loss: chunk length must be positive");

  double total = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].keystep_id != gts[i].keystep_id)
      throw ValidationError("grounding_loss: keystep id mismatch at index " +
                            std::to_string(i) + " ('" + preds[i].keystep_id +
                            "' vs '" + gts[i].keystep_id + "')");
    const double gt_c =
        0.5 * (gts[i].start_s + gts[i].end_s) / chunk_len;
    const double gt_d = (gts[i].end_s - gts[i].start_s) / chunk_len;
    total += weights.lambda_c * std::abs(preds[i].center - gt_c);
    total += weights.lambda_d * std::abs(preds[i].duration - gt_d);
    total += weights.lambda_iou *
             iou_loss(preds[i], gts[i].start_s, gts[i].end_s, chunk_len).loss;
  }
  return total / static_cast<double>(preds.size());
}

double combined_loss(double ground, double infonce,
                     const GroundingWeights& weights) {
  if (!std::isfinite(ground) || !std::isfinite(infonce))
    throw ValidationError("combined_loss: non-finite input loss");
  if (ground < 0.0 || infonce < 0.0)
    throw ValidationError("combined_loss: losses must be non-negative");
  return ground + weights.lambda_infonce * infonce;
}

namespace {

// Candidate lists per ground-truth keystep, confidence descending with
// file order as the tie-break, validated to cover exactly the ground
// truth ids.
std::map<std::string, std::vector<ScoredSpan>> grouped_candidates(
    std::span<const ScoredSpan> preds, const KeystepSet& gts) {
  if (gts.entries.empty())
    throw ValidationError("grounding eval: ground truth is empty");
  std::set<std::string> gt_ids;
  for (const Keystep& k : gts.entries) gt_ids.insert(k.id);

  std::map<std::string, std::vector<ScoredSpan>> by_id;
  for (const ScoredSpan& s : preds) {
    if (gt_ids.count(s.keystep_id) == 0)
      throw ValidationError(
          "grounding eval: prediction for unknown keystep '" + s.keystep_id +
          "'");
    by_id[s.keystep_id].push_back(s);
  }
  for (const std::string& id : gt_ids)
    if (by_id.count(id) == 0)
      throw ValidationError("grounding eval: no prediction for keystep '" +
                            id + "'");
  for (auto& [id, spans] : by_id)
    std::stable_sort(spans.begin(), spans.end(),
                     [](const ScoredSpan& a, const ScoredSpan& b) {
                       return a.confidence > b.confidence;
                     });
  return by_id;
}

}  // namespace

double recall_at_k(std::span<const ScoredSpan> preds, const KeystepSet& gts,
                   double theta, int top_k) {
  if (top_k < 1) throw ValidationError("recall_at_k: K must be >= 1");
  if (!(theta >= 0.0 && theta <= 1.0))
    throw ValidationError("recall_at_k: theta must lie in [0, 1]");
  const auto by_id = grouped_candidates(preds, gts);
  int64_t hits = 0;
  for (const Keystep& k : gts.entries) {
    const auto& candidates = by_id.at(k.id);
    const size_t limit =
        std::min(candidates.size(), static_cast<size_t>(top_k));
    bool hit = false;
    for (size_t i = 0; i < limit && !hit; ++i)
      hit = span_iou(candidates[i].start_s, candidates[i].end_s, k.start_s,
                     k.end_s) >= theta;
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) /
         static_cast<double>(gts.entries.size());
}

double miou(std::span<const ScoredSpan> preds, const KeystepSet& gts) {
  const auto by_id = grouped_candidates(preds, gts);
  double total = 0.0;
  for (const Keystep& k : gts.entries) {
    const ScoredSpan& top = by_id.at(k.id).front();
    total += span_iou(top.start_s, top.end_s, k.start_s, k.end_s);
  }
  return total / static_cast<double>(gts.entries.size());
}

StratifiedViews stratify_by_view(const RankingTimeline& timeline) {
  if (timeline.per_second.empty())
    throw ValidationError("stratify_by_view: empty timeline");

  std::map<int, int64_t> first_count, last_count;
  std::map<int, double> rank_sum;
  for (const ViewRanking& r : timeline.per_second) {
    if (r.order.size() < 2 || r.order.front() != kEgoViewId)
      throw ValidationError(
          "stratify_by_view: rankings must start with the ego view and "
          "contain at least one exo view");
    for (size_t pos = 1; pos < r.order.size(); ++pos) {
      const int id = r.order[pos];
      first_count.try_emplace(id, 0);
      last_count.try_emplace(id, 0);
      rank_sum[id] += static_cast<double>(pos);
    }
    first_count[r.order[1]] += 1;
    last_count[r.order.back()] += 1;
  }

  StratifiedViews out;
  const auto argmax = [](const std::map<int, int64_t>& counts,
                         std::optional<int> skip) {
    int best_id = -1;
    int64_t best_count = -1;
    for (const auto& [id, count] : counts) {
      if (skip && id == *skip) continue;
      if (count > best_count) {  // map iterates ids ascending: ties low
        best_count = count;
        best_id = id;
      }
    }
    return best_id;
  };

  out.best = argmax(first_count, std::nullopt);
  if (first_count.size() == 1) {
    out.worst = out.best;
    out.notes.push_back(
        "single exo view: best and worst buckets share view " +
        std::to_string(*out.best));
    return out;
  }
  out.worst = argmax(last_count, out.best);

  std::vector<std::pair<double, int>> rest;  // (mean rank, id)
  for (const auto& [id, sum] : rank_sum)
    if (id != *out.best && id != *out.worst)
      rest.emplace_back(
          sum / static_cast<double>(timeline.per_second.size()), id);
  if (rest.empty()) {
    out.notes.push_back(
        "fewer than 3 exo views: mid bucket omitted");
    return out;
  }
  std::sort(rest.begin(), rest.end());
  out.mid = rest[(rest.size() - 1) / 2].second;
  return out;
}

EvalReport build_eval_report(std::span<const ViewPredictions> predictions,
                             const KeystepSet& ground_truth,
                             const RankingTimeline* rankings,
                             std::span<const double> thresholds, int top_k) {
  if (predictions.empty())
    throw ValidationError("eval report: no prediction sets");
  if (thresholds.empty())
    throw ValidationError("eval report: no IoU thresholds");
  for (double t : thresholds)
    if (!(t > 0.0 && t <= 1.0))
      throw ValidationError("eval report: thresholds must lie in (0, 1]");

  EvalReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  report.top_k = top_k;

  const auto bucket_for = [&](const char* name,
                              std::span<const ViewPredictions> sets) {
    BucketMetrics m;
    m.bucket = name;
    double iou_sum = 0.0;
    std::vector<int64_t> hit(thresholds.size(), 0);
    int64_t total = 0;
    for (const ViewPredictions& vp : sets) {
      for (size_t ti = 0; ti < thresholds.size(); ++ti)
        hit[ti] += static_cast<int64_t>(std::llround(
            recall_at_k(vp.spans, ground_truth, thresholds[ti], top_k) *
            static_cast<double>(ground_truth.entries.size())));
      iou_sum += miou(vp.spans, ground_truth) *
                 static_cast<double>(ground_truth.entries.size());
      total += static_cast<int64_t>(ground_truth.entries.size());
    }
    m.keysteps = total;
    for (size_t ti = 0; ti < thresholds.size(); ++ti)
      m.recall.push_back(static_cast<double>(hit[ti]) /
                         static_cast<double>(total));
    m.mean_iou = iou_sum / static_cast<double>(total);
    return m;
  };

  report.buckets.push_back(bucket_for("all", predictions));

  if (rankings != nullptr) {
    const StratifiedViews strata = stratify_by_view(*rankings);
    for (const std::string& n : strata.notes) report.notes.push_back(n);
    const auto subset_for = [&](std::optional<int> view)
        -> std::vector<ViewPredictions> {
      std::vector<ViewPredictions> out;
      if (!view) return out;
      for (const ViewPredictions& vp : predictions)
        if (vp.view_id == *view) out.push_back(vp);
      return out;
    };
    const std::pair<const char*, std::optional<int>> wanted[] = {
        {"B", strata.best}, {"M", strata.mid}, {"W", strata.worst}};
    for (const auto& [name, view] : wanted) {
      const auto subset = subset_for(view);
      if (subset.empty()) {
        if (view)
          report.notes.push_back(std::string("no predictions for bucket ") +
                                 name + " (view " + std::to_string(*view) +
                                 ")");
        continue;
      }
      report.buckets.push_back(bucket_for(name, subset));
    }
  }
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["top_k"] = report.top_k;
  j["thresholds"] = report.thresholds;
  j["buckets"] = nlohmann::ordered_json::array();
  for (const BucketMetrics& b : report.buckets) {
    nlohmann::ordered_json jb;
    jb["bucket"] = b.bucket;
    jb["keysteps"] = b.keysteps;
    nlohmann::ordered_json recalls = nlohmann::ordered_json::object();
    for (size_t i = 0; i < report.thresholds.size(); ++i)
      recalls[format_double(report.thresholds[i])] = b.recall[i];
    jb["recall_at_k"] = recalls;
    jb["miou"] = b.mean_iou;
    j["buckets"].push_back(jb);
  }
  j["notes"] = report.notes;
  return j.dump(2) + "\n";
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "bucket,theta,recall_at_k,miou,keysteps\n";
  for (const BucketMetrics& b : report.buckets) {
    for (size_t i = 0; i < report.thresholds.size(); ++i) {
      out += b.bucket;
      out += ',';
      out += format_double(report.thresholds[i]);
      out += ',';
      out += format_double(b.recall[i]);
      out += ',';
      out += format_double(b.mean_iou);
      out += ',';
      out += std::to_string(b.keysteps);
      out += '\n';
    }
  }
  return out;
}

namespace {

struct AlignmentAccumulator {
  int64_t anchors = 0;
  double loss_sum = 0.0;
  double neg_cos_sum = 0.0;
  int64_t neg_pairs = 0;
  double pos_cos_sum = 0.0;
  int64_t pos_pairs = 0;

  void fold(double loss, double pos_cos, std::span<const double> neg_cos) {
    anchors += 1;
    loss_sum += loss;
    pos_cos_sum += pos_cos;
    pos_pairs += 1;
    for (double c : neg_cos) {
      neg_cos_sum += c;
      neg_pairs += 1;
    }
  }

  AlignmentEntry entry() const {
    AlignmentEntry e;
    e.anchors = anchors;
    if (anchors > 0) {
      e.mean_infonce = loss_sum / static_cast<double>(anchors);
      e.avg_pos_cosine = pos_cos_sum / static_cast<double>(pos_pairs);
    }
    if (neg_pairs > 0)
      e.avg_neg_cosine = neg_cos_sum / static_cast<double>(neg_pairs);
    return e;
  }
};

Eigen::VectorXd row_vector(const FeatureStream& s, int t) {
  const auto r = s.row(t);
  Eigen::VectorXd v(static_cast<Eigen::Index>(r.size()));
  for (size_t i = 0; i < r.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = static_cast<double>(r[i]);
  return v;
}

double cos_of(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na <= 0.0 || nb <= 0.0)
    throw DegenerateError("alignment_report: zero-norm projected feature");
  return a.dot(b) / (na * nb);
}

}  // namespace

AlignmentReport alignment_report(std::span<const Take> takes,
                                 std::span<const RankingTimeline> rankings,
                                 const ProjectionHead& head, double gamma,
                                 uint64_t seed) {
  if (takes.empty()) throw ConfigError("alignment_report: no takes");
  if (takes.size() != rankings.size())
    throw ConfigError("alignment_report: takes and rankings differ in count");

  AlignmentReport report;
  AlignmentAccumulator overall, best, mid, worst;

  for (size_t ti = 0; ti < takes.size(); ++ti) {
    const Take& take = takes[ti];
    const RankingTimeline& timeline = rankings[ti];
    if (std::cmp_not_equal(timeline.per_second.size(), take.duration_s))
      throw ValidationError(
          "alignment_report: timeline does not cover the take");
    const FeatureStream* ego = take.stream_for(kEgoViewId);
    if (ego == nullptr)
      throw ValidationError("alignment_report: take lacks the ego stream");

    const StratifiedViews strata = stratify_by_view(timeline);
    for (const std::string& n : strata.notes)
      report.notes.push_back(take.take_id + ": " + n);

    for (const ExoCamera& cam : take.exo_views) {
      const int v = cam.view_id;
      const FeatureStream* exo_stream = take.stream_for(v);
      if (exo_stream == nullptr)
        throw ValidationError(
            "alignment_report: exo view lacks a feature stream");
      AlignmentAccumulator* bucket = nullptr;
      if (strata.best && *strata.best == v) bucket = &best;
      else if (strata.mid && *strata.mid == v) bucket = &mid;
      else if (strata.worst && *strata.worst == v) bucket = &worst;

      for (int t = 0; t < take.duration_s; ++t) {
        const ViewRanking& r = timeline.per_second[static_cast<size_t>(t)];
        const Eigen::VectorXd anchor_raw = row_vector(*exo_stream, t);
        const Eigen::VectorXd anchor = head_forward(head, anchor_raw, nullptr);
        std::vector<Eigen::VectorXd> q{
            head_forward(head, row_vector(*ego, t), nullptr)};
        std::vector<Eigen::VectorXd> g;
        const int worst_view = r.order.back();
        if (worst_view != v && worst_view != kEgoViewId) {
          const FeatureStream* ws = take.stream_for(worst_view);
          if (ws == nullptr)
            throw ValidationError(
                "alignment_report: worst-ranked view lacks a stream");
          g.push_back(head_forward(head, row_vector(*ws, t), nullptr));
        }
        Rng rng = stream(seed, kAlignSampleTag, static_cast<uint64_t>(ti),
                         static_cast<uint64_t>(v), static_cast<uint64_t>(t));
        try {
          const int t_neg =
              same_view_negative(anchor_raw, t, take.keysteps, *exo_stream, rng);
          g.push_back(head_forward(head, row_vector(*exo_stream, t_neg), nullptr));
        } catch (const SamplingError&) {
          // no eligible keystep: report on the cross-view negative only
        }
        const double loss = info_nce(anchor, q, g, gamma);
        std::vector<double> neg_cos;
        neg_cos.reserve(g.size());
        for (const Eigen::VectorXd& gv : g) neg_cos.push_back(cos_of(anchor, gv));
        const double pos_cos = cos_of(anchor, q[0]);
        overall.fold(loss, pos_cos, neg_cos);
        if (bucket != nullptr) bucket->fold(loss, pos_cos, neg_cos);
      }
    }
  }

  report.overall = overall.entry();
  report.best = best.entry();
  report.mid = mid.entry();
  report.worst = worst.entry();
  return report;
}

std::string alignment_report_text(const AlignmentReport& report) {
  std::ostringstream out;
  const auto line = [&](const char* name, const AlignmentEntry& e) {
    out << name << ": anchors=" << e.anchors;
    if (e.anchors > 0) {
      out << " mean_infonce=" << format_double(e.mean_infonce)
          << " avg_neg_cosine=" << format_double(e.avg_neg_cosine)
          << " avg_pos_cosine=" << format_double(e.avg_pos_cosine);
    }
    out << "\n";
  };
  line("overall", report.overall);
  line("best", report.best);
  line("mid", report.mid);
  line("worst", report.worst);
  for (const std::string& n : report.notes) out << "note: " << n << "\n";
  return out.str();
}

}  // namespace viewdistill
