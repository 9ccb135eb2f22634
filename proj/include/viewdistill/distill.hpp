#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "viewdistill/curriculum.hpp"
#include "viewdistill/exec.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/rng.hpp"
#include "viewdistill/take.hpp"

namespace viewdistill {

enum class FeatureRole {
  CrossViewPositive,  // synchronous feature from a better-ranked view
  CrossViewNegative,  // synchronous feature from the worst-ranked view
  SameViewNegative,   // same view, second sampled from a dissimilar keystep
};

struct ContrastFeature {
  int view_id = 0;
  int64_t timestamp = 0;
  FeatureRole role = FeatureRole::CrossViewPositive;
  Eigen::VectorXd vec;
};

// Contrastive unit for one (view, second) anchor.
struct DistillTriple {
  int anchor_view = 0;
  int64_t timestamp = 0;
  Eigen::VectorXd anchor;
  std::vector<ContrastFeature> positives;  // Q, never empty
  std::vector<ContrastFeature> negatives;  // G, may be empty
};

struct DistillConfig {
  double gamma = 0.1;          // softmax temperature
  double lambda_infonce = 1.0; // weight of this loss in combined objectives
  uint64_t seed = 0;
  std::vector<int> head_dims;  // empty = D -> D -> D
  double learning_rate = 0.1;  // 0 freezes the head (evaluation-only run)
  int epochs = 200;
};

// Second to use as the same-view negative for the anchor at `tau`:
// among keysteps whose interval does not cover tau (and which contain
// at least one integer second), pick the one least cosine-similar to
// the anchor feature, then draw a second uniformly from its interval.
// Throws SamplingError when no keystep qualifies.
int same_view_negative(const Eigen::VectorXd& anchor_feature, int64_t tau,
                       const KeystepSet& keysteps, const FeatureStream& stream,
                       Rng& rng);

// Assembles the anchor's positive (the view `phase` ranks better, per
// the curriculum) and its negatives (worst-ranked synchronous view
// unless it coincides with the source or positive view, plus the
// same-view negative when one can be sampled).
DistillTriple select_targets(const ViewRanking& ranking, int source_view,
                             int phase, const Take& take, Rng& rng);

// -log( sum_Q e^{cos/g} / (sum_Q e^{cos/g} + sum_G e^{cos/g}) ), with
// one shared max subtraction, which makes the empty-G loss exactly 0.
double info_nce(const Eigen::VectorXd& anchor,
                std::span<const Eigen::VectorXd> positives,
                std::span<const Eigen::VectorXd> negatives, double gamma);

struct InfoNceGradient {
  double loss = 0.0;
  Eigen::VectorXd d_anchor;
  std::vector<Eigen::VectorXd> d_positives;
  std::vector<Eigen::VectorXd> d_negatives;
};
InfoNceGradient info_nce_with_grad(const Eigen::VectorXd& anchor,
                                   std::span<const Eigen::VectorXd> positives,
                                   std::span<const Eigen::VectorXd> negatives,
                                   double gamma);

// Batch objective over row-matched feature matrices (rows are
// samples). Row i treats the matched row of the other matrix as its
// positive and that matrix's mismatched rows as negatives; Symmetric
// averages the two directions.
enum class BatchDirection { Symmetric, AToB };
double batch_info_nce(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      double gamma,
                      BatchDirection direction = BatchDirection::Symmetric);

// Alignment pretraining objective: pulls ego rows toward each sample's
// best exo view, then pulls the best-view rows toward every other exo
// view over the sample subsets where that view is not the best one.
// Subsets smaller than two rows contribute nothing (no negatives).
double pretrain_loss(const Eigen::MatrixXd& ego,
                     std::span<const Eigen::MatrixXd> exo_by_view,
                     std::span<const int> best_idx, double gamma);

// Small MLP: rectifier on hidden layers, identity on the output layer.
struct ProjectionHead {
  std::vector<Eigen::MatrixXd> weights;  // layer l: dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> biases;

  int input_dim() const;
  int output_dim() const;
  std::vector<int> dims() const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

// Head that computes y = x exactly when every layer is square: hidden
// weights start at I with bias `shift`, the output bias cancels the
// accumulated shift, and the rectifier is inactive for inputs above
// -shift. Non-square layers fall back to seeded He initialization.
// Starting at the identity keeps early-epoch projected features equal
// to the raw ones, so metric trajectories start from the raw-feature
// baseline instead of a random rotation.
ProjectionHead make_training_head(std::span<const int> dims, double shift,
                                  uint64_t seed);

// Single affine layer, W = I, b = 0: the exact identity map.
ProjectionHead make_identity_head(int dim);

// Forward pass with cached activations for backpropagation.
struct HeadActivations {
  std::vector<Eigen::VectorXd> inputs;  // activation entering each layer
  std::vector<Eigen::VectorXd> pre;     // preactivation of each layer
};
Eigen::VectorXd head_forward(const ProjectionHead& head,
                             const Eigen::VectorXd& x,
                             HeadActivations* cache = nullptr);

struct HeadGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static HeadGradients zeros_like(const ProjectionHead& head);
  void add(const HeadGradients& other);
};
// Accumulates parameter gradients for one sample into `accum` given
// the loss gradient at the head output.
void head_backward(const ProjectionHead& head, const HeadActivations& cache,
                   const Eigen::VectorXd& d_output, HeadGradients& accum);

// Head binary: magic "VDPH", u16 version = 1, u32 layer-count + 1 dims
// entries (u32 each), then per layer the row-major weight matrix and
// the bias vector as little-endian f32.
std::vector<std::byte> write_projection_head(const ProjectionHead& head);
ProjectionHead read_projection_head(std::span<const std::byte> bytes);

struct EpochMetrics {
  int epoch = 0;
  int phase = 0;
  double mean_infonce = 0.0;
  double avg_neg_cosine = 0.0;
  double avg_pos_cosine = 0.0;
};
std::string metrics_csv(std::span<const EpochMetrics> rows);

struct TrainResult {
  ProjectionHead head;
  std::vector<EpochMetrics> metrics;
};

// Full-batch gradient descent on the mean InfoNCE over every (view,
// second) anchor of every take, with curriculum-phased positives.
// Metrics for an epoch are measured with the parameters that epoch
// trained on (before its update). Deterministic for a fixed seed and
// byte-identical across execution policies: negative sampling is
// keyed by (seed, take, view, second) alone, and per-unit gradients
// are reduced in a fixed order.
TrainResult train_distill(std::span<const Take> takes,
                          std::span<const RankingTimeline> rankings,
                          const CurriculumSchedule& schedule,
                          const DistillConfig& config,
                          ExecPolicy policy = ExecPolicy::Parallel);

}  // namespace viewdistill
