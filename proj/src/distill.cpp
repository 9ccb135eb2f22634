#include "viewdistill/distill.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include "viewdistill/errors.hpp"
#include "viewdistill/io.hpp"
#include "viewdistill/log.hpp"

namespace viewdistill {

namespace {

constexpr double kTiny = 1e-12;
// Key-path tag separating negative-sampling streams from any other
// use of the master seed.
constexpr uint64_t kNegSampleTag = 0x9d3a1f4b5c6d7e8full;

double checked_norm(const Eigen::VectorXd& v, const char* what) {
  const double n = v.norm();
  if (!(n > kTiny)) {
    std::ostringstream msg;
    msg << what << ": zero-norm vector (cosine undefined)";
    throw DegenerateError(msg.str());
  }
  return n;
}

Eigen::VectorXd to_vector(std::span<const float> row) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
  for (size_t i = 0; i < row.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = static_cast<double>(row[i]);
  return v;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.dot(b) / (checked_norm(a, "cosine") * checked_norm(b, "cosine"));
}

void validate_head(const ProjectionHead& head) {
  if (head.weights.empty() || head.weights.size() != head.biases.size())
    throw ValidationError("projection head: inconsistent layer count");
  for (size_t l = 0; l < head.weights.size(); ++l) {
    if (head.biases[l].size() != head.weights[l].rows())
      throw ValidationError("projection head: bias/weight shape mismatch");
    if (l + 1 < head.weights.size() &&
        head.weights[l + 1].cols() != head.weights[l].rows())
      throw ValidationError("projection head: layer dimension chain broken");
    if (!head.weights[l].allFinite() || !head.biases[l].allFinite())
      throw ValidationError("projection head: non-finite parameters");
  }
}

}  // namespace

int same_view_negative(const Eigen::VectorXd& anchor_feature, int64_t tau,
                       const KeystepSet& keysteps, const FeatureStream& stream,
                       Rng& rng) {
  const double anchor_norm = checked_norm(anchor_feature, "same_view_negative");
  const int64_t horizon = stream.num_seconds;

  int best = -1;
  double best_cos = std::numeric_limits<double>::infinity();
  int64_t best_lo = 0, best_hi = 0;
  for (size_t j = 0; j < keysteps.entries.size(); ++j) {
    const Keystep& k = keysteps.entries[j];
    if (k.embedding.empty())
      throw ValidationError("same_view_negative: keystep '" + k.id +
                            "' has no embedding");
    if (static_cast<Eigen::Index>(k.embedding.size()) !=
        anchor_feature.size())
      throw ValidationError(
          "same_view_negative: embedding dimension differs from features");
    const double t = static_cast<double>(tau);
    if (k.start_s <= t && t < k.end_s) continue;  // the anchor's own action
    const int64_t lo =
        std::max<int64_t>(0, static_cast<int64_t>(std::ceil(k.start_s)));
    const int64_t hi =
        std::min<int64_t>(horizon, static_cast<int64_t>(std::ceil(k.end_s)));
    if (lo >= hi) continue;  // interval covers no integer second

    const Eigen::VectorXd emb = to_vector(k.embedding);
    const double c = anchor_feature.dot(emb) /
                     (anchor_norm * checked_norm(emb, "same_view_negative"));
    if (c < best_cos) {
      best_cos = c;
      best = static_cast<int>(j);
      best_lo = lo;
      best_hi = hi;
    }
  }
  if (best < 0)
    throw SamplingError(
        "same_view_negative: no keystep outside the anchor's second");
  return static_cast<int>(rng.uniform_int(best_lo, best_hi));
}

DistillTriple select_targets(const ViewRanking& ranking, int source_view,
                             int phase, const Take& take, Rng& rng) {
  const int n_views = static_cast<int>(ranking.order.size());
  if (n_views < 2)
    throw ConfigError("select_targets: need at least two ranked views");
  const int source_rank = ranking.rank_of(source_view);
  const int target_rank = positive_rank(source_rank, phase, n_views);
  const int positive_view = ranking.order[static_cast<size_t>(target_rank)];
  const int worst_view = ranking.order.back();

  const auto stream_or_fail = [&](int view_id) -> const FeatureStream& {
    const FeatureStream* s = take.stream_for(view_id);
    if (s == nullptr) {
      std::ostringstream msg;
      msg << "select_targets: take '" << take.take_id
          << "' has no feature stream for view " << view_id;
      throw ValidationError(msg.str());
    }
    return *s;
  };

  const FeatureStream& source = stream_or_fail(source_view);
  const int64_t tau = ranking.timestamp;
  if (tau < 0 || tau >= source.num_seconds)
    throw ValidationError("select_targets: timestamp outside the streams");

  DistillTriple triple;
  triple.anchor_view = source_view;
  triple.timestamp = tau;
  triple.anchor = to_vector(source.row(static_cast<int>(tau)));

  const FeatureStream& positive = stream_or_fail(positive_view);
  triple.positives.push_back({positive_view, tau, FeatureRole::CrossViewPositive,
                              to_vector(positive.row(static_cast<int>(tau)))});

  if (worst_view != source_view && worst_view != positive_view) {
    const FeatureStream& worst = stream_or_fail(worst_view);
    triple.negatives.push_back({worst_view, tau, FeatureRole::CrossViewNegative,
                                to_vector(worst.row(static_cast<int>(tau)))});
  }

  try {
    const int t_neg =
        same_view_negative(triple.anchor, tau, take.keysteps, source, rng);
    triple.negatives.push_back({source_view, t_neg,
                                FeatureRole::SameViewNegative,
                                to_vector(source.row(t_neg))});
  } catch (const SamplingError&) {
    log::debug("no same-view negative for view %d at t=%lld", source_view,
               static_cast<long long>(tau));
  }
  return triple;
}

namespace {

// Similarities plus the two stabilized partition sums shared by the
// loss and its gradient. Both log-sum-exps subtract their own maximum,
// so an empty negative set yields a loss of exactly zero and extreme
// temperatures stay finite.
struct SoftmaxState {
  double anchor_norm = 0.0;
  std::vector<double> q_sims, g_sims, q_norms, g_norms;
  double m_all = 0.0, m_q = 0.0;
  double s_all = 0.0, s_q = 0.0;
  double loss = 0.0;
};

SoftmaxState softmax_state(const Eigen::VectorXd& anchor,
                           std::span<const Eigen::VectorXd> positives,
                           std::span<const Eigen::VectorXd> negatives,
                           double gamma) {
  if (positives.empty())
    throw ValidationError("info_nce: positive set is empty");
  if (gamma <= 0.0) throw ConfigError("info_nce: gamma must be positive");

  SoftmaxState st;
  st.anchor_norm = checked_norm(anchor, "info_nce anchor");
  const auto sim = [&](const Eigen::VectorXd& v, const char* what,
                       double& norm_out) {
    if (v.size() != anchor.size())
      throw ValidationError("info_nce: dimension mismatch");
    norm_out = checked_norm(v, what);
    return anchor.dot(v) / (st.anchor_norm * norm_out);
  };

  st.q_norms.resize(positives.size());
  st.q_sims.resize(positives.size());
  for (size_t i = 0; i < positives.size(); ++i)
    st.q_sims[i] = sim(positives[i], "info_nce positive", st.q_norms[i]);
  st.g_norms.resize(negatives.size());
  st.g_sims.resize(negatives.size());
  for (size_t j = 0; j < negatives.size(); ++j)
    st.g_sims[j] = sim(negatives[j], "info_nce negative", st.g_norms[j]);

  st.m_q = *std::max_element(st.q_sims.begin(), st.q_sims.end());
  st.m_all = st.m_q;
  for (double s : st.g_sims) st.m_all = std::max(st.m_all, s);

  st.s_q = 0.0;
  for (double s : st.q_sims) st.s_q += std::exp((s - st.m_q) / gamma);
  st.s_all = 0.0;
  for (double s : st.q_sims) st.s_all += std::exp((s - st.m_all) / gamma);
  for (double s : st.g_sims) st.s_all += std::exp((s - st.m_all) / gamma);

  const double lse_all = st.m_all / gamma + std::log(st.s_all);
  const double lse_q = st.m_q / gamma + std::log(st.s_q);
  st.loss = std::max(0.0, lse_all - lse_q);
  return st;
}

}  // namespace

double info_nce(const Eigen::VectorXd& anchor,
                std::span<const Eigen::VectorXd> positives,
                std::span<const Eigen::VectorXd> negatives, double gamma) {
  return softmax_state(anchor, positives, negatives, gamma).loss;
}

InfoNceGradient info_nce_with_grad(const Eigen::VectorXd& anchor,
                                   std::span<const Eigen::VectorXd> positives,
                                   std::span<const Eigen::VectorXd> negatives,
                                   double gamma) {
  const SoftmaxState st = softmax_state(anchor, positives, negatives, gamma);

  InfoNceGradient out;
  out.loss = st.loss;
  out.d_anchor = Eigen::VectorXd::Zero(anchor.size());
  out.d_positives.resize(positives.size());
  out.d_negatives.resize(negatives.size());

  const Eigen::VectorXd anchor_hat = anchor / st.anchor_norm;
  // d loss / d sim: softmax weight under the full partition minus (for
  // positives) the weight under the positive-only partition.
  const auto p_all = [&](double s) {
    return std::exp((s - st.m_all) / gamma) / st.s_all;
  };
  const auto p_q = [&](double s) {
    return std::exp((s - st.m_q) / gamma) / st.s_q;
  };

  for (size_t i = 0; i < positives.size(); ++i) {
    const double ds = (p_all(st.q_sims[i]) - p_q(st.q_sims[i])) / gamma;
    const Eigen::VectorXd v_hat = positives[i] / st.q_norms[i];
    out.d_anchor += ds * (v_hat - st.q_sims[i] * anchor_hat) / st.anchor_norm;
    out.d_positives[i] =
        ds * (anchor_hat - st.q_sims[i] * v_hat) / st.q_norms[i];
  }
  for (size_t j = 0; j < negatives.size(); ++j) {
    const double ds = p_all(st.g_sims[j]) / gamma;
    const Eigen::VectorXd v_hat = negatives[j] / st.g_norms[j];
    out.d_anchor += ds * (v_hat - st.g_sims[j] * anchor_hat) / st.anchor_norm;
    out.d_negatives[j] =
        ds * (anchor_hat - st.g_sims[j] * v_hat) / st.g_norms[j];
  }
  return out;
}

namespace {

double directional_batch_loss(const Eigen::MatrixXd& anchors,
                              const Eigen::MatrixXd& partners, double gamma) {
  const Eigen::Index batch = anchors.rows();
  double total = 0.0;
  std::vector<Eigen::VectorXd> q(1);
  std::vector<Eigen::VectorXd> g;
  g.reserve(static_cast<size_t>(batch) - 1);
  for (Eigen::Index i = 0; i < batch; ++i) {
    q[0] = partners.row(i).transpose();
    g.clear();
    for (Eigen::Index j = 0; j < batch; ++j)
      if (j != i) g.push_back(partners.row(j).transpose());
    total += info_nce(anchors.row(i).transpose(), q, g, gamma);
  }
  return total / static_cast<double>(batch);
}

}  // namespace

double batch_info_nce(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      double gamma, BatchDirection direction) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("batch_info_nce: shape mismatch");
  if (a.rows() < 2)
    throw ConfigError("batch_info_nce: need at least two rows for negatives");
  if (direction == BatchDirection::AToB)
    return directional_batch_loss(a, b, gamma);
  return 0.5 * (directional_batch_loss(a, b, gamma) +
                directional_batch_loss(b, a, gamma));
}

double pretrain_loss(const Eigen::MatrixXd& ego,
                     std::span<const Eigen::MatrixXd> exo_by_view,
                     std::span<const int> best_idx, double gamma) {
  if (exo_by_view.empty())
    throw ConfigError("pretrain_loss: need at least one exo view");
  const Eigen::Index batch = ego.rows();
  if (std::cmp_not_equal(best_idx.size(), batch))
    throw ValidationError("pretrain_loss: best_idx length != batch size");
  for (const Eigen::MatrixXd& m : exo_by_view)
    if (m.rows() != batch || m.cols() != ego.cols())
      throw ValidationError("pretrain_loss: exo matrix shape mismatch");
  for (int idx : best_idx)
    if (idx < 0 || std::cmp_greater_equal(idx, exo_by_view.size()))
      throw ValidationError("pretrain_loss: best_idx out of range");

  Eigen::MatrixXd best(batch, ego.cols());
  for (Eigen::Index i = 0; i < batch; ++i)
    best.row(i) = exo_by_view[static_cast<size_t>(
                                  best_idx[static_cast<size_t>(i)])]
                      .row(i);

  double loss = batch_info_nce(ego, best, gamma);

  // Align the best view with every other exo view over the samples
  // where that view is not itself the best one.
  for (size_t v = 0; v < exo_by_view.size(); ++v) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < batch; ++i)
      if (best_idx[static_cast<size_t>(i)] != static_cast<int>(v))
        rows.push_back(i);
    if (rows.size() < 2) {
      if (!rows.empty())
        log::debug("pretrain_loss: view %zu has a single non-best row, "
                   "no negatives to contrast against",
                   v);
      continue;
    }
    Eigen::MatrixXd best_sub(static_cast<Eigen::Index>(rows.size()),
                             ego.cols());
    Eigen::MatrixXd exo_sub(static_cast<Eigen::Index>(rows.size()),
                            ego.cols());
    for (size_t r = 0; r < rows.size(); ++r) {
      best_sub.row(static_cast<Eigen::Index>(r)) = best.row(rows[r]);
      exo_sub.row(static_cast<Eigen::Index>(r)) = exo_by_view[v].row(rows[r]);
    }
    loss += batch_info_nce(best_sub, exo_sub, gamma);
  }
  return loss;
}

int ProjectionHead::input_dim() const {
  return weights.empty() ? 0 : static_cast<int>(weights.front().cols());
}

int ProjectionHead::output_dim() const {
  return weights.empty() ? 0 : static_cast<int>(weights.back().rows());
}

std::vector<int> ProjectionHead::dims() const {
  std::vector<int> d;
  if (weights.empty()) return d;
  d.push_back(static_cast<int>(weights.front().cols()));
  for (const Eigen::MatrixXd& w : weights)
    d.push_back(static_cast<int>(w.rows()));
  return d;
}

Eigen::VectorXd ProjectionHead::apply(const Eigen::VectorXd& x) const {
  return head_forward(*this, x, nullptr);
}

ProjectionHead make_training_head(std::span<const int> dims, double shift,
                                  uint64_t seed) {
  if (dims.size() < 2)
    throw ConfigError("projection head: need input and output dimensions");
  for (int d : dims)
    if (d < 1) throw ConfigError("projection head: dimensions must be >= 1");

  bool all_square = true;
  for (size_t l = 0; l + 1 < dims.size(); ++l)
    if (dims[l] != dims[l + 1]) all_square = false;

  ProjectionHead head;
  const size_t n_layers = dims.size() - 1;
  head.weights.reserve(n_layers);
  head.biases.reserve(n_layers);
  if (all_square) {
    // Identity weights; hidden biases lift activations by `shift` so
    // the rectifier stays inactive for inputs above -shift, and the
    // output bias removes the accumulated lift.
    for (size_t l = 0; l < n_layers; ++l) {
      head.weights.push_back(Eigen::MatrixXd::Identity(dims[l + 1], dims[l]));
      const bool hidden = l + 1 < n_layers;
      head.biases.push_back(hidden
                                ? Eigen::VectorXd::Constant(dims[l + 1], shift)
                                : Eigen::VectorXd::Constant(
                                      dims[l + 1],
                                      -shift * static_cast<double>(n_layers -
                                                                   1)));
    }
    if (n_layers == 1) head.biases[0].setZero();
  } else {
    for (size_t l = 0; l < n_layers; ++l) {
      Rng rng = stream(seed, uint64_t{0xead1u}, static_cast<uint64_t>(l));
      const double scale = std::sqrt(2.0 / static_cast<double>(dims[l]));
      Eigen::MatrixXd w(dims[l + 1], dims[l]);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c)
          w(r, c) = scale * rng.normal();
      head.weights.push_back(std::move(w));
      head.biases.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
    }
  }
  return head;
}

ProjectionHead make_identity_head(int dim) {
  ProjectionHead head;
  head.weights.push_back(Eigen::MatrixXd::Identity(dim, dim));
  head.biases.push_back(Eigen::VectorXd::Zero(dim));
  return head;
}

Eigen::VectorXd head_forward(const ProjectionHead& head,
                             const Eigen::VectorXd& x,
                             HeadActivations* cache) {
  validate_head(head);
  if (x.size() != head.input_dim())
    throw ValidationError("projection head: input dimension mismatch");
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Eigen::VectorXd act = x;
  for (size_t l = 0; l < head.weights.size(); ++l) {
    Eigen::VectorXd pre = head.weights[l] * act + head.biases[l];
    if (cache != nullptr) {
      cache->inputs.push_back(act);
      cache->pre.push_back(pre);
    }
    const bool hidden = l + 1 < head.weights.size();
    act = hidden ? pre.cwiseMax(0.0) : pre;
  }
  return act;
}

HeadGradients HeadGradients::zeros_like(const ProjectionHead& head) {
  HeadGradients g;
  for (size_t l = 0; l < head.weights.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(head.weights[l].rows(),
                                              head.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(head.biases[l].size()));
  }
  return g;
}

void HeadGradients::add(const HeadGradients& other) {
  for (size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
}

void head_backward(const ProjectionHead& head, const HeadActivations& cache,
                   const Eigen::VectorXd& d_output, HeadGradients& accum) {
  const size_t n_layers = head.weights.size();
  if (cache.inputs.size() != n_layers || cache.pre.size() != n_layers)
    throw ValidationError("head_backward: stale activation cache");
  Eigen::VectorXd d = d_output;
  for (size_t l = n_layers; l-- > 0;) {
    Eigen::VectorXd d_pre = d;
    if (l + 1 < n_layers) {
      // Rectifier subgradient: zero at the kink.
      for (Eigen::Index i = 0; i < d_pre.size(); ++i)
        if (cache.pre[l][i] <= 0.0) d_pre[i] = 0.0;
    }
    accum.weights[l].noalias() += d_pre * cache.inputs[l].transpose();
    accum.biases[l] += d_pre;
    if (l > 0) d = head.weights[l].transpose() * d_pre;
  }
}

std::vector<std::byte> write_projection_head(const ProjectionHead& head) {
  validate_head(head);
  const std::vector<int> dims = head.dims();
  std::vector<std::byte> out;
  const auto push_u16 = [&](uint16_t v) {
    out.push_back(std::byte(v & 0xff));
    out.push_back(std::byte((v >> 8) & 0xff));
  };
  const auto push_u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out.push_back(std::byte((v >> (8 * i)) & 0xff));
  };
  const auto push_f32 = [&](double v) {
    push_u32(std::bit_cast<uint32_t>(static_cast<float>(v)));
  };
  out.push_back(std::byte('V'));
  out.push_back(std::byte('D'));
  out.push_back(std::byte('P'));
  out.push_back(std::byte('H'));
  push_u16(1);
  push_u32(static_cast<uint32_t>(dims.size()));
  for (int d : dims) push_u32(static_cast<uint32_t>(d));
  for (size_t l = 0; l < head.weights.size(); ++l) {
    const Eigen::MatrixXd& w = head.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) push_f32(w(r, c));
    for (Eigen::Index i = 0; i < head.biases[l].size(); ++i)
      push_f32(head.biases[l][i]);
  }
  return out;
}

ProjectionHead read_projection_head(std::span<const std::byte> bytes) {
  size_t at = 0;
  const auto need = [&](size_t n) {
    if (bytes.size() - at < n)
      throw ParseError("projection head: truncated file");
  };
  need(4);
  if (std::to_integer<char>(bytes[0]) != 'V' ||
      std::to_integer<char>(bytes[1]) != 'D' ||
      std::to_integer<char>(bytes[2]) != 'P' ||
      std::to_integer<char>(bytes[3]) != 'H')
    throw ParseError("projection head: bad magic");
  at = 4;
  const auto read_u16 = [&]() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(
        std::to_integer<uint16_t>(bytes[at]) |
        (std::to_integer<uint16_t>(bytes[at + 1]) << 8));
    at += 2;
    return v;
  };
  const auto read_u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::to_integer<uint32_t>(bytes[at + static_cast<size_t>(i)])
           << (8 * i);
    at += 4;
    return v;
  };
  const uint16_t version = read_u16();
  if (version != 1)
    throw ParseError("projection head: unsupported version " +
                     std::to_string(version));
  const uint32_t n_dims = read_u32();
  if (n_dims < 2 || n_dims > 64)
    throw ParseError("projection head: implausible layer count");
  std::vector<int> dims(n_dims);
  for (uint32_t i = 0; i < n_dims; ++i) {
    const uint32_t d = read_u32();
    if (d == 0 || d > (1u << 20))
      throw ParseError("projection head: implausible dimension");
    dims[i] = static_cast<int>(d);
  }
  uint64_t expected = 0;
  for (uint32_t l = 0; l + 1 < n_dims; ++l)
    expected += (static_cast<uint64_t>(dims[l]) + 1) *
                static_cast<uint64_t>(dims[l + 1]) * 4ull;
  if (bytes.size() - at != expected)
    throw ParseError("projection head: payload size mismatch");

  ProjectionHead head;
  const auto read_f32 = [&]() {
    const uint32_t word = read_u32();
    return static_cast<double>(std::bit_cast<float>(word));
  };
  for (uint32_t l = 0; l + 1 < n_dims; ++l) {
    Eigen::MatrixXd w(dims[l + 1], dims[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = read_f32();
    Eigen::VectorXd b(dims[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = read_f32();
    head.weights.push_back(std::move(w));
    head.biases.push_back(std::move(b));
  }
  validate_head(head);
  return head;
}

std::string metrics_csv(std::span<const EpochMetrics> rows) {
  std::string out = "epoch,phase,mean_infonce,avg_neg_cosine,avg_pos_cosine\n";
  for (const EpochMetrics& m : rows) {
    out += std::to_string(m.epoch);
    out += ',';
    out += std::to_string(m.phase);
    out += ',';
    out += format_double(m.mean_infonce);
    out += ',';
    out += format_double(m.avg_neg_cosine);
    out += ',';
    out += format_double(m.avg_pos_cosine);
    out += '\n';
  }
  return out;
}

namespace {

struct TrainUnit {
  size_t take_idx = 0;
  int view_id = 0;
};

struct UnitStats {
  HeadGradients grad;
  double loss_sum = 0.0;
  int64_t anchors = 0;
  double pos_cos_sum = 0.0;
  int64_t pos_pairs = 0;
  double neg_cos_sum = 0.0;
  int64_t neg_pairs = 0;
};

UnitStats run_unit(const Take& take, const RankingTimeline& timeline,
                   const TrainUnit& unit, int phase,
                   const ProjectionHead& head, const DistillConfig& config) {
  UnitStats stats;
  stats.grad = HeadGradients::zeros_like(head);

  std::vector<Eigen::VectorXd> q_proj, g_proj;
  std::vector<HeadActivations> q_cache, g_cache;
  for (int t = 0; t < take.duration_s; ++t) {
    const ViewRanking& ranking = timeline.per_second[static_cast<size_t>(t)];
    // One fresh stream per (take, view, second): epoch-independent, so
    // frozen parameters give a frozen loss timeline, and thread
    // scheduling cannot reorder draws.
    Rng rng = stream(config.seed, kNegSampleTag,
                     static_cast<uint64_t>(unit.take_idx),
                     static_cast<uint64_t>(unit.view_id),
                     static_cast<uint64_t>(t));
    const DistillTriple triple =
        select_targets(ranking, unit.view_id, phase, take, rng);

    HeadActivations anchor_cache;
    Eigen::VectorXd anchor_proj;
    try {
      anchor_proj = head_forward(head, triple.anchor, &anchor_cache);
      q_proj.clear();
      g_proj.clear();
      q_cache.clear();
      g_cache.clear();
      for (const ContrastFeature& f : triple.positives) {
        q_cache.emplace_back();
        q_proj.push_back(head_forward(head, f.vec, &q_cache.back()));
      }
      for (const ContrastFeature& f : triple.negatives) {
        g_cache.emplace_back();
        g_proj.push_back(head_forward(head, f.vec, &g_cache.back()));
      }

      const InfoNceGradient grads =
          info_nce_with_grad(anchor_proj, q_proj, g_proj, config.gamma);
      stats.loss_sum += grads.loss;
      stats.anchors += 1;
      head_backward(head, anchor_cache, grads.d_anchor, stats.grad);
      for (size_t i = 0; i < q_proj.size(); ++i) {
        head_backward(head, q_cache[i], grads.d_positives[i], stats.grad);
        stats.pos_cos_sum += cosine(anchor_proj, q_proj[i]);
        stats.pos_pairs += 1;
      }
      for (size_t j = 0; j < g_proj.size(); ++j) {
        head_backward(head, g_cache[j], grads.d_negatives[j], stats.grad);
        stats.neg_cos_sum += cosine(anchor_proj, g_proj[j]);
        stats.neg_pairs += 1;
      }
    } catch (const DegenerateError& e) {
      std::ostringstream msg;
      msg << "train_distill: projection collapsed for view " << unit.view_id
          << " at t=" << t << ": " << e.what();
      throw NumericError(msg.str());
    }
  }
  return stats;
}

}  // namespace

TrainResult train_distill(std::span<const Take> takes,
                          std::span<const RankingTimeline> rankings,
                          const CurriculumSchedule& schedule,
                          const DistillConfig& config, ExecPolicy policy) {
  if (takes.empty()) throw ConfigError("train_distill: no takes");
  if (rankings.size() != takes.size())
    throw ConfigError("train_distill: takes and rankings differ in count");
  if (config.gamma <= 0.0)
    throw ConfigError("train_distill: gamma must be positive");
  if (config.learning_rate < 0.0)
    throw ConfigError("train_distill: negative learning rate");
  if (config.epochs < 1)
    throw ConfigError("train_distill: epochs must be >= 1");
  if (schedule.total_epochs != config.epochs)
    throw ConfigError("train_distill: schedule does not match epoch count");

  int dim = -1;
  for (size_t ti = 0; ti < takes.size(); ++ti) {
    const Take& take = takes[ti];
    validate_take(take);
    if (take.streams.empty())
      throw ValidationError("train_distill: take without feature streams");
    if (dim == -1) dim = take.streams.front().dim;
    if (take.streams.front().dim != dim)
      throw ValidationError("train_distill: takes disagree on feature dim");
    const RankingTimeline& timeline = rankings[ti];
    if (std::cmp_not_equal(timeline.per_second.size(), take.duration_s))
      throw ValidationError(
          "train_distill: ranking timeline does not cover the take");
    for (size_t t = 0; t < timeline.per_second.size(); ++t) {
      const ViewRanking& r = timeline.per_second[t];
      if (r.timestamp != static_cast<int64_t>(t))
        throw ValidationError("train_distill: ranking timestamps not 0..T-1");
      if (r.order.size() < 2)
        throw ConfigError("train_distill: rankings must cover >= 2 views");
      if (r.order.front() != kEgoViewId)
        throw ValidationError("train_distill: rankings must start with ego");
      for (int id : r.order)
        if (take.stream_for(id) == nullptr)
          throw ValidationError(
              "train_distill: ranked view lacks a feature stream");
    }
    if (take.keysteps.entries.empty())
      throw ValidationError("train_distill: take has no keysteps");
  }

  std::vector<int> dims = config.head_dims;
  if (dims.empty()) dims = {dim, dim, dim};
  if (dims.front() != dim)
    throw ConfigError("train_distill: head input dim must match features");

  TrainResult result;
  result.head = make_training_head(dims, 1.0, config.seed);

  std::vector<TrainUnit> units;
  for (size_t ti = 0; ti < takes.size(); ++ti) {
    units.push_back({ti, kEgoViewId});
    for (const ExoCamera& cam : takes[ti].exo_views)
      units.push_back({ti, cam.view_id});
  }

  result.metrics.reserve(static_cast<size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const int phase = phase_at(schedule, epoch);
    std::vector<UnitStats> per_unit(units.size());

    std::exception_ptr failure = nullptr;
    if (policy == ExecPolicy::Parallel) {
      const auto n_units = static_cast<int64_t>(units.size());
#pragma omp parallel for schedule(dynamic)
      for (int64_t u = 0; u < n_units; ++u) {
        try {
          const TrainUnit& unit = units[static_cast<size_t>(u)];
          per_unit[static_cast<size_t>(u)] =
              run_unit(takes[unit.take_idx], rankings[unit.take_idx], unit,
                       phase, result.head, config);
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
    } else {
      for (size_t u = 0; u < units.size(); ++u)
        per_unit[u] = run_unit(takes[units[u].take_idx],
                               rankings[units[u].take_idx], units[u], phase,
                               result.head, config);
    }
    if (failure) std::rethrow_exception(failure);

    // Fixed-order reduction: unit index order, independent of threads.
    HeadGradients total = HeadGradients::zeros_like(result.head);
    double loss_sum = 0.0, pos_sum = 0.0, neg_sum = 0.0;
    int64_t anchors = 0, pos_pairs = 0, neg_pairs = 0;
    for (const UnitStats& s : per_unit) {
      total.add(s.grad);
      loss_sum += s.loss_sum;
      anchors += s.anchors;
      pos_sum += s.pos_cos_sum;
      pos_pairs += s.pos_pairs;
      neg_sum += s.neg_cos_sum;
      neg_pairs += s.neg_pairs;
    }
    if (anchors == 0)
      throw ConfigError("train_distill: no anchors to train on");

    EpochMetrics row;
    row.epoch = epoch;
    row.phase = phase;
    row.mean_infonce = loss_sum / static_cast<double>(anchors);
    row.avg_pos_cosine =
        pos_pairs > 0 ? pos_sum / static_cast<double>(pos_pairs) : 0.0;
    row.avg_neg_cosine =
        neg_pairs > 0 ? neg_sum / static_cast<double>(neg_pairs) : 0.0;
    if (!std::isfinite(row.mean_infonce))
      throw NumericError("train_distill: non-finite loss at epoch " +
                         std::to_string(epoch));
    result.metrics.push_back(row);

    const double scale = config.learning_rate / static_cast<double>(anchors);
    for (size_t l = 0; l < result.head.weights.size(); ++l) {
      result.head.weights[l] -= scale * total.weights[l];
      result.head.biases[l] -= scale * total.biases[l];
    }
  }
  return result;
}

}  // namespace viewdistill
