#pragma once

// Training losses: part attention cross-entropy, identity loss behind a
// normalisation neck, batch-hard triplet (part-averaged and standard), and
// their composition according to a loss-placement configuration.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "reidkit/error.hpp"
#include "reidkit/fields.hpp"
#include "reidkit/net.hpp"

namespace reidkit::objectives {

using nn::Mat;
using nn::Mode;
using nn::Param;
using nn::RowVec;
using nn::Vec;

struct LossHyperParams {
  double epsilon = 0.1;    // label smoothing
  double margin = 0.3;     // triplet margin
  double lambda_pa = 0.35; // attention loss weight

  void validate() const {
    require(epsilon >= 0 && epsilon < 1, ErrorCode::kInvalidConfig, "epsilon must lie in [0,1)");
    require(margin >= 0, ErrorCode::kInvalidConfig, "margin must be non-negative");
    require(lambda_pa >= 0, ErrorCode::kInvalidConfig, "lambda_pa must be non-negative");
  }
};

/// Embeddings a loss can be placed on.
enum class Target { kGlobal, kForeground, kConcat, kParts };

inline const char* to_string(Target t) {
  switch (t) {
    case Target::kGlobal: return "g";
    case Target::kForeground: return "f";
    case Target::kConcat: return "c";
    case Target::kParts: return "parts";
  }
  return "?";
}

inline Target parse_target(const std::string& s) {
  if (s == "g" || s == "global") return Target::kGlobal;
  if (s == "f" || s == "foreground") return Target::kForeground;
  if (s == "c" || s == "concat") return Target::kConcat;
  if (s == "parts" || s == "p") return Target::kParts;
  throw Error(ErrorCode::kInvalidConfig, "unknown embedding name '" + s + "'");
}

enum class PartTripletMode { kAveraged, kPerPart };

struct LossConfig {
  std::set<Target> id_on;
  std::set<Target> tri_on;
  PartTripletMode part_triplet_mode = PartTripletMode::kAveraged;

  static LossConfig gilt() {
    return {{Target::kGlobal, Target::kForeground, Target::kConcat}, {Target::kParts},
            PartTripletMode::kAveraged};
  }
  void validate() const {
    require(!id_on.empty() || !tri_on.empty(), ErrorCode::kInvalidConfig,
            "loss configuration enables no loss");
  }
  bool operator==(const LossConfig&) const = default;
};

/// The named rows of the loss-placement study: "GiLt", "PCB", "1".."12".
inline const std::vector<std::pair<std::string, LossConfig>>& loss_grid_rows() {
  using T = Target;
  static const std::vector<std::pair<std::string, LossConfig>> rows = [] {
    const std::set<T> gfc = {T::kGlobal, T::kForeground, T::kConcat};
    const std::set<T> all = {T::kGlobal, T::kForeground, T::kConcat, T::kParts};
    const std::set<T> p = {T::kParts};
    auto avg = PartTripletMode::kAveraged;
    return std::vector<std::pair<std::string, LossConfig>>{
        {"GiLt", {gfc, p, avg}},
        {"PCB", {p, {}, avg}},
        {"1", {p, gfc, avg}},
        {"2", {all, all, avg}},
        {"3", {all, {}, avg}},
        {"4", {{}, all, avg}},
        {"5", {all, p, avg}},
        {"6", {{T::kGlobal, T::kForeground}, p, avg}},
        {"7", {{T::kGlobal, T::kConcat}, p, avg}},
        {"8", {{T::kForeground, T::kConcat}, p, avg}},
        {"9", {gfc, {T::kConcat, T::kParts}, avg}},
        {"10", {gfc, {T::kForeground, T::kParts}, avg}},
        {"11", {gfc, {T::kGlobal, T::kParts}, avg}},
        {"12", {gfc, {T::kConcat}, avg}},
    };
  }();
  return rows;
}

inline LossConfig loss_grid_row(const std::string& name) {
  for (const auto& [n, cfg] : loss_grid_rows())
    if (n == name) return cfg;
  throw Error(ErrorCode::kInvalidConfig, "unknown loss grid row '" + name + "'");
}

// ---------------------------------------------------------------------------
// Label-smoothed cross-entropy.

/// Target weight of the true class and of every other class for n classes.
inline std::pair<double, double> smoothing_weights(double epsilon, int n) {
  return {1.0 - (n - 1.0) / n * epsilon, epsilon / n};
}

/// Smoothed cross-entropy of one logit column; writes softmax - q into
/// `dlogits` when given.
template <class T, class Col>
T smoothed_cross_entropy(const Col& logits, int target, double epsilon, Vec<T>* dlogits = nullptr) {
  const int n = static_cast<int>(logits.size());
  require(target >= 0 && target < n, ErrorCode::kInvalidLabel,
          "label " + std::to_string(target) + " outside 0.." + std::to_string(n - 1));
  const auto [q_true, q_other] = smoothing_weights(epsilon, n);
  const T m = logits.maxCoeff();
  const T lse = m + std::log((logits.array() - m).exp().sum());
  T loss = 0;
  for (int k = 0; k < n; ++k) {
    const double q = k == target ? q_true : q_other;
    if (q != 0) loss -= static_cast<T>(q) * (logits[k] - lse);
  }
  if (dlogits) {
    *dlogits = (logits.array() - lse).exp().matrix();
    for (int k = 0; k < n; ++k) (*dlogits)[k] -= static_cast<T>(k == target ? q_true : q_other);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Body part attention loss.

/// Mean over pixels and batch of the smoothed cross-entropy between
/// probability maps ((K+1) x pixels) and label maps, n = K+1 classes.
template <class T>
T part_attention_loss(const std::vector<Mat<T>>& scores,
                      const std::vector<fields::ParsingLabelMap>& labels, double epsilon) {
  require(scores.size() == labels.size() && !scores.empty(), ErrorCode::kShape,
          "attention maps and label maps must pair up");
  T total = 0;
  long count = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const auto& s = scores[n];
    const auto& Y = labels[n].Y;
    const int classes = static_cast<int>(s.rows());
    require(static_cast<Eigen::Index>(Y.size()) == s.cols(), ErrorCode::kShape,
            "label map size differs from attention map size");
    const auto [q_true, q_other] = smoothing_weights(epsilon, classes);
    for (Eigen::Index p = 0; p < s.cols(); ++p) {
      const int y = Y.data[p];
      require(y >= 0 && y < classes, ErrorCode::kInvalidLabel, "parsing label out of range");
      for (int k = 0; k < classes; ++k) {
        const double q = k == y ? q_true : q_other;
        if (q != 0) total -= static_cast<T>(q) * std::log(s(k, p));
      }
      ++count;
    }
  }
  return total / static_cast<T>(count);
}

/// Same loss evaluated from logits (numerically stable); fills per-sample
/// logit gradients when `grad` is given.
template <class T>
T part_attention_loss_logits(const std::vector<Mat<T>>& logits,
                             const std::vector<fields::ParsingLabelMap>& labels, double epsilon,
                             std::vector<Mat<T>>* grad = nullptr) {
  require(logits.size() == labels.size() && !logits.empty(), ErrorCode::kShape,
          "attention logits and label maps must pair up");
  long count = 0;
  for (const auto& l : logits) count += l.cols();
  T total = 0;
  if (grad) grad->assign(logits.size(), Mat<T>());
  Vec<T> d;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    const auto& z = logits[n];
    const auto& Y = labels[n].Y;
    require(static_cast<Eigen::Index>(Y.size()) == z.cols(), ErrorCode::kShape,
            "label map size differs from attention map size");
    if (grad) (*grad)[n].resize(z.rows(), z.cols());
    for (Eigen::Index p = 0; p < z.cols(); ++p) {
      total += smoothed_cross_entropy<T>(z.col(p), Y.data[p], epsilon, grad ? &d : nullptr);
      if (grad) (*grad)[n].col(p) = d / static_cast<T>(count);
    }
  }
  return total / static_cast<T>(count);
}

// ---------------------------------------------------------------------------
// Identity head: normalisation neck + bias-free linear classifier.

template <class T>
class IdentityHead {
 public:
  IdentityHead() = default;
  IdentityHead(const std::string& name, int dim, int num_ids)
      : dim_(dim), num_ids_(num_ids),
        gamma_(name + ".neck.weight", {dim}),
        beta_(name + ".neck.bias", {dim}, false),
        running_mean_(name + ".neck.running_mean", {dim}, false),
        running_var_(name + ".neck.running_var", {dim}, false),
        weight_(name + ".classifier.weight", {num_ids, dim}) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  void init(std::mt19937_64& rng) { nn::normal_init(weight_, 0.001, rng); }

  int num_ids() const { return num_ids_; }
  int dim() const { return dim_; }

  /// Post-neck features (dim x N).
  Mat<T> neck(const Mat<T>& f, Mode mode) {
    require(f.rows() == dim_, ErrorCode::kShape, "identity head dimension mismatch");
    const T count = static_cast<T>(f.cols());
    Vec<T> mean, var;
    if (mode == Mode::kTrain) {
      mean = f.rowwise().mean();
      var = (f.colwise() - mean).array().square().rowwise().mean().matrix();
      const T mom = static_cast<T>(nn::BatchNorm2d<T>::kMomentum);
      running_mean_.value = (1 - mom) * running_mean_.value + mom * mean;
      const T unbias = count > 1 ? count / (count - 1) : T(1);
      running_var_.value = (1 - mom) * running_var_.value + mom * unbias * var;
    } else {
      mean = running_mean_.value;
      var = running_var_.value;
    }
    inv_std_ = (var.array() + static_cast<T>(nn::BatchNorm2d<T>::kEps)).rsqrt().matrix();
    xhat_ = (f.colwise() - mean).array().colwise() * inv_std_.array();
    post_ = (xhat_.array().colwise() * gamma_.value.array()).colwise() + beta_.value.array();
    return post_;
  }

  /// Identity logits (num_ids x N).
  Mat<T> forward(const Mat<T>& f, Mode mode) {
    neck(f, mode);
    return weight_.mat(num_ids_, dim_) * post_;
  }

  /// Gradient w.r.t. the pre-neck features for train-mode statistics.
  Mat<T> backward(const Mat<T>& dlogits) {
    auto W = weight_.mat(num_ids_, dim_);
    weight_.grad_mat(num_ids_, dim_).noalias() += dlogits * post_.transpose();
    const Mat<T> dpost = W.transpose() * dlogits;
    const T count = static_cast<T>(dpost.cols());
    const Vec<T> dbeta = dpost.rowwise().sum();
    const Vec<T> dgamma = (dpost.array() * xhat_.array()).rowwise().sum().matrix();
    gamma_.grad += dgamma;
    Mat<T> t = (dpost * count).colwise() - dbeta;
    t -= (xhat_.array().colwise() * dgamma.array()).matrix();
    const Vec<T> scale = (gamma_.value.array() * inv_std_.array() / count).matrix();
    return t.array().colwise() * scale.array();
  }

  std::vector<Param<T>*> params() {
    return {&gamma_, &beta_, &running_mean_, &running_var_, &weight_};
  }

 private:
  int dim_ = 0, num_ids_ = 0;
  Param<T> gamma_, beta_, running_mean_, running_var_, weight_;
  Vec<T> inv_std_;
  Mat<T> xhat_, post_;
};

/// Mean smoothed cross-entropy of one embedding batch through its head;
/// adds weight * dL/df into `dfeat` (and head parameter gradients) when
/// given.
template <class T>
T identity_loss(const Mat<T>& f, const std::vector<int>& ids, IdentityHead<T>& head,
                double epsilon, Mode mode = Mode::kTrain, Mat<T>* dfeat = nullptr,
                double weight = 1.0) {
  require(static_cast<Eigen::Index>(ids.size()) == f.cols(), ErrorCode::kShape,
          "one identity label per embedding");
  for (int id : ids)
    require(id >= 0 && id < head.num_ids(), ErrorCode::kInvalidLabel,
            "identity " + std::to_string(id) + " unknown to the classifier");
  const Mat<T> logits = head.forward(f, mode);
  const auto N = static_cast<T>(f.cols());
  T total = 0;
  Mat<T> dlogits(logits.rows(), logits.cols());
  Vec<T> d;
  for (Eigen::Index n = 0; n < logits.cols(); ++n) {
    total += smoothed_cross_entropy<T>(logits.col(n), ids[n], epsilon, &d);
    dlogits.col(n) = d * static_cast<T>(weight) / N;
  }
  if (dfeat) {
    require(mode == Mode::kTrain, ErrorCode::kInvalidConfig, "gradients need train-mode statistics");
    const Mat<T> g = head.backward(dlogits);
    if (dfeat->size() == 0) *dfeat = Mat<T>::Zero(f.rows(), f.cols());
    *dfeat += g;
  }
  return total / N;
}

// ---------------------------------------------------------------------------
// Triplet losses. Embedding matrices hold one sample per column; for part
// embeddings the K parts are consecutive blocks of C rows.

template <class A, class B>
auto euclidean(const A& a, const B& b) {
  return (a - b).norm();
}

/// Mean over parts of per-part Euclidean distances.
template <class T>
T part_avg_dist(const Vec<T>& a, const Vec<T>& b, int K) {
  require(a.size() == b.size() && K >= 1 && a.size() % K == 0, ErrorCode::kShape,
          "part embeddings must agree in K and dimension");
  const Eigen::Index C = a.size() / K;
  T s = 0;
  for (int k = 0; k < K; ++k) s += (a.segment(k * C, C) - b.segment(k * C, C)).norm();
  return s / static_cast<T>(K);
}

/// Pairwise part-averaged distances (K = 1 gives plain Euclidean).
template <class T>
Mat<T> part_distance_matrix(const Mat<T>& emb, int K) {
  require(K >= 1 && emb.rows() % K == 0, ErrorCode::kShape, "embedding rows not divisible by K");
  const Eigen::Index N = emb.cols(), C = emb.rows() / K;
  Mat<T> D = Mat<T>::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = i + 1; j < N; ++j) {
      T s = 0;
      for (int k = 0; k < K; ++k) s += (emb.block(k * C, i, C, 1) - emb.block(k * C, j, C, 1)).norm();
      D(i, j) = D(j, i) = s / static_cast<T>(K);
    }
  return D;
}

struct Mining {
  std::vector<int> hardest_positive;  // -1 when the anchor has no positive
  std::vector<int> hardest_negative;
};

/// Batch-hard mining on a distance matrix; ties go to the lowest index.
template <class T>
Mining mine_batch_hard(const Mat<T>& D, const std::vector<int>& ids) {
  const auto N = static_cast<int>(ids.size());
  Mining m;
  m.hardest_positive.assign(N, -1);
  m.hardest_negative.assign(N, -1);
  for (int a = 0; a < N; ++a) {
    for (int j = 0; j < N; ++j) {
      if (j == a) continue;
      if (ids[j] == ids[a]) {
        int& p = m.hardest_positive[a];
        if (p < 0 || D(a, j) > D(a, p)) p = j;
      } else {
        int& n = m.hardest_negative[a];
        if (n < 0 || D(a, j) < D(a, n)) n = j;
      }
    }
    require(m.hardest_negative[a] >= 0, ErrorCode::kNoNegatives,
            "batch contains a single identity; triplet mining needs negatives");
  }
  return m;
}

/// Mean over anchors of [d_ap - d_an + margin]_+ given a distance matrix.
template <class T>
T triplet_from_distances(const Mat<T>& D, const std::vector<int>& ids, double margin) {
  const Mining m = mine_batch_hard(D, ids);
  T total = 0;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    const int p = m.hardest_positive[a];
    const T dap = p >= 0 ? D(a, p) : T(0);
    total += std::max(T(0), dap - D(a, m.hardest_negative[a]) + static_cast<T>(margin));
  }
  return total / static_cast<T>(ids.size());
}

/// Batch-hard triplet loss with the part-averaged distance over K parts,
/// mean over anchors of [d_ap - d_an + margin]_+. Anchors without a positive
/// use d_ap = 0. Adds dL/demb into `grad` when given.
template <class T>
T part_averaged_triplet(const Mat<T>& emb, int K, const std::vector<int>& ids, double margin,
                        Mat<T>* grad = nullptr) {
  require(static_cast<Eigen::Index>(ids.size()) == emb.cols(), ErrorCode::kShape,
          "one identity label per embedding");
  const Mat<T> D = part_distance_matrix(emb, K);
  const Mining m = mine_batch_hard(D, ids);
  const auto N = static_cast<int>(ids.size());
  const Eigen::Index C = emb.rows() / K;
  if (grad && grad->size() == 0) *grad = Mat<T>::Zero(emb.rows(), emb.cols());
  T total = 0;
  auto add_pair_grad = [&](int i, int j, T coeff) {
    for (int k = 0; k < K; ++k) {
      Vec<T> diff = emb.block(k * C, i, C, 1) - emb.block(k * C, j, C, 1);
      const T norm = diff.norm();
      if (norm <= 0) continue;
      diff *= coeff / (norm * static_cast<T>(K));
      grad->block(k * C, i, C, 1) += diff;
      grad->block(k * C, j, C, 1) -= diff;
    }
  };
  for (int a = 0; a < N; ++a) {
    const int p = m.hardest_positive[a], n = m.hardest_negative[a];
    const T dap = p >= 0 ? D(a, p) : T(0);
    const T v = dap - D(a, n) + static_cast<T>(margin);
    if (v <= 0) continue;
    total += v;
    if (grad) {
      if (p >= 0) add_pair_grad(a, p, T(1) / N);
      add_pair_grad(a, n, T(-1) / N);
    }
  }
  return total / static_cast<T>(N);
}

/// Classic batch-hard triplet on a single embedding per sample.
template <class T>
T standard_triplet(const Mat<T>& emb, const std::vector<int>& ids, double margin,
                   Mat<T>* grad = nullptr) {
  return part_averaged_triplet(emb, 1, ids, margin, grad);
}

/// One classic triplet per part, averaged over parts.
template <class T>
T per_part_triplet(const Mat<T>& emb, int K, const std::vector<int>& ids, double margin,
                   Mat<T>* grad = nullptr) {
  const Eigen::Index C = emb.rows() / K;
  if (grad && grad->size() == 0) *grad = Mat<T>::Zero(emb.rows(), emb.cols());
  T total = 0;
  for (int k = 0; k < K; ++k) {
    Mat<T> g;
    total += standard_triplet<T>(emb.middleRows(k * C, C), ids, margin, grad ? &g : nullptr);
    if (grad) grad->middleRows(k * C, C) += g / static_cast<T>(K);
  }
  return total / static_cast<T>(K);
}

// ---------------------------------------------------------------------------

/// Individual terms of the training objective.
template <class T>
struct LossBreakdown {
  T attention = 0;
  std::map<Target, T> identity;
  std::map<Target, T> triplet;
  T total = 0;
};

/// Loss function built from a LossConfig: owns the identity heads it needs.
template <class T>
class Objective {
 public:
  Objective() = default;
  Objective(LossConfig cfg, LossHyperParams hp, int K, int C, int num_ids)
      : cfg_(std::move(cfg)), hp_(hp), K_(K), C_(C), num_ids_(num_ids) {
    cfg_.validate();
    hp_.validate();
    require(num_ids >= 2 || cfg_.id_on.empty(), ErrorCode::kInvalidConfig,
            "identity loss needs at least two training identities");
    for (Target t : cfg_.id_on) {
      switch (t) {
        case Target::kGlobal: heads_.emplace(key(t), IdentityHead<T>("head.g", C, num_ids)); break;
        case Target::kForeground: heads_.emplace(key(t), IdentityHead<T>("head.f", C, num_ids)); break;
        case Target::kConcat: heads_.emplace(key(t), IdentityHead<T>("head.c", K * C, num_ids)); break;
        case Target::kParts:
          for (int k = 0; k < K; ++k)
            heads_.emplace(key(t, k), IdentityHead<T>("head.part" + std::to_string(k + 1), C, num_ids));
          break;
      }
    }
  }

  const LossConfig& config() const { return cfg_; }
  const LossHyperParams& hyper() const { return hp_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& [_, h] : heads_) h.init(rng);
  }

  IdentityHead<T>& head(Target t, int part = 0) { return heads_.at(key(t, part)); }

  /// Total objective lambda_pa * L_pa + configured identity/triplet terms.
  /// `labels` (at backbone resolution) may be null to skip the attention
  /// term, as when attention is fixed.
  LossBreakdown<T> compute(const nn::ModelOutput<T>& out, const std::vector<int>& ids,
                           const std::vector<fields::ParsingLabelMap>* labels, Mode mode,
                           nn::OutputGrad<T>* grad = nullptr) {
    LossBreakdown<T> r;
    const double eps = hp_.epsilon;
    Mat<T>* dg = nullptr;
    Mat<T>* df = nullptr;
    Mat<T>* dc = nullptr;
    if (grad) {
      grad->global = Mat<T>::Zero(out.global.rows(), out.global.cols());
      grad->fg = Mat<T>::Zero(out.fg.rows(), out.fg.cols());
      grad->concat = Mat<T>::Zero(out.concat.rows(), out.concat.cols());
      grad->logits.clear();
      dg = &grad->global;
      df = &grad->fg;
      dc = &grad->concat;
    }

    if (labels && hp_.lambda_pa > 0 && !out.logits.empty()) {
      std::vector<Mat<T>> dl;
      r.attention = part_attention_loss_logits<T>(out.logits, *labels, eps, grad ? &dl : nullptr);
      if (grad) {
        for (auto& m : dl) m *= static_cast<T>(hp_.lambda_pa);
        grad->logits = std::move(dl);
      }
      r.total += static_cast<T>(hp_.lambda_pa) * r.attention;
    }

    for (Target t : cfg_.id_on) {
      T v = 0;
      switch (t) {
        case Target::kGlobal: v = identity_loss<T>(out.global, ids, head(t), eps, mode, dg); break;
        case Target::kForeground: v = identity_loss<T>(out.fg, ids, head(t), eps, mode, df); break;
        case Target::kConcat: v = identity_loss<T>(out.concat, ids, head(t), eps, mode, dc); break;
        case Target::kParts: {
          for (int k = 0; k < K_; ++k) {
            Mat<T> gk;
            v += identity_loss<T>(out.part(k), ids, head(t, k), eps, mode, grad ? &gk : nullptr,
                                  1.0 / K_);
            if (grad) dc->middleRows(k * C_, C_) += gk;
          }
          v /= static_cast<T>(K_);
          break;
        }
      }
      r.identity[t] = v;
      r.total += v;
    }

    const double a = hp_.margin;
    for (Target t : cfg_.tri_on) {
      T v = 0;
      switch (t) {
        case Target::kGlobal: v = standard_triplet<T>(out.global, ids, a, dg); break;
        case Target::kForeground: v = standard_triplet<T>(out.fg, ids, a, df); break;
        case Target::kConcat: v = standard_triplet<T>(out.concat, ids, a, dc); break;
        case Target::kParts:
          v = cfg_.part_triplet_mode == PartTripletMode::kAveraged
                  ? part_averaged_triplet<T>(out.concat, K_, ids, a, dc)
                  : per_part_triplet<T>(out.concat, K_, ids, a, dc);
          break;
      }
      r.triplet[t] = v;
      r.total += v;
    }
    require(std::isfinite(static_cast<double>(r.total)), ErrorCode::kNonFinite, "loss is not finite");
    return r;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& [_, h] : heads_)
      for (auto* p : h.params()) out.push_back(p);
    return out;
  }

 private:
  static int key(Target t, int part = 0) { return static_cast<int>(t) * 1000 + part; }

  LossConfig cfg_;
  LossHyperParams hp_;
  int K_ = 0, C_ = 0, num_ids_ = 0;
  std::map<int, IdentityHead<T>> heads_;
};

/// Identity loss on f_g, f_f, f_c plus part-averaged triplet on the parts.
template <class T>
T gilt_loss(const nn::ModelOutput<T>& out, const std::vector<int>& ids, Objective<T>& gilt_objective) {
  require(gilt_objective.config() == LossConfig::gilt(), ErrorCode::kInvalidConfig,
          "gilt_loss needs an objective built from the GiLt preset");
  return gilt_objective.compute(out, ids, nullptr, Mode::kTrain).total;
}

/// lambda_pa * L_pa + L_GiLt (or the configured variant).
template <class T>
T total_loss(const nn::ModelOutput<T>& out, const std::vector<int>& ids,
             const std::vector<fields::ParsingLabelMap>& labels, Objective<T>& objective) {
  return objective.compute(out, ids, &labels, Mode::kTrain).total;
}

}  // namespace reidkit::objectives
