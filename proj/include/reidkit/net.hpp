#pragma once

// Small convolutional backbone, pixel-wise part classifier, foreground map,
// attention-weighted pooling and visibility. All layers carry hand-written
// backward passes; the scalar type is a template parameter so the same code
// trains in float and is gradient-checked in double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "reidkit/array.hpp"
#include "reidkit/error.hpp"

namespace reidkit::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
/// Channels x pixels, one contiguous plane per channel; pixel p = h * W + w.
template <class T>
using Planes = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { kTrain, kEval };

/// Named, shape-tagged parameter (or buffer when not trainable).
template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  Vec<T> value;
  Vec<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::vector<int> s, bool train = true)
      : name(std::move(n)), shape(std::move(s)), trainable(train) {
    Eigen::Index count = 1;
    for (int d : shape) count *= d;
    value = Vec<T>::Zero(count);
    grad = Vec<T>::Zero(count);
  }
  Eigen::Map<Mat<T>> mat(int rows, int cols) { return {value.data(), rows, cols}; }
  Eigen::Map<const Mat<T>> mat(int rows, int cols) const { return {value.data(), rows, cols}; }
  Eigen::Map<Mat<T>> grad_mat(int rows, int cols) { return {grad.data(), rows, cols}; }
};

template <class T>
void normal_init(Param<T>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(nd(rng));
}

/// A batch of feature maps with a shared spatial size.
template <class T>
struct FeatureBatch {
  int height = 0, width = 0;
  std::vector<Planes<T>> maps;

  int channels() const { return maps.empty() ? 0 : static_cast<int>(maps[0].rows()); }
  int pixels() const { return height * width; }
  std::size_t size() const { return maps.size(); }
};

/// Images (H x W x 3, values in [0,1]) to a planar batch.
template <class T>
FeatureBatch<T> to_batch(const std::vector<const Image*>& images) {
  FeatureBatch<T> b;
  require(!images.empty(), ErrorCode::kShape, "empty image batch");
  b.height = images[0]->height;
  b.width = images[0]->width;
  for (const Image* img : images) {
    require(img->height == b.height && img->width == b.width && img->channels == 3, ErrorCode::kShape,
            "images in a batch must share size and have 3 channels");
    Planes<T> m(3, b.height * b.width);
    for (int h = 0; h < b.height; ++h)
      for (int w = 0; w < b.width; ++w)
        for (int c = 0; c < 3; ++c) m(c, h * b.width + w) = static_cast<T>((*img)(h, w, c));
    b.maps.push_back(std::move(m));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Layers.

/// 3x3 convolution, stride 1, zero padding 1, no bias (a norm layer follows).
template <class T>
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(std::string name, int in_ch, int out_ch)
      : in_(in_ch), out_(out_ch), weight_(std::move(name) + ".weight", {out_ch, in_ch * 9}) {}

  void init(std::mt19937_64& rng) { normal_init(weight_, std::sqrt(2.0 / (in_ * 9)), rng); }

  FeatureBatch<T> forward(const FeatureBatch<T>& x) const {
    FeatureBatch<T> y{x.height, x.width, {}};
    auto W = weight_.mat(out_, in_ * 9);
    Planes<T> col;
    for (const auto& m : x.maps) {
      im2col(m, x.height, x.width, col);
      y.maps.emplace_back(W * col);
    }
    return y;
  }

  /// Accumulates the weight gradient; returns dx when requested.
  FeatureBatch<T> backward(const FeatureBatch<T>& x, const FeatureBatch<T>& dy, bool need_dx) {
    FeatureBatch<T> dx{x.height, x.width, {}};
    auto W = weight_.mat(out_, in_ * 9);
    auto dW = weight_.grad_mat(out_, in_ * 9);
    Planes<T> col;
    for (std::size_t n = 0; n < x.size(); ++n) {
      im2col(x.maps[n], x.height, x.width, col);
      dW.noalias() += dy.maps[n] * col.transpose();
      if (need_dx) {
        Planes<T> dcol = W.transpose() * dy.maps[n];
        dx.maps.push_back(col2im(dcol, x.height, x.width));
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight_}; }

 private:
  void im2col(const Planes<T>& x, int H, int W, Planes<T>& col) const {
    col.setZero(in_ * 9, H * W);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int r = c * 9 + ky * 3 + kx;
          T* dst = col.row(r).data();
          const T* src = x.row(c).data();
          for (int h = 0; h < H; ++h) {
            const int sh = h + ky - 1;
            if (sh < 0 || sh >= H) continue;
            const int w0 = std::max(0, 1 - kx), w1 = std::min(W, W + 1 - kx);
            for (int w = w0; w < w1; ++w) dst[h * W + w] = src[sh * W + w + kx - 1];
          }
        }
  }

  Planes<T> col2im(const Planes<T>& dcol, int H, int W) const {
    Planes<T> dx = Planes<T>::Zero(in_, H * W);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int r = c * 9 + ky * 3 + kx;
          const T* src = dcol.row(r).data();
          T* dst = dx.row(c).data();
          for (int h = 0; h < H; ++h) {
            const int sh = h + ky - 1;
            if (sh < 0 || sh >= H) continue;
            const int w0 = std::max(0, 1 - kx), w1 = std::min(W, W + 1 - kx);
            for (int w = w0; w < w1; ++w) dst[sh * W + w + kx - 1] += src[h * W + w];
          }
        }
    return dx;
  }

  int in_ = 0, out_ = 0;
  Param<T> weight_;
};

/// Batch-statistics normalisation over (batch, pixels) per channel.
template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels)
      : gamma_(name + ".weight", {channels}),
        beta_(name + ".bias", {channels}),
        running_mean_(name + ".running_mean", {channels}, false),
        running_var_(name + ".running_var", {channels}, false) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  FeatureBatch<T> forward(const FeatureBatch<T>& x, Mode mode) {
    const Eigen::Index C = x.channels(), P = x.pixels();
    const T count = static_cast<T>(x.size() * P);
    Vec<T> mean, var;
    if (mode == Mode::kTrain) {
      mean = Vec<T>::Zero(C);
      var = Vec<T>::Zero(C);
      for (const auto& m : x.maps) mean += m.rowwise().sum();
      mean /= count;
      for (const auto& m : x.maps) var += (m.colwise() - mean).array().square().matrix().rowwise().sum();
      var /= count;
      const T mom = static_cast<T>(kMomentum);
      running_mean_.value = (1 - mom) * running_mean_.value + mom * mean;
      const T unbias = count > 1 ? count / (count - 1) : T(1);
      running_var_.value = (1 - mom) * running_var_.value + mom * unbias * var;
    } else {
      mean = running_mean_.value;
      var = running_var_.value;
    }
    inv_std_ = (var.array() + static_cast<T>(kEps)).rsqrt().matrix();
    FeatureBatch<T> y{x.height, x.width, {}};
    xhat_.clear();
    for (const auto& m : x.maps) {
      Planes<T> xh = (m.colwise() - mean).array().colwise() * inv_std_.array();
      y.maps.emplace_back((xh.array().colwise() * gamma_.value.array()).colwise() + beta_.value.array());
      if (mode == Mode::kTrain) xhat_.push_back(std::move(xh));
    }
    return y;
  }

  FeatureBatch<T> backward(const FeatureBatch<T>& dy) {
    const Eigen::Index C = gamma_.value.size();
    const T count = static_cast<T>(dy.size() * dy.pixels());
    Vec<T> dgamma = Vec<T>::Zero(C), dbeta = Vec<T>::Zero(C);
    for (std::size_t n = 0; n < dy.size(); ++n) {
      dbeta += dy.maps[n].rowwise().sum();
      dgamma += (dy.maps[n].array() * xhat_[n].array()).matrix().rowwise().sum();
    }
    gamma_.grad += dgamma;
    beta_.grad += dbeta;
    FeatureBatch<T> dx{dy.height, dy.width, {}};
    const Vec<T> scale = (gamma_.value.array() * inv_std_.array() / count).matrix();
    for (std::size_t n = 0; n < dy.size(); ++n) {
      Planes<T> t = (dy.maps[n] * count).colwise() - dbeta;
      t -= (xhat_[n].array().colwise() * dgamma.array()).matrix();
      dx.maps.emplace_back(t.array().colwise() * scale.array());
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&gamma_, &beta_, &running_mean_, &running_var_}; }

  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

 private:
  Param<T> gamma_, beta_, running_mean_, running_var_;
  Vec<T> inv_std_;
  std::vector<Planes<T>> xhat_;
};

/// 2x2 max pooling, stride 2.
template <class T>
struct MaxPool2 {
  std::vector<std::vector<int>> argmax;
  int in_h = 0, in_w = 0;

  FeatureBatch<T> forward(const FeatureBatch<T>& x) {
    in_h = x.height;
    in_w = x.width;
    const int oh = x.height / 2, ow = x.width / 2;
    FeatureBatch<T> y{oh, ow, {}};
    argmax.assign(x.size(), {});
    for (std::size_t n = 0; n < x.size(); ++n) {
      const auto& m = x.maps[n];
      Planes<T> out(m.rows(), oh * ow);
      auto& am = argmax[n];
      am.resize(static_cast<std::size_t>(m.rows()) * oh * ow);
      for (Eigen::Index c = 0; c < m.rows(); ++c)
        for (int h = 0; h < oh; ++h)
          for (int w = 0; w < ow; ++w) {
            int best = (2 * h) * x.width + 2 * w;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                int p = (2 * h + dy) * x.width + 2 * w + dx;
                if (m(c, p) > m(c, best)) best = p;
              }
            out(c, h * ow + w) = m(c, best);
            am[c * oh * ow + h * ow + w] = best;
          }
      y.maps.push_back(std::move(out));
    }
    return y;
  }

  FeatureBatch<T> backward(const FeatureBatch<T>& dy) const {
    FeatureBatch<T> dx{in_h, in_w, {}};
    for (std::size_t n = 0; n < dy.size(); ++n) {
      const auto& g = dy.maps[n];
      Planes<T> out = Planes<T>::Zero(g.rows(), in_h * in_w);
      const auto& am = argmax[n];
      for (Eigen::Index c = 0; c < g.rows(); ++c)
        for (Eigen::Index p = 0; p < g.cols(); ++p) out(c, am[c * g.cols() + p]) += g(c, p);
      dx.maps.push_back(std::move(out));
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

struct BackboneConfig {
  int input_height = 64;
  int input_width = 32;
  std::vector<int> widths = {16, 32, 64};
  std::vector<int> strides = {2, 2, 1};

  int output_height() const {
    int h = input_height;
    for (int s : strides) h /= s;
    return h;
  }
  int output_width() const {
    int w = input_width;
    for (int s : strides) w /= s;
    return w;
  }
  int channels() const { return widths.back(); }
};

/// conv -> norm -> ReLU -> (2x2 max pool when the block stride is 2).
template <class T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    require(cfg_.widths.size() == cfg_.strides.size() && !cfg_.widths.empty(), ErrorCode::kInvalidConfig,
            "backbone widths and strides must have equal non-zero length");
    int in = 3;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      require(cfg_.strides[i] == 1 || cfg_.strides[i] == 2, ErrorCode::kInvalidConfig,
              "backbone strides must be 1 or 2");
      const std::string name = "backbone." + std::to_string(i);
      blocks_.push_back(Block{Conv3x3<T>(name + ".conv", in, cfg_.widths[i]),
                              BatchNorm2d<T>(name + ".bn", cfg_.widths[i]), {}, cfg_.strides[i] == 2});
      in = cfg_.widths[i];
    }
    cache_.resize(blocks_.size());
  }

  const BackboneConfig& config() const { return cfg_; }

  void init(std::mt19937_64& rng) {
    for (auto& b : blocks_) b.conv.init(rng);
  }

  FeatureBatch<T> forward(const FeatureBatch<T>& x, Mode mode) {
    require(x.height == cfg_.input_height && x.width == cfg_.input_width, ErrorCode::kShape,
            "backbone expects " + std::to_string(cfg_.input_height) + "x" +
                std::to_string(cfg_.input_width) + " input, got " + std::to_string(x.height) + "x" +
                std::to_string(x.width));
    FeatureBatch<T> cur = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto& b = blocks_[i];
      auto& c = cache_[i];
      c.input = std::move(cur);
      auto z = b.bn.forward(b.conv.forward(c.input), mode);
      for (auto& m : z.maps) m = m.cwiseMax(T(0));
      if (mode == Mode::kTrain) c.relu_out = z;
      cur = b.pool ? b.maxpool.forward(z) : std::move(z);
    }
    return cur;
  }

  /// Backward through all blocks; parameter gradients are accumulated.
  void backward(const FeatureBatch<T>& dout) {
    FeatureBatch<T> g = dout;
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      auto& b = blocks_[i];
      auto& c = cache_[i];
      if (b.pool) g = b.maxpool.backward(g);
      for (std::size_t n = 0; n < g.size(); ++n) {
        g.maps[n] = (c.relu_out.maps[n].array() > T(0)).select(g.maps[n], T(0));
      }
      g = b.bn.backward(g);
      g = b.conv.backward(c.input, g, i > 0);
    }
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& b : blocks_) {
      for (auto* p : b.conv.params()) out.push_back(p);
      for (auto* p : b.bn.params()) out.push_back(p);
    }
    return out;
  }

 private:
  struct Block {
    Conv3x3<T> conv;
    BatchNorm2d<T> bn;
    MaxPool2<T> maxpool;
    bool pool = false;
  };
  struct Cache {
    FeatureBatch<T> input, relu_out;
  };
  BackboneConfig cfg_;
  std::vector<Block> blocks_;
  std::vector<Cache> cache_;
};

// ---------------------------------------------------------------------------
// Attention, pooling and visibility on a single appearance map.

/// Logits and per-pixel class probabilities, (K+1) x pixels; row 0 is the
/// background.
template <class T>
struct AttentionMaps {
  Mat<T> logits;
  Mat<T> scores;
};

template <class T>
Mat<T> softmax_columns(const Mat<T>& z) {
  Mat<T> out(z.rows(), z.cols());
  for (Eigen::Index p = 0; p < z.cols(); ++p) {
    const T m = z.col(p).maxCoeff();
    out.col(p) = (z.col(p).array() - m).exp().matrix();
    out.col(p) /= out.col(p).sum();
  }
  return out;
}

/// Softmax over K+1 classes of P * G at every pixel.
template <class T>
AttentionMaps<T> classify_pixels(const Planes<T>& G, const Mat<T>& P) {
  require(P.cols() == G.rows(), ErrorCode::kShape,
          "part classifier expects " + std::to_string(P.cols()) + " channels, appearance map has " +
              std::to_string(G.rows()));
  AttentionMaps<T> a;
  a.logits = P * G;
  a.scores = softmax_columns(a.logits);
  return a;
}

/// Max over part channels 1..K (background excluded). `which` receives the
/// winning row per pixel.
template <class T>
RowVec<T> foreground_map(const Mat<T>& scores, std::vector<int>* which = nullptr) {
  require(scores.rows() >= 2, ErrorCode::kShape, "attention needs a background and a part channel");
  RowVec<T> fg(scores.cols());
  if (which) which->assign(scores.cols(), 1);
  for (Eigen::Index p = 0; p < scores.cols(); ++p) {
    Eigen::Index best = 1;
    for (Eigen::Index k = 2; k < scores.rows(); ++k)
      if (scores(k, p) > scores(best, p)) best = k;
    fg[p] = scores(best, p);
    if (which) (*which)[p] = static_cast<int>(best);
  }
  return fg;
}

inline constexpr double kGwapEps = 1e-6;

/// Attention-weighted spatial mean of G. Weights with total mass at or below
/// kGwapEps yield the zero vector.
template <class T, class Weights>
Vec<T> gwap(const Planes<T>& G, const Weights& m) {
  require(m.size() == G.cols(), ErrorCode::kShape, "pooling weights must cover every pixel");
  const T mass = m.sum();
  if (!(mass > static_cast<T>(kGwapEps))) return Vec<T>::Zero(G.rows());
  return (G * m.transpose()) / mass;
}

/// f_g (plain mean), f_f, and f_c = concat(f_1..f_K).
template <class T>
struct PooledEmbeddings {
  Vec<T> global, foreground, concat;
  int K = 0;
  auto part(int k) const { return concat.segment(static_cast<Eigen::Index>(k) * global.size(), global.size()); }
};

template <class T>
PooledEmbeddings<T> pool_embeddings(const Planes<T>& G, const Mat<T>& scores) {
  const int K = static_cast<int>(scores.rows()) - 1;
  const Eigen::Index C = G.rows();
  PooledEmbeddings<T> e;
  e.K = K;
  e.global = G.rowwise().mean();
  e.foreground = gwap(G, foreground_map<T>(scores));
  e.concat.resize(C * K);
  for (int k = 0; k < K; ++k) e.concat.segment(k * C, C) = gwap(G, scores.row(k + 1));
  return e;
}

/// 1 iff some pixel of the part map strictly exceeds lambda_v.
template <class Weights>
bool visibility(const Weights& part_map, double lambda_v = 0.4) {
  require(lambda_v > 0 && lambda_v < 1, ErrorCode::kInvalidConfig, "lambda_v must lie in (0,1)");
  if (part_map.size() == 0) return false;
  return static_cast<double>(part_map.maxCoeff()) > lambda_v;
}

// ---------------------------------------------------------------------------

struct ModelConfig {
  BackboneConfig backbone;
  int K = 5;
  double lambda_v = 0.4;
};

/// Outputs for a batch. Embedding matrices hold one column per sample; the
/// K part embeddings are the C-row blocks of `concat`, so f_c and f_1..f_K
/// share storage.
template <class T>
struct ModelOutput {
  int K = 0, C = 0, height = 0, width = 0;
  FeatureBatch<T> G;
  std::vector<Mat<T>> logits;  // empty when attention is fixed
  std::vector<Mat<T>> scores;  // (K+1) x pixels
  std::vector<RowVec<T>> foreground;
  std::vector<std::vector<int>> foreground_arg;
  Mat<T> global, fg, concat;   // C x N, C x N, (K*C) x N
  /// Visibility bits (K+3) x N ordered g, f, c, 1..K.
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> visible;

  std::size_t batch() const { return G.size(); }
  auto part(int k) { return concat.middleRows(static_cast<Eigen::Index>(k) * C, C); }
  auto part(int k) const { return concat.middleRows(static_cast<Eigen::Index>(k) * C, C); }
};

/// Upstream gradients for ModelOutput.
template <class T>
struct OutputGrad {
  Mat<T> global, fg, concat;     // same shapes as the outputs, or empty
  std::vector<Mat<T>> logits;    // per sample, or empty
};

/// Backbone + pixel-wise part classifier + pooling heads.
template <class T>
class ReidModel {
 public:
  ReidModel() = default;
  explicit ReidModel(ModelConfig cfg)
      : cfg_(std::move(cfg)),
        backbone_(cfg_.backbone),
        classifier_("part_classifier.weight", {cfg_.K + 1, cfg_.backbone.channels()}) {
    require(cfg_.K >= 1, ErrorCode::kInvalidConfig, "K must be positive");
  }

  const ModelConfig& config() const { return cfg_; }
  int K() const { return cfg_.K; }
  int C() const { return cfg_.backbone.channels(); }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    backbone_.init(rng);
    normal_init(classifier_, 0.01, rng);
  }

  Mat<T> classifier() const { return classifier_.mat(cfg_.K + 1, C()); }
  Backbone<T>& backbone() { return backbone_; }

  /// Forward pass. When `fixed_attention` is non-null it supplies, per
  /// sample, K x pixels part weights that replace the classifier output
  /// (the background row is then zero).
  ModelOutput<T> forward(const FeatureBatch<T>& images, Mode mode,
                         const std::vector<Mat<T>>* fixed_attention = nullptr) {
    ModelOutput<T> out;
    out.K = cfg_.K;
    out.C = C();
    out.G = backbone_.forward(images, mode);
    out.height = out.G.height;
    out.width = out.G.width;
    const auto N = static_cast<Eigen::Index>(images.size());
    const int K = cfg_.K;
    const Eigen::Index Cc = C();
    out.global.resize(Cc, N);
    out.fg.resize(Cc, N);
    out.concat.resize(Cc * K, N);
    out.visible.resize(K + 3, N);
    const Mat<T> P = classifier();
    for (Eigen::Index n = 0; n < N; ++n) {
      const auto& G = out.G.maps[n];
      Mat<T> scores;
      if (fixed_attention) {
        const Mat<T>& fa = (*fixed_attention)[n];
        require(fa.rows() == K && fa.cols() == G.cols(), ErrorCode::kShape,
                "fixed attention must be K x pixels at backbone resolution");
        scores = Mat<T>::Zero(K + 1, G.cols());
        scores.bottomRows(K) = fa;
      } else {
        auto att = classify_pixels<T>(G, P);
        out.logits.push_back(std::move(att.logits));
        scores = std::move(att.scores);
      }
      std::vector<int> arg;
      RowVec<T> fgmap = foreground_map<T>(scores, &arg);
      out.global.col(n) = G.rowwise().mean();
      out.fg.col(n) = gwap(G, fgmap);
      for (int k = 0; k < K; ++k) out.concat.block(k * Cc, n, Cc, 1) = gwap(G, scores.row(k + 1));
      out.visible(0, n) = out.visible(1, n) = out.visible(2, n) = 1;
      for (int k = 0; k < K; ++k) out.visible(3 + k, n) = visibility(scores.row(k + 1), cfg_.lambda_v);
      out.scores.push_back(std::move(scores));
      out.foreground.push_back(std::move(fgmap));
      out.foreground_arg.push_back(std::move(arg));
    }
    return out;
  }

  /// Backward from embedding/logit gradients; accumulates parameter
  /// gradients (call zero_grad between steps).
  void backward(const ModelOutput<T>& out, const OutputGrad<T>& grad) {
    const int K = cfg_.K;
    const Eigen::Index Cc = C();
    const auto N = static_cast<Eigen::Index>(out.batch());
    const bool learnable = !out.logits.empty();
    const Mat<T> P = classifier();
    auto dP = classifier_.grad_mat(K + 1, static_cast<int>(Cc));
    FeatureBatch<T> dG{out.height, out.width, {}};
    for (Eigen::Index n = 0; n < N; ++n) {
      const auto& G = out.G.maps[n];
      const Eigen::Index px = G.cols();
      Planes<T> dg = Planes<T>::Zero(Cc, px);
      Mat<T> dscores = Mat<T>::Zero(K + 1, px);

      if (grad.global.size()) dg.colwise() += grad.global.col(n) / static_cast<T>(px);

      auto pool_back = [&](const Vec<T>& df, const auto& weights, const Vec<T>& f, auto&& dweights) {
        const T mass = weights.sum();
        if (!(mass > static_cast<T>(kGwapEps))) return;
        dg.noalias() += df * (weights / mass);
        RowVec<T> dm = (df.transpose() * G) / mass;
        dm.array() -= df.dot(f) / mass;
        dweights += dm;
      };

      if (grad.fg.size()) {
        RowVec<T> dfg = RowVec<T>::Zero(px);
        pool_back(grad.fg.col(n), out.foreground[n], out.fg.col(n), dfg);
        for (Eigen::Index p = 0; p < px; ++p) dscores(out.foreground_arg[n][p], p) += dfg[p];
      }
      if (grad.concat.size()) {
        for (int k = 0; k < K; ++k) {
          Vec<T> dfk = grad.concat.block(k * Cc, n, Cc, 1);
          Vec<T> fk = out.concat.block(k * Cc, n, Cc, 1);
          pool_back(dfk, out.scores[n].row(k + 1), fk, dscores.row(k + 1));
        }
      }

      if (learnable) {
        const Mat<T>& s = out.scores[n];
        Mat<T> dz(K + 1, px);
        for (Eigen::Index p = 0; p < px; ++p) {
          const T inner = s.col(p).dot(dscores.col(p));
          dz.col(p) = s.col(p).cwiseProduct(dscores.col(p) - Vec<T>::Constant(K + 1, inner));
        }
        if (!grad.logits.empty()) dz += grad.logits[n];
        dP.noalias() += dz * G.transpose();
        dg.noalias() += P.transpose() * dz;
      }
      dG.maps.push_back(std::move(dg));
    }
    backbone_.backward(dG);
  }

  std::vector<Param<T>*> params() {
    auto out = backbone_.params();
    out.push_back(&classifier_);
    return out;
  }
  Param<T>& classifier_param() { return classifier_; }

 private:
  ModelConfig cfg_;
  Backbone<T> backbone_;
  Param<T> classifier_;
};

}  // namespace reidkit::nn
