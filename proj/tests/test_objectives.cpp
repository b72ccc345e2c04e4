#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "reidkit/objectives.hpp"
#include "test_util.hpp"

using namespace reidkit;
using namespace reidkit::objectives;
using nn::Mat;
using nn::Vec;

namespace {

Mat<double> random_mat(int r, int c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double ce_oracle(const std::vector<double>& z, int y, double eps) { return oracle::smoothed_ce(z, y, eps); }
double dist_oracle(const Mat<double>& e, int i, int j, int K) { return oracle::part_dist(e, i, j, K); }
double triplet_oracle(const Mat<double>& e, int K, const std::vector<int>& ids, double margin) {
  return oracle::batch_hard_triplet(e, K, ids, margin);
}

template <class F>
Mat<double> numeric_grad(Mat<double> x, F f, double h = 1e-6) {
  Mat<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(SmoothedCrossEntropy, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int n : {2, 6, 12})
    for (double eps : {0.0, 0.1, 0.5}) {
      auto z = random_mat(n, 1, rng, -3, 3);
      std::vector<double> zv(z.data(), z.data() + n);
      for (int y = 0; y < n; ++y) {
        Vec<double> col = z.col(0);
        EXPECT_NEAR(smoothed_cross_entropy<double>(col, y, eps), ce_oracle(zv, y, eps), 1e-12);
      }
    }
}

TEST(SmoothedCrossEntropy, WeightsSumToOne) {
  for (int n : {2, 6, 751}) {
    auto [t, o] = smoothing_weights(0.1, n);
    EXPECT_NEAR(t + (n - 1) * o, 1.0, 1e-12);
  }
}

TEST(SmoothedCrossEntropy, LabelOutOfRange) {
  Vec<double> z = Vec<double>::Zero(4);
  EXPECT_ERROR_CODE(smoothed_cross_entropy<double>(z, 4, 0.1), ErrorCode::kInvalidLabel);
  EXPECT_ERROR_CODE(smoothed_cross_entropy<double>(z, -1, 0.1), ErrorCode::kInvalidLabel);
}

TEST(PartAttentionLoss, UniformScoresGiveLogClassCount) {
  const int K = 5;
  std::vector<Mat<double>> s = {Mat<double>::Constant(K + 1, 6, 1.0 / (K + 1))};
  fields::ParsingLabelMap y{Array2<int>(2, 3, 2), K};
  EXPECT_NEAR(part_attention_loss<double>(s, {y}, 0.1), std::log(K + 1.0), 1e-12);
}

TEST(PartAttentionLoss, MeanOverPixelsAndBatchMatchesOracle) {
  std::mt19937_64 rng(2);
  const int K = 3, H = 2, W = 3;
  std::vector<Mat<double>> logits;
  std::vector<fields::ParsingLabelMap> labels;
  std::uniform_int_distribution<int> lab(0, K);
  double oracle = 0;
  for (int n = 0; n < 2; ++n) {
    logits.push_back(random_mat(K + 1, H * W, rng, -2, 2));
    fields::ParsingLabelMap y{Array2<int>(H, W), K};
    for (auto& v : y.Y.data) v = lab(rng);
    for (int p = 0; p < H * W; ++p) {
      std::vector<double> z(K + 1);
      for (int k = 0; k <= K; ++k) z[k] = logits[n](k, p);
      oracle += ce_oracle(z, y.Y.data[p], 0.1);
    }
    labels.push_back(y);
  }
  oracle /= 2 * H * W;
  std::vector<Mat<double>> scores;
  for (auto& l : logits) scores.push_back(nn::softmax_columns<double>(l));
  EXPECT_NEAR(part_attention_loss<double>(scores, labels, 0.1), oracle, 1e-12);
  EXPECT_NEAR(part_attention_loss_logits<double>(logits, labels, 0.1), oracle, 1e-12);

  std::vector<Mat<double>> grad;
  part_attention_loss_logits<double>(logits, labels, 0.1, &grad);
  for (int n = 0; n < 2; ++n) {
    auto num = numeric_grad(logits[n], [&](const Mat<double>& x) {
      auto l = logits;
      l[n] = x;
      return part_attention_loss_logits<double>(l, labels, 0.1);
    });
    EXPECT_LT(testing_util::relative_error(grad[n], num), 1e-6);
  }
}

TEST(PartAttentionLoss, LabelOutsideRange) {
  std::vector<Mat<double>> s = {Mat<double>::Constant(3, 2, 1.0 / 3)};
  fields::ParsingLabelMap y{Array2<int>(1, 2, 3), 2};
  EXPECT_ERROR_CODE(part_attention_loss<double>(s, {y}, 0.1), ErrorCode::kInvalidLabel);
}

TEST(IdentityHead, InitialisationAndFrozenBias) {
  IdentityHead<double> head("h", 8, 10);
  std::mt19937_64 rng(3);
  head.init(rng);
  auto ps = head.params();
  auto* W = ps.back();
  EXPECT_EQ(W->value.size(), 80);
  const double sd = std::sqrt(W->value.squaredNorm() / 80);
  EXPECT_LT(sd, 0.002);
  EXPECT_GT(sd, 0.0005);
  EXPECT_FALSE(ps[1]->trainable);
  EXPECT_EQ(ps[1]->value.norm(), 0.0);
}

TEST(IdentityLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  const int C = 5, N = 6, ids_n = 4;
  IdentityHead<double> head("h", C, ids_n);
  head.init(rng);
  // Larger classifier weights so the check is not dominated by round-off.
  head.params().back()->value *= 300;
  head.params()[0]->value = Vec<double>::LinSpaced(C, 0.5, 1.5);
  std::vector<int> ids = {0, 1, 2, 3, 1, 2};
  Mat<double> f = random_mat(C, N, rng);
  Mat<double> df;
  identity_loss<double>(f, ids, head, 0.1, nn::Mode::kTrain, &df);
  auto num = numeric_grad(f, [&](const Mat<double>& x) { return identity_loss<double>(x, ids, head, 0.1); });
  EXPECT_LT(testing_util::relative_error(df, num), 1e-6);

  auto* gamma = head.params()[0];
  auto* W = head.params().back();
  for (auto* p : {gamma, W}) {
    p->grad.setZero();
    Mat<double> scratch;
    identity_loss<double>(f, ids, head, 0.1, nn::Mode::kTrain, &scratch);
    Vec<double> numeric(p->value.size());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + 1e-6;
      const double up = identity_loss<double>(f, ids, head, 0.1);
      p->value[i] = keep - 1e-6;
      const double down = identity_loss<double>(f, ids, head, 0.1);
      p->value[i] = keep;
      numeric[i] = (up - down) / 2e-6;
    }
    EXPECT_LT(testing_util::relative_error(p->grad, numeric), 1e-6) << p->name;
  }
}

TEST(IdentityLoss, UnknownIdentityRejected) {
  IdentityHead<double> head("h", 3, 4);
  Mat<double> f = Mat<double>::Ones(3, 2);
  EXPECT_ERROR_CODE(identity_loss<double>(f, {0, 4}, head, 0.1), ErrorCode::kInvalidLabel);
}

TEST(PartAvgDist, MatchesOracleAndIsSymmetric) {
  std::mt19937_64 rng(5);
  const int K = 4, C = 3;
  auto e = random_mat(K * C, 5, rng);
  auto D = part_distance_matrix<double>(e, K);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(D(i, i), 0.0);
    for (int j = 0; j < 5; ++j) {
      EXPECT_NEAR(D(i, j), dist_oracle(e, i, j, K), 1e-12);
      EXPECT_EQ(D(i, j), D(j, i));
      Vec<double> a = e.col(i), b = e.col(j);
      EXPECT_NEAR(part_avg_dist<double>(a, b, K), D(i, j), 1e-12);
    }
  }
}

TEST(PartAvgDist, SinglePartIsEuclidean) {
  std::mt19937_64 rng(6);
  auto e = random_mat(7, 2, rng);
  Vec<double> a = e.col(0), b = e.col(1);
  EXPECT_NEAR(part_avg_dist<double>(a, b, 1), (a - b).norm(), 1e-12);
}

TEST(PartAvgDist, MismatchedShapes) {
  Vec<double> a = Vec<double>::Zero(6), b = Vec<double>::Zero(8);
  EXPECT_ERROR_CODE(part_avg_dist<double>(a, b, 2), ErrorCode::kShape);
  EXPECT_ERROR_CODE(part_avg_dist<double>(a, a, 4), ErrorCode::kShape);
}

TEST(Triplet, PartAveragedMatchesBruteForce) {
  std::mt19937_64 rng(7);
  const int K = 3, C = 4;
  std::vector<int> ids = {0, 0, 1, 1, 2, 2, 2, 3};
  for (int trial = 0; trial < 20; ++trial) {
    auto e = random_mat(K * C, static_cast<int>(ids.size()), rng);
    for (double margin : {0.0, 0.3, 2.0})
      EXPECT_NEAR(part_averaged_triplet<double>(e, K, ids, margin), triplet_oracle(e, K, ids, margin), 1e-12);
  }
}

TEST(Triplet, SinglePartEqualsStandard) {
  std::mt19937_64 rng(8);
  std::vector<int> ids = {0, 0, 1, 1, 2, 2};
  auto e = random_mat(6, 6, rng);
  EXPECT_EQ(part_averaged_triplet<double>(e, 1, ids, 0.3), standard_triplet<double>(e, ids, 0.3));
  EXPECT_NEAR(standard_triplet<double>(e, ids, 0.3), triplet_oracle(e, 1, ids, 0.3), 1e-12);
}

TEST(Triplet, PerPartIsMeanOfPartTriplets) {
  std::mt19937_64 rng(9);
  const int K = 3, C = 2;
  std::vector<int> ids = {0, 0, 1, 1, 2, 2};
  auto e = random_mat(K * C, 6, rng);
  double expect = 0;
  for (int k = 0; k < K; ++k) expect += triplet_oracle(Mat<double>(e.middleRows(k * C, C)), 1, ids, 0.3);
  EXPECT_NEAR(per_part_triplet<double>(e, K, ids, 0.3), expect / K, 1e-12);
}

TEST(Triplet, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  const int K = 3, C = 3;
  std::vector<int> ids = {0, 0, 1, 1, 2, 2};
  auto e = random_mat(K * C, 6, rng);
  Mat<double> g;
  part_averaged_triplet<double>(e, K, ids, 1.0, &g);
  auto num = numeric_grad(e, [&](const Mat<double>& x) { return part_averaged_triplet<double>(x, K, ids, 1.0); });
  EXPECT_LT(testing_util::relative_error(g, num), 1e-6);

  Mat<double> gp;
  per_part_triplet<double>(e, K, ids, 1.0, &gp);
  auto nump = numeric_grad(e, [&](const Mat<double>& x) { return per_part_triplet<double>(x, K, ids, 1.0); });
  EXPECT_LT(testing_util::relative_error(gp, nump), 1e-6);
}

TEST(Triplet, TiesResolveToLowestIndex) {
  // Anchor 0 has two positives at distance 1 and two negatives at distance 2.
  Mat<double> e(1, 5);
  e << 0, 1, -1, 2, -2;
  std::vector<int> ids = {0, 0, 0, 1, 1};
  auto D = part_distance_matrix<double>(e, 1);
  auto m = mine_batch_hard<double>(D, ids);
  EXPECT_EQ(m.hardest_positive[0], 1);
  EXPECT_EQ(m.hardest_negative[0], 3);
}

TEST(Triplet, CoincidentEmbeddingsHaveZeroGradient) {
  Mat<double> e = Mat<double>::Zero(4, 4);
  std::vector<int> ids = {0, 0, 1, 1};
  Mat<double> g;
  EXPECT_NEAR(part_averaged_triplet<double>(e, 2, ids, 0.3, &g), 0.3, 1e-12);
  EXPECT_EQ(g.norm(), 0.0);
  EXPECT_TRUE(g.allFinite());
}

TEST(Triplet, SingleIdentityHasNoNegatives) {
  Mat<double> e = Mat<double>::Ones(2, 3);
  EXPECT_ERROR_CODE(standard_triplet<double>(e, {4, 4, 4}, 0.3), ErrorCode::kNoNegatives);
}

TEST(Triplet, NonNegativeAndZeroWhenSeparated) {
  std::mt19937_64 rng(11);
  std::vector<int> ids = {0, 0, 1, 1, 2, 2};
  Mat<double> e(2, 6);
  for (int n = 0; n < 6; ++n) {
    e(0, n) = ids[n] * 10.0;
    e(1, n) = 0.01 * n;
  }
  EXPECT_EQ(standard_triplet<double>(e, ids, 0.3), 0.0);
  for (int t = 0; t < 10; ++t) EXPECT_GE(standard_triplet<double>(random_mat(3, 6, rng), ids, 0.3), 0.0);
}

TEST(LossGrid, ThirteenNumberedAndNamedRows) {
  const auto& rows = loss_grid_rows();
  ASSERT_EQ(rows.size(), 14u);
  EXPECT_EQ(rows[0].first, "GiLt");
  EXPECT_EQ(rows[0].second, LossConfig::gilt());
  auto pcb = loss_grid_row("PCB");
  EXPECT_EQ(pcb.id_on, std::set<Target>{Target::kParts});
  EXPECT_TRUE(pcb.tri_on.empty());
  auto r12 = loss_grid_row("12");
  EXPECT_EQ(r12.tri_on, std::set<Target>{Target::kConcat});
  EXPECT_ERROR_CODE(loss_grid_row("13"), ErrorCode::kInvalidConfig);
  for (const auto& [name, cfg] : rows) EXPECT_NO_THROW(cfg.validate()) << name;
}

namespace {

nn::ModelConfig tiny_model(int K) {
  nn::ModelConfig cfg;
  cfg.backbone.input_height = 8;
  cfg.backbone.input_width = 4;
  cfg.backbone.widths = {3, 4};
  cfg.backbone.strides = {2, 1};
  cfg.K = K;
  return cfg;
}

struct TinySetup {
  nn::ReidModel<double> model;
  nn::FeatureBatch<double> batch;
  std::vector<int> ids;
  std::vector<fields::ParsingLabelMap> labels;
};

TinySetup make_tiny(int K, std::uint64_t seed) {
  TinySetup s{nn::ReidModel<double>(tiny_model(K)), {}, {0, 0, 1, 1, 2, 2}, {}};
  s.model.init(seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> lab(0, K);
  s.batch = {8, 4, {}};
  for (std::size_t n = 0; n < s.ids.size(); ++n) {
    nn::Planes<double> m(3, 32);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    s.batch.maps.push_back(m);
    fields::ParsingLabelMap y{Array2<int>(4, 2), K};
    for (auto& v : y.Y.data) v = lab(rng);
    s.labels.push_back(y);
  }
  return s;
}

}  // namespace

TEST(Objective, TotalIsWeightedSumOfIndependentTerms) {
  const int K = 3;
  auto s = make_tiny(K, 20);
  LossHyperParams hp;
  Objective<double> obj(LossConfig::gilt(), hp, K, 4, 3);
  obj.init(5);
  auto out = s.model.forward(s.batch, nn::Mode::kTrain);
  auto r = obj.compute(out, s.ids, &s.labels, nn::Mode::kTrain);

  const double lpa = part_attention_loss<double>(out.scores, s.labels, hp.epsilon);
  const double id_g = identity_loss<double>(out.global, s.ids, obj.head(Target::kGlobal), hp.epsilon);
  const double id_f = identity_loss<double>(out.fg, s.ids, obj.head(Target::kForeground), hp.epsilon);
  const double id_c = identity_loss<double>(out.concat, s.ids, obj.head(Target::kConcat), hp.epsilon);
  const double tri = triplet_oracle(out.concat, K, s.ids, hp.margin);
  EXPECT_NEAR(r.attention, lpa, 1e-10);
  EXPECT_NEAR(r.identity.at(Target::kGlobal), id_g, 1e-10);
  EXPECT_NEAR(r.triplet.at(Target::kParts), tri, 1e-10);
  EXPECT_NEAR(r.total, 0.35 * lpa + id_g + id_f + id_c + tri, 1e-10);
  EXPECT_NEAR(total_loss<double>(out, s.ids, s.labels, obj), r.total, 1e-10);
  EXPECT_NEAR(gilt_loss<double>(out, s.ids, obj), id_g + id_f + id_c + tri, 1e-10);
}

TEST(Objective, PartIdentityTermIsMeanOverParts) {
  const int K = 3;
  auto s = make_tiny(K, 21);
  LossConfig cfg{{Target::kParts}, {}, PartTripletMode::kAveraged};
  Objective<double> obj(cfg, LossHyperParams{}, K, 4, 3);
  obj.init(6);
  auto out = s.model.forward(s.batch, nn::Mode::kTrain);
  auto r = obj.compute(out, s.ids, nullptr, nn::Mode::kTrain);
  double expect = 0;
  for (int k = 0; k < K; ++k)
    expect += identity_loss<double>(Mat<double>(out.part(k)), s.ids, obj.head(Target::kParts, k), 0.1);
  EXPECT_NEAR(r.identity.at(Target::kParts), expect / K, 1e-10);
  EXPECT_EQ(r.attention, 0.0);
}

TEST(Objective, EndToEndGradientsMatchFiniteDifferences) {
  const int K = 2;
  for (const char* row : {"GiLt", "2"}) {
    auto s = make_tiny(K, 30);
    Objective<double> obj(loss_grid_row(row), LossHyperParams{}, K, 4, 3);
    obj.init(7);
    for (auto* p : obj.params())
      if (p->name.find("classifier") != std::string::npos) p->value *= 100;
    auto loss = [&] {
      auto out = s.model.forward(s.batch, nn::Mode::kTrain);
      return obj.compute(out, s.ids, &s.labels, nn::Mode::kTrain).total;
    };
    std::vector<nn::Param<double>*> params = s.model.params();
    for (auto* p : obj.params()) params.push_back(p);
    for (auto* p : params) p->grad.setZero();
    auto out = s.model.forward(s.batch, nn::Mode::kTrain);
    nn::OutputGrad<double> g;
    obj.compute(out, s.ids, &s.labels, nn::Mode::kTrain, &g);
    s.model.backward(out, g);
    for (auto* p : params) {
      if (!p->trainable) continue;
      Vec<double> numeric(p->value.size());
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double keep = p->value[i];
        p->value[i] = keep + 1e-6;
        const double up = loss();
        p->value[i] = keep - 1e-6;
        const double down = loss();
        p->value[i] = keep;
        numeric[i] = (up - down) / 2e-6;
      }
      EXPECT_LT(testing_util::relative_error(p->grad, numeric), 1e-4) << row << " " << p->name;
    }
  }
}

TEST(PartAvgDist, TwoPartsExample) {
  Vec<double> a(4), b(4);
  a << 0, 0, 0, 0;
  b << 1, 0, 0, 3;
  EXPECT_DOUBLE_EQ(part_avg_dist<double>(a, b, 2), 2.0);
}

TEST(PartAvgDist, ScalesLinearly) {
  std::mt19937_64 rng(40);
  Vec<double> a = random_mat(12, 1, rng), b = random_mat(12, 1, rng);
  for (double s : {0.5, 2.0, 8.0})
    EXPECT_NEAR(part_avg_dist<double>(Vec<double>(s * a), Vec<double>(s * b), 3), s * part_avg_dist<double>(a, b, 3), 1e-12);
}

TEST(Triplet, InvariantUnderPartRelabelling) {
  std::mt19937_64 rng(41);
  const int K = 4, C = 3;
  std::vector<int> ids = {0, 0, 1, 1, 2, 2, 3, 3};
  auto e = random_mat(K * C, 8, rng);
  Mat<double> permuted(K * C, 8);
  const int perm[K] = {2, 0, 3, 1};
  for (int k = 0; k < K; ++k) permuted.middleRows(k * C, C) = e.middleRows(perm[k] * C, C);
  EXPECT_NEAR(part_averaged_triplet<double>(e, K, ids, 0.3), part_averaged_triplet<double>(permuted, K, ids, 0.3), 1e-12);
}

TEST(Triplet, IdenticalEmbeddingsGiveMargin) {
  Mat<double> e = Mat<double>::Constant(6, 4, 0.7);
  EXPECT_NEAR(part_averaged_triplet<double>(e, 3, {0, 0, 1, 1}, 0.3), 0.3, 1e-12);
  EXPECT_NEAR(standard_triplet<double>(e, {0, 0, 1, 1}, 0.3), 0.3, 1e-12);
}

TEST(Triplet, MovingHardestPositiveAwayNeverDecreasesLoss) {
  std::mt19937_64 rng(42);
  std::vector<int> ids = {0, 0, 0, 1, 1, 2, 2};
  for (int t = 0; t < 50; ++t) {
    auto e = random_mat(4, 7, rng);
    auto D = part_distance_matrix<double>(e, 2);
    EXPECT_NEAR(triplet_from_distances<double>(D, ids, 0.3), part_averaged_triplet<double>(e, 2, ids, 0.3), 1e-12);
    const int a = t % 7;
    const int p = mine_batch_hard<double>(D, ids).hardest_positive[a];
    double prev = triplet_from_distances<double>(D, ids, 0.3);
    for (double step : {0.05, 0.2, 1.0}) {
      D(a, p) += step;
      D(p, a) += step;
      const double cur = triplet_from_distances<double>(D, ids, 0.3);
      EXPECT_GE(cur, prev);
      prev = cur;
    }
  }
}

TEST(Objective, EmptyConfigRejected) {
  LossConfig empty;
  EXPECT_ERROR_CODE(Objective<double>(empty, LossHyperParams{}, 3, 4, 5), ErrorCode::kInvalidConfig);
}

TEST(Objective, ZeroAttentionWeightEqualsGilt) {
  const int K = 3;
  auto s = make_tiny(K, 43);
  LossHyperParams hp;
  hp.lambda_pa = 0;
  Objective<double> obj(LossConfig::gilt(), hp, K, 4, 3);
  obj.init(8);
  auto out = s.model.forward(s.batch, nn::Mode::kTrain);
  EXPECT_NEAR(total_loss<double>(out, s.ids, s.labels, obj), gilt_loss<double>(out, s.ids, obj), 1e-12);
}

TEST(Objective, AllLossesRowHasEightTerms) {
  const int K = 2;
  auto s = make_tiny(K, 44);
  Objective<double> obj(loss_grid_row("2"), LossHyperParams{}, K, 4, 3);
  obj.init(9);
  auto out = s.model.forward(s.batch, nn::Mode::kTrain);
  auto r = obj.compute(out, s.ids, nullptr, nn::Mode::kTrain);
  EXPECT_EQ(r.identity.size() + r.triplet.size(), 8u);
  double expect = triplet_oracle(out.global, 1, s.ids, 0.3) + triplet_oracle(out.fg, 1, s.ids, 0.3) +
                  triplet_oracle(out.concat, 1, s.ids, 0.3) + triplet_oracle(out.concat, K, s.ids, 0.3);
  expect += identity_loss<double>(out.global, s.ids, obj.head(Target::kGlobal), 0.1);
  expect += identity_loss<double>(out.fg, s.ids, obj.head(Target::kForeground), 0.1);
  expect += identity_loss<double>(out.concat, s.ids, obj.head(Target::kConcat), 0.1);
  double parts = 0;
  for (int k = 0; k < K; ++k)
    parts += identity_loss<double>(Mat<double>(out.part(k)), s.ids, obj.head(Target::kParts, k), 0.1);
  expect += parts / K;
  EXPECT_NEAR(r.total, expect, 1e-10);
}
