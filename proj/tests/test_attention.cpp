#include <gtest/gtest.h>

#include "reference.hpp"
#include "reltr/attention.hpp"
#include "reltr/grad_check.hpp"

using namespace reltr;

namespace {

AttentionProj<double> proj_from(const Matd& wq, const Matd& wk, const Matd& wv, int d = 0) {
  return AttentionProj<double>{wq, wk, wv, d};
}

}  // namespace

TEST(ScaledAttention, SingleKeyGivesWeightOne) {
  Rng rng(1);
  AttentionProj<double> p = init_attention_proj<double>(4, rng);
  Tape<double> t;
  Var<double> q = t.constant(gaussian(3, 4, rng));
  Matd key = gaussian(1, 4, rng);
  Var<double> k = t.constant(key);
  Probe<double> probe;
  Var<double> out = scaled_attention(p, q, k, k, nullptr, &probe);
  ASSERT_EQ(probe.attention_weights.size(), 1u);
  EXPECT_LT((probe.attention_weights[0].array() - 1.0).abs().maxCoeff(), 1e-15);
  Matd expected = key * p.W_v;  // every output row equals the single projected value row
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    EXPECT_LT((out.value().row(i) - expected.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScaledAttention, IdenticalKeyRowsMatchSingleRowCase) {
  Rng rng(2);
  AttentionProj<double> p = init_attention_proj<double>(4, rng);
  Matd q = gaussian(2, 4, rng);
  Matd key = gaussian(1, 4, rng);
  Matd two_keys(2, 4);
  two_keys << key, key;

  Tape<double> t;
  Matd out1 = scaled_attention(p, t.constant(q), t.constant(key), t.constant(key)).value();
  Matd out2 =
      scaled_attention(p, t.constant(q), t.constant(two_keys), t.constant(two_keys)).value();
  EXPECT_LT((out1 - out2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScaledAttention, MatchesReferenceOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 2 + (trial % 3);
    AttentionProj<double> p = init_attention_proj<double>(h, rng);
    Matd q = gaussian(3, h, rng);
    Matd k = gaussian(4, h, rng);
    Matd v = gaussian(4, h, rng);
    Tape<double> t;
    Matd got = scaled_attention(p, t.constant(q), t.constant(k), t.constant(v)).value();
    Matd want = refimpl::attention(q, k, v, p.W_q, p.W_k, p.W_v, h);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ScaledAttention, FixedSmallCase) {
  // h=2, one head, hand-picked matrices; the oracle applies the formula
  // directly at 64-bit.
  Matd wq(2, 2), wk(2, 2), wv(2, 2);
  wq << 1, 0.5, -0.25, 1;
  wk << 0.75, -1, 0.5, 0.25;
  wv << 2, 0, 0, 0.5;
  Matd q(2, 2), k(3, 2), v(3, 2);
  q << 0.1, -0.2, 0.4, 0.3;
  k << 1, 0, 0, 1, 0.5, 0.5;
  v << 0.2, 0.8, -0.4, 0.1, 0.9, -0.9;
  Tape<double> t;
  Matd got = scaled_attention(proj_from(wq, wk, wv), t.constant(q), t.constant(k), t.constant(v))
                 .value();
  Matd want = refimpl::attention(q, k, v, wq, wk, wv, 2.0);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ScaledAttention, RowsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    AttentionProj<double> p = init_attention_proj<double>(4, rng);
    Tape<double> t;
    Probe<double> probe;
    scaled_attention(p, t.constant(gaussian(3, 4, rng, 2.0)), t.constant(gaussian(5, 4, rng, 2.0)),
                     t.constant(gaussian(5, 4, rng, 2.0)), nullptr, &probe);
    for (const Matd& w : probe.attention_weights)
      for (Eigen::Index i = 0; i < w.rows(); ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-6);
  }
}

TEST(ScaledAttention, OutputInRowSpaceOfProjectedValues) {
  // Output rows are convex combinations of the rows of V Wv.
  Rng rng(5);
  AttentionProj<double> p = init_attention_proj<double>(3, rng);
  Matd q = gaussian(4, 3, rng);
  Matd k = gaussian(2, 3, rng);
  Matd v = gaussian(2, 3, rng);
  Tape<double> t;
  Matd out = scaled_attention(p, t.constant(q), t.constant(k), t.constant(v)).value();
  Matd basis = v * p.W_v;  // 2 x 3
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::VectorXd coeff =
        basis.transpose().colPivHouseholderQr().solve(out.row(i).transpose());
    EXPECT_LT((basis.transpose() * coeff - out.row(i).transpose()).norm(), 1e-9);
  }
}

TEST(MultiHead, OneHeadIdentityOutputEqualsScaledAttention) {
  Rng rng(6);
  MultiHeadParams<double> mh = init_multi_head<double>(4, 1, rng);
  mh.W_o = Matd::Identity(4, 4);
  AttentionProj<double> p = proj_from(mh.W_q, mh.W_k, mh.W_v);
  Matd q = gaussian(2, 4, rng), k = gaussian(3, 4, rng), v = gaussian(3, 4, rng);
  Tape<double> t;
  Matd a = multi_head_attention(mh, t.constant(q), t.constant(k), t.constant(v)).value();
  Matd b = scaled_attention(p, t.constant(q), t.constant(k), t.constant(v)).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MultiHead, OutputShape) {
  Rng rng(7);
  MultiHeadParams<double> mh = init_multi_head<double>(6, 3, rng);
  for (int tq : {1, 2, 5}) {
    for (int tk : {1, 3}) {
      Tape<double> t;
      Var<double> out = multi_head_attention(mh, t.constant(gaussian(tq, 6, rng)),
                                             t.constant(gaussian(tk, 6, rng)),
                                             t.constant(gaussian(tk, 6, rng)));
      EXPECT_EQ(out.rows(), tq);
      EXPECT_EQ(out.cols(), 6);
    }
  }
}

TEST(MultiHead, TwoHeadsMatchReferenceOracle) {
  Rng rng(8);
  MultiHeadParams<double> mh = init_multi_head<double>(4, 2, rng);
  Matd q = gaussian(3, 4, rng), k = gaussian(5, 4, rng), v = gaussian(5, 4, rng);
  Tape<double> t;
  Matd got = multi_head_attention(mh, t.constant(q), t.constant(k), t.constant(v)).value();
  Matd want = refimpl::multi_head(q, k, v, mh.W_q, mh.W_k, mh.W_v, mh.W_o, 2);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MultiHead, BadHeadSplitThrows) {
  Rng rng(80);
  EXPECT_THROW(init_multi_head<double>(5, 2, rng), ConfigError);
}

TEST(FeedForward, ZeroWeightsGiveZero) {
  FeedForwardParams<double> p{{Matd::Zero(3, 12), Matd::Zero(1, 12)},
                              {Matd::Zero(12, 3), Matd::Zero(1, 3)}};
  Tape<double> t;
  Rng rng(9);
  Matd out = feed_forward(p, t.constant(gaussian(2, 3, rng))).value();
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(FeedForward, ZeroSecondLayerGivesZero) {
  Rng rng(10);
  FeedForwardParams<double> p = init_feed_forward<double>(3, 12, 3, rng);
  p.fc2.W.setZero();
  p.fc2.b.setZero();
  Tape<double> t;
  Matd out = feed_forward(p, t.constant(gaussian(2, 3, rng))).value();
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(FeedForward, MatchesReferenceOracle) {
  Rng rng(11);
  FeedForwardParams<double> p = init_feed_forward<double>(2, 8, 2, rng);
  p.fc1.b = gaussian(1, 8, rng);
  p.fc2.b = gaussian(1, 2, rng);
  Matd x = gaussian(3, 2, rng);
  Tape<double> t;
  Matd got = feed_forward(p, t.constant(x)).value();
  Matd want = refimpl::ffn(x, p.fc1.W, p.fc1.b, p.fc2.W, p.fc2.b);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(EncoderLayer, ZeroWeightsIsPureResidual) {
  Rng rng(12);
  EncoderLayerParams<double> p = init_encoder_layer<double>(4, 2, rng);
  p.attn.W_v.setZero();
  p.attn.W_o.setZero();
  p.ffn.fc1.W.setZero();
  p.ffn.fc1.b.setZero();
  p.ffn.fc2.W.setZero();
  p.ffn.fc2.b.setZero();
  Matd x = gaussian(3, 4, rng);
  Tape<double> t;
  Matd out = encoder_layer(p, t.constant(x)).value();
  EXPECT_LT((out - x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EncoderLayer, ShapePreserved) {
  Rng rng(13);
  EncoderLayerParams<double> p = init_encoder_layer<double>(6, 2, rng);
  Tape<double> t;
  Var<double> out = encoder_layer(p, t.constant(gaussian(5, 6, rng)));
  EXPECT_EQ(out.rows(), 5);
  EXPECT_EQ(out.cols(), 6);
}

TEST(EncoderLayer, MatchesComposedReferenceOracle) {
  Rng rng(14);
  EncoderLayerParams<double> p = init_encoder_layer<double>(4, 2, rng);
  p.ln1.gamma = (gaussian(1, 4, rng, 0.5).array().abs() + 0.5).matrix();
  p.ln1.beta = gaussian(1, 4, rng, 0.2);
  p.ln2.gamma = (gaussian(1, 4, rng, 0.5).array().abs() + 0.5).matrix();
  p.ln2.beta = gaussian(1, 4, rng, 0.2);
  Matd x = gaussian(3, 4, rng);

  Tape<double> t;
  Matd got = encoder_layer(p, t.constant(x)).value();

  Matd n1 = refimpl::layer_norm(x, p.ln1.gamma, p.ln1.beta);
  Matd a = x + refimpl::multi_head(n1, n1, n1, p.attn.W_q, p.attn.W_k, p.attn.W_v, p.attn.W_o, 2);
  Matd n2 = refimpl::layer_norm(a, p.ln2.gamma, p.ln2.beta);
  Matd want = a + refimpl::ffn(n2, p.ffn.fc1.W, p.ffn.fc1.b, p.ffn.fc2.W, p.ffn.fc2.b);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EncoderLayer, PermutationEquivariance) {
  Rng rng(15);
  EncoderLayerParams<double> p = init_encoder_layer<double>(4, 2, rng);
  Matd x = gaussian(5, 4, rng);
  std::vector<int> perm = {3, 0, 4, 1, 2};
  Matd px(5, 4);
  for (int i = 0; i < 5; ++i) px.row(i) = x.row(perm[i]);

  Tape<double> t;
  Matd out = encoder_layer(p, t.constant(x)).value();
  Matd pout = encoder_layer(p, t.constant(px)).value();
  for (int i = 0; i < 5; ++i)
    EXPECT_LT((pout.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EncoderLayer, GradCheckAllParameters) {
  Rng rng(16);
  EncoderLayerParams<double> p = init_encoder_layer<double>(4, 2, rng);
  Matd x = gaussian(3, 4, rng);
  std::vector<NamedParam> params = {
      {"W_q", &p.attn.W_q},    {"W_k", &p.attn.W_k},    {"W_v", &p.attn.W_v},
      {"W_o", &p.attn.W_o},    {"fc1.W", &p.ffn.fc1.W}, {"fc1.b", &p.ffn.fc1.b},
      {"fc2.W", &p.ffn.fc2.W}, {"fc2.b", &p.ffn.fc2.b}, {"ln1.g", &p.ln1.gamma},
      {"ln1.b", &p.ln1.beta},  {"ln2.g", &p.ln2.gamma}, {"ln2.b", &p.ln2.beta}};
  auto forward = [&](Tape<double>& t) {
    Var<double> out = encoder_layer(p, t.constant(x));
    return sum_all(cmul(out, out));
  };
  GradCheckReport r = grad_check(params, forward);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param;
}
