#pragma once

#include <vector>

#include "reltr/ops.hpp"

namespace reltr {

inline constexpr double kLayerNormEps = 1e-5;

// Collects forward-pass internals that tests and reports inspect:
// post-softmax attention matrices and the memory gate complement (J - alpha).
template <class Scalar>
struct Probe {
  std::vector<Mat<Scalar>> attention_weights;
  std::vector<Mat<Scalar>> memory_gate_complement;
};

using Probed = Probe<double>;

// Projections for one application of the scaled dot-product attention
// f(Q,K,V) = softmax(Q Wq (K Wk)^T / sqrt(d)) V Wv.  scale_dim is d;
// 0 means "use the key width".
template <class Scalar>
struct AttentionProj {
  Mat<Scalar> W_q, W_k, W_v;
  int scale_dim = 0;
};

template <class Scalar>
AttentionProj<Scalar> init_attention_proj(Eigen::Index hidden, Rng& rng, int scale_dim = 0) {
  AttentionProj<Scalar> p;
  p.W_q = xavier(hidden, hidden, rng).cast<Scalar>();
  p.W_k = xavier(hidden, hidden, rng).cast<Scalar>();
  p.W_v = xavier(hidden, hidden, rng).cast<Scalar>();
  p.scale_dim = scale_dim;
  return p;
}

template <class Scalar>
Var<Scalar> scaled_attention(const AttentionProj<Scalar>& p, Var<Scalar> query, Var<Scalar> key,
                             Var<Scalar> value, const Mask* mask = nullptr,
                             Probe<Scalar>* probe = nullptr) {
  if (key.rows() != value.rows())
    throw DimensionError("scaled_attention: key rows " + std::to_string(key.rows()) +
                         " != value rows " + std::to_string(value.rows()));
  Tape<Scalar>& t = query.tape();
  Var<Scalar> q = matmul(query, t.param(p.W_q));
  Var<Scalar> k = matmul(key, t.param(p.W_k));
  Var<Scalar> v = matmul(value, t.param(p.W_v));
  const Scalar d = p.scale_dim > 0 ? Scalar(p.scale_dim) : Scalar(k.cols());
  Var<Scalar> scores = scale(matmul_nt(q, k), Scalar(1) / std::sqrt(d));
  Var<Scalar> weights = softmax_rows(scores, mask);
  if (probe) probe->attention_weights.push_back(weights.value());
  return matmul(weights, v);
}

// One encoder layer's multi-head attention: the single-head attention is run
// on h/heads-wide slices of the projections, concatenated, and projected back
// by W_o.
template <class Scalar>
struct MultiHeadParams {
  Mat<Scalar> W_q, W_k, W_v, W_o;
  int num_heads = 1;
};

template <class Scalar>
MultiHeadParams<Scalar> init_multi_head(Eigen::Index hidden, int num_heads, Rng& rng) {
  if (num_heads < 1 || hidden % num_heads != 0)
    throw ConfigError("multi-head attention: hidden size " + std::to_string(hidden) +
                      " not divisible by " + std::to_string(num_heads) + " heads");
  MultiHeadParams<Scalar> p;
  p.W_q = xavier(hidden, hidden, rng).cast<Scalar>();
  p.W_k = xavier(hidden, hidden, rng).cast<Scalar>();
  p.W_v = xavier(hidden, hidden, rng).cast<Scalar>();
  p.W_o = xavier(hidden, hidden, rng).cast<Scalar>();
  p.num_heads = num_heads;
  return p;
}

template <class Scalar>
Var<Scalar> multi_head_attention(const MultiHeadParams<Scalar>& p, Var<Scalar> query,
                                 Var<Scalar> key, Var<Scalar> value, const Mask* mask = nullptr,
                                 Probe<Scalar>* probe = nullptr) {
  const Eigen::Index hidden = p.W_q.cols();
  if (p.num_heads < 1 || hidden % p.num_heads != 0)
    throw ConfigError("multi_head_attention: bad head split");
  const Eigen::Index head_dim = hidden / p.num_heads;
  Tape<Scalar>& t = query.tape();
  Var<Scalar> q = matmul(query, t.param(p.W_q));
  Var<Scalar> k = matmul(key, t.param(p.W_k));
  Var<Scalar> v = matmul(value, t.param(p.W_v));
  std::vector<Var<Scalar>> heads;
  heads.reserve(p.num_heads);
  for (int h = 0; h < p.num_heads; ++h) {
    Var<Scalar> qh = slice_cols(q, h * head_dim, head_dim);
    Var<Scalar> kh = slice_cols(k, h * head_dim, head_dim);
    Var<Scalar> vh = slice_cols(v, h * head_dim, head_dim);
    Var<Scalar> scores = scale(matmul_nt(qh, kh), Scalar(1) / std::sqrt(Scalar(head_dim)));
    Var<Scalar> weights = softmax_rows(scores, mask);
    if (probe) probe->attention_weights.push_back(weights.value());
    heads.push_back(matmul(weights, vh));
  }
  return matmul(concat_cols(heads), t.param(p.W_o));
}

// Position-wise feed-forward: linear -> ReLU -> linear.
template <class Scalar>
struct FeedForwardParams {
  LinearParams<Scalar> fc1, fc2;
};

template <class Scalar>
FeedForwardParams<Scalar> init_feed_forward(Eigen::Index in, Eigen::Index inner, Eigen::Index out,
                                            Rng& rng) {
  return FeedForwardParams<Scalar>{init_linear<Scalar>(in, inner, rng),
                                   init_linear<Scalar>(inner, out, rng)};
}

template <class Scalar>
Var<Scalar> feed_forward(const FeedForwardParams<Scalar>& p, Var<Scalar> x) {
  return linear(p.fc2, relu(linear(p.fc1, x)));
}

template <class Scalar>
struct LayerNormParams {
  Mat<Scalar> gamma, beta;  // 1 x hidden
};

template <class Scalar>
LayerNormParams<Scalar> init_layer_norm(Eigen::Index hidden) {
  return LayerNormParams<Scalar>{Mat<Scalar>::Ones(1, hidden), Mat<Scalar>::Zero(1, hidden)};
}

template <class Scalar>
Var<Scalar> layer_norm(const LayerNormParams<Scalar>& p, Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  Var<Scalar> n = row_normalize(x, Scalar(kLayerNormEps));
  return add_rowvec(cmul_rowvec(n, t.param(p.gamma)), t.param(p.beta));
}

// Pre-normalization Transformer encoder layer:
//   x + MHA(LN(x)), then y + FFN(LN(y)).
template <class Scalar>
struct EncoderLayerParams {
  MultiHeadParams<Scalar> attn;
  FeedForwardParams<Scalar> ffn;
  LayerNormParams<Scalar> ln1, ln2;
};

template <class Scalar>
EncoderLayerParams<Scalar> init_encoder_layer(Eigen::Index hidden, int num_heads, Rng& rng) {
  EncoderLayerParams<Scalar> p;
  p.attn = init_multi_head<Scalar>(hidden, num_heads, rng);
  p.ffn = init_feed_forward<Scalar>(hidden, 4 * hidden, hidden, rng);
  p.ln1 = init_layer_norm<Scalar>(hidden);
  p.ln2 = init_layer_norm<Scalar>(hidden);
  return p;
}

template <class Scalar>
Var<Scalar> encoder_layer(const EncoderLayerParams<Scalar>& p, Var<Scalar> x,
                          const Mask* mask = nullptr, Probe<Scalar>* probe = nullptr) {
  Var<Scalar> nx = layer_norm(p.ln1, x);
  Var<Scalar> a = add(x, multi_head_attention(p.attn, nx, nx, nx, mask, probe));
  return add(a, feed_forward(p.ffn, layer_norm(p.ln2, a)));
}

}  // namespace reltr
