#pragma once

#include <string>

#include "reltr/ops.hpp"
#include "reltr/attention.hpp"

namespace reltr {

// Vocabulary tags keep subject/object and relation embeddings on disjoint
// random streams for the same seed.
enum class VocabKind : std::uint32_t { Object = 1, Relation = 2 };

// Deterministic unit-norm stand-in for a pretrained word embedding: a seeded
// Gaussian draw per (label, vocabulary, seed), normalized.
inline Eigen::RowVectorXd label_embedding(int label_id, int vocab_size, int embed_dim,
                                          std::uint64_t seed, VocabKind vocab) {
  if (label_id < 0 || label_id >= vocab_size)
    throw std::out_of_range("label_embedding: id " + std::to_string(label_id) +
                            " outside vocabulary of " + std::to_string(vocab_size));
  Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(label_id) + 1)) ^
          (0xc2b2ae3d27d4eb4fULL * static_cast<std::uint64_t>(vocab)));
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::RowVectorXd v(embed_dim);
  for (int i = 0; i < embed_dim; ++i) v(i) = dist(rng);
  const double n = v.norm();
  if (!(n > 0)) throw NumericError("label_embedding: degenerate draw");
  return v / n;
}

inline Matd label_embedding_table(int vocab_size, int embed_dim, std::uint64_t seed,
                                  VocabKind vocab) {
  Matd table(vocab_size, embed_dim);
  for (int c = 0; c < vocab_size; ++c)
    table.row(c) = label_embedding(c, vocab_size, embed_dim, seed, vocab);
  return table;
}

// logit_c = cos(x, table_row_c); x is 1 x h, table is C x h.
template <class Scalar>
Var<Scalar> cosine_logits(Var<Scalar> x, Var<Scalar> table_projected) {
  if (x.rows() != 1)
    throw DimensionError("cosine_logits: expected a single query row, got " +
                         shape_str(x.rows(), x.cols()));
  if (x.cols() != table_projected.cols())
    throw DimensionError("cosine_logits: hidden size mismatch " + shape_str(x.rows(), x.cols()) +
                         " vs " + shape_str(table_projected.rows(), table_projected.cols()));
  return matmul_nt(l2_normalize_rows(x), l2_normalize_rows(table_projected));
}

enum class LossMode { CE, WCE, Focal };

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "ce") return LossMode::CE;
  if (s == "wce") return LossMode::WCE;
  if (s == "focal") return LossMode::Focal;
  throw ConfigError("unknown loss mode '" + s + "' (expected ce, wce, or focal)");
}

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::CE: return "ce";
    case LossMode::WCE: return "wce";
    case LossMode::Focal: return "focal";
  }
  return "ce";
}

// Per-vocabulary loss settings. weights is only consulted for WCE.
struct LossSpec {
  LossMode mode = LossMode::CE;
  double gamma = 2.0;
  Eigen::VectorXd weights;
};

// Median-frequency inverse weights, clipped to [0.01, 100]. Classes absent
// from training get the maximum weight.
inline Eigen::VectorXd wce_weights(const std::vector<std::int64_t>& train_counts) {
  std::vector<std::int64_t> nonzero;
  for (std::int64_t c : train_counts)
    if (c > 0) nonzero.push_back(c);
  if (nonzero.empty()) throw ConfigError("wce_weights: no observed classes");
  std::sort(nonzero.begin(), nonzero.end());
  const double median = nonzero.size() % 2 == 1
                            ? static_cast<double>(nonzero[nonzero.size() / 2])
                            : 0.5 * (static_cast<double>(nonzero[nonzero.size() / 2 - 1]) +
                                     static_cast<double>(nonzero[nonzero.size() / 2]));
  Eigen::VectorXd w(static_cast<Eigen::Index>(train_counts.size()));
  for (std::size_t c = 0; c < train_counts.size(); ++c) {
    const double raw = train_counts[c] > 0 ? median / static_cast<double>(train_counts[c]) : 100.0;
    w(static_cast<Eigen::Index>(c)) = std::clamp(raw, 0.01, 100.0);
  }
  return w;
}

// Softmax cross-entropy over temperature-scaled logits with the CE / WCE /
// focal variants:
//   CE    = -log p_t
//   WCE   = -w_t log p_t
//   focal = -(1 - p_t)^gamma log p_t
// inv_tau is the 1x1 node holding 1/tau so the temperature can be trained.
template <class Scalar>
Var<Scalar> classification_loss(Var<Scalar> logits, int target, const LossSpec& spec,
                                Var<Scalar> inv_tau) {
  if (logits.rows() != 1)
    throw DimensionError("classification_loss: expected 1xC logits, got " +
                         shape_str(logits.rows(), logits.cols()));
  if (target < 0 || target >= logits.cols())
    throw std::out_of_range("classification_loss: target " + std::to_string(target) +
                            " outside " + std::to_string(logits.cols()) + " classes");
  Var<Scalar> probs = softmax_rows(mul_scalar_var(logits, inv_tau));
  Var<Scalar> p_t = pick(probs, 0, target);
  Var<Scalar> ce = scale(log_elem(p_t), Scalar(-1));
  switch (spec.mode) {
    case LossMode::CE:
      return ce;
    case LossMode::WCE: {
      if (spec.weights.size() != logits.cols())
        throw ConfigError("classification_loss: weight vector has " +
                          std::to_string(spec.weights.size()) + " entries for " +
                          std::to_string(logits.cols()) + " classes");
      return scale(ce, Scalar(spec.weights(target)));
    }
    case LossMode::Focal: {
      Var<Scalar> modulator = pow_elem(affine(p_t, Scalar(-1), Scalar(1)), Scalar(spec.gamma));
      return cmul(modulator, ce);
    }
  }
  throw ConfigError("classification_loss: bad mode");
}

// 2-layer MLPs projecting the fixed label embedding tables into the hidden
// space, one per vocabulary, plus the trainable log-temperature.
template <class Scalar>
struct ClassifierParams {
  FeedForwardParams<Scalar> obj_mlp, rel_mlp;
  Mat<Scalar> log_tau;  // 1x1
};

template <class Scalar>
ClassifierParams<Scalar> init_classifier(Eigen::Index embed_dim, Eigen::Index hidden, double tau,
                                         Rng& rng) {
  if (!(tau > 0)) throw ConfigError("classifier: tau must be positive");
  ClassifierParams<Scalar> p;
  p.obj_mlp = init_feed_forward<Scalar>(embed_dim, hidden, hidden, rng);
  p.rel_mlp = init_feed_forward<Scalar>(embed_dim, hidden, hidden, rng);
  p.log_tau = Mat<Scalar>::Constant(1, 1, Scalar(std::log(tau)));
  return p;
}

}  // namespace reltr
