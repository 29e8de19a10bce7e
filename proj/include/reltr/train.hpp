#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "reltr/metrics.hpp"
#include "reltr/model.hpp"

namespace reltr {

enum class OptimizerKind { Adam, Sgd };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::Adam ? "adam" : "sgd";
}

// Minibatch first-order optimizer over a fixed parameter set. Gradients are
// accumulated externally and handed over per step.
template <class Scalar>
class Optimizer {
 public:
  Optimizer(std::vector<NamedParamT<Scalar>> params, OptimizerKind kind, double lr)
      : params_(std::move(params)), kind_(kind), lr_(lr) {
    if (!(lr > 0)) throw ConfigError("optimizer: learning rate must be positive");
    if (kind_ == OptimizerKind::Adam) {
      m_.reserve(params_.size());
      v_.reserve(params_.size());
      for (const auto& p : params_) {
        m_.push_back(Mat<Scalar>::Zero(p.mat->rows(), p.mat->cols()));
        v_.push_back(Mat<Scalar>::Zero(p.mat->rows(), p.mat->cols()));
      }
    }
  }

  const std::vector<NamedParamT<Scalar>>& params() const { return params_; }

  // grads[i] matches params()[i]; empty matrices are treated as zero.
  void step(const std::vector<Mat<Scalar>>& grads) {
    if (grads.size() != params_.size()) throw DimensionError("optimizer: gradient count mismatch");
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (grads[i].size() == 0) continue;
      Mat<Scalar>& w = *params_[i].mat;
      const Mat<Scalar>& g = grads[i];
      if (g.rows() != w.rows() || g.cols() != w.cols())
        throw DimensionError("optimizer: gradient shape mismatch for " + params_[i].name);
      if (kind_ == OptimizerKind::Sgd) {
        w -= Scalar(lr_) * g;
      } else {
        m_[i] = Scalar(kBeta1) * m_[i] + Scalar(1 - kBeta1) * g;
        v_[i] = Scalar(kBeta2) * v_[i] + (Scalar(1 - kBeta2) * g.array().square()).matrix();
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        w -= (Scalar(lr_ / bc1) * m_[i].array() /
              ((v_[i].array() / Scalar(bc2)).sqrt() + Scalar(kEps)))
                 .matrix();
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<NamedParamT<Scalar>> params_;
  OptimizerKind kind_;
  double lr_;
  int t_ = 0;
  std::vector<Mat<Scalar>> m_, v_;
};

struct TrainSettings {
  LossMode loss = LossMode::WCE;
  double gamma = 2.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 1e-3;
  int batch_size = 8;  // scenes per batch (stage 2: triplets per batch)
  int epochs = 40;
  std::uint64_t seed = 0;
};

struct TracePoint {
  int epoch = 0;
  int step = 0;
  double loss = 0;
};

using TraceSink = std::function<void(const TracePoint&)>;

namespace detail {

template <class Scalar>
std::vector<Mat<Scalar>> collect_grads(Tape<Scalar>& tape,
                                       const std::vector<NamedParamT<Scalar>>& params) {
  std::vector<Mat<Scalar>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    const Mat<Scalar>* g = tape.grad_of(*p.mat);
    grads.push_back(g ? *g : Mat<Scalar>());
  }
  return grads;
}

template <class Scalar>
void add_grads(std::vector<Mat<Scalar>>& into, const std::vector<Mat<Scalar>>& from) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (from[i].size() == 0) continue;
    if (into[i].size() == 0)
      into[i] = from[i];
    else
      into[i] += from[i];
  }
}

}  // namespace detail

// Stage-1 training: joint minibatch gradient descent on the summed
// subject/relation/object losses, batched by scene, loss reduced by the mean
// over triplets. Deterministic given the seed. Throws TrainingDiverged on a
// non-finite batch loss (after reporting it to the sink).
template <class Scalar>
void train(Model<Scalar>& model, const std::vector<SceneSample>& train_split,
           const DatasetManifest& manifest, const TrainSettings& st,
           const TraceSink& sink = nullptr) {
  if (train_split.empty()) throw ConfigError("train: empty training split");
  if (st.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (st.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  const LossSpecs specs = make_loss_specs(st.loss, st.gamma, manifest.obj_train_counts,
                                          manifest.rel_train_counts);
  Optimizer<Scalar> opt(model.parameters_without_tau(), st.optimizer, st.lr);
  Rng shuffle_rng(st.seed ^ 0x5bd1e995u);

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  int step = 0;
  for (int epoch = 0; epoch < st.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b = 0; b < order.size(); b += st.batch_size) {
      const std::size_t end = std::min(order.size(), b + st.batch_size);
      std::int64_t batch_triplets = 0;
      for (std::size_t i = b; i < end; ++i)
        batch_triplets += static_cast<std::int64_t>(train_split[order[i]].triplets.size());

      std::vector<Mat<Scalar>> grads(opt.params().size());
      double batch_loss = 0;
      for (std::size_t i = b; i < end; ++i) {
        try {
          Tape<Scalar> tape;
          SceneResult<Scalar> r = forward_scene(tape, model, train_split[order[i]], &specs);
          batch_loss += static_cast<double>(r.loss_sum.value()(0, 0));
          tape.backward(r.loss_sum, Scalar(1) / Scalar(batch_triplets));
          detail::add_grads(grads, detail::collect_grads(tape, opt.params()));
        } catch (const NumericError& e) {
          // Exploded parameters surface as non-finite values inside the
          // forward pass; report them as divergence.
          if (sink) sink(TracePoint{epoch, step + 1, std::numeric_limits<double>::quiet_NaN()});
          throw TrainingDiverged(std::string("train: ") + e.what() + " at epoch " +
                                 std::to_string(epoch));
        }
      }
      batch_loss /= static_cast<double>(batch_triplets);
      ++step;
      if (sink) sink(TracePoint{epoch, step, batch_loss});
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) +
                               " step " + std::to_string(step));
      opt.step(grads);
    }
  }
}

// Class-balanced triplet sampling: a relation class uniform over the
// observed classes, then a uniform triplet of that class.
class BalancedTripletSampler {
 public:
  BalancedTripletSampler(const std::vector<SceneSample>& scenes, int rel_classes)
      : by_class_(rel_classes) {
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      for (std::size_t ti = 0; ti < scenes[si].triplets.size(); ++ti) {
        const int c = scenes[si].triplets[ti].r_label;
        if (c < 0 || c >= rel_classes)
          throw std::out_of_range("balanced sampler: relation label out of range");
        by_class_[c].emplace_back(si, ti);
        ++total_;
      }
    }
    for (int c = 0; c < rel_classes; ++c)
      if (!by_class_[c].empty()) observed_.push_back(c);
    if (observed_.empty()) throw ConfigError("balanced sampler: no triplets");
  }

  std::pair<std::size_t, std::size_t> draw(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick_class(0, observed_.size() - 1);
    const int c = observed_[pick_class(rng)];
    std::uniform_int_distribution<std::size_t> pick_item(0, by_class_[c].size() - 1);
    return by_class_[c][pick_item(rng)];
  }

  std::int64_t total_triplets() const { return total_; }
  const std::vector<int>& observed_classes() const { return observed_; }

 private:
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> by_class_;
  std::vector<int> observed_;
  std::int64_t total_ = 0;
};

// Stage-2 decoupled retraining: encoders and memory frozen, only the
// classifier MLPs and the temperature update, with triplets drawn uniformly
// over relation classes.
template <class Scalar>
void retrain_classifier(Model<Scalar>& model, const std::vector<SceneSample>& train_split,
                        const DatasetManifest& manifest, const TrainSettings& st,
                        const TraceSink& sink = nullptr) {
  if (train_split.empty()) throw ConfigError("retrain_classifier: empty training split");
  if (st.batch_size < 1) throw ConfigError("retrain_classifier: batch_size must be >= 1");
  const LossSpecs specs = make_loss_specs(st.loss, st.gamma, manifest.obj_train_counts,
                                          manifest.rel_train_counts);
  BalancedTripletSampler sampler(train_split, manifest.rel_classes);

  Optimizer<Scalar> opt(model.classifier_parameters(), st.optimizer, st.lr);
  Rng rng(st.seed ^ 0x2545f4914f6cdd1dULL);
  const int steps_per_epoch =
      static_cast<int>((sampler.total_triplets() + st.batch_size - 1) / st.batch_size);

  int step = 0;
  for (int epoch = 0; epoch < st.epochs; ++epoch) {
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<Mat<Scalar>> grads(opt.params().size());
      double batch_loss = 0;
      for (int i = 0; i < st.batch_size; ++i) {
        const auto [si, ti] = sampler.draw(rng);
        // Forward the whole scene (the frozen encoders still need the
        // context), but train on the sampled triplet's loss only.
        Tape<Scalar> tape;
        SceneResult<Scalar> r = forward_scene(tape, model, train_split[si], &specs);
        Var<Scalar> loss = r.triplets[ti].loss;
        batch_loss += static_cast<double>(loss.value()(0, 0));
        tape.backward(loss, Scalar(1) / Scalar(st.batch_size));
        detail::add_grads(grads, detail::collect_grads(tape, opt.params()));
      }
      batch_loss /= st.batch_size;
      ++step;
      if (sink) sink(TracePoint{epoch, step, batch_loss});
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("retrain_classifier: non-finite loss at step " +
                               std::to_string(step));
      opt.step(grads);
    }
  }
}

// Runs the model over a split and packages predictions for the metrics
// suite.
template <class Scalar>
std::vector<SceneEval> run_model(const Model<Scalar>& model,
                                 const std::vector<SceneSample>& scenes) {
  std::vector<SceneEval> out;
  out.reserve(scenes.size());
  for (const SceneSample& scene : scenes) {
    Tape<Scalar> tape;
    Probe<Scalar> probe;
    SceneResult<Scalar> r = forward_scene(tape, model, scene, nullptr, &probe);
    SceneEval ev;
    for (std::size_t i = 0; i < scene.triplets.size(); ++i) {
      const TripletSample& gt = scene.triplets[i];
      const TripletResult<Scalar>& pr = r.triplets[i];
      TripletEval te;
      te.s_gt = gt.s_label;
      te.r_gt = gt.r_label;
      te.o_gt = gt.o_label;
      te.s_pred = pr.s_pred;
      te.r_pred = pr.r_pred;
      te.o_pred = pr.o_pred;
      te.rel_scores = pr.rel_probs;
      te.mem_score = pr.mem_score;
      ev.triplets.push_back(std::move(te));
    }
    out.push_back(std::move(ev));
  }
  return out;
}

// Per-example relation accuracy over a split; the overfit smoke check.
template <class Scalar>
double relation_accuracy(const Model<Scalar>& model, const std::vector<SceneSample>& scenes) {
  std::int64_t correct = 0, total = 0;
  for (const SceneEval& ev : run_model(model, scenes)) {
    for (const TripletEval& t : ev.triplets) {
      ++total;
      if (t.r_pred == t.r_gt) ++correct;
    }
  }
  if (total == 0) throw ConfigError("relation_accuracy: no triplets");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace reltr
