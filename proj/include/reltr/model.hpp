#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "reltr/classifier.hpp"
#include "reltr/grad_check.hpp"
#include "reltr/relational.hpp"

namespace reltr {

struct ModelSizes {
  int feature_dim = 16;   // D
  int hidden = 32;        // h
  int heads = 4;
  int global_layers = 2;  // L
  int rel_layers = 2;     // P
  int mem_slots = 8;      // m
  int embed_dim = 300;    // e
  int obj_classes = 40;
  int rel_classes = 30;
  double tau = 0.1;
};

struct AblationFlags {
  bool disable_global = false;
  bool disable_memory = false;
};

inline void validate(const ModelSizes& s) {
  if (s.feature_dim < 1 || s.hidden < 1 || s.heads < 1 || s.global_layers < 1 ||
      s.rel_layers < 1 || s.mem_slots < 1 || s.embed_dim < 1 || s.obj_classes < 1 ||
      s.rel_classes < 1)
    throw ConfigError("model sizes must all be positive");
  if (s.hidden % s.heads != 0)
    throw ConfigError("hidden size " + std::to_string(s.hidden) + " not divisible by " +
                      std::to_string(s.heads) + " heads");
  if (!(s.tau > 0)) throw ConfigError("tau must be positive");
}

template <class Scalar>
struct Model {
  ModelSizes sizes;
  AblationFlags ablation;
  std::uint64_t seed = 0;  // drives parameter init and the label embeddings

  GlobalEncoderParams<Scalar> global;
  RelationalEncoderParams<Scalar> relational;
  ClassifierParams<Scalar> classifier;

  Matd obj_table, rel_table;  // fixed label embeddings, not trained

  static Model init(const ModelSizes& sizes, const AblationFlags& ablation, std::uint64_t seed) {
    validate(sizes);
    Model m;
    m.sizes = sizes;
    m.ablation = ablation;
    m.seed = seed;
    Rng rng(seed);
    m.global = init_global_encoder<Scalar>(sizes.feature_dim, sizes.hidden, sizes.global_layers,
                                           sizes.heads, rng);
    m.relational = init_relational_encoder<Scalar>(sizes.feature_dim, sizes.hidden,
                                                   sizes.rel_layers, sizes.mem_slots,
                                                   sizes.global_layers, rng);
    m.classifier = init_classifier<Scalar>(sizes.embed_dim, sizes.hidden, sizes.tau, rng);
    m.obj_table = label_embedding_table(sizes.obj_classes, sizes.embed_dim, seed,
                                        VocabKind::Object);
    m.rel_table = label_embedding_table(sizes.rel_classes, sizes.embed_dim, seed,
                                        VocabKind::Relation);
    return m;
  }

  std::vector<NamedParamT<Scalar>> parameters() {
    std::vector<NamedParamT<Scalar>> out;
    auto put = [&](const std::string& name, Mat<Scalar>& m) {
      out.push_back(NamedParamT<Scalar>{name, &m});
    };
    auto put_linear = [&](const std::string& p, LinearParams<Scalar>& l) {
      put(p + ".W", l.W);
      if (l.b.size()) put(p + ".b", l.b);
    };
    auto put_proj = [&](const std::string& p, AttentionProj<Scalar>& a) {
      put(p + ".W_q", a.W_q);
      put(p + ".W_k", a.W_k);
      put(p + ".W_v", a.W_v);
    };
    auto put_ffn = [&](const std::string& p, FeedForwardParams<Scalar>& f) {
      put_linear(p + ".fc1", f.fc1);
      put_linear(p + ".fc2", f.fc2);
    };
    auto put_gate = [&](const std::string& p, GateParams<Scalar>& g) {
      put(p + ".W", g.W);
      put(p + ".b", g.b);
    };

    put_linear("global.input_proj", global.input_proj);
    for (std::size_t l = 0; l < global.layers.size(); ++l) {
      const std::string pre = "global.layer" + std::to_string(l);
      EncoderLayerParams<Scalar>& e = global.layers[l];
      put(pre + ".attn.W_q", e.attn.W_q);
      put(pre + ".attn.W_k", e.attn.W_k);
      put(pre + ".attn.W_v", e.attn.W_v);
      put(pre + ".attn.W_o", e.attn.W_o);
      put_ffn(pre + ".ffn", e.ffn);
      put(pre + ".ln1.gamma", e.ln1.gamma);
      put(pre + ".ln1.beta", e.ln1.beta);
      put(pre + ".ln2.gamma", e.ln2.gamma);
      put(pre + ".ln2.beta", e.ln2.beta);
    }

    put_linear("rel.input_proj", relational.input_proj);
    put("rel.pos_table", relational.pos_table);
    for (std::size_t l = 0; l < relational.layers.size(); ++l) {
      const std::string pre = "rel.layer" + std::to_string(l);
      RelationalLayerParams<Scalar>& r = relational.layers[l];
      put_proj(pre + ".self", r.self_attn);
      put_proj(pre + ".mem", r.mem_attn);
      put(pre + ".memory", r.memory);
      put_gate(pre + ".mem_gate", r.mem_gate);
      for (std::size_t g = 0; g < r.meshed.size(); ++g) {
        const std::string mp = pre + ".meshed" + std::to_string(g);
        put_proj(mp + ".cross", r.meshed[g].cross);
        put_gate(mp + ".gate", r.meshed[g].gate);
      }
      put_ffn(pre + ".mlp", r.mlp);
    }

    for (auto& np : classifier_parameters()) out.push_back(np);
    return out;
  }

  // Stage-1 training leaves the temperature at its configured value; only
  // the decoupled stage optimizes it.
  std::vector<NamedParamT<Scalar>> parameters_without_tau() {
    auto all = parameters();
    std::erase_if(all, [](const NamedParamT<Scalar>& p) { return p.name == "cls.log_tau"; });
    return all;
  }

  // The decoupled retraining stage updates exactly these.
  std::vector<NamedParamT<Scalar>> classifier_parameters() {
    std::vector<NamedParamT<Scalar>> out;
    auto put_linear = [&](const std::string& p, LinearParams<Scalar>& l) {
      out.push_back({p + ".W", &l.W});
      if (l.b.size()) out.push_back({p + ".b", &l.b});
    };
    put_linear("cls.obj_mlp.fc1", classifier.obj_mlp.fc1);
    put_linear("cls.obj_mlp.fc2", classifier.obj_mlp.fc2);
    put_linear("cls.rel_mlp.fc1", classifier.rel_mlp.fc1);
    put_linear("cls.rel_mlp.fc2", classifier.rel_mlp.fc2);
    out.push_back({"cls.log_tau", &classifier.log_tau});
    return out;
  }
};

using Modeld = Model<double>;

// Loss settings per vocabulary (weights differ, mode and gamma are shared).
struct LossSpecs {
  LossSpec obj, rel;
};

inline LossSpecs make_loss_specs(LossMode mode, double gamma,
                                 const std::vector<std::int64_t>& obj_counts,
                                 const std::vector<std::int64_t>& rel_counts) {
  LossSpecs specs;
  specs.obj.mode = specs.rel.mode = mode;
  specs.obj.gamma = specs.rel.gamma = gamma;
  if (mode == LossMode::WCE) {
    specs.obj.weights = wce_weights(obj_counts);
    specs.rel.weights = wce_weights(rel_counts);
  }
  return specs;
}

template <class Scalar>
struct TripletResult {
  int s_pred = -1, r_pred = -1, o_pred = -1;
  Eigen::RowVectorXd rel_probs;  // softmax(logits / tau), the ranking scores
  double mem_score = std::numeric_limits<double>::quiet_NaN();
  Var<Scalar> loss;
};

template <class Scalar>
struct SceneResult {
  std::vector<TripletResult<Scalar>> triplets;
  Var<Scalar> loss_sum;  // sum over triplets of (l_s + l_r + l_o)
};

namespace detail {

template <class Scalar>
int argmax_row(const Mat<Scalar>& row) {
  Eigen::Index idx = 0;
  row.row(0).maxCoeff(&idx);
  return static_cast<int>(idx);
}

template <class Scalar>
Eigen::RowVectorXd softmax_value(const Mat<Scalar>& logits, double inv_tau) {
  Eigen::ArrayXd a = logits.row(0).template cast<double>().array() * inv_tau;
  a -= a.maxCoeff();
  Eigen::ArrayXd e = a.exp();
  return (e / e.sum()).matrix().transpose();
}

}  // namespace detail

// Full forward pass for one scene: global encoding once, then the relational
// encoder and classification head per triplet. Pass specs = nullptr to skip
// loss construction (evaluation). mem_score is only filled when a probe is
// supplied and memory is enabled.
template <class Scalar>
SceneResult<Scalar> forward_scene(Tape<Scalar>& tape, const Model<Scalar>& model,
                                  const SceneSample& scene, const LossSpecs* specs,
                                  Probe<Scalar>* probe = nullptr) {
  if (scene.triplets.empty())
    throw EmptySceneError("forward_scene: scene " + std::to_string(scene.id) + " is empty");

  LayerStack<Scalar> stack;
  const LayerStack<Scalar>* stack_ptr = nullptr;
  if (!model.ablation.disable_global) {
    stack = encode_scene(tape, model.global, pack_triplets<Scalar>(scene), 0, probe);
    stack_ptr = &stack;
  }
  const bool use_memory = !model.ablation.disable_memory;

  Var<Scalar> obj_proj =
      feed_forward(model.classifier.obj_mlp, tape.constant(model.obj_table.template cast<Scalar>()));
  Var<Scalar> rel_proj =
      feed_forward(model.classifier.rel_mlp, tape.constant(model.rel_table.template cast<Scalar>()));
  Var<Scalar> inv_tau = exp_elem(scale(tape.param(model.classifier.log_tau), Scalar(-1)));
  const double inv_tau_value = static_cast<double>(inv_tau.value()(0, 0));

  SceneResult<Scalar> result;
  for (const TripletSample& tr : scene.triplets) {
    const std::size_t gates_before = probe ? probe->memory_gate_complement.size() : 0;
    Var<Scalar> x = encode_triplet(tape, model.relational, tr, stack_ptr, use_memory, probe);
    Var<Scalar> s_logits = cosine_logits(slice_rows(x, 0, 1), obj_proj);
    Var<Scalar> r_logits = cosine_logits(slice_rows(x, 1, 1), rel_proj);
    Var<Scalar> o_logits = cosine_logits(slice_rows(x, 2, 1), obj_proj);

    TripletResult<Scalar> out;
    out.s_pred = detail::argmax_row(s_logits.value());
    out.r_pred = detail::argmax_row(r_logits.value());
    out.o_pred = detail::argmax_row(o_logits.value());
    out.rel_probs = detail::softmax_value(r_logits.value(), inv_tau_value);

    if (probe && use_memory) {
      double total = 0;
      std::size_t n = 0;
      for (std::size_t g = gates_before; g < probe->memory_gate_complement.size(); ++g) {
        total += static_cast<double>(probe->memory_gate_complement[g].row(1).mean());
        ++n;
      }
      if (n > 0) out.mem_score = total / static_cast<double>(n);
    }

    if (specs) {
      Var<Scalar> loss = add(add(classification_loss(s_logits, tr.s_label, specs->obj, inv_tau),
                                 classification_loss(r_logits, tr.r_label, specs->rel, inv_tau)),
                             classification_loss(o_logits, tr.o_label, specs->obj, inv_tau));
      out.loss = loss;
      result.loss_sum = result.loss_sum ? add(result.loss_sum, loss) : loss;
    }
    result.triplets.push_back(std::move(out));
  }
  return result;
}

}  // namespace reltr
