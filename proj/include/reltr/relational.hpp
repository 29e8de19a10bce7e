#pragma once

#include <vector>

#include "reltr/global_encoder.hpp"

namespace reltr {

// Complementary attention gate g(x, y) = alpha .* x + (J - alpha) .* y with
// alpha = sigmoid(W [x ; y] + b).
template <class Scalar>
struct GateParams {
  Mat<Scalar> W;  // 2h x h
  Mat<Scalar> b;  // 1 x h
};

template <class Scalar>
GateParams<Scalar> init_gate(Eigen::Index hidden, Rng& rng) {
  return GateParams<Scalar>{xavier(2 * hidden, hidden, rng).cast<Scalar>(),
                            Mat<Scalar>::Zero(1, hidden)};
}

// capture_complement, when given, receives the (J - alpha) weights, the
// share the gate assigns to y.
template <class Scalar>
Var<Scalar> gate_fuse(const GateParams<Scalar>& p, Var<Scalar> x, Var<Scalar> y,
                      Mat<Scalar>* capture_complement = nullptr) {
  detail::same_shape(x, y, "gate_fuse");
  Tape<Scalar>& t = x.tape();
  Var<Scalar> alpha =
      sigmoid(add_rowvec(matmul(concat_cols(x, y), t.param(p.W)), t.param(p.b)));
  if (capture_complement)
    *capture_complement = Mat<Scalar>::Ones(alpha.rows(), alpha.cols()) - alpha.value();
  // alpha .* x + (J - alpha) .* y, written as y + alpha .* (x - y).
  return add(y, cmul(alpha, sub(x, y)));
}

// Attention into the persistent memory bank: the current triplet state is
// the query, the memory rows are key and value.
template <class Scalar>
Var<Scalar> memory_attend(const AttentionProj<Scalar>& attn, const Mat<Scalar>& memory,
                          Var<Scalar> x_prev, Probe<Scalar>* probe = nullptr) {
  if (memory.rows() < 1) throw ConfigError("memory_attend: memory bank has no slots");
  Tape<Scalar>& t = x_prev.tape();
  Var<Scalar> m = t.param(memory);
  return scaled_attention(attn, x_prev, m, m, nullptr, probe);
}

// Per-global-layer cross attention and gate for the meshed fusion.
template <class Scalar>
struct MeshedLayerParams {
  AttentionProj<Scalar> cross;
  GateParams<Scalar> gate;
};

// Cross-attends the fused triplet state into every global encoder layer
// output, gates each result against the state, averages over layers, and
// applies the MLP with a skip connection.
template <class Scalar>
Var<Scalar> meshed_fuse(const std::vector<MeshedLayerParams<Scalar>>& per_layer,
                        const FeedForwardParams<Scalar>& mlp, Var<Scalar> x_bar,
                        const LayerStack<Scalar>& stack, Probe<Scalar>* probe = nullptr) {
  if (stack.layers.empty()) throw ConfigError("meshed_fuse: empty layer stack");
  if (per_layer.size() != stack.layers.size())
    throw ConfigError("meshed_fuse: " + std::to_string(per_layer.size()) +
                      " parameter sets for " + std::to_string(stack.layers.size()) + " layers");
  Var<Scalar> acc;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    Var<Scalar> z = stack.layers[l];
    if (stack.valid_rows > 0 && stack.valid_rows < z.rows())
      z = slice_rows(z, 0, stack.valid_rows);
    Var<Scalar> attended = scaled_attention(per_layer[l].cross, x_bar, z, z, nullptr, probe);
    Var<Scalar> fused = gate_fuse(per_layer[l].gate, x_bar, attended);
    acc = acc ? add(acc, fused) : fused;
  }
  Var<Scalar> mean = scale(acc, Scalar(1) / Scalar(stack.layers.size()));
  return add(feed_forward(mlp, mean), x_bar);
}

template <class Scalar>
struct RelationalLayerParams {
  AttentionProj<Scalar> self_attn;
  AttentionProj<Scalar> mem_attn;
  Mat<Scalar> memory;  // m x h, updated only by the optimizer
  GateParams<Scalar> mem_gate;
  std::vector<MeshedLayerParams<Scalar>> meshed;  // one per global layer
  FeedForwardParams<Scalar> mlp;
};

template <class Scalar>
RelationalLayerParams<Scalar> init_relational_layer(Eigen::Index hidden, int mem_slots,
                                                    int global_layers, Rng& rng) {
  RelationalLayerParams<Scalar> p;
  p.self_attn = init_attention_proj<Scalar>(hidden, rng);
  p.mem_attn = init_attention_proj<Scalar>(hidden, rng);
  p.memory = gaussian(mem_slots, hidden, rng, 0.02).cast<Scalar>();
  p.mem_gate = init_gate<Scalar>(hidden, rng);
  for (int l = 0; l < global_layers; ++l)
    p.meshed.push_back(MeshedLayerParams<Scalar>{init_attention_proj<Scalar>(hidden, rng),
                                                 init_gate<Scalar>(hidden, rng)});
  p.mlp = init_feed_forward<Scalar>(hidden, hidden, hidden, rng);
  return p;
}

// One relational encoding layer:
//   x_att = f(x, x, x)
//   x_mem = f(x, M, M)                         (skipped when memory disabled)
//   x_bar = g(x_att, x_mem) + x                (x_att + x when disabled)
//   out   = meshed fusion with the layer stack (x_bar when stack is null)
// The memory gate's (J - alpha) is captured into the probe.
template <class Scalar>
Var<Scalar> relational_layer(const RelationalLayerParams<Scalar>& p, Var<Scalar> x_prev,
                             const LayerStack<Scalar>* stack, bool use_memory,
                             Probe<Scalar>* probe = nullptr) {
  Var<Scalar> x_att = scaled_attention(p.self_attn, x_prev, x_prev, x_prev, nullptr, probe);
  Var<Scalar> x_bar;
  if (use_memory) {
    Var<Scalar> x_mem = memory_attend(p.mem_attn, p.memory, x_prev, probe);
    Mat<Scalar> complement;
    Var<Scalar> fused = gate_fuse(p.mem_gate, x_att, x_mem, probe ? &complement : nullptr);
    if (probe) probe->memory_gate_complement.push_back(std::move(complement));
    x_bar = add(fused, x_prev);
  } else {
    x_bar = add(x_att, x_prev);
  }
  if (!stack) return x_bar;
  return meshed_fuse(p.meshed, p.mlp, x_bar, *stack, probe);
}

// Shared D -> h projection plus the 3-row learnable positional table, applied
// once before the first relational layer.
template <class Scalar>
struct RelationalEncoderParams {
  LinearParams<Scalar> input_proj;
  Mat<Scalar> pos_table;  // 3 x h
  std::vector<RelationalLayerParams<Scalar>> layers;
};

template <class Scalar>
RelationalEncoderParams<Scalar> init_relational_encoder(Eigen::Index feature_dim,
                                                        Eigen::Index hidden, int num_layers,
                                                        int mem_slots, int global_layers,
                                                        Rng& rng) {
  RelationalEncoderParams<Scalar> p;
  p.input_proj = init_linear<Scalar>(feature_dim, hidden, rng);
  p.pos_table = gaussian(3, hidden, rng, 0.02).cast<Scalar>();
  for (int l = 0; l < num_layers; ++l)
    p.layers.push_back(init_relational_layer<Scalar>(hidden, mem_slots, global_layers, rng));
  return p;
}

template <class Scalar>
Var<Scalar> embed_triplet_positions(Tape<Scalar>& tape, const RelationalEncoderParams<Scalar>& p,
                                    const TripletSample& tr) {
  const Eigen::Index d = p.input_proj.W.rows();
  if (tr.s_feat.size() != d || tr.r_feat.size() != d || tr.o_feat.size() != d)
    throw DimensionError("embed_triplet_positions: feature dim != " + std::to_string(d));
  Mat<Scalar> raw(3, d);
  raw.row(0) = tr.s_feat.cast<Scalar>();
  raw.row(1) = tr.r_feat.cast<Scalar>();
  raw.row(2) = tr.o_feat.cast<Scalar>();
  Var<Scalar> projected = linear(p.input_proj, tape.constant(std::move(raw)));
  return add(projected, tape.param(p.pos_table));
}

// Runs the full P-layer relational encoder for one triplet and returns X_P
// (rows: subject, relation, object).
template <class Scalar>
Var<Scalar> encode_triplet(Tape<Scalar>& tape, const RelationalEncoderParams<Scalar>& p,
                           const TripletSample& tr, const LayerStack<Scalar>* stack,
                           bool use_memory, Probe<Scalar>* probe = nullptr) {
  Var<Scalar> x = embed_triplet_positions(tape, p, tr);
  for (const RelationalLayerParams<Scalar>& layer : p.layers)
    x = relational_layer(layer, x, stack, use_memory, probe);
  return x;
}

}  // namespace reltr
