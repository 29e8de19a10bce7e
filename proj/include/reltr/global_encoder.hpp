#pragma once

#include <vector>

#include "reltr/attention.hpp"
#include "reltr/dataset.hpp"

namespace reltr {

// All per-layer outputs z_1..z_L of the global-context encoder. When the
// input was padded, only the first valid_rows rows of each layer are scene
// content.
template <class Scalar>
struct LayerStack {
  std::vector<Var<Scalar>> layers;
  Eigen::Index valid_rows = 0;
};

// Rows are [s_i ; r_i ; o_i] concatenations, one per triplet, input order
// preserved.
template <class Scalar>
Mat<Scalar> pack_triplets(const SceneSample& scene) {
  if (scene.triplets.empty())
    throw EmptySceneError("pack_triplets: scene " + std::to_string(scene.id) + " is empty");
  const Eigen::Index d = scene.triplets.front().s_feat.size();
  Mat<Scalar> packed(static_cast<Eigen::Index>(scene.triplets.size()), 3 * d);
  for (std::size_t i = 0; i < scene.triplets.size(); ++i) {
    const TripletSample& tr = scene.triplets[i];
    if (tr.s_feat.size() != d || tr.r_feat.size() != d || tr.o_feat.size() != d)
      throw DimensionError("pack_triplets: triplet " + std::to_string(i) +
                           " feature dims differ from " + std::to_string(d));
    packed.row(static_cast<Eigen::Index>(i)) << tr.s_feat.cast<Scalar>(),
        tr.r_feat.cast<Scalar>(), tr.o_feat.cast<Scalar>();
  }
  return packed;
}

// Input projection 3D -> h followed by L encoder layers. No positional
// encodings are added, which makes every layer output permutation
// equivariant in the triplet rows.
template <class Scalar>
struct GlobalEncoderParams {
  LinearParams<Scalar> input_proj;
  std::vector<EncoderLayerParams<Scalar>> layers;
};

template <class Scalar>
GlobalEncoderParams<Scalar> init_global_encoder(Eigen::Index feature_dim, Eigen::Index hidden,
                                                int num_layers, int num_heads, Rng& rng) {
  GlobalEncoderParams<Scalar> p;
  p.input_proj = init_linear<Scalar>(3 * feature_dim, hidden, rng);
  for (int l = 0; l < num_layers; ++l)
    p.layers.push_back(init_encoder_layer<Scalar>(hidden, num_heads, rng));
  return p;
}

// pad_to > N appends rows (zeros) and masks them out of every attention so
// padding never influences the scene rows.
template <class Scalar>
LayerStack<Scalar> encode_scene(Tape<Scalar>& tape, const GlobalEncoderParams<Scalar>& p,
                                const Mat<Scalar>& packed, Eigen::Index pad_to = 0,
                                Probe<Scalar>* probe = nullptr,
                                const Mat<Scalar>* pad_content = nullptr) {
  if (packed.rows() < 1) throw EmptySceneError("encode_scene: no triplets");
  if (packed.cols() != p.input_proj.W.rows())
    throw DimensionError("encode_scene: packed width " + std::to_string(packed.cols()) +
                         " != projection input " + std::to_string(p.input_proj.W.rows()));
  const Eigen::Index n = packed.rows();
  const Eigen::Index total = std::max(n, pad_to);
  Mat<Scalar> input = Mat<Scalar>::Zero(total, packed.cols());
  input.topRows(n) = packed;
  if (pad_content && total > n) {
    if (pad_content->cols() != packed.cols() || pad_content->rows() < total - n)
      throw DimensionError("encode_scene: pad content shape mismatch");
    input.bottomRows(total - n) = pad_content->topRows(total - n);
  }

  Mask mask;
  const Mask* mask_ptr = nullptr;
  if (total > n) {
    mask = Mask::Constant(total, total, true);
    mask.rightCols(total - n).setConstant(false);
    mask_ptr = &mask;
  }

  LayerStack<Scalar> stack;
  stack.valid_rows = n;
  Var<Scalar> x = linear(p.input_proj, tape.constant(std::move(input)));
  for (const EncoderLayerParams<Scalar>& layer : p.layers) {
    x = encoder_layer(layer, x, mask_ptr, probe);
    stack.layers.push_back(x);
  }
  return stack;
}

}  // namespace reltr
