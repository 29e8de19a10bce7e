#include <gtest/gtest.h>

#include <filesystem>

#include "reltr/checkpoint.hpp"
#include "reltr/train.hpp"

using namespace reltr;
namespace fs = std::filesystem;

namespace {

GenConfig tiny_gen(std::uint64_t seed) {
  GenConfig g;
  g.obj_classes = 8;
  g.rel_classes = 6;
  g.train_scenes = 10;
  g.val_scenes = 2;
  g.test_scenes = 4;
  g.triplets_per_scene = 3;
  g.feature_dim = 5;
  g.seed = seed;
  return g;
}

ModelSizes tiny_sizes() {
  ModelSizes s;
  s.feature_dim = 5;
  s.hidden = 8;
  s.heads = 2;
  s.global_layers = 1;
  s.rel_layers = 1;
  s.mem_slots = 3;
  s.embed_dim = 12;
  s.obj_classes = 8;
  s.rel_classes = 6;
  return s;
}

TrainSettings tiny_settings(int epochs, std::uint64_t seed = 0) {
  TrainSettings st;
  st.loss = LossMode::CE;
  st.optimizer = OptimizerKind::Adam;
  st.lr = 1e-3;
  st.batch_size = 4;
  st.epochs = epochs;
  st.seed = seed;
  return st;
}

Matd snapshot(Modeld& m) {
  Matd all(1, 0);
  for (const auto& p : m.parameters()) {
    Matd flat = *p.mat;
    flat.resize(1, p.mat->size());
    Matd joined(1, all.cols() + flat.cols());
    joined << all, flat;
    all = joined;
  }
  return all;
}

}  // namespace

TEST(Optimizer, SgdStep) {
  Matd w(1, 2);
  w << 1.0, -2.0;
  Optimizer<double> opt({{"w", &w}}, OptimizerKind::Sgd, 0.5);
  Matd g(1, 2);
  g << 2.0, 4.0;
  opt.step({g});
  EXPECT_DOUBLE_EQ(w(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(w(0, 1), -4.0);
}

TEST(Optimizer, AdamConvergesOnQuadratic) {
  // min (w - 3)^2
  Matd w = Matd::Zero(1, 1);
  Optimizer<double> opt({{"w", &w}}, OptimizerKind::Adam, 0.1);
  for (int i = 0; i < 1000; ++i) {
    Matd g(1, 1);
    g << 2.0 * (w(0, 0) - 3.0);
    opt.step({g});
  }
  EXPECT_NEAR(w(0, 0), 3.0, 1e-4);
}

TEST(Optimizer, EmptyGradSkipsParameter) {
  Matd w = Matd::Ones(1, 1);
  Optimizer<double> opt({{"w", &w}}, OptimizerKind::Adam, 0.1);
  opt.step({Matd()});
  EXPECT_DOUBLE_EQ(w(0, 0), 1.0);
}

TEST(Train, ZeroEpochsLeavesInitialization) {
  Dataset ds = generate_dataset(tiny_gen(1));
  Modeld m = Modeld::init(tiny_sizes(), {}, 3);
  Modeld ref = Modeld::init(tiny_sizes(), {}, 3);
  train(m, ds.train, ds.manifest, tiny_settings(0));
  EXPECT_EQ(snapshot(m), snapshot(ref));
}

TEST(Train, DeterministicFinalLoss) {
  Dataset ds = generate_dataset(tiny_gen(2));
  double finals[2];
  for (int run = 0; run < 2; ++run) {
    Modeld m = Modeld::init(tiny_sizes(), {}, 5);
    double last = 0;
    train(m, ds.train, ds.manifest, tiny_settings(3, 9),
          [&](const TracePoint& p) { last = p.loss; });
    finals[run] = last;
  }
  EXPECT_NEAR(finals[0], finals[1], 1e-9);
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(Train, SmoothedLossDecreases) {
  Dataset ds = generate_dataset(tiny_gen(3));
  Modeld m = Modeld::init(tiny_sizes(), {}, 7);
  std::vector<double> losses;
  TrainSettings st = tiny_settings(25, 1);
  st.lr = 3e-3;
  train(m, ds.train, ds.manifest, st, [&](const TracePoint& p) { losses.push_back(p.loss); });
  ASSERT_GE(losses.size(), 20u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
}

TEST(Train, AblationFlagsChangeGradientFlow) {
  Dataset ds = generate_dataset(tiny_gen(4));
  // With global disabled, global-encoder parameters never receive gradients,
  // so they stay at initialization.
  Modeld m = Modeld::init(tiny_sizes(), {true, false}, 11);
  Modeld ref = Modeld::init(tiny_sizes(), {true, false}, 11);
  train(m, ds.train, ds.manifest, tiny_settings(2));
  EXPECT_EQ(m.global.input_proj.W, ref.global.input_proj.W);
  EXPECT_EQ(m.global.layers[0].attn.W_q, ref.global.layers[0].attn.W_q);
  EXPECT_NE(m.relational.input_proj.W, ref.relational.input_proj.W);

  // With memory disabled, memory banks and their attention stay frozen.
  Modeld m2 = Modeld::init(tiny_sizes(), {false, true}, 11);
  Modeld ref2 = Modeld::init(tiny_sizes(), {false, true}, 11);
  train(m2, ds.train, ds.manifest, tiny_settings(2));
  EXPECT_EQ(m2.relational.layers[0].memory, ref2.relational.layers[0].memory);
  EXPECT_EQ(m2.relational.layers[0].mem_gate.W, ref2.relational.layers[0].mem_gate.W);
  EXPECT_NE(m2.relational.layers[0].self_attn.W_q, ref2.relational.layers[0].self_attn.W_q);
}

TEST(Train, MemoryBankReceivesGradients) {
  Dataset ds = generate_dataset(tiny_gen(5));
  Modeld m = Modeld::init(tiny_sizes(), {}, 13);
  Matd before = m.relational.layers[0].memory;
  train(m, ds.train, ds.manifest, tiny_settings(2));
  EXPECT_NE(m.relational.layers[0].memory, before);
}

TEST(Train, DivergenceAbortsWithTrace) {
  Dataset ds = generate_dataset(tiny_gen(6));
  Modeld m = Modeld::init(tiny_sizes(), {}, 17);
  TrainSettings st = tiny_settings(50, 0);
  st.optimizer = OptimizerKind::Sgd;
  st.lr = 1e18;
  bool traced = false;
  EXPECT_THROW(
      train(m, ds.train, ds.manifest, st, [&](const TracePoint&) { traced = true; }),
      TrainingDiverged);
  EXPECT_TRUE(traced);
}

TEST(BalancedSampler, UniformOverObservedClasses) {
  Dataset ds = generate_dataset(tiny_gen(7));
  BalancedTripletSampler sampler(ds.train, ds.manifest.rel_classes);
  const auto& observed = sampler.observed_classes();
  ASSERT_GE(observed.size(), 2u);

  Rng rng(123);
  std::map<int, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto [si, ti] = sampler.draw(rng);
    ++counts[ds.train[si].triplets[ti].r_label];
  }
  // Chi-square against the uniform class distribution; 99.9% cutoff for
  // up to 5 dof is 20.5.
  const double expected = static_cast<double>(draws) / observed.size();
  double chi2 = 0;
  for (int c : observed) {
    const double diff = counts[c] - expected;
    chi2 += diff * diff / expected;
  }
  EXPECT_LT(chi2, 20.5);
}

TEST(RetrainClassifier, FreezesEncodersExactly) {
  Dataset ds = generate_dataset(tiny_gen(8));
  Modeld m = Modeld::init(tiny_sizes(), {}, 19);
  train(m, ds.train, ds.manifest, tiny_settings(2));

  Matd global_w = m.global.layers[0].attn.W_q;
  Matd rel_w = m.relational.layers[0].self_attn.W_q;
  Matd memory = m.relational.layers[0].memory;
  Matd pos = m.relational.pos_table;
  Matd cls_w = m.classifier.rel_mlp.fc1.W;
  Matd log_tau = m.classifier.log_tau;

  retrain_classifier(m, ds.train, ds.manifest, tiny_settings(2, 31));

  EXPECT_EQ(m.global.layers[0].attn.W_q, global_w);
  EXPECT_EQ(m.relational.layers[0].self_attn.W_q, rel_w);
  EXPECT_EQ(m.relational.layers[0].memory, memory);
  EXPECT_EQ(m.relational.pos_table, pos);
  EXPECT_NE(m.classifier.rel_mlp.fc1.W, cls_w);
  EXPECT_NE(m.classifier.log_tau, log_tau);  // tau trains in stage 2
}

TEST(RetrainClassifier, ZeroEpochsLeavesClassifier) {
  Dataset ds = generate_dataset(tiny_gen(9));
  Modeld m = Modeld::init(tiny_sizes(), {}, 23);
  Matd cls_w = m.classifier.obj_mlp.fc1.W;
  retrain_classifier(m, ds.train, ds.manifest, tiny_settings(0));
  EXPECT_EQ(m.classifier.obj_mlp.fc1.W, cls_w);
}

TEST(RunModel, ProducesPredictionsAndScores) {
  Dataset ds = generate_dataset(tiny_gen(10));
  Modeld m = Modeld::init(tiny_sizes(), {}, 29);
  std::vector<SceneEval> evals = run_model(m, ds.test);
  ASSERT_EQ(evals.size(), ds.test.size());
  for (std::size_t i = 0; i < evals.size(); ++i) {
    ASSERT_EQ(evals[i].triplets.size(), ds.test[i].triplets.size());
    for (const TripletEval& t : evals[i].triplets) {
      EXPECT_GE(t.r_pred, 0);
      EXPECT_LT(t.r_pred, 6);
      EXPECT_GE(t.s_pred, 0);
      EXPECT_LT(t.s_pred, 8);
      ASSERT_EQ(t.rel_scores.size(), 6);
      EXPECT_NEAR(t.rel_scores.sum(), 1.0, 1e-9);
      EXPECT_FALSE(std::isnan(t.mem_score));
      EXPECT_GT(t.mem_score, 0.0);
      EXPECT_LT(t.mem_score, 1.0);
    }
  }
}

TEST(RunModel, MemoryAblatedGivesNoMemScores) {
  Dataset ds = generate_dataset(tiny_gen(11));
  Modeld m = Modeld::init(tiny_sizes(), {false, true}, 29);
  std::vector<SceneEval> evals = run_model(m, ds.test);
  for (const auto& ev : evals)
    for (const TripletEval& t : ev.triplets) EXPECT_TRUE(std::isnan(t.mem_score));
}

TEST(Checkpoint, SaveLoadRoundTripExact) {
  Dataset ds = generate_dataset(tiny_gen(12));
  RunConfig cfg;
  cfg.feature_dim = 5;
  cfg.h = 8;
  cfg.heads = 2;
  cfg.global_layers = 1;
  cfg.rel_layers = 1;
  cfg.mem_slots = 3;
  cfg.embed_dim = 12;
  cfg.obj_classes = 8;
  cfg.rel_classes = 6;
  cfg.seed = 37;
  Modeld m = Modeld::init(cfg.model_sizes(), cfg.ablation(), cfg.seed);
  train(m, ds.train, ds.manifest, tiny_settings(1));

  fs::path file = fs::temp_directory_path() / "reltr_test_ckpt";
  save_checkpoint(file, m, cfg);
  RunConfig loaded_cfg;
  Modeld loaded = load_checkpoint<double>(file, &loaded_cfg);

  EXPECT_EQ(loaded_cfg.seed, cfg.seed);
  EXPECT_EQ(loaded_cfg.h, cfg.h);
  EXPECT_EQ(snapshot(loaded), snapshot(m));
  EXPECT_EQ(loaded.obj_table, m.obj_table);  // embeddings rebuilt from the seed
}

TEST(Checkpoint, TruncatedFileReportsPosition) {
  Dataset ds = generate_dataset(tiny_gen(13));
  RunConfig cfg;
  cfg.feature_dim = 5;
  cfg.h = 8;
  cfg.heads = 2;
  cfg.global_layers = 1;
  cfg.rel_layers = 1;
  cfg.mem_slots = 3;
  cfg.embed_dim = 12;
  cfg.obj_classes = 8;
  cfg.rel_classes = 6;
  Modeld m = Modeld::init(cfg.model_sizes(), cfg.ablation(), 0);
  fs::path file = fs::temp_directory_path() / "reltr_test_ckpt_trunc";
  save_checkpoint(file, m, cfg);
  std::ifstream in(file, std::ios::binary);
  std::string content(std::istreambuf_iterator<char>(in), {});
  in.close();
  std::ofstream out(file, std::ios::binary);
  out << content.substr(0, content.size() * 2 / 3);
  out.close();
  EXPECT_THROW(load_checkpoint<double>(file), ParseError);
}
