#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "reltr/dataset.hpp"

namespace reltr {

// One evaluated test triplet: ground truth, argmax predictions, and the
// relation scores used for ranking.
struct TripletEval {
  int s_gt = 0, r_gt = 0, o_gt = 0;
  int s_pred = -1, r_pred = -1, o_pred = -1;
  Eigen::RowVectorXd rel_scores;
  double mem_score = std::numeric_limits<double>::quiet_NaN();
};

struct SceneEval {
  std::vector<TripletEval> triplets;
};

using TripletLabels = std::array<int, 3>;  // s, r, o

struct BucketedAccuracy {
  std::vector<double> per_class;  // NaN for classes absent from the eval set
  double many = std::numeric_limits<double>::quiet_NaN();
  double medium = std::numeric_limits<double>::quiet_NaN();
  double few = std::numeric_limits<double>::quiet_NaN();
  double all = std::numeric_limits<double>::quiet_NaN();
};

// Per-class accuracy (correct_c / count_c on the eval items of class c) and
// unweighted bucket means over the classes that appear in the eval set.
BucketedAccuracy evaluate_per_class(const std::vector<int>& preds, const std::vector<int>& gts,
                                    const std::vector<BucketKind>& buckets);

// Plain instance-weighted accuracy.
double evaluate_per_example(const std::vector<int>& preds, const std::vector<int>& gts);

struct CompositionalAccuracy {
  double many = std::numeric_limits<double>::quiet_NaN();
  double medium = std::numeric_limits<double>::quiet_NaN();
  double few = std::numeric_limits<double>::quiet_NaN();
};

struct CompositionalReport {
  CompositionalAccuracy so, sr, or_;
};

// Pairwise (subject,object) / (subject,relation) / (object,relation)
// accuracy: a pair counts as correct only when both elements are predicted
// correctly. Pair classes are bucketed by their training frequency; pairs
// unseen in training rank by the product of their element frequencies.
CompositionalReport evaluate_compositional(const std::vector<TripletLabels>& preds,
                                           const std::vector<TripletLabels>& gts,
                                           const std::vector<TripletLabels>& train_labels,
                                           const std::vector<std::int64_t>& obj_counts,
                                           const std::vector<std::int64_t>& rel_counts,
                                           double many_frac = 0.05, double medium_frac = 0.15);

// Predicate-classification ranking inputs for one scene: every ground-truth
// pair with the model's score for each candidate relation label.
struct SceneRanking {
  std::vector<int> gt_rel;
  std::vector<Eigen::RowVectorXd> scores;  // one row per pair, one column per relation class
};

// Fraction of ground-truth triplets inside the scene's top-K scored
// candidates, averaged over scenes.
double recall_at_k(const std::vector<SceneRanking>& scenes, int k);

// Mean over relation classes of the class-restricted recall@K.
double mean_recall_at_k(const std::vector<SceneRanking>& scenes, int k, int rel_classes);

// Rank correlation with tie-averaged ranks; 0 when either side is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct MemoryAttentionReport {
  std::vector<double> class_mean;  // mean (J - alpha) per relation class, NaN if unobserved
  double rarity_correlation = 0.0;
};

// Averages the captured memory gate scores per relation class and correlates
// them with class rarity (rarer class = higher rank).
MemoryAttentionReport memory_attention_report(const std::vector<SceneEval>& scenes,
                                              const std::vector<std::int64_t>& rel_train_counts);

struct MetricsReport {
  BucketedAccuracy rel_per_class, subj_per_class, obj_per_class;
  double rel_per_example = 0, subj_per_example = 0, obj_per_example = 0;
  CompositionalReport compositional;
  std::vector<std::pair<int, double>> recall;
  std::vector<std::pair<int, double>> mean_recall;
  bool has_memory = false;
  MemoryAttentionReport memory;
};

MetricsReport compute_metrics(const std::vector<SceneEval>& evals,
                              const std::vector<SceneSample>& train_split,
                              const DatasetManifest& manifest,
                              const std::vector<int>& recall_ks = {5, 10, 20, 50, 100});

std::string render_metrics_text(const MetricsReport& r, const DatasetManifest& manifest);
void write_metrics_json(const std::filesystem::path& file, const MetricsReport& r);

}  // namespace reltr
