#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reltr/common.hpp"

namespace reltr {

// Axis-aligned box with x1 <= x2, y1 <= y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const { return x1 <= x2 && y1 <= y2; }
  bool operator==(const Box&) const = default;
};

// Minimum enclosing region of two boxes.
Box union_box(const Box& a, const Box& b);

// One <subject, relation, object> instance: raw feature rows plus labels.
struct TripletSample {
  Eigen::RowVectorXd s_feat, r_feat, o_feat;
  int s_label = 0, r_label = 0, o_label = 0;
  Box s_box, o_box, r_box;
};

// One image's fully connected set of annotated triplets.
struct SceneSample {
  std::int64_t id = 0;
  std::vector<TripletSample> triplets;
};

enum class BucketKind { Many, Medium, Few };

// Frequency-ranked partition of class ids into many/medium/few. Cutoffs are
// bucket sizes: the k_many most frequent classes, then the next k_medium,
// then the rest. Equal counts break toward the lower class id.
std::vector<BucketKind> bucket_classes(const std::vector<std::int64_t>& train_counts, int k_many,
                                       int k_medium);

struct GenConfig {
  int obj_classes = 40;
  int rel_classes = 30;
  double zipf_s = 1.0;
  int train_scenes = 400;
  int val_scenes = 50;
  int test_scenes = 100;
  int triplets_per_scene = 5;
  int feature_dim = 16;
  double noise_sigma = 0.25;
  double mix_coeff = 0.5;
  double scene_sigma = 0.0;  // scene-level feature offset, shared by a scene's triplets
  double tail_noise = 0.0;   // extra relation-feature noise for rarer classes
  int bucket_many = 0;   // 0 = derive as ~5% of the vocabulary
  int bucket_medium = 0; // 0 = derive as ~15% of the vocabulary
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int obj_classes = 0;
  int rel_classes = 0;
  int feature_dim = 0;
  std::uint64_t seed = 0;
  double zipf_s = 0.0;
  std::vector<std::int64_t> rel_train_counts;  // per relation class, train split
  std::vector<std::int64_t> obj_train_counts;  // per object class (subject+object slots)
  int rel_bucket_many = 0, rel_bucket_medium = 0;
  int obj_bucket_many = 0, obj_bucket_medium = 0;
  std::int64_t train_triplets = 0, val_triplets = 0, test_triplets = 0;
  std::int64_t train_scenes = 0, val_scenes = 0, test_scenes = 0;
};

struct Dataset {
  std::vector<SceneSample> train, val, test;
  DatasetManifest manifest;
};

// Synthetic long-tail generator: relation/object classes are Zipf(s)
// distributed, features are Gaussian draws around per-class prototypes, and
// each relation feature additionally mixes in its subject/object prototypes
// so that the triplet context carries signal. A scene-wide offset
// (scene_sigma) shifts every relation feature of a scene; a single triplet
// cannot recover it, the other triplets can, which is what gives the
// global-context pathway real signal. Fully determined by the seed.
Dataset generate_dataset(const GenConfig& cfg);

// JSON-lines scene files; read(write(x)) == x exactly.
void write_scenes(const std::filesystem::path& file, const std::vector<SceneSample>& scenes);
std::vector<SceneSample> read_scenes(const std::filesystem::path& file);

void write_manifest(const std::filesystem::path& file, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& file);

// Writes train.jsonl/val.jsonl/test.jsonl/manifest.json under dir.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

// Derived bucket size defaults mirroring the benchmark partitions
// (5% many / 15% medium / 80% few).
int default_bucket_many(int num_classes);
int default_bucket_medium(int num_classes);

}  // namespace reltr
