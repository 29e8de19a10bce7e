#include "reltr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace reltr {

using nlohmann::json;

Box union_box(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw DimensionError("union_box: invalid box");
  return Box{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
             std::max(a.y2, b.y2)};
}

int default_bucket_many(int num_classes) {
  return std::max(1, static_cast<int>(std::lround(0.05 * num_classes)));
}

int default_bucket_medium(int num_classes) {
  return std::max(1, static_cast<int>(std::lround(0.15 * num_classes)));
}

std::vector<BucketKind> bucket_classes(const std::vector<std::int64_t>& train_counts, int k_many,
                                       int k_medium) {
  const int n = static_cast<int>(train_counts.size());
  if (k_many < 0 || k_medium < 0 || k_many + k_medium > n)
    throw ConfigError("bucket_classes: cutoffs (" + std::to_string(k_many) + ", " +
                      std::to_string(k_medium) + ") exceed " + std::to_string(n) + " classes");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (train_counts[a] != train_counts[b]) return train_counts[a] > train_counts[b];
    return a < b;
  });
  std::vector<BucketKind> out(n, BucketKind::Few);
  for (int rank = 0; rank < n; ++rank) {
    if (rank < k_many)
      out[order[rank]] = BucketKind::Many;
    else if (rank < k_many + k_medium)
      out[order[rank]] = BucketKind::Medium;
  }
  return out;
}

namespace {

// Inverse-CDF draw from p(c) proportional to (c+1)^-s.
struct ZipfSampler {
  std::vector<double> cdf;

  ZipfSampler(int classes, double s) {
    cdf.resize(classes);
    double total = 0;
    for (int c = 0; c < classes; ++c) {
      total += std::pow(static_cast<double>(c + 1), -s);
      cdf[c] = total;
    }
    for (double& v : cdf) v /= total;
  }

  int draw(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    auto it = std::lower_bound(cdf.begin(), cdf.end(), x);
    if (it == cdf.end()) --it;
    return static_cast<int>(it - cdf.begin());
  }
};

Box random_box(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 100.0);
  double xa = u(rng), xb = u(rng), ya = u(rng), yb = u(rng);
  return Box{std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb)};
}

std::vector<SceneSample> generate_split(int scenes, std::int64_t first_id, const GenConfig& cfg,
                                        const Matd& obj_proto, const Matd& rel_proto,
                                        const ZipfSampler& obj_zipf, const ZipfSampler& rel_zipf,
                                        Rng& rng) {
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  std::normal_distribution<double> scene_shift(0.0, cfg.scene_sigma);
  std::vector<SceneSample> out;
  out.reserve(scenes);
  for (int s = 0; s < scenes; ++s) {
    SceneSample scene;
    scene.id = first_id + s;
    scene.triplets.resize(cfg.triplets_per_scene);
    const int d = cfg.feature_dim;
    Eigen::RowVectorXd offset = Eigen::RowVectorXd::Zero(d);
    if (cfg.scene_sigma > 0)
      for (int j = 0; j < d; ++j) offset(j) = scene_shift(rng);
    for (TripletSample& tr : scene.triplets) {
      tr.s_label = obj_zipf.draw(rng);
      tr.o_label = obj_zipf.draw(rng);
      tr.r_label = rel_zipf.draw(rng);
      tr.s_feat.resize(d);
      tr.o_feat.resize(d);
      tr.r_feat.resize(d);
      // Rarer relation classes carry noisier evidence (class id equals the
      // frequency rank), so a prior has more to contribute for the tail.
      const double rank = cfg.rel_classes > 1
                              ? static_cast<double>(tr.r_label) / (cfg.rel_classes - 1)
                              : 0.0;
      const double r_noise_scale = 1.0 + cfg.tail_noise * rank;
      for (int j = 0; j < d; ++j) {
        tr.s_feat(j) = obj_proto(tr.s_label, j) + noise(rng);
        tr.o_feat(j) = obj_proto(tr.o_label, j) + noise(rng);
        tr.r_feat(j) = rel_proto(tr.r_label, j) +
                       cfg.mix_coeff * 0.5 * (obj_proto(tr.s_label, j) + obj_proto(tr.o_label, j)) +
                       offset(j) + r_noise_scale * noise(rng);
      }
      tr.s_box = random_box(rng);
      tr.o_box = random_box(rng);
      tr.r_box = union_box(tr.s_box, tr.o_box);
    }
    out.push_back(std::move(scene));
  }
  return out;
}

void validate(const GenConfig& cfg) {
  if (cfg.obj_classes < 1 || cfg.rel_classes < 1)
    throw ConfigError("generate_dataset: class counts must be positive");
  if (cfg.triplets_per_scene < 1) throw ConfigError("generate_dataset: triplets_per_scene < 1");
  if (cfg.train_scenes < 1) throw ConfigError("generate_dataset: train_scenes < 1");
  if (cfg.val_scenes < 0 || cfg.test_scenes < 0)
    throw ConfigError("generate_dataset: negative split size");
  if (cfg.feature_dim < 1) throw ConfigError("generate_dataset: feature_dim < 1");
  if (cfg.zipf_s < 0) throw ConfigError("generate_dataset: zipf_s must be >= 0");
  if (cfg.noise_sigma < 0) throw ConfigError("generate_dataset: noise_sigma must be >= 0");
  if (cfg.scene_sigma < 0) throw ConfigError("generate_dataset: scene_sigma must be >= 0");
  if (cfg.tail_noise < 0) throw ConfigError("generate_dataset: tail_noise must be >= 0");
}

}  // namespace

Dataset generate_dataset(const GenConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  Matd obj_proto = gaussian(cfg.obj_classes, cfg.feature_dim, rng);
  Matd rel_proto = gaussian(cfg.rel_classes, cfg.feature_dim, rng);
  ZipfSampler obj_zipf(cfg.obj_classes, cfg.zipf_s);
  ZipfSampler rel_zipf(cfg.rel_classes, cfg.zipf_s);

  Dataset ds;
  ds.train = generate_split(cfg.train_scenes, 0, cfg, obj_proto, rel_proto, obj_zipf, rel_zipf,
                            rng);
  ds.val = generate_split(cfg.val_scenes, cfg.train_scenes, cfg, obj_proto, rel_proto, obj_zipf,
                          rel_zipf, rng);
  ds.test = generate_split(cfg.test_scenes, cfg.train_scenes + cfg.val_scenes, cfg, obj_proto,
                           rel_proto, obj_zipf, rel_zipf, rng);

  DatasetManifest& m = ds.manifest;
  m.obj_classes = cfg.obj_classes;
  m.rel_classes = cfg.rel_classes;
  m.feature_dim = cfg.feature_dim;
  m.seed = cfg.seed;
  m.zipf_s = cfg.zipf_s;
  m.rel_train_counts.assign(cfg.rel_classes, 0);
  m.obj_train_counts.assign(cfg.obj_classes, 0);
  for (const SceneSample& s : ds.train) {
    for (const TripletSample& tr : s.triplets) {
      ++m.rel_train_counts[tr.r_label];
      ++m.obj_train_counts[tr.s_label];
      ++m.obj_train_counts[tr.o_label];
    }
  }
  m.rel_bucket_many = cfg.bucket_many > 0 ? cfg.bucket_many : default_bucket_many(cfg.rel_classes);
  m.rel_bucket_medium =
      cfg.bucket_medium > 0 ? cfg.bucket_medium : default_bucket_medium(cfg.rel_classes);
  m.obj_bucket_many = default_bucket_many(cfg.obj_classes);
  m.obj_bucket_medium = default_bucket_medium(cfg.obj_classes);
  auto count = [&](const std::vector<SceneSample>& split) {
    std::int64_t n = 0;
    for (const auto& s : split) n += static_cast<std::int64_t>(s.triplets.size());
    return n;
  };
  m.train_triplets = count(ds.train);
  m.val_triplets = count(ds.val);
  m.test_triplets = count(ds.test);
  m.train_scenes = cfg.train_scenes;
  m.val_scenes = cfg.val_scenes;
  m.test_scenes = cfg.test_scenes;
  return ds;
}

namespace {

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ParseError("box must be a 4-element array");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw ParseError("box coordinates out of order");
  return b;
}

json feat_to_json(const Eigen::RowVectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::RowVectorXd feat_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw ParseError("feature must be a non-empty array");
  Eigen::RowVectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace

void write_scenes(const std::filesystem::path& file, const std::vector<SceneSample>& scenes) {
  std::ofstream out(file);
  if (!out) throw ParseError("cannot open " + file.string() + " for writing");
  for (const SceneSample& s : scenes) {
    if (s.triplets.empty())
      throw EmptySceneError("write_scenes: scene " + std::to_string(s.id) + " has no triplets");
    json rec;
    rec["scene_id"] = s.id;
    json trs = json::array();
    for (const TripletSample& tr : s.triplets) {
      json t;
      t["labels"] = json::array({tr.s_label, tr.r_label, tr.o_label});
      t["s"] = feat_to_json(tr.s_feat);
      t["r"] = feat_to_json(tr.r_feat);
      t["o"] = feat_to_json(tr.o_feat);
      t["s_box"] = box_to_json(tr.s_box);
      t["o_box"] = box_to_json(tr.o_box);
      t["r_box"] = box_to_json(tr.r_box);
      trs.push_back(std::move(t));
    }
    rec["triplets"] = std::move(trs);
    out << rec.dump() << "\n";
  }
}

std::vector<SceneSample> read_scenes(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  std::vector<SceneSample> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      SceneSample s;
      s.id = rec.at("scene_id").get<std::int64_t>();
      for (const json& t : rec.at("triplets")) {
        TripletSample tr;
        const json& lab = t.at("labels");
        if (!lab.is_array() || lab.size() != 3) throw ParseError("labels must have 3 entries");
        tr.s_label = lab[0].get<int>();
        tr.r_label = lab[1].get<int>();
        tr.o_label = lab[2].get<int>();
        tr.s_feat = feat_from_json(t.at("s"));
        tr.r_feat = feat_from_json(t.at("r"));
        tr.o_feat = feat_from_json(t.at("o"));
        tr.s_box = box_from_json(t.at("s_box"));
        tr.o_box = box_from_json(t.at("o_box"));
        tr.r_box = box_from_json(t.at("r_box"));
        s.triplets.push_back(std::move(tr));
      }
      if (s.triplets.empty()) throw ParseError("scene has no triplets");
      scenes.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

void write_manifest(const std::filesystem::path& file, const DatasetManifest& m) {
  json j;
  j["format"] = "reltr-manifest";
  j["version"] = 1;
  j["obj_classes"] = m.obj_classes;
  j["rel_classes"] = m.rel_classes;
  j["feature_dim"] = m.feature_dim;
  j["seed"] = m.seed;
  j["zipf_s"] = m.zipf_s;
  j["rel_train_counts"] = m.rel_train_counts;
  j["obj_train_counts"] = m.obj_train_counts;
  j["rel_bucket_many"] = m.rel_bucket_many;
  j["rel_bucket_medium"] = m.rel_bucket_medium;
  j["obj_bucket_many"] = m.obj_bucket_many;
  j["obj_bucket_medium"] = m.obj_bucket_medium;
  j["train_triplets"] = m.train_triplets;
  j["val_triplets"] = m.val_triplets;
  j["test_triplets"] = m.test_triplets;
  j["train_scenes"] = m.train_scenes;
  j["val_scenes"] = m.val_scenes;
  j["test_scenes"] = m.test_scenes;
  std::ofstream out(file);
  if (!out) throw ParseError("cannot open " + file.string() + " for writing");
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  try {
    DatasetManifest m;
    m.obj_classes = j.at("obj_classes").get<int>();
    m.rel_classes = j.at("rel_classes").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.zipf_s = j.at("zipf_s").get<double>();
    m.rel_train_counts = j.at("rel_train_counts").get<std::vector<std::int64_t>>();
    m.obj_train_counts = j.at("obj_train_counts").get<std::vector<std::int64_t>>();
    m.rel_bucket_many = j.at("rel_bucket_many").get<int>();
    m.rel_bucket_medium = j.at("rel_bucket_medium").get<int>();
    m.obj_bucket_many = j.at("obj_bucket_many").get<int>();
    m.obj_bucket_medium = j.at("obj_bucket_medium").get<int>();
    m.train_triplets = j.at("train_triplets").get<std::int64_t>();
    m.val_triplets = j.at("val_triplets").get<std::int64_t>();
    m.test_triplets = j.at("test_triplets").get<std::int64_t>();
    m.train_scenes = j.at("train_scenes").get<std::int64_t>();
    m.val_scenes = j.at("val_scenes").get<std::int64_t>();
    m.test_scenes = j.at("test_scenes").get<std::int64_t>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_scenes(dir / "train.jsonl", ds.train);
  write_scenes(dir / "val.jsonl", ds.val);
  write_scenes(dir / "test.jsonl", ds.test);
  write_manifest(dir / "manifest.json", ds.manifest);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.train = read_scenes(dir / "train.jsonl");
  ds.val = read_scenes(dir / "val.jsonl");
  ds.test = read_scenes(dir / "test.jsonl");
  ds.manifest = read_manifest(dir / "manifest.json");
  return ds;
}

}  // namespace reltr
