#include "reltr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

namespace reltr {

namespace {

bool is_nan(double v) { return std::isnan(v); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

BucketedAccuracy evaluate_per_class(const std::vector<int>& preds, const std::vector<int>& gts,
                                    const std::vector<BucketKind>& buckets) {
  if (preds.size() != gts.size())
    throw DimensionError("evaluate_per_class: " + std::to_string(preds.size()) +
                         " predictions for " + std::to_string(gts.size()) + " labels");
  if (gts.empty()) throw ConfigError("evaluate_per_class: empty evaluation set");
  const int classes = static_cast<int>(buckets.size());
  std::vector<std::int64_t> correct(classes, 0), total(classes, 0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (gts[i] < 0 || gts[i] >= classes)
      throw std::out_of_range("evaluate_per_class: label " + std::to_string(gts[i]) +
                              " outside " + std::to_string(classes) + " classes");
    ++total[gts[i]];
    if (preds[i] == gts[i]) ++correct[gts[i]];
  }
  BucketedAccuracy out;
  out.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> many, medium, few, all;
  for (int c = 0; c < classes; ++c) {
    if (total[c] == 0) continue;
    const double acc = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    out.per_class[c] = acc;
    all.push_back(acc);
    switch (buckets[c]) {
      case BucketKind::Many: many.push_back(acc); break;
      case BucketKind::Medium: medium.push_back(acc); break;
      case BucketKind::Few: few.push_back(acc); break;
    }
  }
  out.many = mean_of(many);
  out.medium = mean_of(medium);
  out.few = mean_of(few);
  out.all = mean_of(all);
  return out;
}

double evaluate_per_example(const std::vector<int>& preds, const std::vector<int>& gts) {
  if (preds.size() != gts.size())
    throw DimensionError("evaluate_per_example: size mismatch");
  if (gts.empty()) throw ConfigError("evaluate_per_example: empty evaluation set");
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (preds[i] == gts[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(gts.size());
}

namespace {

// Buckets arbitrary keys by descending frequency with ties broken toward the
// smaller key, mirroring bucket_classes but for pair classes.
std::map<std::pair<int, int>, BucketKind> bucket_pairs(
    const std::map<std::pair<int, int>, double>& freq, double many_frac, double medium_frac) {
  const int n = static_cast<int>(freq.size());
  std::vector<std::pair<std::pair<int, int>, double>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  int k_many = std::max(1, static_cast<int>(std::lround(many_frac * n)));
  int k_medium = std::max(1, static_cast<int>(std::lround(medium_frac * n)));
  k_many = std::min(k_many, n);
  k_medium = std::min(k_medium, n - k_many);
  std::map<std::pair<int, int>, BucketKind> out;
  for (int rank = 0; rank < n; ++rank) {
    BucketKind b = BucketKind::Few;
    if (rank < k_many)
      b = BucketKind::Many;
    else if (rank < k_many + k_medium)
      b = BucketKind::Medium;
    out[items[rank].first] = b;
  }
  return out;
}

CompositionalAccuracy pair_accuracy(const std::vector<TripletLabels>& preds,
                                    const std::vector<TripletLabels>& gts, int ia, int ib,
                                    const std::vector<TripletLabels>& train_labels,
                                    const std::vector<std::int64_t>& counts_a,
                                    const std::vector<std::int64_t>& counts_b, double many_frac,
                                    double medium_frac) {
  std::map<std::pair<int, int>, std::int64_t> train_pairs;
  for (const TripletLabels& t : train_labels) ++train_pairs[{t[ia], t[ib]}];

  std::map<std::pair<int, int>, std::pair<std::int64_t, std::int64_t>> stats;  // correct, total
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const std::pair<int, int> key{gts[i][ia], gts[i][ib]};
    auto& s = stats[key];
    ++s.second;
    if (preds[i][ia] == gts[i][ia] && preds[i][ib] == gts[i][ib]) ++s.first;
  }

  double train_total = 0;
  for (std::int64_t c : counts_b) train_total += static_cast<double>(c);
  train_total = std::max(train_total, 1.0);

  std::map<std::pair<int, int>, double> freq;
  for (const auto& [key, s] : stats) {
    auto it = train_pairs.find(key);
    if (it != train_pairs.end() && it->second > 0) {
      freq[key] = static_cast<double>(it->second);
    } else {
      // Unseen pair: expected count under independence, f_a * f_b / total.
      const double fa = static_cast<double>(counts_a[key.first]);
      const double fb = static_cast<double>(counts_b[key.second]);
      freq[key] = fa * fb / train_total;
    }
  }
  const auto buckets = bucket_pairs(freq, many_frac, medium_frac);

  std::vector<double> many, medium, few;
  for (const auto& [key, s] : stats) {
    const double acc = static_cast<double>(s.first) / static_cast<double>(s.second);
    switch (buckets.at(key)) {
      case BucketKind::Many: many.push_back(acc); break;
      case BucketKind::Medium: medium.push_back(acc); break;
      case BucketKind::Few: few.push_back(acc); break;
    }
  }
  return CompositionalAccuracy{mean_of(many), mean_of(medium), mean_of(few)};
}

}  // namespace

CompositionalReport evaluate_compositional(const std::vector<TripletLabels>& preds,
                                           const std::vector<TripletLabels>& gts,
                                           const std::vector<TripletLabels>& train_labels,
                                           const std::vector<std::int64_t>& obj_counts,
                                           const std::vector<std::int64_t>& rel_counts,
                                           double many_frac, double medium_frac) {
  if (preds.size() != gts.size())
    throw DimensionError("evaluate_compositional: size mismatch");
  if (gts.empty()) throw ConfigError("evaluate_compositional: empty evaluation set");
  CompositionalReport rep;
  rep.so = pair_accuracy(preds, gts, 0, 2, train_labels, obj_counts, obj_counts, many_frac,
                         medium_frac);
  rep.sr = pair_accuracy(preds, gts, 0, 1, train_labels, obj_counts, rel_counts, many_frac,
                         medium_frac);
  rep.or_ = pair_accuracy(preds, gts, 2, 1, train_labels, obj_counts, rel_counts, many_frac,
                          medium_frac);
  return rep;
}

namespace {

// Candidate order: score descending, then pair index, then relation id.
struct Candidate {
  double score;
  int pair;
  int rel;
};

std::vector<Candidate> ranked_candidates(const SceneRanking& scene) {
  std::vector<Candidate> c;
  for (std::size_t p = 0; p < scene.scores.size(); ++p)
    for (Eigen::Index r = 0; r < scene.scores[p].size(); ++r)
      c.push_back({scene.scores[p](r), static_cast<int>(p), static_cast<int>(r)});
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pair != b.pair) return a.pair < b.pair;
    return a.rel < b.rel;
  });
  return c;
}

void check_ranking(const std::vector<SceneRanking>& scenes, int k) {
  if (k < 1) throw ConfigError("recall: K must be >= 1, got " + std::to_string(k));
  for (const SceneRanking& s : scenes)
    if (s.gt_rel.size() != s.scores.size())
      throw DimensionError("recall: ground truth / score row mismatch");
}

}  // namespace

double recall_at_k(const std::vector<SceneRanking>& scenes, int k) {
  check_ranking(scenes, k);
  if (scenes.empty()) throw ConfigError("recall_at_k: no scenes");
  double total = 0;
  for (const SceneRanking& scene : scenes) {
    if (scene.gt_rel.empty()) throw EmptySceneError("recall_at_k: scene without pairs");
    const auto ranked = ranked_candidates(scene);
    const std::size_t top = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < top; ++i)
      if (scene.gt_rel[ranked[i].pair] == ranked[i].rel) ++hits;
    total += static_cast<double>(hits) / static_cast<double>(scene.gt_rel.size());
  }
  return total / static_cast<double>(scenes.size());
}

double mean_recall_at_k(const std::vector<SceneRanking>& scenes, int k, int rel_classes) {
  check_ranking(scenes, k);
  if (scenes.empty()) throw ConfigError("mean_recall_at_k: no scenes");
  std::vector<std::int64_t> hits(rel_classes, 0), total(rel_classes, 0);
  for (const SceneRanking& scene : scenes) {
    const auto ranked = ranked_candidates(scene);
    const std::size_t top = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    std::vector<bool> hit(scene.gt_rel.size(), false);
    for (std::size_t i = 0; i < top; ++i)
      if (scene.gt_rel[ranked[i].pair] == ranked[i].rel) hit[ranked[i].pair] = true;
    for (std::size_t p = 0; p < scene.gt_rel.size(); ++p) {
      const int c = scene.gt_rel[p];
      if (c < 0 || c >= rel_classes)
        throw std::out_of_range("mean_recall_at_k: relation label out of range");
      ++total[c];
      if (hit[p]) ++hits[c];
    }
  }
  std::vector<double> per_class;
  for (int c = 0; c < rel_classes; ++c)
    if (total[c] > 0)
      per_class.push_back(static_cast<double>(hits[c]) / static_cast<double>(total[c]));
  if (per_class.empty()) throw ConfigError("mean_recall_at_k: no ground-truth relations");
  return mean_of(per_class);
}

namespace {

std::vector<double> tie_averaged_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman: size mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = tie_averaged_ranks(a);
  const auto rb = tie_averaged_ranks(b);
  const double ma = mean_of(ra), mb = mean_of(rb);
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

MemoryAttentionReport memory_attention_report(const std::vector<SceneEval>& scenes,
                                              const std::vector<std::int64_t>& rel_train_counts) {
  const int classes = static_cast<int>(rel_train_counts.size());
  std::vector<double> sum(classes, 0);
  std::vector<std::int64_t> n(classes, 0);
  bool any = false;
  for (const SceneEval& s : scenes) {
    for (const TripletEval& t : s.triplets) {
      if (is_nan(t.mem_score)) continue;
      any = true;
      if (t.r_gt < 0 || t.r_gt >= classes)
        throw std::out_of_range("memory_attention_report: relation label out of range");
      sum[t.r_gt] += t.mem_score;
      ++n[t.r_gt];
    }
  }
  if (!any)
    throw ConfigError("memory_attention_report: no memory attention captured "
                      "(memory-ablated model?)");
  MemoryAttentionReport rep;
  rep.class_mean.assign(classes, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> rarity, score;
  for (int c = 0; c < classes; ++c) {
    if (n[c] == 0) continue;
    rep.class_mean[c] = sum[c] / static_cast<double>(n[c]);
    rarity.push_back(-static_cast<double>(rel_train_counts[c]));
    score.push_back(rep.class_mean[c]);
  }
  rep.rarity_correlation = spearman(rarity, score);
  return rep;
}

MetricsReport compute_metrics(const std::vector<SceneEval>& evals,
                              const std::vector<SceneSample>& train_split,
                              const DatasetManifest& manifest,
                              const std::vector<int>& recall_ks) {
  MetricsReport rep;
  std::vector<int> s_pred, r_pred, o_pred, s_gt, r_gt, o_gt;
  std::vector<TripletLabels> pred_labels, gt_labels;
  std::vector<SceneRanking> rankings;
  bool any_mem = false;
  for (const SceneEval& s : evals) {
    SceneRanking rank;
    for (const TripletEval& t : s.triplets) {
      s_pred.push_back(t.s_pred);
      r_pred.push_back(t.r_pred);
      o_pred.push_back(t.o_pred);
      s_gt.push_back(t.s_gt);
      r_gt.push_back(t.r_gt);
      o_gt.push_back(t.o_gt);
      pred_labels.push_back({t.s_pred, t.r_pred, t.o_pred});
      gt_labels.push_back({t.s_gt, t.r_gt, t.o_gt});
      rank.gt_rel.push_back(t.r_gt);
      rank.scores.push_back(t.rel_scores);
      if (!is_nan(t.mem_score)) any_mem = true;
    }
    rankings.push_back(std::move(rank));
  }

  const auto rel_buckets =
      bucket_classes(manifest.rel_train_counts, manifest.rel_bucket_many,
                     manifest.rel_bucket_medium);
  const auto obj_buckets =
      bucket_classes(manifest.obj_train_counts, manifest.obj_bucket_many,
                     manifest.obj_bucket_medium);

  rep.rel_per_class = evaluate_per_class(r_pred, r_gt, rel_buckets);
  rep.subj_per_class = evaluate_per_class(s_pred, s_gt, obj_buckets);
  rep.obj_per_class = evaluate_per_class(o_pred, o_gt, obj_buckets);
  rep.rel_per_example = evaluate_per_example(r_pred, r_gt);
  rep.subj_per_example = evaluate_per_example(s_pred, s_gt);
  rep.obj_per_example = evaluate_per_example(o_pred, o_gt);

  std::vector<TripletLabels> train_labels;
  for (const SceneSample& s : train_split)
    for (const TripletSample& t : s.triplets)
      train_labels.push_back({t.s_label, t.r_label, t.o_label});
  rep.compositional = evaluate_compositional(pred_labels, gt_labels, train_labels,
                                             manifest.obj_train_counts,
                                             manifest.rel_train_counts);

  for (int k : recall_ks) {
    rep.recall.emplace_back(k, recall_at_k(rankings, k));
    rep.mean_recall.emplace_back(k, mean_recall_at_k(rankings, k, manifest.rel_classes));
  }

  rep.has_memory = any_mem;
  if (any_mem) rep.memory = memory_attention_report(evals, manifest.rel_train_counts);
  return rep;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "   -  ";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%6.4f", v);
  return buf;
}

}  // namespace

std::string render_metrics_text(const MetricsReport& r, const DatasetManifest& manifest) {
  std::string out;
  char line[256];
  out += "per-class accuracy            many    medium  few     all\n";
  std::snprintf(line, sizeof(line), "  relation (%d classes)      %s  %s  %s  %s\n",
                manifest.rel_classes, fmt(r.rel_per_class.many).c_str(),
                fmt(r.rel_per_class.medium).c_str(), fmt(r.rel_per_class.few).c_str(),
                fmt(r.rel_per_class.all).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "  subject (%d classes)       %s  %s  %s  %s\n",
                manifest.obj_classes, fmt(r.subj_per_class.many).c_str(),
                fmt(r.subj_per_class.medium).c_str(), fmt(r.subj_per_class.few).c_str(),
                fmt(r.subj_per_class.all).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "  object (%d classes)        %s  %s  %s  %s\n",
                manifest.obj_classes, fmt(r.obj_per_class.many).c_str(),
                fmt(r.obj_per_class.medium).c_str(), fmt(r.obj_per_class.few).c_str(),
                fmt(r.obj_per_class.all).c_str());
  out += line;
  std::snprintf(line, sizeof(line),
                "per-example accuracy          subject %s  relation %s  object %s\n",
                fmt(r.subj_per_example).c_str(), fmt(r.rel_per_example).c_str(),
                fmt(r.obj_per_example).c_str());
  out += line;
  out += "compositional accuracy        many    medium  few\n";
  std::snprintf(line, sizeof(line), "  SO                          %s  %s  %s\n",
                fmt(r.compositional.so.many).c_str(), fmt(r.compositional.so.medium).c_str(),
                fmt(r.compositional.so.few).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "  SR                          %s  %s  %s\n",
                fmt(r.compositional.sr.many).c_str(), fmt(r.compositional.sr.medium).c_str(),
                fmt(r.compositional.sr.few).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "  OR                          %s  %s  %s\n",
                fmt(r.compositional.or_.many).c_str(), fmt(r.compositional.or_.medium).c_str(),
                fmt(r.compositional.or_.few).c_str());
  out += line;
  out += "predicate classification\n";
  for (std::size_t i = 0; i < r.recall.size(); ++i) {
    std::snprintf(line, sizeof(line), "  R@%-3d %s    mR@%-3d %s\n", r.recall[i].first,
                  fmt(r.recall[i].second).c_str(), r.mean_recall[i].first,
                  fmt(r.mean_recall[i].second).c_str());
    out += line;
  }
  if (r.has_memory) {
    std::snprintf(line, sizeof(line),
                  "memory attention              rarity spearman %s\n",
                  fmt(r.memory.rarity_correlation).c_str());
    out += line;
  }
  return out;
}

void write_metrics_json(const std::filesystem::path& file, const MetricsReport& r) {
  using nlohmann::json;
  auto opt = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  auto bucketed = [&](const BucketedAccuracy& b) {
    json j;
    j["many"] = opt(b.many);
    j["medium"] = opt(b.medium);
    j["few"] = opt(b.few);
    j["all"] = opt(b.all);
    json pc = json::array();
    for (double v : b.per_class) pc.push_back(opt(v));
    j["per_class"] = std::move(pc);
    return j;
  };
  auto comp = [&](const CompositionalAccuracy& c) {
    json j;
    j["many"] = opt(c.many);
    j["medium"] = opt(c.medium);
    j["few"] = opt(c.few);
    return j;
  };
  json j;
  j["per_class"] = {{"relation", bucketed(r.rel_per_class)},
                    {"subject", bucketed(r.subj_per_class)},
                    {"object", bucketed(r.obj_per_class)}};
  j["per_example"] = {{"relation", r.rel_per_example},
                      {"subject", r.subj_per_example},
                      {"object", r.obj_per_example}};
  j["compositional"] = {{"SO", comp(r.compositional.so)},
                        {"SR", comp(r.compositional.sr)},
                        {"OR", comp(r.compositional.or_)}};
  json recall = json::object();
  for (auto [k, v] : r.recall) recall["R@" + std::to_string(k)] = v;
  for (auto [k, v] : r.mean_recall) recall["mR@" + std::to_string(k)] = v;
  j["predicate_classification"] = std::move(recall);
  if (r.has_memory) {
    json mem;
    mem["rarity_spearman"] = r.memory.rarity_correlation;
    json pc = json::array();
    for (double v : r.memory.class_mean) pc.push_back(opt(v));
    mem["class_mean"] = std::move(pc);
    j["memory_attention"] = std::move(mem);
  }
  std::ofstream out(file);
  if (!out) throw ParseError("cannot open " + file.string() + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace reltr
