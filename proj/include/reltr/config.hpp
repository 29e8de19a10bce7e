#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "reltr/classifier.hpp"
#include "reltr/dataset.hpp"
#include "reltr/model.hpp"
#include "reltr/train.hpp"

namespace reltr {

// Flat run configuration: every generator and training knob as key = value
// text. Files and flags merge onto these defaults; unknown keys are errors.
struct RunConfig {
  // model sizes
  int h = 32;
  int heads = 4;
  int global_layers = 2;
  int rel_layers = 2;
  int mem_slots = 8;
  int feature_dim = 16;
  int embed_dim = 300;
  // loss
  std::string loss = "wce";
  double tau = 0.1;
  double gamma = 2.0;
  // optimizer
  std::string optimizer = "adam";
  double lr = 1e-3;
  int batch_size = 8;
  int epochs = 30;
  // run
  std::uint64_t seed = 0;
  bool ablate_global = false;
  bool ablate_memory = false;
  // data generation
  int obj_classes = 40;
  int rel_classes = 30;
  double zipf_s = 1.0;
  int train_scenes = 400;
  int val_scenes = 50;
  int test_scenes = 100;
  int triplets_per_scene = 5;
  double noise_sigma = 0.35;
  double mix_coeff = 0.6;
  double scene_sigma = 0.0;
  double tail_noise = 0.0;
  int bucket_many = 0;    // 0 = derive from the class count
  int bucket_medium = 0;

  ModelSizes model_sizes() const;
  AblationFlags ablation() const;
  GenConfig gen_config() const;
  TrainSettings train_settings() const;
};

// Applies one key = value assignment; `where` names the source (file:line or
// flag) for error messages.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value,
                        const std::string& where);

// Parses a key = value file onto cfg. Blank lines and '#' comments allowed;
// any malformed line or unknown key raises ConfigError naming the line.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& file);

void validate(const RunConfig& cfg);

// Canonical text rendering; parsing it back reproduces cfg exactly.
std::string render_config(const RunConfig& cfg);

RunConfig parse_config_text(const std::string& text, const std::string& source_name);

}  // namespace reltr
