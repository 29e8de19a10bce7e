#include "reltr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace reltr {

ModelSizes RunConfig::model_sizes() const {
  ModelSizes s;
  s.feature_dim = feature_dim;
  s.hidden = h;
  s.heads = heads;
  s.global_layers = global_layers;
  s.rel_layers = rel_layers;
  s.mem_slots = mem_slots;
  s.embed_dim = embed_dim;
  s.obj_classes = obj_classes;
  s.rel_classes = rel_classes;
  s.tau = tau;
  return s;
}

AblationFlags RunConfig::ablation() const { return AblationFlags{ablate_global, ablate_memory}; }

GenConfig RunConfig::gen_config() const {
  GenConfig g;
  g.obj_classes = obj_classes;
  g.rel_classes = rel_classes;
  g.zipf_s = zipf_s;
  g.train_scenes = train_scenes;
  g.val_scenes = val_scenes;
  g.test_scenes = test_scenes;
  g.triplets_per_scene = triplets_per_scene;
  g.feature_dim = feature_dim;
  g.noise_sigma = noise_sigma;
  g.mix_coeff = mix_coeff;
  g.scene_sigma = scene_sigma;
  g.tail_noise = tail_noise;
  g.bucket_many = bucket_many;
  g.bucket_medium = bucket_medium;
  g.seed = seed;
  return g;
}

TrainSettings RunConfig::train_settings() const {
  TrainSettings t;
  t.loss = loss_mode_from_string(loss);
  t.gamma = gamma;
  t.optimizer = optimizer_from_string(optimizer);
  t.lr = lr;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.seed = seed;
  return t;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& value, const std::string& key, const std::string& where) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ConfigError(where + ": invalid value '" + value + "' for key '" + key + "'");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string& value, const std::string& key,
                     const std::string& where)>
      set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field numeric_field(T RunConfig::* member) {
  return Field{[member](RunConfig& c, const std::string& v, const std::string& key,
                        const std::string& where) { c.*member = parse_number<T>(v, key, where); },
               [member](const RunConfig& c) {
                 if constexpr (std::is_floating_point_v<T>)
                   return format_double(c.*member);
                 else
                   return std::to_string(c.*member);
               }};
}

Field bool_field(bool RunConfig::* member) {
  return Field{[member](RunConfig& c, const std::string& v, const std::string& key,
                        const std::string& where) {
                 if (v == "true" || v == "1")
                   c.*member = true;
                 else if (v == "false" || v == "0")
                   c.*member = false;
                 else
                   throw ConfigError(where + ": invalid value '" + v + "' for boolean key '" +
                                     key + "'");
               },
               [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field text_field(std::string RunConfig::* member) {
  return Field{[member](RunConfig& c, const std::string& v, const std::string&,
                        const std::string&) { c.*member = v; },
               [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"h", numeric_field(&RunConfig::h)},
      {"heads", numeric_field(&RunConfig::heads)},
      {"global_layers", numeric_field(&RunConfig::global_layers)},
      {"rel_layers", numeric_field(&RunConfig::rel_layers)},
      {"mem_slots", numeric_field(&RunConfig::mem_slots)},
      {"feature_dim", numeric_field(&RunConfig::feature_dim)},
      {"embed_dim", numeric_field(&RunConfig::embed_dim)},
      {"loss", text_field(&RunConfig::loss)},
      {"tau", numeric_field(&RunConfig::tau)},
      {"gamma", numeric_field(&RunConfig::gamma)},
      {"optimizer", text_field(&RunConfig::optimizer)},
      {"lr", numeric_field(&RunConfig::lr)},
      {"batch_size", numeric_field(&RunConfig::batch_size)},
      {"epochs", numeric_field(&RunConfig::epochs)},
      {"seed", numeric_field(&RunConfig::seed)},
      {"ablate_global", bool_field(&RunConfig::ablate_global)},
      {"ablate_memory", bool_field(&RunConfig::ablate_memory)},
      {"obj_classes", numeric_field(&RunConfig::obj_classes)},
      {"rel_classes", numeric_field(&RunConfig::rel_classes)},
      {"zipf_s", numeric_field(&RunConfig::zipf_s)},
      {"train_scenes", numeric_field(&RunConfig::train_scenes)},
      {"val_scenes", numeric_field(&RunConfig::val_scenes)},
      {"test_scenes", numeric_field(&RunConfig::test_scenes)},
      {"triplets_per_scene", numeric_field(&RunConfig::triplets_per_scene)},
      {"noise_sigma", numeric_field(&RunConfig::noise_sigma)},
      {"mix_coeff", numeric_field(&RunConfig::mix_coeff)},
      {"scene_sigma", numeric_field(&RunConfig::scene_sigma)},
      {"tail_noise", numeric_field(&RunConfig::tail_noise)},
      {"bucket_many", numeric_field(&RunConfig::bucket_many)},
      {"bucket_medium", numeric_field(&RunConfig::bucket_medium)},
  };
  return table;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source_name) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source_name + ":" + std::to_string(lineno);
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected 'key = value', got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    apply_config_entry(cfg, key, value, where);
  }
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value,
                        const std::string& where) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, value, key, where);
      return;
    }
  }
  throw ConfigError(where + ": unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, const std::string& source_name) {
  RunConfig cfg;
  apply_config_text(cfg, text, source_name);
  return cfg;
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_config_text(cfg, buffer.str(), file.string());
}

void validate(const RunConfig& cfg) {
  validate(cfg.model_sizes());
  loss_mode_from_string(cfg.loss);
  optimizer_from_string(cfg.optimizer);
  if (!(cfg.lr > 0)) throw ConfigError("lr must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.gamma < 0) throw ConfigError("gamma must be >= 0");
  if (cfg.bucket_many < 0 || cfg.bucket_medium < 0)
    throw ConfigError("bucket cutoffs must be >= 0");
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : fields()) {
    out += name;
    out += " = ";
    out += field.get(cfg);
    out += "\n";
  }
  return out;
}

}  // namespace reltr
