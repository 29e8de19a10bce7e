#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "reltr/config.hpp"

namespace reltr {

namespace detail {

inline std::string exact_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double_exact(const std::string& s, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline constexpr const char* kCheckpointMagic = "reltr-checkpoint 1";

// Text checkpoint: the effective run configuration followed by every
// parameter tensor (shortest round-trip decimal, so load(save(m)) == m).
template <class Scalar>
void save_checkpoint(const std::filesystem::path& file, Model<Scalar>& model,
                     const RunConfig& cfg) {
  std::ofstream out(file);
  if (!out) throw ParseError("cannot open " + file.string() + " for writing");
  out << kCheckpointMagic << "\n";
  out << "[config]\n" << render_config(cfg);
  out << "[tensors]\n";
  for (const auto& p : model.parameters()) {
    out << "tensor " << p.name << " " << p.mat->rows() << " " << p.mat->cols() << "\n";
    for (Eigen::Index i = 0; i < p.mat->rows(); ++i) {
      for (Eigen::Index j = 0; j < p.mat->cols(); ++j) {
        if (j) out << " ";
        out << detail::exact_double(static_cast<double>((*p.mat)(i, j)));
      }
      out << "\n";
    }
  }
  out << "end\n";
}

template <class Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& file, RunConfig* out_cfg = nullptr) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    return true;
  };
  auto where = [&]() { return file.string() + ":" + std::to_string(lineno); };

  if (!next_line() || line != kCheckpointMagic)
    throw ParseError(file.string() + ":1: not a checkpoint file");
  if (!next_line() || line != "[config]") throw ParseError(where() + ": expected [config]");

  std::string config_text;
  while (next_line() && line != "[tensors]") config_text += line + "\n";
  if (line != "[tensors]") throw ParseError(where() + ": missing [tensors] section");

  RunConfig cfg = parse_config_text(config_text, file.string() + "[config]");
  validate(cfg);
  Model<Scalar> model = Model<Scalar>::init(cfg.model_sizes(), cfg.ablation(), cfg.seed);

  std::map<std::string, Mat<Scalar>*> by_name;
  for (const auto& p : model.parameters()) by_name[p.name] = p.mat;
  std::map<std::string, bool> seen;

  while (next_line() && line != "end") {
    std::istringstream head(line);
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(head >> tag >> name >> rows >> cols) || tag != "tensor")
      throw ParseError(where() + ": expected 'tensor <name> <rows> <cols>'");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(where() + ": unknown tensor '" + name + "'");
    Mat<Scalar>& m = *it->second;
    if (m.rows() != rows || m.cols() != cols)
      throw ParseError(where() + ": tensor '" + name + "' has shape " + shape_str(rows, cols) +
                       ", expected " + shape_str(m.rows(), m.cols()));
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!next_line()) throw ParseError(where() + ": truncated tensor '" + name + "'");
      std::istringstream row(line);
      std::string cell;
      for (Eigen::Index j = 0; j < cols; ++j) {
        if (!(row >> cell))
          throw ParseError(where() + ": tensor '" + name + "' row " + std::to_string(i) +
                           " has fewer than " + std::to_string(cols) + " values");
        m(i, j) = static_cast<Scalar>(detail::parse_double_exact(cell, where()));
      }
      if (row >> cell)
        throw ParseError(where() + ": tensor '" + name + "' row " + std::to_string(i) +
                         " has extra values");
    }
    seen[name] = true;
  }
  if (line != "end") throw ParseError(where() + ": missing end marker");
  for (const auto& [name, mat] : by_name)
    if (!seen.count(name)) throw ParseError(file.string() + ": missing tensor '" + name + "'");

  if (out_cfg) *out_cfg = cfg;
  return model;
}

}  // namespace reltr
