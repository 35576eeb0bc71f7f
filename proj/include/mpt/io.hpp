#pragma once

// File formats: `tree,category,count` CSV datasets, JSON result records, and
// the transformation manifest (docs/manifest.md).

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mpt/estimation.hpp"
#include "mpt/model.hpp"
#include "mpt/reparam.hpp"
#include "mpt/selection.hpp"

namespace mpt {

inline Dataset parse_dataset_csv(const std::string& text) {
  Dataset data;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!saw_header) {
      if (fields.size() != 3 || fields[0] != "tree" || fields[1] != "category" ||
          fields[2] != "count")
        throw std::runtime_error("line 1: expected header 'tree,category,count'");
      saw_header = true;
      continue;
    }
    if (fields.size() != 3)
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected 3 fields");
    std::int64_t count = 0;
    try {
      std::size_t pos = 0;
      count = std::stoll(fields[2], &pos);
      if (pos != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": bad count '" + fields[2] +
                               "'");
    }
    if (count < 0)
      throw std::runtime_error("line " + std::to_string(line_no) + ": negative count");
    auto& tree = data[fields[0]];
    if (tree.count(fields[1]))
      throw std::runtime_error("line " + std::to_string(line_no) + ": duplicate (tree, category)");
    tree[fields[1]] = count;
  }
  if (!saw_header) throw std::runtime_error("empty dataset file");
  return data;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset_csv(buf.str());
}

// Rows ordered by the model's declared trees and categories when given.
inline std::string dataset_to_csv(const Dataset& data, const MptModel* model = nullptr) {
  std::ostringstream out;
  out << "tree,category,count\n";
  if (model != nullptr) {
    for (const auto& tree : model->trees)
      for (const auto& cat : model->categories.at(tree))
        out << tree << "," << cat << "," << data.at(tree).at(cat) << "\n";
  } else {
    for (const auto& [tree, counts] : data)
      for (const auto& [cat, n] : counts) out << tree << "," << cat << "," << n << "\n";
  }
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------
// JSON records.

inline nlohmann::json to_json(const ParamAssignment& a) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, value] : a) j[name] = value;
  return j;
}

inline nlohmann::json to_json(const FitResult& fit) {
  nlohmann::json j;
  j["estimates"] = to_json(fit.estimates);
  j["free_names"] = fit.free_names;
  j["free_values"] = fit.free_values;
  j["log_likelihood"] = fit.log_likelihood;
  j["g_squared"] = fit.g_squared;
  j["df"] = fit.df;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["n_starts"] = fit.n_starts;
  return j;
}

inline nlohmann::json to_json(const BackTransformed& bt) {
  nlohmann::json j;
  j["estimates"] = to_json(bt.original_estimates);
  j["parameter_order"] = bt.parameter_order;
  j["se_available"] = bt.se_available;
  if (!bt.se_note.empty()) j["se_note"] = bt.se_note;
  if (bt.se_available) {
    nlohmann::json se = nlohmann::json::object();
    for (const auto& [name, v] : bt.std_errors) se[name] = v;
    j["std_errors"] = se;
    std::vector<std::vector<double>> cov;
    for (int i = 0; i < bt.covariance.rows(); ++i) {
      std::vector<double> row;
      for (int k = 0; k < bt.covariance.cols(); ++k) row.push_back(bt.covariance(i, k));
      cov.push_back(std::move(row));
    }
    j["covariance"] = cov;
  }
  return j;
}

inline nlohmann::json to_json(const BootstrapResult& boot) {
  nlohmann::json j;
  j["B"] = boot.B;
  j["seed"] = boot.seed;
  j["dropped"] = boot.dropped;
  j["observed_g_squared"] = boot.observed_g2;
  j["p_value"] = boot.p_value;
  j["replicates"] = boot.replicates;
  return j;
}

inline nlohmann::json to_json(const FiaResult& fia) {
  nlohmann::json j;
  j["dimension_term"] = fia.dimension_term;
  j["geometry_term"] = fia.geometry_term;
  j["mc_error"] = fia.mc_error;
  j["fia"] = fia.fia;
  j["samples"] = fia.samples;
  j["seed"] = fia.seed;
  j["d"] = fia.d;
  j["rejected"] = fia.rejected;
  if (fia.minus_log_likelihood) j["minus_log_likelihood"] = *fia.minus_log_likelihood;
  return j;
}

inline nlohmann::json to_json(const CoverageReport& report) {
  nlohmann::json j;
  j["pattern"] = pattern_name(report.tag);
  j["k"] = report.k;
  j["samples"] = report.samples;
  j["seed"] = report.seed;
  j["tol"] = report.tol;
  j["max_residual"] = report.max_residual;
  j["pass"] = report.pass;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : report.failures)
    failures.push_back({{"point", f.point}, {"residual", f.residual}});
  j["failures"] = failures;
  return j;
}

inline nlohmann::json to_json(const ComparisonReport& report) {
  nlohmann::json j;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["name"] = row.name;
    r["ok"] = row.ok;
    if (!row.ok) {
      r["error"] = row.error;
    } else {
      r["g_squared"] = row.g_squared;
      r["df"] = row.df;
      r["minus_log_likelihood"] = row.minus_log_likelihood;
      r["free_parameters"] = row.free_parameters;
      r["aic"] = row.aic;
      r["bic"] = row.bic;
      r["fia"] = row.fia;
      r["geometry_term"] = row.geometry_term;
      r["dimension_term"] = row.dimension_term;
      r["fia_mc_error"] = row.fia_mc_error;
    }
    rows.push_back(std::move(r));
  }
  j["models"] = rows;
  j["preferred"] = {{"aic", report.preferred_aic},
                    {"bic", report.preferred_bic},
                    {"fia", report.preferred_fia}};
  j["fia_threshold"] = report.fia_threshold;
  j["n_total"] = report.n_total;
  return j;
}

// ---------------------------------------------------------------------------
// Transformation manifest.

inline nlohmann::json manifest_to_json(const TransformManifest& manifest) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : manifest.steps) {
    nlohmann::json j;
    switch (s.kind) {
      case TransformStep::Kind::chain_mixture: j["kind"] = "chain_mixture"; break;
      case TransformStep::Kind::block_split: j["kind"] = "block_split"; break;
      case TransformStep::Kind::vertex_mixture: j["kind"] = "vertex_mixture"; break;
      case TransformStep::Kind::free_mixture: j["kind"] = "free_mixture"; break;
    }
    j["group"] = s.group;
    j["members"] = s.members;
    if (!s.weight_group.empty()) j["weight_group"] = s.weight_group;
    if (!s.weight_params.empty()) j["weight_params"] = s.weight_params;
    if (!s.split_param.empty()) j["split_param"] = s.split_param;
    if (!s.block_group.empty()) j["block_group"] = s.block_group;
    if (!s.block_params.empty()) j["block_params"] = s.block_params;
    if (!s.blocks.empty()) j["blocks"] = s.blocks;
    if (!s.block_inner_groups.empty()) j["block_inner_groups"] = s.block_inner_groups;
    if (!s.vertices.empty()) {
      nlohmann::json verts = nlohmann::json::array();
      for (const auto& v : s.vertices) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& x : v) row.push_back(x.str());
        verts.push_back(std::move(row));
      }
      j["vertices"] = verts;
    }
    if (s.kind == TransformStep::Kind::free_mixture) {
      j["pattern"] = pattern_name(s.pattern);
      j["pattern_k"] = s.pattern_k;
      j["perm"] = s.perm;
      j["free_params"] = s.free_params;
    }
    if (s.kind == TransformStep::Kind::vertex_mixture) j["identifiable"] = s.identifiable;
    steps.push_back(std::move(j));
  }
  nlohmann::json out;
  out["format"] = "mpt-transform-manifest";
  out["version"] = 1;
  out["steps"] = steps;
  return out;
}

inline Rational rational_from_string(const std::string& text) {
  auto slash = text.find('/');
  if (slash == std::string::npos) return Rational(std::stoll(text));
  return Rational(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
}

inline TransformManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.contains("steps")) throw std::runtime_error("not a transformation manifest");
  TransformManifest manifest;
  for (const auto& js : j.at("steps")) {
    TransformStep s;
    std::string kind = js.at("kind").get<std::string>();
    if (kind == "chain_mixture")
      s.kind = TransformStep::Kind::chain_mixture;
    else if (kind == "block_split")
      s.kind = TransformStep::Kind::block_split;
    else if (kind == "vertex_mixture")
      s.kind = TransformStep::Kind::vertex_mixture;
    else if (kind == "free_mixture")
      s.kind = TransformStep::Kind::free_mixture;
    else
      throw std::runtime_error("unknown manifest step kind '" + kind + "'");
    s.group = js.at("group").get<std::string>();
    s.members = js.at("members").get<std::vector<std::string>>();
    if (js.contains("weight_group")) s.weight_group = js.at("weight_group").get<std::string>();
    if (js.contains("weight_params"))
      s.weight_params = js.at("weight_params").get<std::vector<std::string>>();
    if (js.contains("split_param")) s.split_param = js.at("split_param").get<std::string>();
    if (js.contains("block_group")) s.block_group = js.at("block_group").get<std::string>();
    if (js.contains("block_params"))
      s.block_params = js.at("block_params").get<std::vector<std::string>>();
    if (js.contains("blocks")) s.blocks = js.at("blocks").get<std::vector<std::vector<std::string>>>();
    if (js.contains("block_inner_groups"))
      s.block_inner_groups = js.at("block_inner_groups").get<std::vector<std::string>>();
    if (js.contains("vertices"))
      for (const auto& row : js.at("vertices")) {
        std::vector<Rational> v;
        for (const auto& x : row) v.push_back(rational_from_string(x.get<std::string>()));
        s.vertices.push_back(std::move(v));
      }
    if (js.contains("pattern")) {
      auto p = pattern_from_name(js.at("pattern").get<std::string>());
      if (!p) throw std::runtime_error("unknown pattern in manifest");
      s.pattern = *p;
    }
    if (js.contains("pattern_k")) s.pattern_k = js.at("pattern_k").get<int>();
    if (js.contains("perm")) s.perm = js.at("perm").get<std::vector<int>>();
    if (js.contains("free_params"))
      s.free_params = js.at("free_params").get<std::vector<std::string>>();
    if (js.contains("identifiable")) s.identifiable = js.at("identifiable").get<bool>();
    manifest.steps.push_back(std::move(s));
  }
  return manifest;
}

}  // namespace mpt
