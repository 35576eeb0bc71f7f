#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpt/mpt.hpp"

namespace test_helpers {

inline mpt::MptModel load_fixture(const std::string& name) {
  auto result = mpt::parse_model(mpt::read_text_file(std::string(MPT_FIXTURES_DIR) + "/" + name));
  if (!result.ok()) throw std::runtime_error("fixture " + name + " failed to parse");
  return *result.model;
}

// Independent branch-product oracle: walks branches with plain map lookups,
// no shared code with CompiledModel beyond the model types.
inline std::map<std::string, std::map<std::string, double>> naive_probabilities(
    const mpt::MptModel& model, const mpt::ParamAssignment& params) {
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& tree : model.trees)
    for (const auto& cat : model.categories.at(tree)) out[tree][cat] = 0.0;
  for (const auto& branch : model.branches) {
    double p = 1.0;
    for (const auto& f : branch.factors) {
      switch (f.kind) {
        case mpt::FactorKind::direct: p *= params.at(f.param); break;
        case mpt::FactorKind::complement: p *= 1.0 - params.at(f.param); break;
        case mpt::FactorKind::constant: p *= f.value.to_double(); break;
      }
    }
    out[branch.tree][branch.category] += p;
  }
  return out;
}

inline mpt::ParamAssignment random_assignment(const mpt::MptModel& model, mpt::Rng& rng) {
  mpt::ParamAssignment a;
  for (const auto& p : model.parameters)
    if (p.kind == mpt::ParamKind::binary) a[p.name] = rng.uniform(0.02, 0.98);
  for (const auto& g : model.groups) {
    auto x = rng.simplex(static_cast<int>(g.members.size()));
    for (std::size_t i = 0; i < g.members.size(); ++i) a[g.members[i]] = x[i];
  }
  return a;
}

// Random assignment that also satisfies the model's declared order
// constraints (sorts the constrained members appropriately).
inline mpt::ParamAssignment random_constrained_assignment(const mpt::MptModel& model,
                                                          mpt::Rng& rng) {
  mpt::ParamAssignment a = random_assignment(model, rng);
  for (const auto& spec : model.orders) {
    if (spec.kind != mpt::OrderSpec::Kind::chain) continue;
    std::vector<double> values;
    for (const auto& m : spec.chain) values.push_back(a.at(m));
    std::sort(values.rbegin(), values.rend());
    for (std::size_t i = 0; i < spec.chain.size(); ++i) a[spec.chain[i]] = values[i];
  }
  return a;
}

inline mpt::ParamAssignment assignment_2htm(double d_o, double d_n, double g,
                                            std::vector<double> s, std::vector<double> o,
                                            std::vector<double> n) {
  mpt::ParamAssignment a;
  a["D_o"] = d_o;
  a["D_n"] = d_n;
  a["g"] = g;
  a["s_l"] = s[0];
  a["s_m"] = s[1];
  a["s_h"] = s[2];
  a["o_l"] = o[0];
  a["o_m"] = o[1];
  a["o_h"] = o[2];
  a["n_l"] = n[0];
  a["n_m"] = n[1];
  a["n_h"] = n[2];
  return a;
}

}  // namespace test_helpers
