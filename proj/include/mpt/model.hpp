#pragma once

// Core representation of multinomial processing tree (MPT) models: trees of
// branches whose probabilities are products of binary-parameter links,
// simplex-group links, and fixed rational constants. Category probabilities
// are sums of branch products within a tree.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpt/random.hpp"
#include "mpt/rational.hpp"

namespace mpt {

inline constexpr const char* kVersion = "0.1.0";

// Shared tolerance constants. `structural` bounds per-tree completeness
// checks, `algebraic` bounds simplex sums and closed-form identities.
struct Tolerances {
  double structural = 1e-10;
  double algebraic = 1e-12;
};

inline const Tolerances& tol() {
  static const Tolerances t;
  return t;
}

enum class ParamKind { binary, simplex_member };

struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::binary;
  std::string group;  // owning simplex group, set iff kind == simplex_member

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

// k >= 2 parameters that are nonnegative and sum to one.
struct SimplexGroup {
  std::string name;
  std::vector<std::string> members;  // declared order matters for conversions

  friend bool operator==(const SimplexGroup&, const SimplexGroup&) = default;
};

enum class FactorKind { direct, complement, constant };

struct FactorTerm {
  FactorKind kind = FactorKind::direct;
  std::string param;  // direct / complement
  Rational value;     // constant in [0, 1]

  static FactorTerm direct(std::string name) { return {FactorKind::direct, std::move(name), {}}; }
  static FactorTerm complement(std::string name) {
    return {FactorKind::complement, std::move(name), {}};
  }
  static FactorTerm constant(Rational v) { return {FactorKind::constant, {}, v}; }

  friend bool operator==(const FactorTerm&, const FactorTerm&) = default;
};

struct Branch {
  std::string tree;
  std::string category;
  std::vector<FactorTerm> factors;

  friend bool operator==(const Branch&, const Branch&) = default;
};

// Dominance relations over members of one simplex group. Chains are stored
// with the dominant member first; partial orders as (hi, lo) pairs, hi >= lo.
struct OrderSpec {
  enum class Kind { chain, partial };
  Kind kind = Kind::chain;
  std::string group;
  std::vector<std::string> chain;
  std::vector<std::pair<std::string, std::string>> pairs;

  friend bool operator==(const OrderSpec&, const OrderSpec&) = default;
};

struct MptModel {
  std::vector<Parameter> parameters;
  std::vector<SimplexGroup> groups;
  std::vector<OrderSpec> orders;
  std::vector<std::string> trees;
  std::map<std::string, std::vector<std::string>> categories;  // per tree, declared order
  std::vector<Branch> branches;

  friend bool operator==(const MptModel&, const MptModel&) = default;

  const Parameter* find_parameter(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return &p;
    return nullptr;
  }
  const SimplexGroup* find_group(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return &g;
    return nullptr;
  }
  bool has_tree(const std::string& name) const {
    return std::find(trees.begin(), trees.end(), name) != trees.end();
  }
  bool name_taken(const std::string& name) const {
    return find_parameter(name) != nullptr || find_group(name) != nullptr;
  }
  // Count of functionally independent parameters: binaries plus k-1 per group.
  int free_parameter_count() const {
    int d = 0;
    for (const auto& p : parameters)
      if (p.kind == ParamKind::binary) ++d;
    for (const auto& g : groups) d += static_cast<int>(g.members.size()) - 1;
    return d;
  }
};

using ParamAssignment = std::map<std::string, double>;
using TreeCounts = std::map<std::string, std::int64_t>;
using Dataset = std::map<std::string, TreeCounts>;

// Branches sorted by tree then category declaration order (term order kept).
// Parsers and rewrites normalize so that structural equality is meaningful.
inline void normalize_branch_order(MptModel& model) {
  std::map<std::string, int> tree_index;
  for (std::size_t i = 0; i < model.trees.size(); ++i) tree_index[model.trees[i]] = static_cast<int>(i);
  std::map<std::pair<std::string, std::string>, int> cat_index;
  for (const auto& [tree, cats] : model.categories)
    for (std::size_t i = 0; i < cats.size(); ++i)
      cat_index[{tree, cats[i]}] = static_cast<int>(i);
  std::stable_sort(model.branches.begin(), model.branches.end(),
                   [&](const Branch& a, const Branch& b) {
                     int ta = tree_index.count(a.tree) ? tree_index[a.tree] : 1 << 20;
                     int tb = tree_index.count(b.tree) ? tree_index[b.tree] : 1 << 20;
                     if (ta != tb) return ta < tb;
                     auto ka = std::pair{a.tree, a.category};
                     auto kb = std::pair{b.tree, b.category};
                     int ca = cat_index.count(ka) ? cat_index[ka] : 1 << 20;
                     int cb = cat_index.count(kb) ? cat_index[kb] : 1 << 20;
                     return ca < cb;
                   });
}

// Throws std::invalid_argument on unknown names, values outside [0,1], or a
// simplex group whose member values do not sum to one.
inline void check_assignment(const MptModel& model, const ParamAssignment& params) {
  for (const auto& [name, value] : params) {
    if (model.find_parameter(name) == nullptr)
      throw std::invalid_argument("unknown parameter '" + name + "'");
    if (!(value >= 0.0 && value <= 1.0))
      throw std::invalid_argument("parameter '" + name + "' outside [0,1]: " + std::to_string(value));
  }
  for (const auto& p : model.parameters)
    if (params.find(p.name) == params.end())
      throw std::invalid_argument("missing value for parameter '" + p.name + "'");
  for (const auto& g : model.groups) {
    double sum = 0.0;
    for (const auto& m : g.members) sum += params.at(m);
    if (std::abs(sum - 1.0) > tol().algebraic)
      throw std::invalid_argument("simplex group '" + g.name + "' sums to " + std::to_string(sum) +
                                  ", not 1");
  }
}

// ---------------------------------------------------------------------------
// Flattened evaluator. Parameter values live in a dense vector; branches are
// index lists. Free coordinates are the binary parameters plus the first k-1
// members of each simplex group (the last member is one minus the rest),
// which is the coordinate system used for optimization and information
// matrices.

class CompiledModel {
 public:
  struct CompiledFactor {
    int param;
    bool complemented;
  };
  struct CompiledBranch {
    int category;
    double coefficient;
    std::vector<CompiledFactor> factors;
  };

  explicit CompiledModel(const MptModel& model) : model_(model) {
    for (std::size_t i = 0; i < model.parameters.size(); ++i)
      param_index_[model.parameters[i].name] = static_cast<int>(i);
    for (const auto& p : model.parameters)
      if (p.kind == ParamKind::binary) {
        free_names_.push_back(p.name);
        free_targets_.push_back({param_index_.at(p.name), -1, -1});
      }
    for (const auto& g : model.groups) {
      int last = param_index_.at(g.members.back());
      group_last_.push_back(last);
      group_members_.emplace_back();
      for (const auto& m : g.members) group_members_.back().push_back(param_index_.at(m));
      for (std::size_t i = 0; i + 1 < g.members.size(); ++i) {
        free_names_.push_back(g.members[i]);
        free_targets_.push_back({param_index_.at(g.members[i]), static_cast<int>(group_last_.size()) - 1, last});
      }
    }
    int cat_offset = 0;
    for (const auto& t : model.trees) {
      tree_names_.push_back(t);
      tree_cat_offset_.push_back(cat_offset);
      const auto& cats = model.categories.at(t);
      for (const auto& c : cats) {
        cat_key_to_index_[{t, c}] = cat_offset;
        cat_names_.push_back(c);
        ++cat_offset;
      }
    }
    n_categories_ = cat_offset;
    tree_cat_offset_.push_back(cat_offset);
    for (const auto& b : model.branches) {
      CompiledBranch cb;
      cb.category = cat_key_to_index_.at({b.tree, b.category});
      cb.coefficient = 1.0;
      for (const auto& f : b.factors) {
        if (f.kind == FactorKind::constant) {
          cb.coefficient *= f.value.to_double();
        } else {
          cb.factors.push_back({param_index_.at(f.param), f.kind == FactorKind::complement});
        }
      }
      branches_.push_back(std::move(cb));
    }
  }

  const MptModel& model() const { return model_; }
  int parameter_count() const { return static_cast<int>(model_.parameters.size()); }
  int free_count() const { return static_cast<int>(free_names_.size()); }
  const std::vector<std::string>& free_names() const { return free_names_; }
  int category_count() const { return n_categories_; }
  int tree_count() const { return static_cast<int>(tree_names_.size()); }
  const std::vector<std::string>& tree_names() const { return tree_names_; }
  const std::string& category_name(int index) const { return cat_names_[index]; }
  int tree_begin(int t) const { return tree_cat_offset_[t]; }
  int tree_end(int t) const { return tree_cat_offset_[t + 1]; }
  int category_index(const std::string& tree, const std::string& cat) const {
    return cat_key_to_index_.at({tree, cat});
  }
  const std::vector<CompiledBranch>& compiled_branches() const { return branches_; }
  // Tree index owning a flat category index.
  int tree_of_category(int cat) const {
    for (int t = 0; t < tree_count(); ++t)
      if (cat >= tree_begin(t) && cat < tree_end(t)) return t;
    return -1;
  }

  std::vector<double> values_from_assignment(const ParamAssignment& params) const {
    std::vector<double> v(model_.parameters.size());
    for (std::size_t i = 0; i < model_.parameters.size(); ++i)
      v[i] = params.at(model_.parameters[i].name);
    return v;
  }

  ParamAssignment assignment_from_values(std::span<const double> values) const {
    ParamAssignment a;
    for (std::size_t i = 0; i < model_.parameters.size(); ++i)
      a[model_.parameters[i].name] = values[i];
    return a;
  }

  // Expand free coordinates into the dense parameter vector.
  void values_from_free(std::span<const double> free, std::vector<double>& values) const {
    values.assign(model_.parameters.size(), 0.0);
    for (std::size_t i = 0; i < free_targets_.size(); ++i)
      values[free_targets_[i].param] = free[i];
    for (std::size_t gi = 0; gi < group_members_.size(); ++gi) {
      double rest = 0.0;
      const auto& members = group_members_[gi];
      for (std::size_t j = 0; j + 1 < members.size(); ++j) rest += values[members[j]];
      values[group_last_[gi]] = 1.0 - rest;
    }
  }

  std::vector<double> free_from_values(std::span<const double> values) const {
    std::vector<double> f(free_targets_.size());
    for (std::size_t i = 0; i < free_targets_.size(); ++i) f[i] = values[free_targets_[i].param];
    return f;
  }

  // Category probabilities for dense parameter values, flat category indexing.
  void probabilities(std::span<const double> values, std::vector<double>& out) const {
    out.assign(n_categories_, 0.0);
    for (const auto& b : branches_) {
      double p = b.coefficient;
      for (const auto& f : b.factors) {
        double x = values[f.param];
        p *= f.complemented ? 1.0 - x : x;
      }
      out[b.category] += p;
    }
  }

  // d(branch)/d(param) summed into per-category gradients; used by the
  // estimation polish step. `grad` has layout [category][free coordinate].
  void probability_gradients(std::span<const double> values, std::vector<double>& probs,
                             std::vector<double>& grad) const {
    int d = free_count();
    probs.assign(n_categories_, 0.0);
    grad.assign(static_cast<std::size_t>(n_categories_) * d, 0.0);
    // dense param derivative -> free coordinate mapping
    ensure_param_to_free();
    for (const auto& b : branches_) {
      double p = b.coefficient;
      for (const auto& f : b.factors) {
        double x = values[f.param];
        p *= f.complemented ? 1.0 - x : x;
      }
      probs[b.category] += p;
      for (std::size_t fi = 0; fi < b.factors.size(); ++fi) {
        const auto& f = b.factors[fi];
        double x = values[f.param];
        double base = f.complemented ? 1.0 - x : x;
        double partial;
        if (base > 1e-12) {
          partial = p / base;
        } else {  // recompute product without this factor
          partial = b.coefficient;
          for (std::size_t fj = 0; fj < b.factors.size(); ++fj) {
            if (fj == fi) continue;
            double y = values[b.factors[fj].param];
            partial *= b.factors[fj].complemented ? 1.0 - y : y;
          }
        }
        double dparam = f.complemented ? -partial : partial;
        for (const auto& [free_i, sign] : param_to_free_[f.param])
          grad[static_cast<std::size_t>(b.category) * d + free_i] += sign * dparam;
      }
    }
  }

 private:
  struct FreeTarget {
    int param;
    int group;  // -1 for binary
    int last;   // dense index of the group's dependent last member
  };

  void ensure_param_to_free() const {
    if (param_to_free_built_) return;
    param_to_free_.assign(model_.parameters.size(), {});
    for (std::size_t i = 0; i < free_targets_.size(); ++i) {
      param_to_free_[free_targets_[i].param].push_back({static_cast<int>(i), 1.0});
      if (free_targets_[i].group >= 0)
        param_to_free_[free_targets_[i].last].push_back({static_cast<int>(i), -1.0});
    }
    param_to_free_built_ = true;
  }

  MptModel model_;
  std::map<std::string, int> param_index_;
  std::vector<std::string> free_names_;
  std::vector<FreeTarget> free_targets_;
  std::vector<int> group_last_;
  std::vector<std::vector<int>> group_members_;
  std::vector<std::string> tree_names_;
  std::vector<std::string> cat_names_;
  std::vector<int> tree_cat_offset_;
  std::map<std::pair<std::string, std::string>, int> cat_key_to_index_;
  std::vector<CompiledBranch> branches_;
  int n_categories_ = 0;
  mutable std::vector<std::vector<std::pair<int, double>>> param_to_free_;
  mutable bool param_to_free_built_ = false;
};

// ---------------------------------------------------------------------------

inline std::map<std::string, std::map<std::string, double>> category_probabilities(
    const MptModel& model, const ParamAssignment& params) {
  check_assignment(model, params);
  CompiledModel cm(model);
  std::vector<double> values = cm.values_from_assignment(params);
  std::vector<double> probs;
  cm.probabilities(values, probs);
  std::map<std::string, std::map<std::string, double>> out;
  for (int t = 0; t < cm.tree_count(); ++t) {
    auto& tree_out = out[cm.tree_names()[t]];
    double sum = 0.0;
    for (int c = cm.tree_begin(t); c < cm.tree_end(t); ++c) {
      tree_out[cm.category_name(c)] = probs[c];
      sum += probs[c];
    }
    if (std::abs(sum - 1.0) > tol().structural)
      throw std::domain_error("tree '" + cm.tree_names()[t] + "' probabilities sum to " +
                              std::to_string(sum));
  }
  return out;
}

// Multinomial draws per tree; counts always sum to the requested n exactly.
inline Dataset simulate(const MptModel& model, const ParamAssignment& params,
                        const std::map<std::string, std::int64_t>& n_per_tree,
                        std::uint64_t seed) {
  check_assignment(model, params);
  for (const auto& [t, n] : n_per_tree) {
    if (!model.has_tree(t)) throw std::invalid_argument("unknown tree '" + t + "'");
    if (n < 1) throw std::invalid_argument("n for tree '" + t + "' must be >= 1");
  }
  CompiledModel cm(model);
  std::vector<double> values = cm.values_from_assignment(params);
  std::vector<double> probs;
  cm.probabilities(values, probs);
  Dataset data;
  for (int t = 0; t < cm.tree_count(); ++t) {
    const std::string& tree = cm.tree_names()[t];
    auto it = n_per_tree.find(tree);
    if (it == n_per_tree.end())
      throw std::invalid_argument("no sample size given for tree '" + tree + "'");
    std::int64_t n = it->second;
    int begin = cm.tree_begin(t), end = cm.tree_end(t);
    std::vector<double> cdf;
    double acc = 0.0;
    for (int c = begin; c < end; ++c) {
      acc += probs[c];
      cdf.push_back(acc);
    }
    cdf.back() = 1.0;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::int64_t> counts(end - begin, 0);
    for (std::int64_t i = 0; i < n; ++i) {
      double u = rng.uniform();
      int c = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (c >= static_cast<int>(counts.size())) c = static_cast<int>(counts.size()) - 1;
      ++counts[c];
    }
    TreeCounts tc;
    for (int c = begin; c < end; ++c) tc[cm.category_name(c)] = counts[c - begin];
    data[tree] = tc;
  }
  return data;
}

// ---------------------------------------------------------------------------
// Structural validation. Returns an empty list iff the model is well formed;
// diagnostics are human-readable and name the offending construct.

inline std::vector<std::string> validate(const MptModel& model) {
  std::vector<std::string> diags;
  auto complain = [&](const std::string& msg) { diags.push_back(msg); };

  std::set<std::string> names;
  for (const auto& p : model.parameters) {
    if (!names.insert(p.name).second) complain("duplicate parameter name '" + p.name + "'");
    if (p.kind == ParamKind::simplex_member) {
      const SimplexGroup* g = model.find_group(p.group);
      if (g == nullptr) {
        complain("parameter '" + p.name + "' references unknown group '" + p.group + "'");
      } else if (std::find(g->members.begin(), g->members.end(), p.name) == g->members.end()) {
        complain("parameter '" + p.name + "' not listed in group '" + p.group + "'");
      }
    }
  }
  for (const auto& g : model.groups) {
    if (!names.insert(g.name).second) complain("group name '" + g.name + "' collides with another name");
    if (g.members.size() < 2) complain("simplex group '" + g.name + "' needs at least 2 members");
    std::set<std::string> seen;
    for (const auto& m : g.members) {
      if (!seen.insert(m).second) complain("group '" + g.name + "' lists member '" + m + "' twice");
      const Parameter* p = model.find_parameter(m);
      if (p == nullptr)
        complain("group '" + g.name + "' references unknown parameter '" + m + "'");
      else if (p->kind != ParamKind::simplex_member || p->group != g.name)
        complain("group '" + g.name + "' member '" + m + "' is not declared as its simplex member");
    }
  }

  if (model.trees.empty()) complain("no trees declared");
  for (const auto& t : model.trees) {
    auto it = model.categories.find(t);
    if (it == model.categories.end() || it->second.empty()) {
      complain("tree '" + t + "' has no categories");
      continue;
    }
    std::set<std::string> seen;
    for (const auto& c : it->second)
      if (!seen.insert(c).second) complain("tree '" + t + "' lists category '" + c + "' twice");
  }

  std::set<std::pair<std::string, std::string>> reachable;
  for (const auto& b : model.branches) {
    if (!model.has_tree(b.tree)) {
      complain("branch targets unknown tree '" + b.tree + "'");
      continue;
    }
    const auto& cats = model.categories.at(b.tree);
    if (std::find(cats.begin(), cats.end(), b.category) == cats.end())
      complain("branch targets unknown category '" + b.category + "' in tree '" + b.tree + "'");
    reachable.insert({b.tree, b.category});
    for (const auto& f : b.factors) {
      if (f.kind == FactorKind::constant) {
        if (f.value < Rational(0) || f.value > Rational(1))
          complain("constant factor " + f.value.str() + " outside [0,1] in tree '" + b.tree + "'");
        continue;
      }
      const Parameter* p = model.find_parameter(f.param);
      if (p == nullptr) {
        complain("branch in tree '" + b.tree + "' uses unknown parameter '" + f.param + "'");
      } else if (f.kind == FactorKind::complement && p->kind != ParamKind::binary) {
        complain("complement factor '~" + f.param + "' in tree '" + b.tree +
                 "': complements apply to binary parameters only");
      }
    }
  }
  for (const auto& t : model.trees) {
    auto it = model.categories.find(t);
    if (it == model.categories.end()) continue;
    for (const auto& c : it->second)
      if (!reachable.count({t, c}))
        complain("category '" + c + "' in tree '" + t + "' is unreachable (no branch)");
  }

  std::map<std::string, std::set<std::string>> order_members_per_group;
  for (const auto& o : model.orders) {
    const SimplexGroup* g = model.find_group(o.group);
    if (g == nullptr) {
      const Parameter* p = model.find_parameter(o.group);
      if (p != nullptr && p->kind == ParamKind::binary)
        complain("order on '" + o.group + "': order constraints apply to simplex members only");
      else
        complain("order references unknown group '" + o.group + "'");
      continue;
    }
    std::vector<std::string> mentioned;
    if (o.kind == OrderSpec::Kind::chain) {
      if (o.chain.size() < 2) complain("order on '" + o.group + "' needs at least 2 members");
      mentioned = o.chain;
    } else {
      for (const auto& [hi, lo] : o.pairs) {
        mentioned.push_back(hi);
        mentioned.push_back(lo);
      }
      // cycle check on the dominance digraph
      std::map<std::string, std::vector<std::string>> adj;
      for (const auto& [hi, lo] : o.pairs) adj[hi].push_back(lo);
      std::map<std::string, int> state;
      std::vector<std::string> stack;
      bool cyclic = false;
      auto dfs = [&](auto&& self, const std::string& v) -> void {
        state[v] = 1;
        for (const auto& w : adj[v]) {
          if (state[w] == 1) cyclic = true;
          else if (state[w] == 0) self(self, w);
        }
        state[v] = 2;
      };
      for (const auto& [v, _] : adj)
        if (state[v] == 0) dfs(dfs, v);
      if (cyclic) complain("order on '" + o.group + "' is cyclic");
    }
    std::set<std::string> distinct;
    for (const auto& m : mentioned) {
      if (std::find(g->members.begin(), g->members.end(), m) == g->members.end())
        complain("order on '" + o.group + "' mentions '" + m + "', not a member of the group");
      distinct.insert(m);
    }
    if (o.kind == OrderSpec::Kind::chain && distinct.size() != o.chain.size())
      complain("order on '" + o.group + "' repeats a member");
    auto& used = order_members_per_group[o.group];
    for (const auto& m : distinct) {
      if (used.count(m))
        complain("group '" + o.group + "' has overlapping order constraints on member '" + m + "'");
      used.insert(m);
    }
  }

  if (!diags.empty()) return diags;

  // Completeness probes: per-tree category probabilities must sum to one at
  // valid assignments. A midpoint probe plus a few random ones.
  CompiledModel cm(model);
  std::vector<ParamAssignment> probes;
  {
    ParamAssignment mid;
    for (const auto& p : model.parameters)
      if (p.kind == ParamKind::binary) mid[p.name] = 0.5;
    for (const auto& g : model.groups)
      for (const auto& m : g.members) mid[m] = 1.0 / static_cast<double>(g.members.size());
    probes.push_back(mid);
    Rng rng(0xC0FFEEULL);
    for (int r = 0; r < 3; ++r) {
      ParamAssignment a;
      for (const auto& p : model.parameters)
        if (p.kind == ParamKind::binary) a[p.name] = rng.uniform(0.05, 0.95);
      for (const auto& g : model.groups) {
        auto x = rng.simplex(static_cast<int>(g.members.size()));
        for (std::size_t i = 0; i < g.members.size(); ++i) a[g.members[i]] = x[i];
      }
      probes.push_back(a);
    }
  }
  for (const auto& probe : probes) {
    std::vector<double> values = cm.values_from_assignment(probe);
    std::vector<double> probs;
    cm.probabilities(values, probs);
    for (int t = 0; t < cm.tree_count(); ++t) {
      double sum = 0.0;
      for (int c = cm.tree_begin(t); c < cm.tree_end(t); ++c) sum += probs[c];
      if (std::abs(sum - 1.0) > tol().structural) {
        complain("tree '" + cm.tree_names()[t] + "' category probabilities sum to " +
                 std::to_string(sum) + " at a probe point (expected 1)");
        break;
      }
    }
    if (!diags.empty()) break;
  }
  return diags;
}

// ---------------------------------------------------------------------------
// Binary conversion. Each simplex group is replaced by a stick-breaking chain
// of binary parameters in declared member order:
//   member_1 = b_1,  member_i = (1-b_1)...(1-b_{i-1}) b_i,  member_k = rest.
// A degenerate denominator (prefix already sums to one) maps to b = 0.

struct StickBreaking {
  std::string group;
  std::vector<std::string> members;        // original member names
  std::vector<std::string> binary_params;  // k-1 chain parameters

  friend bool operator==(const StickBreaking&, const StickBreaking&) = default;
};

struct BinaryConversion {
  MptModel model;
  std::vector<StickBreaking> sticks;

  // Forward map: values of the original model -> values of the binary model.
  ParamAssignment forward(const ParamAssignment& original) const {
    ParamAssignment out;
    std::set<std::string> consumed;
    for (const auto& s : sticks) {
      double remaining = 1.0;
      for (std::size_t i = 0; i + 1 < s.members.size(); ++i) {
        double v = original.at(s.members[i]);
        double b = remaining > 1e-300 ? v / remaining : 0.0;
        b = std::clamp(b, 0.0, 1.0);
        out[s.binary_params[i]] = b;
        remaining -= v;
        if (remaining < 0.0) remaining = 0.0;
      }
      for (const auto& m : s.members) consumed.insert(m);
    }
    for (const auto& [name, value] : original)
      if (!consumed.count(name)) out[name] = value;
    return out;
  }

  // Inverse map: binary values -> original member values.
  ParamAssignment inverse(const ParamAssignment& binary) const {
    ParamAssignment out;
    std::set<std::string> consumed;
    for (const auto& s : sticks) {
      double remaining = 1.0;
      for (std::size_t i = 0; i + 1 < s.members.size(); ++i) {
        double b = binary.at(s.binary_params[i]);
        out[s.members[i]] = remaining * b;
        remaining *= 1.0 - b;
        consumed.insert(s.binary_params[i]);
      }
      out[s.members.back()] = remaining;
    }
    for (const auto& [name, value] : binary)
      if (!consumed.count(name)) out[name] = value;
    return out;
  }
};

namespace detail {
inline std::string unique_name(const MptModel& model, std::string base) {
  if (!model.name_taken(base)) return base;
  for (int i = 2;; ++i) {
    std::string candidate = base + "_" + std::to_string(i);
    if (!model.name_taken(candidate)) return candidate;
  }
}
}  // namespace detail

inline BinaryConversion to_binary(const MptModel& model) {
  if (!model.orders.empty())
    throw std::domain_error("model still carries order constraints; rewrite them first");
  BinaryConversion result;
  MptModel out = model;
  out.groups.clear();
  std::erase_if(out.parameters, [](const Parameter& p) { return p.kind == ParamKind::simplex_member; });

  std::map<std::string, std::vector<FactorTerm>> replacement;  // member -> factor chain
  for (const auto& g : model.groups) {
    StickBreaking stick;
    stick.group = g.name;
    stick.members = g.members;
    std::vector<std::string> chain;
    for (std::size_t i = 0; i + 1 < g.members.size(); ++i) {
      std::string bname = detail::unique_name(out, g.members[i] + "_b");
      out.parameters.push_back({bname, ParamKind::binary, ""});
      chain.push_back(bname);
    }
    stick.binary_params = chain;
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      std::vector<FactorTerm> f;
      for (std::size_t j = 0; j < i; ++j) f.push_back(FactorTerm::complement(chain[j]));
      if (i + 1 < g.members.size()) f.push_back(FactorTerm::direct(chain[i]));
      replacement[g.members[i]] = f;
    }
    result.sticks.push_back(std::move(stick));
  }

  for (auto& b : out.branches) {
    std::vector<FactorTerm> factors;
    for (const auto& f : b.factors) {
      if (f.kind == FactorKind::direct && replacement.count(f.param)) {
        const auto& chain = replacement.at(f.param);
        factors.insert(factors.end(), chain.begin(), chain.end());
      } else {
        factors.push_back(f);
      }
    }
    b.factors = std::move(factors);
  }
  normalize_branch_order(out);
  result.model = std::move(out);
  return result;
}

}  // namespace mpt
