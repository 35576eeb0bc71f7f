#pragma once

// Rewrites order-constrained MPT models into statistically equivalent
// unconstrained ones, and converts between the three parameter scales:
//   constrained simplex values  <->  mixture weights over polytope vertices
//   mixture weights             <->  independent free parameters in [0,1]^d
//
// A full chain eta_1 >= ... >= eta_k maps to weights over the k chain
// vertices (unit mass, the first two averaged, ..., uniform); chains on a
// subset factor the group into an outer split with inner groups; general
// partial orders become mixtures over enumerated polytope vertices, either
// one weight per vertex (overparameterized) or driven by a registered
// free parameterization.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpt/model.hpp"
#include "mpt/patterns.hpp"
#include "mpt/polytope.hpp"
#include "mpt/random.hpp"

namespace mpt {

struct MixtureWeights {
  std::vector<double> values;

  int count() const { return static_cast<int>(values.size()); }
};

inline void check_mixture(std::span<const double> lambda) {
  double sum = 0.0;
  for (double x : lambda) {
    if (x < -1e-12) throw std::invalid_argument("mixture weight below zero: " + std::to_string(x));
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("mixture weights sum to " + std::to_string(sum) + ", not 1");
}

// Ordered probabilities -> chain mixture weights:
//   w_k = k eta_k,  w_j = j (eta_j - eta_{j+1}).
inline MixtureWeights mixture_from_ordered(std::span<const double> eta) {
  const int k = static_cast<int>(eta.size());
  if (k < 1) throw std::invalid_argument("empty point");
  double sum = 0.0;
  for (int j = 0; j < k; ++j) {
    sum += eta[j];
    if (j + 1 < k && eta[j] < eta[j + 1] - 1e-12)
      throw std::invalid_argument("point is not non-increasing at position " + std::to_string(j + 1));
  }
  if (eta[k - 1] < -1e-12) throw std::invalid_argument("point has a negative entry");
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("point sums to " + std::to_string(sum) + ", not 1");
  MixtureWeights w;
  w.values.resize(k);
  for (int j = 0; j + 1 < k; ++j) w.values[j] = std::max(0.0, (j + 1) * (eta[j] - eta[j + 1]));
  w.values[k - 1] = std::max(0.0, k * eta[k - 1]);
  return w;
}

// Chain mixture weights -> ordered probabilities: eta_j = sum_{i>=j} w_i / i.
// The backward recurrence adds nonnegative increments, so the output is
// non-increasing exactly, not just within tolerance.
inline std::vector<double> ordered_from_mixture(const MixtureWeights& weights) {
  check_mixture(weights.values);
  const int k = weights.count();
  std::vector<double> eta(k);
  double acc = 0.0;
  for (int j = k - 1; j >= 0; --j) {
    acc += std::max(0.0, weights.values[j]) / static_cast<double>(j + 1);
    eta[j] = acc;
  }
  return eta;
}

// ---------------------------------------------------------------------------
// Free parameterizations of mixture weights (registered patterns).

struct FreeParams {
  Pattern tag = Pattern::linear;
  int k = 0;  // outcome count; required for Pattern::linear
  std::vector<double> values;
};

inline MixtureWeights mixture_from_free(const FreeParams& free) {
  const PatternInfo& info = pattern_info(free.tag, free.k);
  if (!info.has_free_parameterization)
    throw std::domain_error("pattern " + pattern_name(free.tag) +
                            " has no registered free parameterization");
  if (static_cast<int>(free.values.size()) != info.free_count)
    throw std::invalid_argument("pattern " + pattern_name(free.tag) + " needs " +
                                std::to_string(info.free_count) + " free parameters");
  for (double v : free.values)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("free parameter outside [0,1]: " + std::to_string(v));
  MixtureWeights w;
  w.values.reserve(info.vertices.size());
  for (const auto& product : info.weight_products) {
    double p = 1.0;
    for (const auto& f : product) p *= f.complemented ? 1.0 - free.values[f.index] : free.values[f.index];
    w.values.push_back(p);
  }
  return w;
}

// Point of the polytope reached by the free parameters (registry coordinates).
inline std::vector<double> point_from_free(const FreeParams& free) {
  const PatternInfo& info = pattern_info(free.tag, free.k);
  MixtureWeights w = mixture_from_free(free);
  std::vector<double> eta(info.k, 0.0);
  for (std::size_t i = 0; i < info.vertices.size(); ++i)
    for (int c = 0; c < info.k; ++c) eta[c] += w.values[i] * info.vertices[i][c].to_double();
  return eta;
}

// Closed-form free parameters for the three-outcome dominant-first polytope
// (vertices unit, {1,2}/2, {1,3}/2, uniform). With D = eta_3 - eta_2 and
// s = (3 - 2D)/2:  t_1 = s - sqrt(s^2 - 6 eta_2),  t_2 = t_1 + 2D.
inline FreeParams free_from_point_dominant3(std::span<const double> eta) {
  if (eta.size() != 3) throw std::invalid_argument("dominant3 needs 3 coordinates");
  double sum = eta[0] + eta[1] + eta[2];
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("point sums to " + std::to_string(sum) + ", not 1");
  if (eta[0] < eta[1] - 1e-12 || eta[0] < eta[2] - 1e-12)
    throw std::invalid_argument("first coordinate must dominate the other two");
  double delta = eta[2] - eta[1];
  double s = 0.5 * (3.0 - 2.0 * delta);
  double disc = s * s - 6.0 * eta[1];
  if (disc < -1e-12)
    throw std::logic_error("negative discriminant in dominant3 inversion (internal error)");
  double t1 = s - std::sqrt(std::max(0.0, disc));
  double t2 = t1 + 2.0 * delta;
  t1 = std::clamp(t1, 0.0, 1.0);
  t2 = std::clamp(t2, 0.0, 1.0);
  return {Pattern::dominant3, 3, {t1, t2}};
}

namespace reparam_detail {

// Invert the stick-breaking map w_1=(1-t_1), w_i = t_1..t_{i-1}(1-t_i).
inline std::vector<double> stick_inverse(std::span<const double> weights) {
  const int m = static_cast<int>(weights.size());
  std::vector<double> t(m - 1);
  double remaining = 1.0;
  for (int i = 0; i + 1 < m; ++i) {
    double ti = remaining > 1e-300 ? 1.0 - weights[i] / remaining : 0.0;
    ti = std::clamp(ti, 0.0, 1.0);
    t[i] = ti;
    remaining *= ti;
  }
  return t;
}

struct LmResult {
  std::vector<double> values;
  double residual;
};

// Projected Levenberg-Marquardt for min ||V w(t) - eta||^2 over t in [0,1]^d.
inline LmResult invert_products_lm(const PatternInfo& info, std::span<const double> eta,
                                   std::span<const double> start) {
  const int k = info.k;
  const int m = static_cast<int>(info.vertices.size());
  const int d = info.free_count;
  Eigen::MatrixXd V(k, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < k; ++i) V(i, j) = info.vertices[j][i].to_double();
  Eigen::VectorXd target(k);
  for (int i = 0; i < k; ++i) target(i) = eta[i];

  auto weights_and_jac = [&](const Eigen::VectorXd& t, Eigen::VectorXd& w, Eigen::MatrixXd& dw) {
    w.resize(m);
    dw.setZero(m, d);
    for (int i = 0; i < m; ++i) {
      double p = 1.0;
      for (const auto& f : info.weight_products[i])
        p *= f.complemented ? 1.0 - t(f.index) : t(f.index);
      w(i) = p;
      for (const auto& f : info.weight_products[i]) {
        double rest = 1.0;
        for (const auto& g : info.weight_products[i]) {
          if (&g == &f) continue;
          rest *= g.complemented ? 1.0 - t(g.index) : t(g.index);
        }
        dw(i, f.index) += f.complemented ? -rest : rest;
      }
    }
  };

  Eigen::VectorXd t(d);
  for (int i = 0; i < d; ++i) t(i) = start[i];
  Eigen::VectorXd w;
  Eigen::MatrixXd dw;
  weights_and_jac(t, w, dw);
  Eigen::VectorXd r = V * w - target;
  double f = r.squaredNorm();
  double mu = 1e-3;
  for (int iter = 0; iter < 300 && f > 1e-26 && mu < 1e12; ++iter) {
    Eigen::MatrixXd J = V * dw;  // k x d
    Eigen::MatrixXd H = J.transpose() * J;
    Eigen::VectorXd g = J.transpose() * r;
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd Hm = H;
      Hm.diagonal().array() += mu;
      Eigen::VectorXd step = Hm.ldlt().solve(-g);
      Eigen::VectorXd cand = (t + step).cwiseMax(0.0).cwiseMin(1.0);
      Eigen::VectorXd wc;
      Eigen::MatrixXd dwc;
      weights_and_jac(cand, wc, dwc);
      Eigen::VectorXd rc = V * wc - target;
      double fc = rc.squaredNorm();
      if (fc < f) {
        t = cand;
        w = wc;
        dw = dwc;
        r = rc;
        f = fc;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        break;
      }
      mu *= 4.0;
      if (mu >= 1e12) break;
    }
    if (!accepted) break;
  }
  LmResult out;
  out.values.assign(t.data(), t.data() + d);
  out.residual = (V * w - target).lpNorm<Eigen::Infinity>();
  return out;
}

}  // namespace reparam_detail

// Inverts the free parameterization at a polytope point (registry
// coordinates). Chains, the stick-breaking patterns, and dominant3 invert in
// closed form; the remaining patterns use multi-start bounded least squares
// (a grid of 2^d starts, plus seeded random restarts if those stall).
inline FreeParams free_from_point(Pattern tag, int k, std::span<const double> eta,
                                  std::uint64_t seed = 0) {
  const PatternInfo& info = pattern_info(tag, k);
  if (!info.has_free_parameterization)
    throw std::domain_error("pattern " + pattern_name(tag) +
                            " has no registered free parameterization");
  if (static_cast<int>(eta.size()) != info.k)
    throw std::invalid_argument("point dimension does not match pattern");

  if (tag == Pattern::linear) {
    MixtureWeights w = mixture_from_ordered(eta);
    return {tag, info.k, reparam_detail::stick_inverse(w.values)};
  }
  if (tag == Pattern::dominant3) return free_from_point_dominant3(eta);
  if (tag == Pattern::I || tag == Pattern::II || tag == Pattern::III || tag == Pattern::IV) {
    // Four affinely independent vertices: weights are the unique solution.
    Eigen::Matrix4d V;
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) V(i, j) = info.vertices[j][i].to_double();
    Eigen::Vector4d b;
    for (int i = 0; i < 4; ++i) b(i) = eta[i];
    Eigen::Vector4d w = V.partialPivLu().solve(b);
    std::vector<double> weights(4);
    for (int j = 0; j < 4; ++j) weights[j] = std::clamp(w(j), 0.0, 1.0);
    return {tag, info.k, reparam_detail::stick_inverse(weights)};
  }

  const int d = info.free_count;
  reparam_detail::LmResult best;
  best.residual = std::numeric_limits<double>::infinity();
  std::vector<double> start(d);
  for (int mask = 0; mask < (1 << d); ++mask) {
    for (int i = 0; i < d; ++i) start[i] = (mask >> i & 1) ? 0.75 : 0.25;
    auto res = reparam_detail::invert_products_lm(info, eta, start);
    if (res.residual < best.residual) best = std::move(res);
    if (best.residual < 1e-12) break;
  }
  if (best.residual > 1e-9) {
    Rng rng(derive_seed(seed, 0x1e57a27ULL));
    for (int attempt = 0; attempt < 40 && best.residual > 1e-12; ++attempt) {
      for (int i = 0; i < d; ++i) start[i] = rng.uniform();
      auto res = reparam_detail::invert_products_lm(info, eta, start);
      if (res.residual < best.residual) best = std::move(res);
    }
  }
  return {tag, info.k, std::move(best.values)};
}

// ---------------------------------------------------------------------------
// Coverage check: the registered free parameterization must reach every point
// of its polytope. Points are drawn by rejection from the simplex, inverted,
// and the reconstruction residual reported.

struct CoverageFailure {
  std::vector<double> point;
  double residual;
};

struct CoverageReport {
  Pattern tag;
  int k = 0;
  int samples = 0;
  std::uint64_t seed = 0;
  double tol = 0.0;
  double max_residual = 0.0;
  std::vector<CoverageFailure> failures;
  bool pass = false;
};

inline CoverageReport coverage_check(Pattern tag, int k, int samples, std::uint64_t seed,
                                     double tol = 1e-6) {
  const PatternInfo& info = pattern_info(tag, k);
  if (!info.has_free_parameterization)
    throw std::domain_error("pattern " + pattern_name(tag) +
                            " has no registered free parameterization");
  if (samples < 1) throw std::invalid_argument("samples must be >= 1");
  DominanceOrder order{info.k, info.pairs};
  CoverageReport report{tag, info.k, samples, seed, tol, 0.0, {}, false};
  for (int s = 0; s < samples; ++s) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::vector<double> eta;
    do {
      eta = rng.simplex(info.k);
    } while (!membership(order, eta));
    FreeParams free = free_from_point(tag, info.k, eta, derive_seed(seed, 0x900dULL + s));
    std::vector<double> back = point_from_free(free);
    double residual = 0.0;
    for (int i = 0; i < info.k; ++i) residual = std::max(residual, std::abs(back[i] - eta[i]));
    report.max_residual = std::max(report.max_residual, residual);
    if (residual >= tol) report.failures.push_back({eta, residual});
  }
  report.pass = report.max_residual < tol;
  return report;
}

// ---------------------------------------------------------------------------
// Model rewrites. Every rewrite records a TransformStep so estimates can be
// mapped back to the constrained scale afterwards.

enum class PartialMode { overparameterized, theta };

struct TransformStep {
  enum class Kind { chain_mixture, block_split, vertex_mixture, free_mixture };
  Kind kind = Kind::chain_mixture;
  std::string group;                 // replaced group
  std::vector<std::string> members;  // chain: dominant first; otherwise declared order

  // chain_mixture / vertex_mixture
  std::string weight_group;
  std::vector<std::string> weight_params;

  // block_split
  std::string split_param;  // two blocks
  std::string block_group;  // more than two blocks
  std::vector<std::string> block_params;
  std::vector<std::vector<std::string>> blocks;
  std::vector<std::string> block_inner_groups;  // empty string for singleton blocks

  // vertex_mixture / free_mixture
  std::vector<std::vector<Rational>> vertices;  // group-member coordinates
  Pattern pattern = Pattern::linear;
  int pattern_k = 0;
  std::vector<int> perm;  // registry position (1-based) -> member index (1-based)
  std::vector<std::string> free_params;
  bool identifiable = true;

  friend bool operator==(const TransformStep&, const TransformStep&) = default;
};

struct TransformManifest {
  std::vector<TransformStep> steps;

  friend bool operator==(const TransformManifest&, const TransformManifest&) = default;
};

struct RewriteResult {
  MptModel model;
  std::vector<TransformStep> steps;
};

namespace reparam_detail {

// Single-pass splice: replace every direct occurrence of a mapped parameter
// by its factor list. Inserted factors are not rescanned, so replacements may
// mention the replaced name (the block factoring keeps member names).
inline std::vector<Branch> substitute_factors(
    const std::vector<Branch>& branches,
    const std::map<std::string, std::vector<FactorTerm>>& replacement) {
  std::vector<Branch> out;
  out.reserve(branches.size());
  for (const auto& b : branches) {
    Branch nb;
    nb.tree = b.tree;
    nb.category = b.category;
    for (const auto& f : b.factors) {
      if (f.kind == FactorKind::direct && replacement.count(f.param)) {
        const auto& rep = replacement.at(f.param);
        nb.factors.insert(nb.factors.end(), rep.begin(), rep.end());
      } else {
        nb.factors.push_back(f);
      }
    }
    out.push_back(std::move(nb));
  }
  return out;
}

// Replace every direct occurrence of mapped parameters by the given factor
// alternatives (one new branch per alternative). Alternatives must not
// mention mapped parameters; occurrences expand until none remain.
inline std::vector<Branch> expand_branches(
    const std::vector<Branch>& branches,
    const std::map<std::string, std::vector<std::vector<FactorTerm>>>& alternatives) {
  std::vector<Branch> out;
  std::vector<Branch> queue(branches.rbegin(), branches.rend());
  while (!queue.empty()) {
    Branch b = std::move(queue.back());
    queue.pop_back();
    std::size_t hit = b.factors.size();
    for (std::size_t i = 0; i < b.factors.size(); ++i) {
      if (b.factors[i].kind == FactorKind::direct && alternatives.count(b.factors[i].param)) {
        hit = i;
        break;
      }
    }
    if (hit == b.factors.size()) {
      out.push_back(std::move(b));
      continue;
    }
    const auto& alts = alternatives.at(b.factors[hit].param);
    for (auto it = alts.rbegin(); it != alts.rend(); ++it) {
      Branch nb;
      nb.tree = b.tree;
      nb.category = b.category;
      nb.factors.assign(b.factors.begin(), b.factors.begin() + hit);
      nb.factors.insert(nb.factors.end(), it->begin(), it->end());
      nb.factors.insert(nb.factors.end(), b.factors.begin() + hit + 1, b.factors.end());
      queue.push_back(std::move(nb));
    }
  }
  return out;
}

inline void remove_group(MptModel& model, const std::string& group) {
  const SimplexGroup* g = model.find_group(group);
  if (g == nullptr) return;
  std::set<std::string> members(g->members.begin(), g->members.end());
  std::erase_if(model.parameters, [&](const Parameter& p) { return members.count(p.name) > 0; });
  std::erase_if(model.groups, [&](const SimplexGroup& sg) { return sg.name == group; });
  std::erase_if(model.orders, [&](const OrderSpec& o) { return o.group == group; });
}

inline SimplexGroup add_group(MptModel& model, const std::string& base, int size,
                              const std::string& member_base) {
  SimplexGroup g;
  g.name = detail::unique_name(model, base);
  model.groups.push_back(g);  // reserve the name before members are generated
  for (int i = 1; i <= size; ++i) {
    std::string m = detail::unique_name(model, member_base + std::to_string(i));
    model.parameters.push_back({m, ParamKind::simplex_member, g.name});
    g.members.push_back(m);
  }
  model.groups.back() = g;
  return g;
}

}  // namespace reparam_detail

// Full-chain rewrite: the group becomes a mixture group w_1..w_k where w_j
// leads to a uniform 1/j split over the j most dominant continuations.
inline RewriteResult apply_linear_order(const MptModel& model, const OrderSpec& spec) {
  if (spec.kind != OrderSpec::Kind::chain)
    throw std::invalid_argument("apply_linear_order needs a chain order");
  const SimplexGroup* g = model.find_group(spec.group);
  if (g == nullptr) throw std::invalid_argument("unknown group '" + spec.group + "'");
  if (spec.chain.size() != g->members.size())
    throw std::invalid_argument("chain covers only a subset of group '" + spec.group +
                                "'; use apply_subset_order");
  const int k = static_cast<int>(g->members.size());

  MptModel out = model;
  reparam_detail::remove_group(out, spec.group);
  SimplexGroup wg = reparam_detail::add_group(out, spec.group + "_w", k, spec.group + "_w");

  std::map<std::string, std::vector<std::vector<FactorTerm>>> alternatives;
  for (int j = 0; j < k; ++j) {
    std::vector<std::vector<FactorTerm>> alts;
    for (int i = j; i < k; ++i) {
      std::vector<FactorTerm> alt;
      alt.push_back(FactorTerm::direct(wg.members[i]));
      if (i > 0) alt.push_back(FactorTerm::constant(Rational(1, i + 1)));
      alts.push_back(std::move(alt));
    }
    alternatives[spec.chain[j]] = std::move(alts);
  }
  out.branches = reparam_detail::expand_branches(out.branches, alternatives);
  normalize_branch_order(out);

  TransformStep step;
  step.kind = TransformStep::Kind::chain_mixture;
  step.group = spec.group;
  step.members = spec.chain;
  step.weight_group = wg.name;
  step.weight_params = wg.members;
  return {std::move(out), {std::move(step)}};
}

inline RewriteResult apply_partial_order(const MptModel& model, const OrderSpec& spec,
                                         PartialMode mode);

// Factors a group with order constraints on member subsets: an outer split
// selects the block, inner groups carry the per-block conditional
// probabilities, and each block's constraint is imposed on its inner group.
// Handles all (disjoint) constraints declared on the group at once.
inline RewriteResult apply_subset_order(const MptModel& model, const std::string& group,
                                        PartialMode mode = PartialMode::theta) {
  const SimplexGroup* g = model.find_group(group);
  if (g == nullptr) throw std::invalid_argument("unknown group '" + group + "'");
  std::vector<OrderSpec> specs;
  for (const auto& o : model.orders)
    if (o.group == group) specs.push_back(o);
  if (specs.empty()) throw std::invalid_argument("group '" + group + "' has no order constraints");

  if (specs.size() == 1 && specs[0].kind == OrderSpec::Kind::chain &&
      specs[0].chain.size() == g->members.size())
    return apply_linear_order(model, specs[0]);

  // Partition members: one block per constraint, remaining members last.
  std::vector<std::vector<std::string>> blocks;
  std::set<std::string> used;
  for (const auto& spec : specs) {
    std::set<std::string> mentioned;
    if (spec.kind == OrderSpec::Kind::chain) {
      mentioned.insert(spec.chain.begin(), spec.chain.end());
    } else {
      for (const auto& [hi, lo] : spec.pairs) {
        mentioned.insert(hi);
        mentioned.insert(lo);
      }
    }
    for (const auto& m : mentioned)
      if (used.count(m))
        throw std::invalid_argument("overlapping order constraints on group '" + group + "'");
    std::vector<std::string> block;
    for (const auto& m : g->members)
      if (mentioned.count(m)) block.push_back(m);
    blocks.push_back(std::move(block));
    used.insert(mentioned.begin(), mentioned.end());
  }
  std::vector<std::string> rest;
  for (const auto& m : g->members)
    if (!used.count(m)) rest.push_back(m);
  if (!rest.empty()) blocks.push_back(rest);
  const int nblocks = static_cast<int>(blocks.size());
  if (nblocks < 2)
    throw std::invalid_argument("constraints on group '" + group +
                                "' cover all members; use apply_linear_order or "
                                "apply_partial_order");

  MptModel out = model;
  std::vector<std::string> original_members = g->members;
  reparam_detail::remove_group(out, group);

  TransformStep step;
  step.kind = TransformStep::Kind::block_split;
  step.group = group;
  step.members = original_members;
  step.blocks = blocks;

  std::vector<FactorTerm> block_factor(nblocks);
  if (nblocks == 2) {
    step.split_param = detail::unique_name(out, group + "_split");
    out.parameters.push_back({step.split_param, ParamKind::binary, ""});
    block_factor[0] = FactorTerm::direct(step.split_param);
    block_factor[1] = FactorTerm::complement(step.split_param);
  } else {
    SimplexGroup bg = reparam_detail::add_group(out, group + "_blk", nblocks, group + "_blk");
    step.block_group = bg.name;
    step.block_params = bg.members;
    for (int i = 0; i < nblocks; ++i) block_factor[i] = FactorTerm::direct(bg.members[i]);
  }

  std::map<std::string, std::vector<FactorTerm>> replacement;
  std::vector<OrderSpec> inner_specs;
  for (int i = 0; i < nblocks; ++i) {
    const auto& block = blocks[i];
    if (block.size() == 1) {
      step.block_inner_groups.push_back("");
      replacement[block[0]] = {block_factor[i]};
      continue;
    }
    SimplexGroup inner;
    inner.name = detail::unique_name(out, group + "_part" + std::to_string(i + 1));
    inner.members = block;  // original member names carry over as conditionals
    out.groups.push_back(inner);
    for (const auto& m : block) out.parameters.push_back({m, ParamKind::simplex_member, inner.name});
    step.block_inner_groups.push_back(inner.name);
    for (const auto& m : block)
      replacement[m] = {block_factor[i], FactorTerm::direct(m)};
    if (i < static_cast<int>(specs.size())) {
      OrderSpec inner_spec = specs[i];
      inner_spec.group = inner.name;
      inner_specs.push_back(std::move(inner_spec));
    }
  }
  out.branches = reparam_detail::substitute_factors(out.branches, replacement);
  out.orders.insert(out.orders.end(), inner_specs.begin(), inner_specs.end());
  normalize_branch_order(out);

  RewriteResult result{std::move(out), {std::move(step)}};
  for (const auto& inner_spec : inner_specs) {
    RewriteResult next =
        inner_spec.kind == OrderSpec::Kind::chain
            ? apply_linear_order(result.model, inner_spec)
            : apply_partial_order(result.model, inner_spec, mode);
    result.model = std::move(next.model);
    for (auto& s : next.steps) result.steps.push_back(std::move(s));
  }
  return result;
}

// General partial order: mixture over the polytope's vertex set, either with
// one weight per vertex (overparameterized when vertices outnumber the
// dimension) or generated from a registered free parameterization.
inline RewriteResult apply_partial_order(const MptModel& model, const OrderSpec& spec,
                                         PartialMode mode) {
  if (spec.kind != OrderSpec::Kind::partial)
    throw std::invalid_argument("apply_partial_order needs a partial order");
  const SimplexGroup* g = model.find_group(spec.group);
  if (g == nullptr) throw std::invalid_argument("unknown group '" + spec.group + "'");
  const int k = static_cast<int>(g->members.size());
  auto member_index = [&](const std::string& m) {
    for (int i = 0; i < k; ++i)
      if (g->members[i] == m) return i + 1;
    throw std::invalid_argument("'" + m + "' is not a member of group '" + spec.group + "'");
  };
  DominanceOrder order;
  order.k = k;
  for (const auto& [hi, lo] : spec.pairs) order.pairs.push_back({member_index(hi), member_index(lo)});

  MptModel out = model;
  std::vector<std::string> members = g->members;

  TransformStep step;
  step.group = spec.group;
  step.members = members;

  std::vector<std::vector<Rational>> vertices;        // member coordinates
  std::vector<std::vector<FactorTerm>> weight_factor; // per vertex

  if (mode == PartialMode::theta) {
    auto match = match_pattern(order);
    if (!match)
      throw std::domain_error("no registered free parameterization for this order pattern on '" +
                              spec.group + "'; use overparameterized mode");
    const PatternInfo& info = pattern_info(match->tag, match->k);
    if (!info.has_free_parameterization)
      throw std::domain_error(
          "pattern " + pattern_name(match->tag) +
          " is not known to admit a non-redundant free parameterization; use overparameterized "
          "mode");
    reparam_detail::remove_group(out, spec.group);
    std::vector<std::string> tparams;
    for (int i = 1; i <= info.free_count; ++i) {
      std::string name = detail::unique_name(out, spec.group + "_t" + std::to_string(i));
      out.parameters.push_back({name, ParamKind::binary, ""});
      tparams.push_back(name);
    }
    for (const auto& rv : info.vertices) {
      std::vector<Rational> uv(k, Rational(0));
      for (int r = 1; r <= k; ++r) uv[match->perm[r - 1] - 1] = rv[r - 1];
      vertices.push_back(std::move(uv));
    }
    for (const auto& product : info.weight_products) {
      std::vector<FactorTerm> factors;
      for (const auto& f : product)
        factors.push_back(f.complemented ? FactorTerm::complement(tparams[f.index])
                                         : FactorTerm::direct(tparams[f.index]));
      weight_factor.push_back(std::move(factors));
    }
    step.kind = TransformStep::Kind::free_mixture;
    step.pattern = match->tag;
    step.pattern_k = match->k;
    step.perm = match->perm;
    step.free_params = tparams;
    step.vertices = vertices;
  } else {
    VertexSet vs = enumerate_vertices(order);
    reparam_detail::remove_group(out, spec.group);
    SimplexGroup wg =
        reparam_detail::add_group(out, spec.group + "_w", vs.count(), spec.group + "_w");
    vertices = vs.vertices;
    for (const auto& w : wg.members) weight_factor.push_back({FactorTerm::direct(w)});
    step.kind = TransformStep::Kind::vertex_mixture;
    step.weight_group = wg.name;
    step.weight_params = wg.members;
    step.vertices = vertices;
    // Unique weights only when the vertices are affinely independent.
    Eigen::MatrixXd A(k + 1, vs.count());
    for (int j = 0; j < vs.count(); ++j) {
      for (int i = 0; i < k; ++i) A(i, j) = vertices[j][i].to_double();
      A(k, j) = 1.0;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    lu.setThreshold(1e-10);
    step.identifiable = lu.rank() == vs.count();
  }

  std::map<std::string, std::vector<std::vector<FactorTerm>>> alternatives;
  for (int c = 0; c < k; ++c) {
    std::vector<std::vector<FactorTerm>> alts;
    for (std::size_t vi = 0; vi < vertices.size(); ++vi) {
      if (vertices[vi][c] == Rational(0)) continue;
      std::vector<FactorTerm> alt = weight_factor[vi];
      if (vertices[vi][c] != Rational(1)) alt.push_back(FactorTerm::constant(vertices[vi][c]));
      alts.push_back(std::move(alt));
    }
    alternatives[members[c]] = std::move(alts);
  }
  out.branches = reparam_detail::expand_branches(out.branches, alternatives);
  normalize_branch_order(out);
  return {std::move(out), {std::move(step)}};
}

// Applies every declared order constraint, returning the rewritten model and
// the manifest needed to map estimates back to the constrained scale.
struct TransformedModel {
  MptModel model;
  TransformManifest manifest;
};

inline TransformedModel transform_model(const MptModel& model,
                                        PartialMode mode = PartialMode::theta) {
  TransformedModel result{model, {}};
  while (!result.model.orders.empty()) {
    std::string group = result.model.orders.front().group;
    std::vector<OrderSpec> specs;
    for (const auto& o : result.model.orders)
      if (o.group == group) specs.push_back(o);
    const SimplexGroup* g = result.model.find_group(group);
    if (g == nullptr) throw std::invalid_argument("order on unknown group '" + group + "'");

    RewriteResult step;
    if (specs.size() == 1 && specs[0].kind == OrderSpec::Kind::chain) {
      if (specs[0].chain.size() == g->members.size())
        step = apply_linear_order(result.model, specs[0]);
      else
        step = apply_subset_order(result.model, group, mode);
    } else if (specs.size() == 1 && specs[0].kind == OrderSpec::Kind::partial) {
      std::set<std::string> mentioned;
      for (const auto& [hi, lo] : specs[0].pairs) {
        mentioned.insert(hi);
        mentioned.insert(lo);
      }
      if (mentioned.size() == g->members.size())
        step = apply_partial_order(result.model, specs[0], mode);
      else
        step = apply_subset_order(result.model, group, mode);
    } else {
      step = apply_subset_order(result.model, group, mode);
    }
    result.model = std::move(step.model);
    for (auto& s : step.steps) result.manifest.steps.push_back(std::move(s));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Mapping assignments across a manifest.

// Rewritten-model values -> original constrained-model values.
inline ParamAssignment original_from_rewritten(const TransformManifest& manifest,
                                               ParamAssignment values) {
  for (auto it = manifest.steps.rbegin(); it != manifest.steps.rend(); ++it) {
    const TransformStep& step = *it;
    switch (step.kind) {
      case TransformStep::Kind::chain_mixture: {
        MixtureWeights w;
        for (const auto& p : step.weight_params) {
          w.values.push_back(values.at(p));
          values.erase(p);
        }
        std::vector<double> eta = ordered_from_mixture(w);
        for (std::size_t i = 0; i < step.members.size(); ++i) values[step.members[i]] = eta[i];
        break;
      }
      case TransformStep::Kind::block_split: {
        std::vector<double> bw;
        if (!step.split_param.empty()) {
          double s = values.at(step.split_param);
          bw = {s, 1.0 - s};
          values.erase(step.split_param);
        } else {
          for (const auto& p : step.block_params) {
            bw.push_back(values.at(p));
            values.erase(p);
          }
        }
        for (std::size_t i = 0; i < step.blocks.size(); ++i) {
          for (const auto& m : step.blocks[i]) {
            if (step.blocks[i].size() == 1)
              values[m] = bw[i];
            else
              values[m] = values.at(m) * bw[i];
          }
        }
        break;
      }
      case TransformStep::Kind::vertex_mixture:
      case TransformStep::Kind::free_mixture: {
        std::vector<double> lambda;
        if (step.kind == TransformStep::Kind::vertex_mixture) {
          for (const auto& p : step.weight_params) {
            lambda.push_back(values.at(p));
            values.erase(p);
          }
        } else {
          FreeParams free{step.pattern, step.pattern_k, {}};
          for (const auto& p : step.free_params) {
            free.values.push_back(values.at(p));
            values.erase(p);
          }
          lambda = mixture_from_free(free).values;
        }
        const int k = static_cast<int>(step.members.size());
        std::vector<double> eta(k, 0.0);
        for (std::size_t vi = 0; vi < step.vertices.size(); ++vi)
          for (int c = 0; c < k; ++c) eta[c] += lambda[vi] * step.vertices[vi][c].to_double();
        for (int c = 0; c < k; ++c) values[step.members[c]] = eta[c];
        break;
      }
    }
  }
  return values;
}

// Original constrained-model values -> rewritten-model values. The input must
// satisfy the declared constraints (within the usual tolerances).
inline ParamAssignment rewritten_from_original(const TransformManifest& manifest,
                                               ParamAssignment values) {
  for (const TransformStep& step : manifest.steps) {
    switch (step.kind) {
      case TransformStep::Kind::chain_mixture: {
        std::vector<double> eta;
        for (const auto& m : step.members) eta.push_back(values.at(m));
        MixtureWeights w = mixture_from_ordered(eta);
        for (const auto& m : step.members) values.erase(m);
        for (std::size_t i = 0; i < step.weight_params.size(); ++i)
          values[step.weight_params[i]] = w.values[i];
        break;
      }
      case TransformStep::Kind::block_split: {
        std::vector<double> bw(step.blocks.size());
        for (std::size_t i = 0; i < step.blocks.size(); ++i) {
          double sum = 0.0;
          for (const auto& m : step.blocks[i]) sum += values.at(m);
          bw[i] = sum;
          for (const auto& m : step.blocks[i]) {
            if (step.blocks[i].size() == 1)
              values.erase(m);
            else
              values[m] = sum > 1e-300 ? values.at(m) / sum : 1.0 / step.blocks[i].size();
          }
        }
        if (!step.split_param.empty())
          values[step.split_param] = bw[0];
        else
          for (std::size_t i = 0; i < step.block_params.size(); ++i)
            values[step.block_params[i]] = bw[i];
        break;
      }
      case TransformStep::Kind::vertex_mixture: {
        std::vector<double> eta;
        for (const auto& m : step.members) eta.push_back(values.at(m));
        VertexSet vs{step.vertices, VertexProvenance::table};
        RecoveredWeights rw = recover_lambda(vs, eta);
        for (const auto& m : step.members) values.erase(m);
        for (std::size_t i = 0; i < step.weight_params.size(); ++i)
          values[step.weight_params[i]] = rw.lambda[i];
        break;
      }
      case TransformStep::Kind::free_mixture: {
        const int k = static_cast<int>(step.members.size());
        std::vector<double> eta_registry(k);
        for (int r = 1; r <= k; ++r)
          eta_registry[r - 1] = values.at(step.members[step.perm[r - 1] - 1]);
        FreeParams free = free_from_point(step.pattern, step.pattern_k, eta_registry);
        for (const auto& m : step.members) values.erase(m);
        for (std::size_t i = 0; i < step.free_params.size(); ++i)
          values[step.free_params[i]] = free.values[i];
        break;
      }
    }
  }
  return values;
}

}  // namespace mpt
