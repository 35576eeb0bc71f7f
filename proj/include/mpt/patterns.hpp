#pragma once

// Registry of order patterns with known non-redundant parameterizations of
// their mixture weights. Covers linear chains (any k), the three-outcome
// polytope whose first coordinate dominates the other two, and the ten
// connected dominance patterns on four outcomes (docs/patterns.md lists the
// dominance pairs and vertex tables; pattern VII carries vertices only, since
// no non-redundant three-parameter map for it is known).

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpt/polytope.hpp"
#include "mpt/rational.hpp"

namespace mpt {

enum class Pattern {
  linear,     // full chain, any k >= 2
  dominant3,  // k=3, eta_1 >= eta_2 and eta_1 >= eta_3
  I, II, III, IV, V, VI, VII, VIII, IX, X,
};

// One multiplicative term of a weight product: free-parameter index and
// whether it enters complemented (1 - value).
struct WeightFactor {
  int index;
  bool complemented;
};

struct PatternInfo {
  Pattern tag;
  int k = 0;
  std::vector<std::pair<int, int>> pairs;            // dominance (hi, lo), 1-based
  std::vector<std::vector<Rational>> vertices;       // fixed table order
  bool has_free_parameterization = true;
  int free_count = 0;
  std::vector<std::vector<WeightFactor>> weight_products;  // per vertex
};

inline std::string pattern_name(Pattern p) {
  switch (p) {
    case Pattern::linear: return "linear";
    case Pattern::dominant3: return "dominant3";
    case Pattern::I: return "I";
    case Pattern::II: return "II";
    case Pattern::III: return "III";
    case Pattern::IV: return "IV";
    case Pattern::V: return "V";
    case Pattern::VI: return "VI";
    case Pattern::VII: return "VII";
    case Pattern::VIII: return "VIII";
    case Pattern::IX: return "IX";
    case Pattern::X: return "X";
  }
  return "?";
}

inline std::optional<Pattern> pattern_from_name(const std::string& name) {
  static const std::array<Pattern, 12> all = {Pattern::linear, Pattern::dominant3, Pattern::I,
                                              Pattern::II,     Pattern::III,       Pattern::IV,
                                              Pattern::V,      Pattern::VI,        Pattern::VII,
                                              Pattern::VIII,   Pattern::IX,        Pattern::X};
  for (Pattern p : all)
    if (pattern_name(p) == name) return p;
  return std::nullopt;
}

namespace pattern_detail {

// lambda_1 = (1-t_1), lambda_i = t_1..t_{i-1}(1-t_i), lambda_m = t_1..t_{m-1}
inline std::vector<std::vector<WeightFactor>> stick_products(int m) {
  std::vector<std::vector<WeightFactor>> out(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) out[i].push_back({j, false});
    if (i + 1 < m) out[i].push_back({i, true});
  }
  return out;
}

// Uniform distribution on 1-based member set.
inline std::vector<Rational> uniform_on(int k, std::initializer_list<int> support) {
  std::vector<Rational> v(k, Rational(0));
  int size = static_cast<int>(support.size());
  for (int i : support) v[i - 1] = Rational(1, size);
  return v;
}

inline std::vector<WeightFactor> prod(std::initializer_list<int> terms) {
  // positive index i -> t_i, negative -> (1 - t_{|i|}); 1-based for readability
  std::vector<WeightFactor> out;
  for (int t : terms) out.push_back({std::abs(t) - 1, t < 0});
  return out;
}

inline PatternInfo make_linear(int k) {
  if (k < 2) throw std::invalid_argument("linear pattern needs k >= 2");
  PatternInfo info;
  info.tag = Pattern::linear;
  info.k = k;
  for (int i = 1; i < k; ++i) info.pairs.push_back({i, i + 1});
  for (int j = 1; j <= k; ++j) {
    std::vector<Rational> v(k, Rational(0));
    for (int i = 0; i < j; ++i) v[i] = Rational(1, j);
    info.vertices.push_back(std::move(v));
  }
  info.free_count = k - 1;
  info.weight_products = stick_products(k);
  return info;
}

inline PatternInfo make_fixed(Pattern tag) {
  PatternInfo info;
  info.tag = tag;
  switch (tag) {
    case Pattern::dominant3:
      info.k = 3;
      info.pairs = {{1, 2}, {1, 3}};
      info.vertices = {uniform_on(3, {1}), uniform_on(3, {1, 2}), uniform_on(3, {1, 3}),
                       uniform_on(3, {1, 2, 3})};
      info.free_count = 2;
      info.weight_products = {prod({-1, -2}), prod({1, -2}), prod({-1, 2}), prod({1, 2})};
      break;
    case Pattern::I:
      info.k = 4;
      info.pairs = {{1, 2}, {2, 3}, {3, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {1, 2}), uniform_on(4, {1, 2, 3}),
                       uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = stick_products(4);
      break;
    case Pattern::II:
      info.k = 4;
      info.pairs = {{1, 4}, {2, 4}, {3, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {2}), uniform_on(4, {3}),
                       uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = stick_products(4);
      break;
    case Pattern::III:
      info.k = 4;
      info.pairs = {{1, 3}, {2, 3}, {3, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {2}), uniform_on(4, {1, 2, 3}),
                       uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = stick_products(4);
      break;
    case Pattern::IV:
      // Published table lists vertex 2 as the unit on B, but no polytope has
      // these four extreme points (vertex 3 is the midpoint of 1 and 2); the
      // poset A>=B, B>=D, C>=D matches the other rows with the unit on C.
      // See docs/patterns.md.
      info.k = 4;
      info.pairs = {{1, 2}, {2, 4}, {3, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {3}), uniform_on(4, {1, 2}),
                       uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = stick_products(4);
      break;
    case Pattern::V:
      info.k = 4;
      info.pairs = {{1, 2}, {1, 3}, {2, 4}, {3, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {1, 2}), uniform_on(4, {1, 3}),
                       uniform_on(4, {1, 2, 3}), uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = {prod({-1, -2, -3}), prod({1, -2, -3}), prod({-1, 2, -3}),
                              prod({1, 2, -3}), prod({3})};
      break;
    case Pattern::VI:
      info.k = 4;
      info.pairs = {{1, 2}, {2, 3}, {2, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {1, 2}), uniform_on(4, {1, 2, 3}),
                       uniform_on(4, {1, 2, 4}), uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = {prod({1}), prod({-1, -2, -3}), prod({-1, 2, -3}),
                              prod({-1, -2, 3}), prod({-1, 2, 3})};
      break;
    case Pattern::VII:
      info.k = 4;
      info.pairs = {{1, 3}, {1, 4}, {2, 3}, {2, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {2}), uniform_on(4, {1, 2, 3}),
                       uniform_on(4, {1, 2, 4}), uniform_on(4, {1, 2, 3, 4})};
      info.has_free_parameterization = false;
      info.free_count = 0;
      break;
    case Pattern::VIII:
      info.k = 4;
      info.pairs = {{1, 3}, {2, 3}, {2, 4}};
      info.vertices = {uniform_on(4, {1}), uniform_on(4, {2}), uniform_on(4, {1, 2, 3}),
                       uniform_on(4, {2, 4}), uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = {prod({1}), prod({-1, -2, -3}), prod({-1, 2, -3}),
                              prod({-1, -2, 3}), prod({-1, 2, 3})};
      break;
    case Pattern::IX:
      info.k = 4;
      info.pairs = {{1, 2}, {1, 3}, {2, 4}};
      info.vertices = {uniform_on(4, {1}),       uniform_on(4, {1, 2}),
                       uniform_on(4, {1, 3}),    uniform_on(4, {1, 2, 3}),
                       uniform_on(4, {1, 2, 4}), uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = {prod({-1, -2, -3}), prod({1, -2, -3}), prod({-1, 2, -3}),
                              prod({1, 2, -3}),   prod({-2, 3}),     prod({2, 3})};
      break;
    case Pattern::X:
      info.k = 4;
      info.pairs = {{1, 2}, {1, 3}, {1, 4}};
      info.vertices = {uniform_on(4, {1}),       uniform_on(4, {1, 2}),
                       uniform_on(4, {1, 3}),    uniform_on(4, {1, 4}),
                       uniform_on(4, {1, 2, 3}), uniform_on(4, {1, 2, 4}),
                       uniform_on(4, {1, 3, 4}), uniform_on(4, {1, 2, 3, 4})};
      info.free_count = 3;
      info.weight_products = {prod({-1, -2, -3}), prod({1, -2, -3}), prod({-1, 2, -3}),
                              prod({-1, -2, 3}),  prod({1, 2, -3}),  prod({1, -2, 3}),
                              prod({-1, 2, 3}),   prod({1, 2, 3})};
      break;
    default:
      throw std::logic_error("make_fixed called with non-fixed pattern");
  }
  return info;
}

}  // namespace pattern_detail

// `k` is required for Pattern::linear and ignored otherwise.
inline const PatternInfo& pattern_info(Pattern tag, int k = 0) {
  if (tag == Pattern::linear) {
    static std::map<int, PatternInfo> cache;
    auto it = cache.find(k);
    if (it == cache.end()) it = cache.emplace(k, pattern_detail::make_linear(k)).first;
    return it->second;
  }
  static std::map<Pattern, PatternInfo> cache;
  auto it = cache.find(tag);
  if (it == cache.end()) it = cache.emplace(tag, pattern_detail::make_fixed(tag)).first;
  return it->second;
}

inline DominanceOrder pattern_order(Pattern tag, int k = 0) {
  const PatternInfo& info = pattern_info(tag, k);
  return {info.k, info.pairs};
}

// ---------------------------------------------------------------------------
// Matching a user dominance order against the registry (up to relabeling).

struct PatternMatch {
  Pattern tag;
  int k;
  // registry position (1-based) -> user index (1-based)
  std::vector<int> perm;
};

namespace pattern_detail {

inline std::vector<std::vector<bool>> closure(int k, const std::vector<std::pair<int, int>>& pairs) {
  std::vector<std::vector<bool>> ge(k + 1, std::vector<bool>(k + 1, false));
  for (const auto& [hi, lo] : pairs) ge[hi][lo] = true;
  for (int mid = 1; mid <= k; ++mid)
    for (int a = 1; a <= k; ++a)
      for (int b = 1; b <= k; ++b)
        if (ge[a][mid] && ge[mid][b]) ge[a][b] = true;
  return ge;
}

inline std::optional<std::vector<int>> find_relabeling(
    int k, const std::vector<std::vector<bool>>& from, const std::vector<std::vector<bool>>& to) {
  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i) perm[i] = i + 1;
  do {
    bool ok = true;
    for (int a = 1; a <= k && ok; ++a)
      for (int b = 1; b <= k && ok; ++b)
        if (from[a][b] != to[perm[a - 1]][perm[b - 1]]) ok = false;
    if (ok) return perm;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::nullopt;
}

}  // namespace pattern_detail

// Finds a registered pattern isomorphic to `order`, trying the chain first.
inline std::optional<PatternMatch> match_pattern(const DominanceOrder& order) {
  auto user = pattern_detail::closure(order.k, order.pairs);
  std::vector<Pattern> candidates;
  if (order.k >= 2) candidates.push_back(Pattern::linear);
  if (order.k == 3) candidates.push_back(Pattern::dominant3);
  if (order.k == 4)
    for (Pattern p : {Pattern::I, Pattern::II, Pattern::III, Pattern::IV, Pattern::V, Pattern::VI,
                      Pattern::VII, Pattern::VIII, Pattern::IX, Pattern::X})
      candidates.push_back(p);
  for (Pattern tag : candidates) {
    const PatternInfo& info = pattern_info(tag, order.k);
    auto reg = pattern_detail::closure(info.k, info.pairs);
    if (auto perm = pattern_detail::find_relabeling(order.k, reg, user))
      return PatternMatch{tag, order.k, std::move(*perm)};
  }
  return std::nullopt;
}

}  // namespace mpt
