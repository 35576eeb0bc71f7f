#pragma once

// Order polytopes on the probability simplex: the set of probability vectors
// satisfying a dominance relation eta_i >= eta_j. Vertices are enumerated as
// uniform distributions on up-closed member sets, then pruned to the extreme
// points with an exact rational feasibility LP, so table checks can use
// rational equality instead of tolerances.

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpt/rational.hpp"

namespace mpt {

// Dominance pairs (hi, lo) meaning eta_hi >= eta_lo, indices 1-based.
struct DominanceOrder {
  int k = 0;
  std::vector<std::pair<int, int>> pairs;
};

enum class VertexProvenance { enumerated, table };

struct VertexSet {
  std::vector<std::vector<Rational>> vertices;
  VertexProvenance provenance = VertexProvenance::enumerated;

  int dimension() const { return vertices.empty() ? 0 : static_cast<int>(vertices[0].size()); }
  int count() const { return static_cast<int>(vertices.size()); }
  std::vector<std::vector<double>> as_doubles() const {
    std::vector<std::vector<double>> out;
    out.reserve(vertices.size());
    for (const auto& v : vertices) {
      std::vector<double> row;
      row.reserve(v.size());
      for (const auto& x : v) row.push_back(x.to_double());
      out.push_back(std::move(row));
    }
    return out;
  }
};

namespace polytope_detail {

inline void check_order(const DominanceOrder& order) {
  if (order.k < 1 || order.k > 12)
    throw std::invalid_argument("dominance order size must be in 1..12, got " +
                                std::to_string(order.k));
  for (const auto& [hi, lo] : order.pairs)
    if (hi < 1 || hi > order.k || lo < 1 || lo > order.k || hi == lo)
      throw std::invalid_argument("dominance pair indices must be distinct and in 1..k");
  // cycle detection
  std::vector<std::vector<int>> adj(order.k + 1);
  for (const auto& [hi, lo] : order.pairs) adj[hi].push_back(lo);
  std::vector<int> state(order.k + 1, 0);
  bool cyclic = false;
  auto dfs = [&](auto&& self, int v) -> void {
    state[v] = 1;
    for (int w : adj[v]) {
      if (state[w] == 1) cyclic = true;
      else if (state[w] == 0) self(self, w);
    }
    state[v] = 2;
  };
  for (int v = 1; v <= order.k && !cyclic; ++v)
    if (state[v] == 0) dfs(dfs, v);
  if (cyclic) throw std::invalid_argument("dominance order is cyclic");
}

// Exact phase-1 simplex: is `point` a convex combination of `others`?
// All coordinates are nonnegative and every column sums to one, so the
// convexity constraint is implied by the coordinate equations.
inline bool in_convex_hull(const std::vector<std::vector<Rational>>& others,
                           const std::vector<Rational>& point) {
  if (others.empty()) return false;
  const int k = static_cast<int>(point.size());
  const int m = static_cast<int>(others.size());
  const int cols = m + k;  // candidate weights + artificials

  std::vector<std::vector<Rational>> tab(k, std::vector<Rational>(cols + 1, Rational(0)));
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < m; ++j) tab[i][j] = others[j][i];
    tab[i][m + i] = Rational(1);
    tab[i][cols] = point[i];
  }
  std::vector<Rational> obj(cols + 1, Rational(0));  // minimize sum of artificials
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= cols; ++j)
      obj[j] -= tab[i][j];
  std::vector<int> basis(k);
  for (int i = 0; i < k; ++i) basis[i] = m + i;

  while (true) {
    int enter = -1;  // Bland's rule: smallest index with negative reduced cost
    for (int j = 0; j < cols; ++j)
      if (obj[j] < Rational(0)) {
        enter = j;
        break;
      }
    if (enter < 0) break;
    int leave = -1;
    Rational best_ratio(0);
    for (int i = 0; i < k; ++i) {
      if (tab[i][enter] > Rational(0)) {
        Rational ratio = tab[i][cols] / tab[i][enter];
        if (leave < 0 || ratio < best_ratio ||
            (ratio == best_ratio && basis[i] < basis[leave])) {
          leave = i;
          best_ratio = ratio;
        }
      }
    }
    if (leave < 0) break;  // unbounded cannot happen in phase 1; stop defensively
    Rational pivot = tab[leave][enter];
    for (int j = 0; j <= cols; ++j) tab[leave][j] /= pivot;
    for (int i = 0; i < k; ++i) {
      if (i == leave) continue;
      Rational f = tab[i][enter];
      if (f == Rational(0)) continue;
      for (int j = 0; j <= cols; ++j) tab[i][j] -= f * tab[leave][j];
    }
    Rational fo = obj[enter];
    if (fo != Rational(0))
      for (int j = 0; j <= cols; ++j) obj[j] -= fo * tab[leave][j];
    basis[leave] = enter;
  }
  // feasible iff the phase-1 objective reaches zero
  return -obj[cols] == Rational(0);
}

}  // namespace polytope_detail

// Vertices are uniform distributions on nonempty up-closed member sets,
// pruned to extreme points and sorted in descending lexicographic order.
inline VertexSet enumerate_vertices(const DominanceOrder& order) {
  polytope_detail::check_order(order);
  const int k = order.k;
  std::vector<std::vector<Rational>> candidates;
  std::vector<unsigned> supports;
  for (unsigned mask = 1; mask < (1u << k); ++mask) {
    bool up_closed = true;
    for (const auto& [hi, lo] : order.pairs) {
      if ((mask >> (lo - 1) & 1u) && !(mask >> (hi - 1) & 1u)) {
        up_closed = false;
        break;
      }
    }
    if (!up_closed) continue;
    int size = std::popcount(mask);
    std::vector<Rational> v(k, Rational(0));
    for (int i = 0; i < k; ++i)
      if (mask >> i & 1u) v[i] = Rational(1, size);
    candidates.push_back(std::move(v));
    supports.push_back(mask);
  }

  VertexSet result;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<std::vector<Rational>> others;
    for (std::size_t o = 0; o < candidates.size(); ++o) {
      if (o == c) continue;
      if ((supports[o] & ~supports[c]) != 0) continue;  // mass outside the support
      others.push_back(candidates[o]);
    }
    if (!polytope_detail::in_convex_hull(others, candidates[c]))
      result.vertices.push_back(candidates[c]);
  }
  std::sort(result.vertices.begin(), result.vertices.end(),
            [](const std::vector<Rational>& a, const std::vector<Rational>& b) {
              for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i] != b[i]) return a[i] > b[i];
              }
              return false;
            });
  result.provenance = VertexProvenance::enumerated;
  return result;
}

// Direct check of the inequality system at tolerance 1e-12.
inline bool membership(const DominanceOrder& order, std::span<const double> eta) {
  polytope_detail::check_order(order);
  if (static_cast<int>(eta.size()) != order.k)
    throw std::invalid_argument("point dimension does not match order size");
  double sum = 0.0;
  for (double x : eta) sum += x;
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("point does not sum to 1 within 1e-12");
  for (double x : eta)
    if (x < -1e-12) return false;
  for (const auto& [hi, lo] : order.pairs)
    if (eta[hi - 1] < eta[lo - 1] - 1e-12) return false;
  return true;
}

struct RecoveredWeights {
  std::vector<double> lambda;
  bool unique = false;     // vertices affinely independent -> weights unique
  double residual = 0.0;   // max abs reconstruction error
};

namespace polytope_detail {

// Maximum-entropy weights with moment constraints V w = eta, via Newton on the
// dual. Divergence means eta sits on a proper face (or outside the hull); in
// that case the active vertex set is peeled by dual score and the solve
// recurses on the face.
inline bool max_entropy_weights(const std::vector<std::vector<double>>& verts,
                                std::span<const double> eta, std::vector<int> active,
                                std::vector<double>& w_out) {
  const int k = static_cast<int>(eta.size());
  while (true) {
    const int m = static_cast<int>(active.size());
    if (m == 0) return false;
    if (m == 1) {
      w_out.assign(verts.size(), 0.0);
      w_out[active[0]] = 1.0;
      return true;
    }
    Eigen::MatrixXd V(k, m);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < k; ++i) V(i, j) = verts[active[j]][i];
    Eigen::VectorXd target(k);
    for (int i = 0; i < k; ++i) target(i) = eta[i];

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd w(m);
    bool converged = false;
    for (int iter = 0; iter < 200; ++iter) {
      Eigen::VectorXd scores = V.transpose() * phi;
      double smax = scores.maxCoeff();
      w = (scores.array() - smax).exp();
      w /= w.sum();
      Eigen::VectorXd mean = V * w;
      Eigen::VectorXd grad = mean - target;
      if (grad.lpNorm<Eigen::Infinity>() < 1e-14) {
        converged = true;
        break;
      }
      Eigen::MatrixXd cov = V * w.asDiagonal() * V.transpose() - mean * mean.transpose();
      cov.diagonal().array() += 1e-13;
      Eigen::VectorXd step = cov.ldlt().solve(grad);
      if (!step.allFinite()) break;
      double t = 1.0;
      auto dual = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd s = V.transpose() * p;
        double mx = s.maxCoeff();
        return mx + std::log((s.array() - mx).exp().sum()) - p.dot(target);
      };
      double g0 = dual(phi);
      Eigen::VectorXd cand;
      for (int h = 0; h < 45; ++h) {
        cand = phi - t * step;
        if (dual(cand) < g0) break;
        t *= 0.5;
      }
      phi = cand;
      if (phi.lpNorm<Eigen::Infinity>() > 600.0) break;  // boundary: peel below
    }
    if (converged) {
      w_out.assign(verts.size(), 0.0);
      for (int j = 0; j < m; ++j) w_out[active[j]] = w(j);
      return true;
    }
    // Peel: keep vertices whose dual score is within 60 of the maximum.
    Eigen::VectorXd scores = V.transpose() * phi;
    double smax = scores.maxCoeff();
    std::vector<int> kept;
    for (int j = 0; j < m; ++j)
      if (scores(j) >= smax - 60.0) kept.push_back(active[j]);
    if (static_cast<int>(kept.size()) == m) {
      // No progress; fall back to the current softmax point.
      w_out.assign(verts.size(), 0.0);
      Eigen::VectorXd w_cur = (scores.array() - smax).exp();
      w_cur /= w_cur.sum();
      for (int j = 0; j < m; ++j) w_out[active[j]] = w_cur(j);
      return true;
    }
    active = std::move(kept);
  }
}

}  // namespace polytope_detail

// Weights lambda >= 0, sum 1, with sum_j lambda_j * vertex_j = eta. When the
// vertex count exceeds the affine dimension the solution is not unique; the
// maximum-entropy representative is returned and the result flagged.
inline RecoveredWeights recover_lambda(const VertexSet& vertices, std::span<const double> eta) {
  const int k = vertices.dimension();
  const int m = vertices.count();
  if (static_cast<int>(eta.size()) != k)
    throw std::invalid_argument("point dimension does not match vertex dimension");
  auto verts = vertices.as_doubles();

  // Uniqueness: rank of the vertex matrix with an appended 1-row.
  Eigen::MatrixXd A(k + 1, m);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < k; ++i) A(i, j) = verts[j][i];
    A(k, j) = 1.0;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  lu.setThreshold(1e-10);
  bool unique = lu.rank() == m;

  // Vertices with mass where eta has (numerically) none cannot carry weight.
  std::vector<int> active;
  for (int j = 0; j < m; ++j) {
    bool ok = true;
    for (int i = 0; i < k; ++i)
      if (verts[j][i] > 0.0 && eta[i] < 1e-13) {
        ok = false;
        break;
      }
    if (ok) active.push_back(j);
  }

  std::vector<double> w;
  bool solved = polytope_detail::max_entropy_weights(verts, eta, active, w);
  double residual = std::numeric_limits<double>::infinity();
  if (solved) {
    residual = 0.0;
    for (int i = 0; i < k; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += w[j] * verts[j][i];
      residual = std::max(residual, std::abs(s - eta[i]));
    }
  }
  if (!solved || residual > 1e-10)
    throw std::domain_error("point is not in the polytope (reconstruction residual " +
                            std::to_string(residual) + ")");
  return {std::move(w), unique, residual};
}

}  // namespace mpt
