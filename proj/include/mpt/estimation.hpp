#pragma once

// Maximum-likelihood fitting of (rewritten, order-free) MPT models.
//
// The optimizer works on the binary representation: EM over the latent branch
// traversals is the primary engine, followed by a projected ascent polish
// step that uses the expected-information metric and analytic gradients. Both
// stages only ever accept likelihood improvements.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpt/model.hpp"
#include "mpt/parallel.hpp"
#include "mpt/random.hpp"
#include "mpt/reparam.hpp"

namespace mpt {

struct FitOptions {
  int starts = 20;
  std::uint64_t seed = 0;
  int max_em_iterations = 2000;
  int max_polish_iterations = 100;
  double em_tol = 1e-10;
  double gradient_tol = 1e-6;
  bool record_trace = false;  // keep the accepted-objective trace of the best start
};

struct FitResult {
  ParamAssignment estimates;  // every parameter of the fitted model
  std::vector<std::string> free_names;
  std::vector<double> free_values;  // binary coordinates of the optimum
  double log_likelihood = 0.0;      // kernel: sum of n_c log p_c
  double g_squared = 0.0;
  int df = 0;
  bool converged = false;
  int iterations = 0;
  int n_starts = 0;
  std::vector<double> trace;
  // context carried for downstream operations (bootstrap, back-transform)
  MptModel model;
  Dataset data;
  BinaryConversion binary;
};

namespace estimation_detail {

constexpr double kLogFloor = 1e-12;

struct Problem {
  CompiledModel cm;
  std::vector<double> counts;        // by flat category index
  std::vector<double> tree_totals;   // by tree index
  int d;

  explicit Problem(const MptModel& binary_model, const Dataset& data) : cm(binary_model), d(0) {
    d = cm.free_count();
    counts.assign(cm.category_count(), 0.0);
    tree_totals.assign(cm.tree_count(), 0.0);
    for (int t = 0; t < cm.tree_count(); ++t) {
      const std::string& tree = cm.tree_names()[t];
      auto it = data.find(tree);
      if (it == data.end()) throw std::invalid_argument("dataset is missing tree '" + tree + "'");
      for (int c = cm.tree_begin(t); c < cm.tree_end(t); ++c) {
        auto jt = it->second.find(cm.category_name(c));
        if (jt == it->second.end())
          throw std::invalid_argument("dataset is missing category '" + cm.category_name(c) +
                                      "' in tree '" + tree + "'");
        if (jt->second < 0) throw std::invalid_argument("negative count");
        counts[c] = static_cast<double>(jt->second);
        tree_totals[t] += counts[c];
      }
      if (it->second.size() != static_cast<std::size_t>(cm.tree_end(t) - cm.tree_begin(t)))
        throw std::invalid_argument("dataset has extra categories in tree '" + tree + "'");
      if (tree_totals[t] < 1.0)
        throw std::invalid_argument("tree '" + tree + "' has no observations");
    }
    if (data.size() != static_cast<std::size_t>(cm.tree_count()))
      throw std::invalid_argument("dataset has extra trees");
  }

  double log_likelihood(const std::vector<double>& probs) const {
    double ll = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] > 0.0) ll += counts[c] * std::log(std::max(probs[c], kLogFloor));
    return ll;
  }
};

struct StartOutcome {
  std::vector<double> theta;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;
};

inline StartOutcome optimize_from(const Problem& prob, std::vector<double> theta,
                                  const FitOptions& opt) {
  const auto& branches = prob.cm.compiled_branches();
  const int d = prob.d;
  StartOutcome out;
  std::vector<double> probs;
  std::vector<double> m1(d), m0(d);

  prob.cm.probabilities(theta, probs);
  double ll = prob.log_likelihood(probs);
  if (opt.record_trace) out.trace.push_back(ll);

  // EM: expected traversal counts of each binary link, then the closed-form
  // M-step. Constants and the data are fixed; the objective never decreases.
  int iter = 0;
  for (; iter < opt.max_em_iterations; ++iter) {
    std::fill(m1.begin(), m1.end(), 0.0);
    std::fill(m0.begin(), m0.end(), 0.0);
    for (const auto& b : branches) {
      double nb = prob.counts[b.category];
      if (nb <= 0.0) continue;
      double pc = probs[b.category];
      if (pc < 1e-300) continue;
      double pb = b.coefficient;
      for (const auto& f : b.factors) pb *= f.complemented ? 1.0 - theta[f.param] : theta[f.param];
      double u = nb * pb / pc;
      if (u <= 0.0) continue;
      for (const auto& f : b.factors) {
        if (f.complemented)
          m0[f.param] += u;
        else
          m1[f.param] += u;
      }
    }
    for (int i = 0; i < d; ++i) {
      double denom = m1[i] + m0[i];
      if (denom > 1e-300) theta[i] = m1[i] / denom;
    }
    prob.cm.probabilities(theta, probs);
    double next = prob.log_likelihood(probs);
    if (opt.record_trace) out.trace.push_back(next);
    double gain = next - ll;
    ll = next;
    if (std::abs(gain) < opt.em_tol * (1.0 + std::abs(ll))) break;
  }

  // Polish: projected ascent preconditioned with the expected information.
  std::vector<double> grad_pc;
  Eigen::VectorXd g(d);
  Eigen::MatrixXd H(d, d);
  const double lo = 1e-9, hi = 1.0 - 1e-9;
  for (int piter = 0; piter < opt.max_polish_iterations; ++piter, ++iter) {
    prob.cm.probability_gradients(theta, probs, grad_pc);
    g.setZero();
    H.setZero();
    for (int t = 0; t < prob.cm.tree_count(); ++t) {
      double nt = prob.tree_totals[t];
      for (int c = prob.cm.tree_begin(t); c < prob.cm.tree_end(t); ++c) {
        double pc = std::max(probs[c], kLogFloor);
        const double* row = &grad_pc[static_cast<std::size_t>(c) * d];
        for (int i = 0; i < d; ++i) {
          if (prob.counts[c] > 0.0) g(i) += prob.counts[c] / pc * row[i];
          for (int j = i; j < d; ++j) H(i, j) += nt / pc * row[i] * row[j];
        }
      }
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < i; ++j) H(i, j) = H(j, i);

    double pg_norm = 0.0;
    for (int i = 0; i < d; ++i) {
      double gi = g(i);
      if ((theta[i] <= lo && gi < 0.0) || (theta[i] >= hi && gi > 0.0)) gi = 0.0;
      pg_norm = std::max(pg_norm, std::abs(gi));
    }
    if (pg_norm < opt.gradient_tol) {
      out.converged = true;
      break;
    }
    H.diagonal().array() += 1e-9;
    Eigen::VectorXd step = H.ldlt().solve(g);
    if (!step.allFinite()) break;
    double t_step = 1.0;
    bool improved = false;
    std::vector<double> cand(d), cand_probs;
    for (int h = 0; h < 30; ++h) {
      for (int i = 0; i < d; ++i) cand[i] = std::clamp(theta[i] + t_step * step(i), lo, hi);
      prob.cm.probabilities(cand, cand_probs);
      double cll = prob.log_likelihood(cand_probs);
      if (cll > ll) {
        theta = cand;
        probs = cand_probs;
        ll = cll;
        if (opt.record_trace) out.trace.push_back(ll);
        improved = true;
        break;
      }
      t_step *= 0.5;
    }
    if (!improved) {
      // EM stationary point with no ascent direction left at this scale.
      out.converged = pg_norm < 1e-3;
      break;
    }
  }

  out.theta = std::move(theta);
  out.log_likelihood = ll;
  out.iterations = iter;
  return out;
}

}  // namespace estimation_detail

inline FitResult fit(const MptModel& model, const Dataset& data, const FitOptions& opt) {
  if (!model.orders.empty())
    throw std::invalid_argument("model still carries order constraints; apply transform first");
  if (opt.starts < 1) throw std::invalid_argument("starts must be >= 1");

  BinaryConversion binary = to_binary(model);
  estimation_detail::Problem prob(binary.model, data);
  const int d = prob.d;

  estimation_detail::StartOutcome best;
  for (int s = 0; s < opt.starts; ++s) {
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(s)));
    std::vector<double> theta(d);
    for (int i = 0; i < d; ++i) theta[i] = rng.uniform(0.05, 0.95);
    auto outcome = estimation_detail::optimize_from(prob, std::move(theta), opt);
    if (outcome.log_likelihood > best.log_likelihood) best = std::move(outcome);
  }

  FitResult result;
  result.free_names = prob.cm.free_names();
  result.free_values = best.theta;
  result.log_likelihood = best.log_likelihood;
  result.converged = best.converged;
  result.iterations = best.iterations;
  result.n_starts = opt.starts;
  result.trace = std::move(best.trace);

  std::vector<double> probs;
  prob.cm.probabilities(best.theta, probs);
  double g2 = 0.0;
  int df = 0;
  for (int t = 0; t < prob.cm.tree_count(); ++t) {
    double nt = prob.tree_totals[t];
    df += prob.cm.tree_end(t) - prob.cm.tree_begin(t) - 1;
    for (int c = prob.cm.tree_begin(t); c < prob.cm.tree_end(t); ++c) {
      double n = prob.counts[c];
      if (n > 0.0)
        g2 += 2.0 * n * std::log(n / (nt * std::max(probs[c], estimation_detail::kLogFloor)));
    }
  }
  result.g_squared = g2;
  result.df = df - d;

  ParamAssignment binary_assignment = prob.cm.assignment_from_values(best.theta);
  result.estimates = binary.inverse(binary_assignment);
  result.model = model;
  result.data = data;
  result.binary = std::move(binary);
  return result;
}

// ---------------------------------------------------------------------------
// Back-transformation of estimates to the constrained scale, with standard
// errors by the delta method applied to the inverse observed information.

struct BackTransformed {
  ParamAssignment original_estimates;       // constrained-model parameters
  std::vector<std::string> parameter_order; // row/column order of `covariance`
  std::map<std::string, double> std_errors;
  Eigen::MatrixXd covariance;
  bool se_available = false;
  std::string se_note;
};

namespace estimation_detail {

// Observed information (negative Hessian of the log-likelihood kernel) by
// central second differences, step 1e-5.
inline Eigen::MatrixXd observed_information(const Problem& prob, const std::vector<double>& theta) {
  const int d = prob.d;
  const double h = 1e-5;
  auto ll_at = [&](std::vector<double>& point) {
    std::vector<double> probs;
    prob.cm.probabilities(point, probs);
    return prob.log_likelihood(probs);
  };
  std::vector<double> point = theta;
  double base = ll_at(point);
  Eigen::MatrixXd info(d, d);
  for (int i = 0; i < d; ++i) {
    point = theta;
    point[i] = theta[i] + h;
    double fp = ll_at(point);
    point[i] = theta[i] - h;
    double fm = ll_at(point);
    info(i, i) = -(fp - 2.0 * base + fm) / (h * h);
    for (int j = i + 1; j < d; ++j) {
      point = theta;
      point[i] = theta[i] + h;
      point[j] = theta[j] + h;
      double fpp = ll_at(point);
      point[j] = theta[j] - h;
      double fpm = ll_at(point);
      point[i] = theta[i] - h;
      double fmm = ll_at(point);
      point[j] = theta[j] + h;
      double fmp = ll_at(point);
      double v = -(fpp - fpm - fmp + fmm) / (4.0 * h * h);
      info(i, j) = v;
      info(j, i) = v;
    }
  }
  return info;
}

}  // namespace estimation_detail

inline BackTransformed back_transform(const FitResult& fit_result,
                                      const TransformManifest& manifest) {
  if (!fit_result.converged)
    throw std::invalid_argument("back_transform requires a converged fit");

  // theta (binary coordinates) -> original constrained parameters
  auto map_through = [&](const std::vector<double>& theta) {
    ParamAssignment binary_assignment;
    for (std::size_t i = 0; i < fit_result.free_names.size(); ++i)
      binary_assignment[fit_result.free_names[i]] = theta[i];
    ParamAssignment rewritten = fit_result.binary.inverse(binary_assignment);
    return original_from_rewritten(manifest, rewritten);
  };

  BackTransformed out;
  out.original_estimates = map_through(fit_result.free_values);
  for (const auto& [name, _] : out.original_estimates) out.parameter_order.push_back(name);
  const int n_out = static_cast<int>(out.parameter_order.size());
  const int d = static_cast<int>(fit_result.free_values.size());

  // Jacobian of the transformation by central differences, step 1e-6.
  const double h = 1e-6;
  Eigen::MatrixXd jac(n_out, d);
  for (int j = 0; j < d; ++j) {
    std::vector<double> tp = fit_result.free_values;
    std::vector<double> tm = fit_result.free_values;
    tp[j] = std::min(1.0, tp[j] + h);
    tm[j] = std::max(0.0, tm[j] - h);
    double span = tp[j] - tm[j];
    ParamAssignment up = map_through(tp);
    ParamAssignment dn = map_through(tm);
    for (int i = 0; i < n_out; ++i) {
      const std::string& name = out.parameter_order[i];
      jac(i, j) = span > 0 ? (up.at(name) - dn.at(name)) / span : 0.0;
    }
  }

  estimation_detail::Problem prob(fit_result.binary.model, fit_result.data);
  Eigen::MatrixXd info = estimation_detail::observed_information(prob, fit_result.free_values);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive();
  if (!singular) {
    Eigen::MatrixXd cov_theta = ldlt.solve(Eigen::MatrixXd::Identity(d, d));
    if (!cov_theta.allFinite()) singular = true;
    if (!singular) {
      Eigen::MatrixXd cov = jac * cov_theta * jac.transpose();
      cov = 0.5 * (cov + cov.transpose()).eval();
      out.covariance = cov;
      for (int i = 0; i < n_out; ++i)
        out.std_errors[out.parameter_order[i]] = std::sqrt(std::max(0.0, cov(i, i)));
      out.se_available = true;
    }
  }
  if (singular) {
    out.se_note =
        "observed information is singular at the estimate (typically a boundary solution); "
        "standard errors unavailable";
    out.covariance = Eigen::MatrixXd::Zero(n_out, n_out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parametric bootstrap of the goodness-of-fit statistic under the fitted null.

struct BootstrapOptions {
  int B = 199;
  std::uint64_t seed = 0;
  int starts = 5;           // starts per replicate refit
  int observed_starts = 20; // starts for the observed fit
  int threads = 1;
  double max_drop_fraction = 0.05;
};

struct BootstrapResult {
  std::vector<double> replicates;  // per-replicate G^2, replicate order
  double p_value = 1.0;
  int B = 0;
  std::uint64_t seed = 0;
  int dropped = 0;
  double observed_g2 = 0.0;
  FitResult null_fit;
};

inline BootstrapResult bootstrap_g2(const MptModel& model, const Dataset& data,
                                    const BootstrapOptions& opt) {
  if (opt.B < 1) throw std::invalid_argument("B must be >= 1");
  FitOptions fit_opt;
  fit_opt.starts = opt.observed_starts;
  fit_opt.seed = opt.seed;
  FitResult null_fit = fit(model, data, fit_opt);

  std::map<std::string, std::int64_t> n_per_tree;
  for (const auto& [tree, counts] : data) {
    std::int64_t total = 0;
    for (const auto& [_, n] : counts) total += n;
    n_per_tree[tree] = total;
  }

  std::vector<double> g2(opt.B, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> failed(opt.B, 0);
  parallel_for(opt.B, opt.threads, [&](int b) {
    std::uint64_t rep_seed = derive_seed(opt.seed, static_cast<std::uint64_t>(b) + 1);
    try {
      Dataset sim = simulate(model, null_fit.estimates, n_per_tree, rep_seed);
      FitOptions ro;
      ro.starts = opt.starts;
      ro.seed = derive_seed(rep_seed, 7);
      g2[b] = fit(model, sim, ro).g_squared;
    } catch (const std::exception&) {
      failed[b] = 1;
    }
  });

  BootstrapResult result;
  result.B = opt.B;
  result.seed = opt.seed;
  result.observed_g2 = null_fit.g_squared;
  for (int b = 0; b < opt.B; ++b) {
    if (failed[b])
      ++result.dropped;
    else
      result.replicates.push_back(g2[b]);
  }
  if (result.dropped > opt.max_drop_fraction * opt.B)
    throw std::runtime_error("bootstrap dropped " + std::to_string(result.dropped) + " of " +
                             std::to_string(opt.B) + " replicates");
  int at_least = 0;
  for (double v : result.replicates)
    if (v >= result.observed_g2) ++at_least;
  result.p_value = (1.0 + at_least) / (static_cast<double>(result.replicates.size()) + 1.0);
  result.null_fit = std::move(null_fit);
  return result;
}

}  // namespace mpt
