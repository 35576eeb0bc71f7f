#pragma once

// Model-selection indices. The minimum-description-length penalty has a
// dimension term (d/2) log(N / 2 pi) and a geometry term
// log of the integral of sqrt(det I(theta)) over [0,1]^d, where I is the
// per-observation expected Fisher information mixed over trees. Inequality
// constraints enter through the rewritten model: its parameterization spans
// exactly the constrained distribution set, shrinking the geometry term.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpt/estimation.hpp"
#include "mpt/model.hpp"
#include "mpt/parallel.hpp"
#include "mpt/random.hpp"
#include "mpt/reparam.hpp"

namespace mpt {

struct FisherInformation {
  Eigen::MatrixXd matrix;
  std::vector<std::string> coordinates;  // free coordinates, row/column order
};

// Expected per-observation information
//   I_ij = sum_t w_t sum_{c in t} (1/p_c) dp_c/dtheta_i dp_c/dtheta_j
// with derivatives by central differences (step 1e-5) in the model's free
// coordinates: binary parameters directly, the first k-1 members of each
// simplex group with the last member absorbing the perturbation.
inline FisherInformation fisher_information(const MptModel& model, const ParamAssignment& params,
                                            const std::map<std::string, double>& tree_weights,
                                            double interior_eps = 1e-6) {
  check_assignment(model, params);
  CompiledModel cm(model);
  const int d = cm.free_count();

  double wsum = 0.0;
  std::vector<double> w(cm.tree_count(), 0.0);
  for (int t = 0; t < cm.tree_count(); ++t) {
    auto it = tree_weights.find(cm.tree_names()[t]);
    if (it != tree_weights.end()) w[t] = it->second;
    if (w[t] < 0.0) throw std::invalid_argument("negative tree weight");
    wsum += w[t];
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("tree weights sum to " + std::to_string(wsum) + ", not 1");

  std::vector<double> values = cm.values_from_assignment(params);
  std::vector<double> free = cm.free_from_values(values);
  for (double x : free)
    if (x < interior_eps || x > 1.0 - interior_eps)
      throw std::invalid_argument("parameters must be interior (within (eps, 1-eps))");

  std::vector<double> probs;
  cm.probabilities(values, probs);
  for (int t = 0; t < cm.tree_count(); ++t) {
    if (w[t] == 0.0) continue;
    for (int c = cm.tree_begin(t); c < cm.tree_end(t); ++c)
      if (probs[c] < 1e-12)
        throw std::invalid_argument("zero category probability at the evaluation point ('" +
                                    cm.category_name(c) + "')");
  }

  const double h = 1e-5;
  std::vector<double> shifted, pp, pm;
  Eigen::MatrixXd grad(cm.category_count(), d);
  for (int i = 0; i < d; ++i) {
    std::vector<double> fp = free, fm = free;
    fp[i] += h;
    fm[i] -= h;
    cm.values_from_free(fp, shifted);
    cm.probabilities(shifted, pp);
    cm.values_from_free(fm, shifted);
    cm.probabilities(shifted, pm);
    for (int c = 0; c < cm.category_count(); ++c) grad(c, i) = (pp[c] - pm[c]) / (2.0 * h);
  }

  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  for (int t = 0; t < cm.tree_count(); ++t) {
    if (w[t] == 0.0) continue;
    for (int c = cm.tree_begin(t); c < cm.tree_end(t); ++c) {
      double scale = w[t] / probs[c];
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) info(i, j) += scale * grad(c, i) * grad(c, j);
    }
  }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j) info(i, j) = info(j, i);
  return {std::move(info), cm.free_names()};
}

// ---------------------------------------------------------------------------

struct FiaOptions {
  std::uint64_t seed = 0;
  std::int64_t mc_samples = 2'000'000;
  int threads = 1;
  double interior_eps = 1e-6;
  double max_reject_fraction = 0.01;
};

struct FiaResult {
  double dimension_term = 0.0;  // (d/2) log(N / 2 pi)
  double geometry_term = 0.0;   // log integral of sqrt(det I)
  double mc_error = 0.0;        // standard error of the geometry term
  double fia = 0.0;             // penalty, plus -log L when data supplied
  std::int64_t samples = 0;
  std::uint64_t seed = 0;
  int d = 0;
  std::int64_t rejected = 0;
  std::optional<double> minus_log_likelihood;
};

// Monte Carlo FIA penalty for a rewritten (order-free) model. Uniform draws
// over the binary parameter cube, clipped to the interior; draws with a
// non-finite or non-positive determinant are rejected and counted.
inline FiaResult fia_penalty(const MptModel& model,
                             const std::map<std::string, double>& tree_weights, double n_total,
                             const FiaOptions& opt,
                             std::optional<double> minus_log_likelihood = std::nullopt) {
  if (!model.orders.empty())
    throw std::invalid_argument("model still carries order constraints; apply transform first");
  if (n_total < 1.0) throw std::invalid_argument("N must be >= 1");
  if (opt.mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");

  BinaryConversion binary = to_binary(model);
  CompiledModel cm(binary.model);
  const int d = cm.free_count();

  double wsum = 0.0;
  std::vector<double> w(cm.tree_count(), 0.0);
  for (int t = 0; t < cm.tree_count(); ++t) {
    auto it = tree_weights.find(cm.tree_names()[t]);
    if (it != tree_weights.end()) w[t] = it->second;
    wsum += w[t];
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("tree weights sum to " + std::to_string(wsum) + ", not 1");

  const double h = 1e-5;
  const double eps = opt.interior_eps;
  const int n_cat = cm.category_count();

  // Chunked accumulation in fixed chunk order keeps the result independent of
  // the thread count.
  const std::int64_t chunk_size = 4096;
  const int n_chunks = static_cast<int>((opt.mc_samples + chunk_size - 1) / chunk_size);
  std::vector<double> chunk_sum(n_chunks, 0.0), chunk_sumsq(n_chunks, 0.0);
  std::vector<std::int64_t> chunk_reject(n_chunks, 0);

  parallel_for(n_chunks, opt.threads, [&](int chunk) {
    std::vector<double> theta(d), probs(n_cat), pp(n_cat), pm(n_cat);
    Eigen::MatrixXd grad(n_cat, d);
    Eigen::MatrixXd info(d, d);
    double sum = 0.0, sumsq = 0.0;
    std::int64_t rejected = 0;
    std::int64_t begin = static_cast<std::int64_t>(chunk) * chunk_size;
    std::int64_t end = std::min(opt.mc_samples, begin + chunk_size);
    for (std::int64_t s = begin; s < end; ++s) {
      Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(s)));
      for (int i = 0; i < d; ++i) theta[i] = std::clamp(rng.uniform(), eps, 1.0 - eps);
      cm.probabilities(theta, probs);
      bool ok = true;
      for (int i = 0; i < d && ok; ++i) {
        double orig = theta[i];
        theta[i] = orig + h;
        cm.probabilities(theta, pp);
        theta[i] = orig - h;
        cm.probabilities(theta, pm);
        theta[i] = orig;
        for (int c = 0; c < n_cat; ++c) grad(c, i) = (pp[c] - pm[c]) / (2.0 * h);
      }
      info.setZero();
      for (int t = 0; t < cm.tree_count() && ok; ++t) {
        if (w[t] == 0.0) continue;
        for (int c = cm.tree_begin(t); c < cm.tree_end(t); ++c) {
          if (!(probs[c] > 0.0)) {
            ok = false;
            break;
          }
          double scale = w[t] / probs[c];
          for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) info(i, j) += scale * grad(c, i) * grad(c, j);
        }
      }
      if (ok) {
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < i; ++j) info(i, j) = info(j, i);
        double det = info.partialPivLu().determinant();
        if (std::isfinite(det) && det > 0.0) {
          double x = std::sqrt(det);
          if (std::isfinite(x)) {
            sum += x;
            sumsq += x * x;
            continue;
          }
        }
      }
      ++rejected;
    }
    chunk_sum[chunk] = sum;
    chunk_sumsq[chunk] = sumsq;
    chunk_reject[chunk] = rejected;
  });

  double sum = 0.0, sumsq = 0.0;
  std::int64_t rejected = 0;
  for (int c = 0; c < n_chunks; ++c) {
    sum += chunk_sum[c];
    sumsq += chunk_sumsq[c];
    rejected += chunk_reject[c];
  }
  if (rejected > opt.max_reject_fraction * static_cast<double>(opt.mc_samples))
    throw std::runtime_error("FIA Monte Carlo rejected " + std::to_string(rejected) + " of " +
                             std::to_string(opt.mc_samples) + " draws");
  std::int64_t accepted = opt.mc_samples - rejected;
  if (accepted < 2) throw std::runtime_error("FIA Monte Carlo accepted too few draws");
  double mean = sum / static_cast<double>(accepted);
  double var = std::max(0.0, sumsq / accepted - mean * mean) * accepted / (accepted - 1.0);
  double se_mean = std::sqrt(var / static_cast<double>(accepted));

  FiaResult result;
  result.d = d;
  result.samples = opt.mc_samples;
  result.seed = opt.seed;
  result.rejected = rejected;
  result.dimension_term = 0.5 * d * std::log(n_total / (2.0 * std::numbers::pi));
  result.geometry_term = std::log(mean);
  result.mc_error = se_mean / mean;  // delta method on log of the mean
  result.minus_log_likelihood = minus_log_likelihood;
  result.fia = result.dimension_term + result.geometry_term + minus_log_likelihood.value_or(0.0);
  return result;
}

// ---------------------------------------------------------------------------

struct ComparisonSettings {
  FitOptions fit;
  FiaOptions fia;
  std::map<std::string, double> tree_weights;  // empty -> equal weights
  PartialMode partial_mode = PartialMode::theta;
};

struct ComparisonRow {
  std::string name;
  bool ok = false;
  std::string error;
  double g_squared = 0.0;
  int df = 0;
  double minus_log_likelihood = 0.0;
  int free_parameters = 0;
  double aic = 0.0;
  double bic = 0.0;
  double fia = 0.0;
  double geometry_term = 0.0;
  double dimension_term = 0.0;
  double fia_mc_error = 0.0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::string preferred_aic;
  std::string preferred_bic;
  std::string preferred_fia;  // "tie" when indistinguishable
  double fia_threshold = 0.0;  // 2 x geometry-term spread
  double n_total = 0.0;
};

// Fits every model to the data and reports the selection indices. AIC and BIC
// are on the G^2 scale (differences agree with the -2 log L versions); FIA is
// on the log-likelihood scale: -log L + (d/2) log(N/2pi) + geometry.
inline ComparisonReport compare(const std::vector<std::pair<std::string, MptModel>>& models,
                                const Dataset& data, const ComparisonSettings& settings) {
  if (models.empty()) throw std::invalid_argument("no models to compare");
  ComparisonReport report;
  double n_total = 0.0;
  for (const auto& [tree, counts] : data)
    for (const auto& [_, n] : counts) n_total += static_cast<double>(n);
  report.n_total = n_total;

  std::map<std::string, double> weights = settings.tree_weights;
  if (weights.empty())
    for (const auto& [tree, _] : data) weights[tree] = 1.0 / static_cast<double>(data.size());

  for (const auto& [name, model] : models) {
    ComparisonRow row;
    row.name = name;
    try {
      TransformedModel transformed = transform_model(model, settings.partial_mode);
      FitResult fr = fit(transformed.model, data, settings.fit);
      FiaResult fia = fia_penalty(transformed.model, weights, n_total, settings.fia,
                                  -fr.log_likelihood);
      row.ok = true;
      row.g_squared = fr.g_squared;
      row.df = fr.df;
      row.minus_log_likelihood = -fr.log_likelihood;
      row.free_parameters = transformed.model.free_parameter_count();
      row.aic = fr.g_squared + 2.0 * row.free_parameters;
      row.bic = fr.g_squared + row.free_parameters * std::log(n_total);
      row.fia = fia.fia;
      row.geometry_term = fia.geometry_term;
      row.dimension_term = fia.dimension_term;
      row.fia_mc_error = fia.mc_error;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }

  auto preferred = [&](auto key) -> std::string {
    std::string best_name;
    double best = std::numeric_limits<double>::infinity();
    bool tie = false;
    for (const auto& row : report.rows) {
      if (!row.ok) continue;
      double v = key(row);
      if (v < best - 1e-12) {
        best = v;
        best_name = row.name;
        tie = false;
      } else if (std::abs(v - best) <= 1e-12) {
        tie = true;
      }
    }
    if (best_name.empty()) return "";
    return tie ? "tie" : best_name;
  };
  report.preferred_aic = preferred([](const ComparisonRow& r) { return r.aic; });
  report.preferred_bic = preferred([](const ComparisonRow& r) { return r.bic; });
  report.preferred_fia = preferred([](const ComparisonRow& r) { return r.fia; });

  double geom_min = std::numeric_limits<double>::infinity();
  double geom_max = -std::numeric_limits<double>::infinity();
  for (const auto& row : report.rows) {
    if (!row.ok) continue;
    geom_min = std::min(geom_min, row.geometry_term);
    geom_max = std::max(geom_max, row.geometry_term);
  }
  report.fia_threshold = std::isfinite(geom_min) ? 2.0 * (geom_max - geom_min) : 0.0;
  return report;
}

}  // namespace mpt
