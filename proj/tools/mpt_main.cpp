// Command-line front end: validate, transform, vertices, simulate, fit,
// bootstrap, fia, compare. Every stochastic command requires --seed and every
// run echoes a reproducibility header (version, seed, config hash).

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mpt/mpt.hpp"

namespace {

std::uint64_t config_hash(int argc, char** argv) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int i = 1; i < argc; ++i)
    for (const char* p = argv[i]; *p; ++p) {
      h ^= static_cast<unsigned char>(*p);
      h *= 1099511628211ULL;
    }
  return h;
}

void print_header(std::uint64_t hash, std::optional<std::uint64_t> seed) {
  std::printf("# mpt %s", mpt::kVersion);
  if (seed) std::printf(" seed=%" PRIu64, *seed);
  std::printf(" config=%016" PRIx64 "\n", hash);
}

mpt::MptModel load_model(const std::string& path) {
  auto result = mpt::parse_model(mpt::read_text_file(path));
  if (!result.ok()) {
    std::ostringstream msg;
    msg << path << " has " << result.errors.size() << " error(s):";
    for (const auto& e : result.errors)
      msg << "\n  " << path << ":" << e.span.line << ":" << e.span.col_begin << ": " << e.message;
    throw std::runtime_error(msg.str());
  }
  return *result.model;
}

std::map<std::string, double> parse_kv_doubles(const std::string& text) {
  std::map<std::string, double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw std::runtime_error("expected name=value in '" + item + "'");
    out[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::int64_t> parse_kv_counts(const std::string& text) {
  std::map<std::string, std::int64_t> out;
  for (const auto& [k, v] : parse_kv_doubles(text)) out[k] = static_cast<std::int64_t>(v);
  return out;
}

mpt::PartialMode parse_partial_mode(const std::string& mode) {
  if (mode == "theta") return mpt::PartialMode::theta;
  if (mode == "overparameterized" || mode == "over") return mpt::PartialMode::overparameterized;
  throw std::runtime_error("unknown partial mode '" + mode + "'");
}

void emit(const std::string& text, const std::string& output_path) {
  if (output_path.empty())
    std::fputs(text.c_str(), stdout);
  else
    mpt::write_text_file(output_path, text);
}

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fit_report_text(const mpt::FitResult& fit,
                            const mpt::BackTransformed* back) {
  std::ostringstream out;
  out << "log_likelihood " << format_double(fit.log_likelihood) << "\n";
  out << "g_squared " << format_double(fit.g_squared) << "\n";
  out << "df " << fit.df << "\n";
  out << "converged " << (fit.converged ? "yes" : "no") << "\n";
  out << "iterations " << fit.iterations << "\n";
  out << "n_starts " << fit.n_starts << "\n";
  out << "estimates:\n";
  for (const auto& [name, value] : fit.estimates)
    out << "  " << name << " " << format_double(value) << "\n";
  if (back != nullptr) {
    out << "back_transformed:\n";
    for (const auto& name : back->parameter_order) {
      out << "  " << name << " " << format_double(back->original_estimates.at(name));
      if (back->se_available) out << " se " << format_double(back->std_errors.at(name));
      out << "\n";
    }
    if (!back->se_available) out << "  (" << back->se_note << ")\n";
  }
  return out.str();
}

struct CommonState {
  std::uint64_t hash = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Order-constrained MPT models: rewrite, fit, test, compare"};
  app.require_subcommand(1);
  CommonState state;
  state.hash = config_hash(argc, argv);

  int exit_code = 0;
  auto run = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      exit_code = 1;
    }
  };

  // --- validate ------------------------------------------------------------
  auto* cmd_validate = app.add_subcommand("validate", "Check a model file");
  static std::string validate_path;
  cmd_validate->add_option("model", validate_path, "model file (.mpt)")->required();
  cmd_validate->callback([&] {
    run([&] {
      print_header(state.hash, std::nullopt);
      auto result = mpt::parse_model(mpt::read_text_file(validate_path));
      if (result.ok()) {
        std::printf("%s: ok\n", validate_path.c_str());
        return;
      }
      for (const auto& e : result.errors)
        std::printf("%s:%d:%d: %s\n", validate_path.c_str(), e.span.line, e.span.col_begin,
                    e.message.c_str());
      exit_code = 1;
    });
  });

  // --- transform -----------------------------------------------------------
  auto* cmd_transform = app.add_subcommand(
      "transform", "Rewrite order constraints into an equivalent unconstrained model");
  static std::string transform_in, transform_out, transform_manifest, transform_mode = "theta";
  cmd_transform->add_option("model", transform_in, "model file")->required();
  cmd_transform->add_option("-o,--output", transform_out, "rewritten model file")->required();
  cmd_transform->add_option("--manifest", transform_manifest, "transformation manifest (JSON)");
  cmd_transform->add_option("--partial-mode", transform_mode,
                            "theta | overparameterized (for partial orders)");
  cmd_transform->callback([&] {
    run([&] {
      print_header(state.hash, std::nullopt);
      auto model = load_model(transform_in);
      auto transformed = mpt::transform_model(model, parse_partial_mode(transform_mode));
      mpt::write_text_file(transform_out, mpt::serialize_model(transformed.model));
      if (!transform_manifest.empty())
        mpt::write_text_file(transform_manifest,
                             mpt::manifest_to_json(transformed.manifest).dump(2) + "\n");
      std::printf("rewrote %zu constraint group(s) into %zu step(s); output %s\n",
                  model.orders.size(), transformed.manifest.steps.size(), transform_out.c_str());
      for (const auto& s : transformed.manifest.steps)
        if (s.kind == mpt::TransformStep::Kind::vertex_mixture && !s.identifiable)
          std::printf("note: group '%s' rewritten with %zu vertex weights; the weights are not "
                      "identifiable\n",
                      s.group.c_str(), s.weight_params.size());
    });
  });

  // --- vertices --------------------------------------------------------------
  auto* cmd_vertices =
      app.add_subcommand("vertices", "Vertices of a simplex order polytope (exact fractions)");
  static std::string vertices_pattern, vertices_constraints;
  static int vertices_k = 0;
  cmd_vertices->add_option("--pattern", vertices_pattern,
                           "registered pattern: I..X, linear, dominant3");
  cmd_vertices->add_option("--k", vertices_k, "outcome count (required for --pattern linear)");
  cmd_vertices->add_option("--constraints", vertices_constraints,
                           "inline spec, e.g. \"k=4; 1>=2; 2>=3; 3>=4\"");
  cmd_vertices->callback([&] {
    run([&] {
      print_header(state.hash, std::nullopt);
      mpt::VertexSet vs;
      if (!vertices_pattern.empty()) {
        auto tag = mpt::pattern_from_name(vertices_pattern);
        if (!tag) throw std::runtime_error("unknown pattern '" + vertices_pattern + "'");
        const auto& info = mpt::pattern_info(*tag, vertices_k);
        vs.vertices = info.vertices;
        vs.provenance = mpt::VertexProvenance::table;
      } else if (!vertices_constraints.empty()) {
        mpt::DominanceOrder order;
        std::istringstream in(vertices_constraints);
        std::string part;
        while (std::getline(in, part, ';')) {
          std::erase(part, ' ');
          if (part.empty()) continue;
          if (part.rfind("k=", 0) == 0) {
            order.k = std::stoi(part.substr(2));
          } else {
            auto ge = part.find(">=");
            if (ge == std::string::npos)
              throw std::runtime_error("expected 'i>=j' in constraints, got '" + part + "'");
            order.pairs.push_back(
                {std::stoi(part.substr(0, ge)), std::stoi(part.substr(ge + 2))});
          }
        }
        if (order.k == 0) throw std::runtime_error("constraints must set k=<count>");
        vs = mpt::enumerate_vertices(order);
      } else {
        throw std::runtime_error("give either --pattern or --constraints");
      }
      for (const auto& v : vs.vertices) {
        for (std::size_t i = 0; i < v.size(); ++i)
          std::printf("%s%s", i ? " " : "", v[i].str().c_str());
        std::printf("\n");
      }
    });
  });

  // --- simulate --------------------------------------------------------------
  auto* cmd_simulate = app.add_subcommand("simulate", "Draw multinomial data from a model");
  static std::string sim_model, sim_params, sim_params_file, sim_n, sim_out;
  static std::uint64_t sim_seed = 0;
  cmd_simulate->add_option("model", sim_model, "model file")->required();
  cmd_simulate->add_option("--params", sim_params, "name=value,... for every parameter");
  cmd_simulate->add_option("--params-file", sim_params_file, "JSON file of parameter values");
  cmd_simulate->add_option("--n", sim_n, "tree=count,... observations per tree")->required();
  cmd_simulate->add_option("--seed", sim_seed, "random seed")->required();
  cmd_simulate->add_option("-o,--output", sim_out, "output CSV (default stdout)");
  cmd_simulate->callback([&] {
    run([&] {
      print_header(state.hash, sim_seed);
      auto model = load_model(sim_model);
      mpt::ParamAssignment params;
      if (!sim_params_file.empty()) {
        auto j = nlohmann::json::parse(mpt::read_text_file(sim_params_file));
        for (auto it = j.begin(); it != j.end(); ++it) params[it.key()] = it.value().get<double>();
      }
      if (!sim_params.empty())
        for (const auto& [k, v] : parse_kv_doubles(sim_params)) params[k] = v;
      auto data = mpt::simulate(model, params, parse_kv_counts(sim_n), sim_seed);
      emit(mpt::dataset_to_csv(data, &model), sim_out);
    });
  });

  // --- fit -------------------------------------------------------------------
  auto* cmd_fit = app.add_subcommand("fit", "Maximum-likelihood fit");
  static std::string fit_model_path, fit_data_path, fit_manifest_path, fit_out,
      fit_format = "text";
  static std::uint64_t fit_seed = 0;
  static int fit_starts = 20;
  cmd_fit->add_option("model", fit_model_path, "model file (rewritten, no order lines)")
      ->required();
  cmd_fit->add_option("data", fit_data_path, "CSV dataset")->required();
  cmd_fit->add_option("--seed", fit_seed, "random seed")->required();
  cmd_fit->add_option("--starts", fit_starts, "multistart count (default 20)");
  cmd_fit->add_option("--manifest", fit_manifest_path,
                      "transformation manifest; adds back-transformed estimates");
  cmd_fit->add_option("-o,--output", fit_out, "report file (default stdout)");
  cmd_fit->add_option("--format", fit_format, "text | records");
  cmd_fit->callback([&] {
    run([&] {
      print_header(state.hash, fit_seed);
      auto model = load_model(fit_model_path);
      auto data = mpt::read_dataset_csv(fit_data_path);
      mpt::FitOptions opt;
      opt.starts = fit_starts;
      opt.seed = fit_seed;
      auto fit = mpt::fit(model, data, opt);
      std::optional<mpt::BackTransformed> back;
      if (!fit_manifest_path.empty()) {
        auto manifest = mpt::manifest_from_json(
            nlohmann::json::parse(mpt::read_text_file(fit_manifest_path)));
        back = mpt::back_transform(fit, manifest);
      }
      if (fit_format == "records") {
        nlohmann::json j = mpt::to_json(fit);
        if (back) j["back_transformed"] = mpt::to_json(*back);
        j["seed"] = fit_seed;
        j["version"] = mpt::kVersion;
        emit(j.dump(2) + "\n", fit_out);
      } else {
        emit(fit_report_text(fit, back ? &*back : nullptr), fit_out);
      }
      if (!fit.converged) std::fprintf(stderr, "warning: no start met the convergence criteria\n");
    });
  });

  // --- bootstrap ---------------------------------------------------------------
  auto* cmd_boot = app.add_subcommand("bootstrap", "Parametric bootstrap of G^2");
  static std::string boot_model_path, boot_data_path, boot_out, boot_format = "text";
  static std::uint64_t boot_seed = 0;
  static int boot_B = 199, boot_starts = 5, boot_threads = 1;
  cmd_boot->add_option("model", boot_model_path, "model file")->required();
  cmd_boot->add_option("data", boot_data_path, "CSV dataset")->required();
  cmd_boot->add_option("--seed", boot_seed, "random seed")->required();
  cmd_boot->add_option("-B,--replicates", boot_B, "bootstrap replicates (default 199)");
  cmd_boot->add_option("--starts", boot_starts, "starts per replicate refit (default 5)");
  cmd_boot->add_option("--threads", boot_threads, "worker threads (default 1)");
  cmd_boot->add_option("-o,--output", boot_out, "report file (default stdout)");
  cmd_boot->add_option("--format", boot_format, "text | records");
  cmd_boot->callback([&] {
    run([&] {
      print_header(state.hash, boot_seed);
      auto model = load_model(boot_model_path);
      auto data = mpt::read_dataset_csv(boot_data_path);
      mpt::BootstrapOptions opt;
      opt.B = boot_B;
      opt.seed = boot_seed;
      opt.starts = boot_starts;
      opt.threads = boot_threads;
      auto boot = mpt::bootstrap_g2(model, data, opt);
      if (boot_format == "records") {
        nlohmann::json j = mpt::to_json(boot);
        j["version"] = mpt::kVersion;
        emit(j.dump(2) + "\n", boot_out);
      } else {
        std::ostringstream text;
        text << "observed_g_squared " << format_double(boot.observed_g2) << "\n"
             << "B " << boot.B << "\n"
             << "dropped " << boot.dropped << "\n"
             << "p_value " << format_double(boot.p_value) << "\n";
        emit(text.str(), boot_out);
      }
    });
  });

  // --- fia -----------------------------------------------------------------------
  auto* cmd_fia = app.add_subcommand("fia", "Fisher-information model-flexibility penalty");
  static std::string fia_model_path, fia_weights, fia_out, fia_format = "text";
  static std::uint64_t fia_seed = 0;
  static double fia_N = 0.0;
  static std::int64_t fia_samples = 2'000'000;
  static int fia_threads = 1;
  cmd_fia->add_option("model", fia_model_path, "model file (rewritten, no order lines)")
      ->required();
  cmd_fia->add_option("--N", fia_N, "total observation count")->required();
  cmd_fia->add_option("--seed", fia_seed, "random seed")->required();
  cmd_fia->add_option("--mc-samples", fia_samples, "Monte Carlo draws (default 2e6)");
  cmd_fia->add_option("--weights", fia_weights, "tree=weight,... (default equal)");
  cmd_fia->add_option("--threads", fia_threads, "worker threads (default 1)");
  cmd_fia->add_option("-o,--output", fia_out, "report file (default stdout)");
  cmd_fia->add_option("--format", fia_format, "text | records");
  cmd_fia->callback([&] {
    run([&] {
      print_header(state.hash, fia_seed);
      auto model = load_model(fia_model_path);
      std::map<std::string, double> weights;
      if (!fia_weights.empty())
        weights = parse_kv_doubles(fia_weights);
      else
        for (const auto& tree : model.trees)
          weights[tree] = 1.0 / static_cast<double>(model.trees.size());
      mpt::FiaOptions opt;
      opt.seed = fia_seed;
      opt.mc_samples = fia_samples;
      opt.threads = fia_threads;
      auto fia = mpt::fia_penalty(model, weights, fia_N, opt);
      if (fia_format == "records") {
        nlohmann::json j = mpt::to_json(fia);
        j["version"] = mpt::kVersion;
        emit(j.dump(2) + "\n", fia_out);
      } else {
        std::ostringstream text;
        text << "d " << fia.d << "\n"
             << "dimension_term " << format_double(fia.dimension_term) << "\n"
             << "geometry_term " << format_double(fia.geometry_term) << "\n"
             << "mc_error " << format_double(fia.mc_error) << "\n"
             << "penalty " << format_double(fia.dimension_term + fia.geometry_term) << "\n"
             << "rejected " << fia.rejected << "\n";
        emit(text.str(), fia_out);
      }
    });
  });

  // --- compare ----------------------------------------------------------------------
  auto* cmd_compare = app.add_subcommand("compare", "Fit several models and compare indices");
  static std::vector<std::string> compare_models;
  static std::string compare_data, compare_out, compare_format = "text";
  static std::uint64_t compare_seed = 0;
  static std::int64_t compare_samples = 200'000;
  static int compare_starts = 20, compare_threads = 1;
  cmd_compare->add_option("models", compare_models, "model files")->required()->expected(-2);
  cmd_compare->add_option("--data", compare_data, "CSV dataset")->required();
  cmd_compare->add_option("--seed", compare_seed, "random seed")->required();
  cmd_compare->add_option("--mc-samples", compare_samples, "FIA draws per model (default 2e5)");
  cmd_compare->add_option("--starts", compare_starts, "multistart count (default 20)");
  cmd_compare->add_option("--threads", compare_threads, "worker threads (default 1)");
  cmd_compare->add_option("-o,--output", compare_out, "report file (default stdout)");
  cmd_compare->add_option("--format", compare_format, "text | records");
  cmd_compare->callback([&] {
    run([&] {
      print_header(state.hash, compare_seed);
      std::vector<std::pair<std::string, mpt::MptModel>> models;
      for (const auto& path : compare_models) models.emplace_back(path, load_model(path));
      auto data = mpt::read_dataset_csv(compare_data);
      mpt::ComparisonSettings settings;
      settings.fit.starts = compare_starts;
      settings.fit.seed = compare_seed;
      settings.fia.seed = mpt::derive_seed(compare_seed, 0xf1a);
      settings.fia.mc_samples = compare_samples;
      settings.fia.threads = compare_threads;
      auto report = mpt::compare(models, data, settings);
      if (compare_format == "records") {
        nlohmann::json j = mpt::to_json(report);
        j["version"] = mpt::kVersion;
        emit(j.dump(2) + "\n", compare_out);
      } else {
        std::ostringstream text;
        text << "model g_squared df aic bic fia geometry_term\n";
        for (const auto& row : report.rows) {
          if (!row.ok) {
            text << row.name << " error: " << row.error << "\n";
            continue;
          }
          text << row.name << " " << format_double(row.g_squared) << " " << row.df << " "
               << format_double(row.aic) << " " << format_double(row.bic) << " "
               << format_double(row.fia) << " " << format_double(row.geometry_term) << "\n";
        }
        text << "preferred_aic " << report.preferred_aic << "\n";
        text << "preferred_bic " << report.preferred_bic << "\n";
        text << "preferred_fia " << report.preferred_fia << "\n";
        text << "fia_threshold " << format_double(report.fia_threshold) << "\n";
        emit(text.str(), compare_out);
      }
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2, --help exits 0
  }
  return exit_code;
}
