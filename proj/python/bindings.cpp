// Python bindings: spline bases, pooling factors, exposure and outcome fits,
// and the pipeline commands.

#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "poolerc/commands.hpp"
#include "poolerc/error.hpp"
#include "poolerc/exposure_fit.hpp"
#include "poolerc/outcome_fit.hpp"
#include "poolerc/run_config.hpp"
#include "poolerc/spline_basis.hpp"

namespace py = pybind11;
using namespace poolerc;

namespace {

SamplerSettings sampler_settings(int chains, int warmup, int draws, double target_accept, std::uint64_t seed,
                                 int threads) {
  SamplerSettings s;
  s.n_chains = chains;
  s.n_warmup = warmup;
  s.n_draws = draws;
  s.target_accept = target_accept;
  s.seed = seed;
  s.n_threads = threads;
  s.validate();
  return s;
}

KnotSet knot_set(double lower, double upper, std::vector<double> interior) {
  KnotSet k{lower, upper, std::move(interior)};
  k.validate();
  return k;
}

template <class T>
void check_length(const std::vector<T>& v, std::size_t n, const char* name) {
  if (v.size() != n) throw ValidationError(std::string(name) + " has a different length from the other columns");
}

py::list summaries_list(const std::vector<ParameterSummary>& summaries) {
  py::list out;
  for (const auto& s : summaries) {
    py::dict d;
    d["name"] = s.name;
    d["mean"] = s.mean;
    d["sd"] = s.sd;
    d["q025"] = s.q025;
    d["q500"] = s.q500;
    d["q975"] = s.q975;
    d["rhat"] = s.rhat;
    d["ess"] = s.ess;
    out.append(d);
  }
  return out;
}

py::dict curve_dict(const ERCCurve& c) {
  py::dict d;
  d["study"] = c.study;
  d["x_log"] = c.x_log;
  d["mean"] = c.mean;
  d["q025"] = c.q025;
  d["q975"] = c.q975;
  d["draws"] = c.draws;
  return d;
}

ERCMode parse_mode(const std::string& s) {
  if (s == "shared") return ERCMode::Shared;
  if (s == "hierarchical") return ERCMode::Hierarchical;
  throw ConfigError("mode must be 'shared' or 'hierarchical', got '" + s + "'");
}

BetaConstraint parse_constraint(const std::string& s) {
  if (s == "free") return BetaConstraint::Free;
  if (s == "nonneg") return BetaConstraint::NonNegative;
  throw ConfigError("constraint must be 'free' or 'nonneg', got '" + s + "'");
}

// Runs one pipeline command; returns (exit code, log text).
py::tuple run_command(const std::string& command, const std::filesystem::path& config,
                      std::optional<std::uint64_t> seed, std::optional<int> draw, bool restrict_nonneg,
                      bool hierarchical, std::optional<int> threads, std::optional<std::filesystem::path> out) {
  CommandOptions opt;
  opt.seed = seed;
  opt.draw = draw;
  opt.restrict_nonneg = restrict_nonneg;
  opt.hierarchical = hierarchical;
  opt.threads = threads;
  opt.out = std::move(out);
  const RunConfig cfg = apply_options(load_config(config), opt);
  std::ostringstream log;
  int code = kExitOk;
  {
    py::gil_scoped_release release;
    if (command == "fit-exposure") {
      code = fit_exposure_command(cfg, log);
    } else if (command == "assign-exposure") {
      code = assign_exposure_command(cfg, draw, log);
    } else if (command == "fit-outcome") {
      code = fit_outcome_command(cfg, log);
    } else if (command == "simulate") {
      code = simulate_command(cfg, log);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
  }
  return py::make_tuple(code, log.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pooled exposure and exposure-response models";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  auto domain = py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<DegenerateKnotsError>(m, "DegenerateKnotsError", domain.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InitializationError>(m, "InitializationError", base.ptr());

  // Splines.
  m.def(
      "bspline_basis",
      [](const std::vector<double>& x, int degree, double lower, double upper, std::vector<double> interior) {
        return bspline_basis(x, degree, knot_set(lower, upper, std::move(interior))).values;
      },
      py::arg("x"), py::arg("degree"), py::arg("lower"), py::arg("upper"), py::arg("interior"));
  m.def(
      "ispline_basis",
      [](const std::vector<double>& x, int order, double lower, double upper, std::vector<double> interior) {
        return ISplineBasis(knot_set(lower, upper, std::move(interior)), order).evaluate(x);
      },
      py::arg("x"), py::arg("order"), py::arg("lower"), py::arg("upper"), py::arg("interior"));
  m.def(
      "natural_cubic_basis",
      [](const std::vector<double>& x, int df, const std::vector<double>& centering_grid) {
        const KnotSet k = quantile_knots(centering_grid, df - 1);
        return NaturalCubicBasis(k, df, centering_grid).evaluate(x);
      },
      py::arg("x"), py::arg("df"), py::arg("centering_grid"),
      "Centered natural cubic basis with df - 1 interior knots at quantiles of the centering grid.");
  m.def("quantile_knots", [](const std::vector<double>& values, int n_interior) {
    const KnotSet k = quantile_knots(values, n_interior);
    return py::make_tuple(k.lower, k.upper, k.interior);
  });

  m.def("pooling_factor", &pooling_factor, py::arg("effects"));

  // Exposure model.
  py::class_<ExposurePosterior>(m, "ExposureFit")
      .def_property_readonly("parameter_names", [](const ExposurePosterior& p) { return p.draws.names; })
      .def_property_readonly("draws", [](const ExposurePosterior& p) { return p.draws.stacked(); })
      .def_property_readonly("n_chains", [](const ExposurePosterior& p) { return p.draws.n_chains(); })
      .def_property_readonly("divergences", [](const ExposurePosterior& p) { return p.draws.divergences(); })
      .def_property_readonly("converged", [](const ExposurePosterior& p) { return p.converged; })
      .def_property_readonly("warnings", [](const ExposurePosterior& p) { return p.warnings; })
      .def_property_readonly("fitted", [](const ExposurePosterior& p) { return p.fitted; })
      .def("summary", [](const ExposurePosterior& p) { return summaries_list(p.summaries); })
      .def(
          "household_means",
          [](const ExposurePosterior& p, std::optional<int> draw) {
            const HouseholdMeans hm = draw ? household_means_at_draw(p, *draw) : household_means(p);
            py::list rows;
            for (const auto& r : hm.rows) {
              py::dict d;
              d["group"] = r.group;
              d["cluster"] = r.cluster;
              d["household"] = r.household;
              d["mean"] = r.mean;
              d["sd"] = r.sd;
              d["q025"] = r.q025;
              d["q975"] = r.q975;
              rows.append(d);
            }
            return rows;
          },
          py::arg("draw") = py::none())
      .def("pooling_factors", [](const ExposurePosterior& p) {
        const PoolingFactors f = pooling_factors(p);
        py::dict d;
        d["household"] = f.household;
        d["cluster"] = f.cluster ? py::cast(*f.cluster) : py::none();
        d["observation"] = f.observation;
        return d;
      });

  m.def(
      "fit_exposure",
      [](const std::vector<std::string>& group, const std::vector<std::string>& household,
         const std::vector<int>& day, const std::vector<double>& log_value,
         std::optional<std::vector<std::string>> cluster, std::optional<std::vector<int>> time_step,
         const std::string& study, int trend_df, int chains, int warmup, int draws, double target_accept,
         std::uint64_t seed, int threads) {
        const std::size_t n = group.size();
        check_length(household, n, "household");
        check_length(day, n, "day");
        check_length(log_value, n, "log_value");
        if (cluster) check_length(*cluster, n, "cluster");
        if (time_step) check_length(*time_step, n, "time_step");
        ExposureDatasetBuilder b(study, cluster.has_value());
        for (std::size_t i = 0; i < n; ++i) {
          b.add(group[i], cluster ? (*cluster)[i] : "", household[i], day[i], time_step ? (*time_step)[i] : day[i],
                log_value[i]);
        }
        const ExposureDataset data = b.build();
        ExposurePriors priors;
        priors.trend_df = trend_df;
        const SamplerSettings s = sampler_settings(chains, warmup, draws, target_accept, seed, threads);
        py::gil_scoped_release release;
        return fit_exposure(data, priors, s);
      },
      py::arg("group"), py::arg("household"), py::arg("day"), py::arg("log_value"), py::kw_only(),
      py::arg("cluster") = py::none(), py::arg("time_step") = py::none(), py::arg("study") = "study",
      py::arg("trend_df") = 4, py::arg("chains") = 4, py::arg("warmup") = 1000, py::arg("draws") = 1000,
      py::arg("target_accept") = 0.8, py::arg("seed") = 1, py::arg("threads") = 0);

  // Outcome model.
  py::class_<OutcomePosterior>(m, "OutcomeFit")
      .def_property_readonly("parameter_names", [](const OutcomePosterior& p) { return p.draws.names; })
      .def_property_readonly("draws", [](const OutcomePosterior& p) { return p.draws.stacked(); })
      .def_property_readonly("divergences", [](const OutcomePosterior& p) { return p.draws.divergences(); })
      .def_property_readonly("converged", [](const OutcomePosterior& p) { return p.converged; })
      .def_property_readonly("warnings", [](const OutcomePosterior& p) { return p.warnings; })
      .def_property_readonly("studies", [](const OutcomePosterior& p) { return p.data().studies; })
      .def("summary", [](const OutcomePosterior& p) { return summaries_list(p.summaries); })
      .def("beta_draws", &OutcomePosterior::beta_draws, py::arg("curve") = 0)
      .def(
          "curve",
          [](const OutcomePosterior& p, const std::vector<double>& grid, int curve, std::optional<int> intercept_study) {
            CurveOptions opt;
            opt.curve = curve;
            opt.intercept_study = intercept_study;
            return curve_dict(extract_curve(p, grid, opt));
          },
          py::arg("grid"), py::arg("curve") = 0, py::arg("intercept_study") = py::none());

  m.def(
      "fit_outcome",
      [](const std::vector<std::string>& study, const std::vector<std::string>& subject,
         const std::vector<int>& period, const std::vector<int>& cases, const std::vector<int>& trials,
         const std::vector<double>& x, std::optional<Eigen::MatrixXd> covariates,
         std::vector<std::string> covariate_names, std::optional<std::vector<double>> knots,
         const std::string& mode, const std::string& constraint, int time_df, int chains, int warmup, int draws,
         double target_accept, std::uint64_t seed, int threads) {
        const std::size_t n = study.size();
        check_length(subject, n, "subject");
        check_length(period, n, "period");
        check_length(cases, n, "cases");
        check_length(trials, n, "trials");
        check_length(x, n, "x");
        const Eigen::Index n_cov = covariates ? covariates->cols() : 0;
        if (covariates && static_cast<std::size_t>(covariates->rows()) != n) {
          throw ValidationError("covariates must have one row per record");
        }
        if (covariate_names.empty()) {
          for (Eigen::Index j = 0; j < n_cov; ++j) covariate_names.push_back("z" + std::to_string(j + 1));
        }
        if (static_cast<Eigen::Index>(covariate_names.size()) != n_cov) {
          throw ValidationError("covariate_names must match the covariate columns");
        }
        OutcomeDatasetBuilder b(covariate_names);
        std::vector<double> z(static_cast<std::size_t>(n_cov));
        for (std::size_t i = 0; i < n; ++i) {
          for (Eigen::Index j = 0; j < n_cov; ++j) z[static_cast<std::size_t>(j)] = (*covariates)(static_cast<Eigen::Index>(i), j);
          b.add(study[i], study[i] + ":" + subject[i], period[i], cases[i], trials[i], x[i], z);
        }
        ERCSpec erc = ERCSpec::application_default();
        if (knots) {
          if (knots->size() < 2) throw ConfigError("knots needs at least the two boundary knots");
          erc.knots = knot_set(knots->front(), knots->back(), std::vector<double>(knots->begin() + 1, knots->end() - 1));
          erc.x_ref = erc.knots.lower;
        }
        erc.mode = parse_mode(mode);
        erc.constraint = parse_constraint(constraint);
        OutcomePriors priors;
        priors.time_df = time_df;
        const OutcomeDataset data = b.build();
        const SamplerSettings s = sampler_settings(chains, warmup, draws, target_accept, seed, threads);
        py::gil_scoped_release release;
        return fit_outcome(data, priors, erc, s);
      },
      py::arg("study"), py::arg("subject"), py::arg("period"), py::arg("cases"), py::arg("trials"), py::arg("x"),
      py::kw_only(), py::arg("covariates") = py::none(), py::arg("covariate_names") = std::vector<std::string>{},
      py::arg("knots") = py::none(), py::arg("mode") = "shared", py::arg("constraint") = "free",
      py::arg("time_df") = 8, py::arg("chains") = 4, py::arg("warmup") = 1000, py::arg("draws") = 1000,
      py::arg("target_accept") = 0.8, py::arg("seed") = 1, py::arg("threads") = 0,
      "Fit the pooled outcome model. `knots` lists the lower boundary, interior and upper boundary log "
      "exposures; the default is the application knot set.");

  m.def(
      "curve_grid",
      [](double lower, double upper, int n) {
        ERCSpec erc;
        erc.knots = knot_set(lower, upper, {});
        return curve_grid(erc, n);
      },
      py::arg("lower"), py::arg("upper"), py::arg("n") = 200);

  // Pipeline.
  m.def("run_command", &run_command, py::arg("command"), py::arg("config"), py::kw_only(),
        py::arg("seed") = py::none(), py::arg("draw") = py::none(), py::arg("restrict_nonneg") = false,
        py::arg("hierarchical") = false, py::arg("threads") = py::none(), py::arg("out") = py::none(),
        "Run fit-exposure, assign-exposure, fit-outcome or simulate. Returns (exit_code, log).");
  m.def(
      "write_example_data",
      [](const std::filesystem::path& dir, std::uint64_t seed) {
        std::ostringstream log;
        write_example_data(dir, seed, log);
        return log.str();
      },
      py::arg("dir"), py::arg("seed") = 1);
}
