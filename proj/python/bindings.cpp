#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sotmle/bandwidth_selection.hpp"
#include "sotmle/cli.hpp"
#include "sotmle/simulation.hpp"

namespace py = pybind11;
using namespace sotmle;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Ints = py::array_t<int, py::array::c_style | py::array::forcecast>;
using Vector = py::array_t<double, py::array::c_style | py::array::forcecast>;

OutcomeScale outcome_scale(const Ints& a, const Vector& y, bool auto_scale) {
    std::vector<double> ys;
    for (py::ssize_t i = 0; i < a.size() && i < y.size(); ++i) {
        if (a.data()[i] == 1 && !std::isnan(y.data()[i])) ys.push_back(y.data()[i]);
    }
    // same rule as the CSV reader: binary passes through, anything else is rescaled
    if (!auto_scale || ys.empty()) return {};
    if (std::all_of(ys.begin(), ys.end(), [](double v) { return v == 0.0 || v == 1.0; })) return {};
    const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
    if (*lo == *hi && *lo >= 0.0 && *lo <= 1.0) return {};
    return scale_outcome(ys).scale;
}

// NaN in y marks a missing outcome; y is ignored where a == 0.
Dataset to_dataset(const Matrix& w, const Ints& a, const Vector& y, const OutcomeScale& scale) {
    if (w.ndim() != 2) throw TmleError("w must be a 2-d array");
    const auto n = static_cast<std::size_t>(w.shape(0));
    const auto d = static_cast<std::size_t>(w.shape(1));
    if (a.size() != static_cast<py::ssize_t>(n) || y.size() != static_cast<py::ssize_t>(n)) {
        throw TmleError("w, a and y must have the same number of rows");
    }
    Dataset data(d);
    const double* wp = w.data();
    for (std::size_t i = 0; i < n; ++i) {
        const int ai = a.data()[i];
        const double yi = y.data()[i];
        std::optional<double> out;
        if (ai == 1) {
            if (std::isnan(yi)) throw TmleError("missing outcome for observed unit " + std::to_string(i));
            out = (yi - scale.min) / (scale.max - scale.min);
        }
        data.add({wp + i * d, d}, ai, out);
    }
    return data;
}

EstimatorConfig make_config(const std::string& estimator, const std::string& kernel, const std::string& bandwidth,
                            const std::string& fluctuation, double trunc_g, double level, int boot, int folds,
                            std::uint64_t seed, unsigned threads) {
    EstimatorConfig cfg;
    cfg.estimator = parse_estimator(estimator);
    cfg.kernel = KernelSpec::parse(kernel);
    cfg.bandwidth = parse_bandwidth_choice(bandwidth, folds, seed);
    if (fluctuation == "covariate") cfg.fluctuation = FluctuationMode::Covariate;
    else if (fluctuation == "weighted") cfg.fluctuation = FluctuationMode::Weighted;
    else throw TmleError("fluctuation must be covariate or weighted");
    cfg.truncation.g_floor = trunc_g;
    cfg.ci_level = level;
    if (boot > 0) {
        cfg.variance.mode = VarianceMode::Bootstrap;
        cfg.variance.bootstrap_reps = boot;
        cfg.variance.seed = seed;
    }
    cfg.variance.threads = threads;
    cfg.validate();
    return cfg;
}

py::dict report_dict(const EstimateReport& r, const OutcomeScale& scale) {
    py::dict d;
    d["estimator"] = to_string(r.estimator);
    d["psi"] = scale.unscale(r.psi);
    d["se"] = scale.unscale_se(r.se);
    d["ci_lower"] = scale.unscale(r.ci_lower);
    d["ci_upper"] = scale.unscale(r.ci_upper);
    d["psi_scaled"] = r.psi;
    d["epsilon"] = r.epsilon;
    d["score_residuals"] = r.score_residuals;
    if (r.bandwidth_used) d["bandwidth"] = r.bandwidth_used->values();
    else d["bandwidth"] = py::none();
    d["kernel"] = r.kernel.name();
    d["out_of_range"] = r.out_of_range;
    d["positivity_flag"] = r.positivity_flag;
    d["degraded"] = r.degraded;
    d["kernel_fallbacks"] = r.kernel_fallbacks;
    d["density_floor_hits"] = r.density_floor_hits;
    d["bootstrap_failures"] = r.bootstrap_failures;
    d["warnings"] = r.warnings;
    return d;
}

py::dict py_estimate(const Matrix& w, const Ints& a, const Vector& y, const std::string& estimator,
                     const std::string& kernel, const std::string& bandwidth, const std::string& fluctuation,
                     const std::string& learner, double trunc_g, double level, int boot, int folds,
                     std::uint64_t seed, unsigned threads, bool auto_scale) {
    const OutcomeScale scale = outcome_scale(a, y, auto_scale);
    const Dataset data = to_dataset(w, a, y, scale);
    const EstimatorConfig cfg =
        make_config(estimator, kernel, bandwidth, fluctuation, trunc_g, level, boot, folds, seed, threads);
    const auto l = make_learner(learner);
    EstimateReport r;
    {
        py::gil_scoped_release release;
        r = estimate_with_learners(data, *l, *l, cfg);
    }
    py::dict d = report_dict(r, scale);
    d["outcome_scale"] = py::make_tuple(scale.min, scale.max);
    return d;
}

py::dict py_ate(const Matrix& w, const Ints& a, const Vector& y, const Ints& t, const std::string& estimator,
                const std::string& kernel, const std::string& bandwidth, const std::string& fluctuation,
                const std::string& learner, double trunc_g, double level, int boot, int folds, std::uint64_t seed,
                unsigned threads, bool auto_scale) {
    const OutcomeScale scale = outcome_scale(a, y, auto_scale);
    const Dataset data = to_dataset(w, a, y, scale);
    if (t.size() != static_cast<py::ssize_t>(data.size())) throw TmleError("t must have one entry per row");
    const std::vector<int> treatment(t.data(), t.data() + t.size());
    const EstimatorConfig cfg =
        make_config(estimator, kernel, bandwidth, fluctuation, trunc_g, level, boot, folds, seed, threads);
    const auto l = make_learner(learner);
    AteReport r;
    {
        py::gil_scoped_release release;
        r = ate(data, treatment, *l, *l, cfg, scale);
    }
    py::dict d;
    d["psi1"] = r.psi1;
    d["psi0"] = r.psi0;
    d["diff"] = r.diff;
    d["se"] = r.se;
    d["ci_lower"] = r.ci_lower;
    d["ci_upper"] = r.ci_upper;
    d["bootstrap_failures"] = r.bootstrap_failures;
    d["treated"] = report_dict(r.treated, scale);
    d["control"] = report_dict(r.control, scale);
    return d;
}

py::list py_simulate(const std::string& dgp, const std::vector<std::size_t>& n, const std::vector<double>& p,
                     const std::vector<double>& q, int reps, std::uint64_t seed,
                     const std::vector<std::string>& estimators, unsigned threads, const std::string& coverage,
                     const std::string& perturbation) {
    SimGridConfig sim;
    sim.dgp = dgp_by_name(dgp);
    sim.n_list = n;
    sim.p_grid = p;
    sim.q_grid = q;
    sim.replicates = reps;
    sim.master_seed = seed;
    sim.threads = threads;
    sim.estimators.clear();
    for (const auto& e : estimators) sim.estimators.push_back(parse_estimator(e));
    if (coverage == "mc") sim.coverage = CoverageVariance::MonteCarlo;
    else if (coverage == "bound") sim.coverage = CoverageVariance::Bound;
    else throw TmleError("coverage must be mc or bound");
    if (perturbation == "fit") sim.perturbation = PerturbationScope::PerFit;
    else if (perturbation == "unit") sim.perturbation = PerturbationScope::PerUnit;
    else throw TmleError("perturbation must be fit or unit");
    GridResult res;
    {
        py::gil_scoped_release release;
        res = run_grid(sim);
    }
    py::list rows;
    for (const auto& r : res.rows) {
        py::dict d;
        d["estimator"] = to_string(r.estimator);
        d["n"] = r.n;
        d["p"] = r.p;
        d["q"] = r.q;
        d["sqrt_n_abs_bias"] = r.sqrt_n_abs_bias;
        d["rvar"] = r.rvar;
        d["rvar_trimmed"] = r.rvar_trimmed;
        d["coverage"] = r.coverage;
        d["coverage_mc_se"] = r.coverage_mc_se;
        d["failures"] = r.failures;
        d["flagged"] = r.flagged;
        rows.append(d);
    }
    return rows;
}

py::dict oracle_dict(const OracleConstants& c) {
    py::dict d;
    d["dgp"] = c.dgp;
    d["psi0"] = c.psi0.value;
    d["psi0_mc_se"] = c.psi0.mc_se;
    d["bound"] = c.bound.value;
    d["bound_mc_se"] = c.bound.mc_se;
    d["draws"] = c.M;
    d["seed"] = c.seed;
    return d;
}

py::tuple py_run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"sotmle"};
    for (const auto& s : args) argv.push_back(s.c_str());
    std::ostringstream out;
    std::ostringstream err;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Targeted estimators of a mean outcome under missingness";
    py::register_exception<TmleError>(m, "TmleError", PyExc_ValueError);

    m.def("version", &version);
    m.def("estimate", &py_estimate, py::arg("w"), py::arg("a"), py::arg("y"), py::kw_only(),
          py::arg("estimator") = "tmle1", py::arg("kernel") = "gaussian", py::arg("bandwidth") = "default",
          py::arg("fluctuation") = "covariate", py::arg("learner") = "glm", py::arg("trunc_g") = 0.01,
          py::arg("level") = 0.95, py::arg("boot") = 0, py::arg("folds") = 5, py::arg("seed") = 1,
          py::arg("threads") = 1, py::arg("auto_scale") = true);
    m.def("ate", &py_ate, py::arg("w"), py::arg("a"), py::arg("y"), py::arg("t"), py::kw_only(),
          py::arg("estimator") = "tmle1", py::arg("kernel") = "gaussian", py::arg("bandwidth") = "default",
          py::arg("fluctuation") = "covariate", py::arg("learner") = "glm", py::arg("trunc_g") = 0.01,
          py::arg("level") = 0.95, py::arg("boot") = 0, py::arg("folds") = 5, py::arg("seed") = 1,
          py::arg("threads") = 1, py::arg("auto_scale") = true);
    m.def("simulate", &py_simulate, py::arg("dgp") = "d1", py::arg("n") = std::vector<std::size_t>{1000},
          py::arg("p") = std::vector<double>{0.5}, py::arg("q") = std::vector<double>{0.5}, py::arg("reps") = 1000,
          py::arg("seed") = 1, py::arg("estimators") = std::vector<std::string>{"tmle1", "tmle1star", "tmle2"},
          py::arg("threads") = 1, py::arg("coverage") = "mc", py::arg("perturbation") = "unit");
    m.def("frozen_oracle", [](const std::string& dgp) -> py::object {
        const auto c = frozen_oracle(dgp);
        return c ? py::object(oracle_dict(*c)) : py::object(py::none());
    });
    m.def("compute_oracle", [](const std::string& dgp, std::size_t draws, std::uint64_t seed, unsigned threads) {
        OracleConstants c;
        {
            py::gil_scoped_release release;
            c = compute_oracle_constants(dgp_by_name(dgp), draws, seed, threads);
        }
        return oracle_dict(c);
    }, py::arg("dgp"), py::arg("draws"), py::arg("seed") = kOracleSeed, py::arg("threads") = 1);
    m.def("run_cli", &py_run_cli, py::arg("args"));
}
