#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "icl_lab/assumptions.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/experiments.hpp"
#include "icl_lab/operators.hpp"
#include "icl_lab/predictors.hpp"
#include "icl_lab/rng.hpp"
#include "icl_lab/serialization.hpp"
#include "icl_lab/version.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace icl;

namespace {

// Configs and reports cross the boundary as JSON text; the Python package
// converts them to and from dicts.
ExperimentConfig config_from(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Schema, std::string("/: malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

py::tuple artifacts(const Artifacts& a) { return py::make_tuple(a.name, a.csv, a.summary.dump()); }

Hmm make_hmm(const Matrix& transition, const Matrix& emission, std::vector<int> task_starts,
             const Vector& pretrain_init, Token delimiter, std::vector<Token> label_set) {
  return Hmm::create({transition, emission, std::move(task_starts), pretrain_init, delimiter,
                      std::move(label_set)});
}

}  // namespace

PYBIND11_MODULE(_icl_lab, m) {
  m.doc() = "Task-mixture HMM toolkit: exact inference, observable operators and kernel predictors.";
  m.attr("__version__") = std::string(kVersion);

  static py::exception<Error> error_type(m, "IclError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const AssumptionRefused& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
      inst.attr("kind") = std::string(to_string(e.kind()));
      inst.attr("report") = to_json(e.report()).dump();
      PyErr_SetObject(error_type.ptr(), inst.ptr());
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
      inst.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), inst.ptr());
    }
  });

  py::class_<Hmm>(m, "Hmm")
      .def(py::init(&make_hmm), "transition"_a, "emission"_a, "task_starts"_a, "pretrain_init"_a,
           "delimiter"_a, "label_set"_a)
      .def_property_readonly("num_states", &Hmm::num_states)
      .def_property_readonly("num_obs", &Hmm::num_obs)
      .def_property_readonly("num_tasks", &Hmm::num_tasks)
      .def_property_readonly("transition", &Hmm::transition)
      .def_property_readonly("emission", &Hmm::emission)
      .def_property_readonly("task_starts", &Hmm::task_starts)
      .def_property_readonly("pretrain_init", &Hmm::pretrain_init)
      .def_property_readonly("delimiter", &Hmm::delimiter)
      .def_property_readonly("label_set", &Hmm::label_set)
      .def("task_init", &Hmm::task_init)
      .def("save", [](const Hmm& h, const std::string& path) { save_hmm(path, h); })
      .def_static("load", [](const std::string& path) { return load_hmm(path); });

  py::class_<GeneratorSpec>(m, "GeneratorSpec")
      .def(py::init<>())
      .def_readwrite("num_tasks", &GeneratorSpec::num_tasks)
      .def_readwrite("d_per_task", &GeneratorSpec::d_per_task)
      .def_readwrite("m", &GeneratorSpec::m)
      .def_readwrite("num_labels", &GeneratorSpec::num_labels)
      .def_readwrite("epsilon_r_target", &GeneratorSpec::epsilon_r_target)
      .def_readwrite("epsilon_d_target", &GeneratorSpec::epsilon_d_target)
      .def_readwrite("separation_target", &GeneratorSpec::separation_target)
      .def_readwrite("label_mass", &GeneratorSpec::label_mass)
      .def_readwrite("persistence", &GeneratorSpec::persistence);

  m.def("generate_compliant_hmm", &generate_compliant_hmm, "spec"_a, "seed"_a);
  m.def("random_hmm", [](int d, int obs, int tasks, std::uint64_t seed) {
    Rng rng(seed);
    return random_hmm(d, obs, tasks, rng);
  }, "num_states"_a, "num_obs"_a, "num_tasks"_a = 1, "seed"_a = 0);

  m.def("sample_sequence", py::overload_cast<const Hmm&, const Vector&, std::size_t, std::uint64_t>(&sample_sequence),
        "hmm"_a, "init"_a, "length"_a, "seed"_a);
  m.def("forward_likelihood", [](const Hmm& h, const Vector& init, const TokenSeq& s) {
    return forward_likelihood(h, init, s);
  });
  m.def("forward_log_likelihood", [](const Hmm& h, const Vector& init, const TokenSeq& s) {
    return forward_log_likelihood(h, init, s);
  });
  m.def("operator_likelihood", [](const Hmm& h, const Vector& init, const TokenSeq& s) {
    return operator_likelihood(h, init, s);
  });
  m.def("next_token_distribution", [](const Hmm& h, const Vector& init, const TokenSeq& s) {
    return next_token_distribution(h, init, s);
  });
  m.def("label_distribution", [](const Hmm& h, const Vector& init, const TokenSeq& s) {
    return label_distribution(h, init, s);
  });

  m.def("operator_of", [](const Hmm& h, const TokenSeq& s) { return operator_of(h, s); });
  m.def("flatten", &flatten);
  m.def("moment_matrix", [](const Hmm& h, const Vector& init, std::size_t length, std::size_t samples,
                            std::uint64_t seed) {
    const MomentEstimator est = samples == 0 ? MomentEstimator::exact() : MomentEstimator::monte_carlo(samples, seed);
    return moment_matrix(h, init, "init", length, est).sigma;
  }, "hmm"_a, "init"_a, "length"_a, "samples"_a = 0, "seed"_a = 0,
        "Exact second moment when samples == 0, otherwise a Monte-Carlo estimate.");
  m.def("ridge_inverse", py::overload_cast<const Matrix&, double>(&ridge_inverse), "sigma"_a, "ridge"_a);
  m.def("spectral_radius_sym", &spectral_radius_sym);
  m.def("eta_bound", [](const Hmm& h, std::size_t l_max) { return eta_bound(h, l_max, EtaMode::Exact); });
  m.def("epsilon_theta", [](const Hmm& h, int task, const std::vector<std::size_t>& grid, double ridge,
                            bool relative) { return epsilon_theta(h, task, grid, Ridge{ridge, relative}).value; },
        "hmm"_a, "task"_a, "l_grid"_a, "ridge"_a = 1e-6, "relative"_a = true);

  m.def("epsilon_r", [](const Hmm& h, int task, std::size_t horizon) { return epsilon_r(h, task, horizon); });
  m.def("epsilon_d", &epsilon_d);
  m.def("check_anchor", &check_anchor);
  m.def("epsilon_kl", [](const Hmm& h, std::size_t l) { return epsilon_kl(h, l, KlMode::exact_mode()).value; });
  m.def("margin_delta", [](const Hmm& h, int task, const TokenSeq& x) { return margin_delta(h, task, x); });
  m.def("n_threshold", [](double eps_kl, double eps_r, double eps_d, double eps_theta, double eta, double margin,
                          double delta, int obs, double p0_min) {
    return n_threshold({eps_kl, eps_r, eps_d, eps_theta, eta, margin}, delta, obs, p0_min);
  }, "epsilon_kl"_a, "epsilon_r"_a, "epsilon_d"_a, "epsilon_theta"_a, "eta"_a, "margin"_a, "delta"_a, "m"_a,
        "p0_min"_a);
  m.def("_check_assumptions", [](const Hmm& h, const std::string& config) {
    return to_json(check_assumptions(h, config_from(config).assumption_config())).dump();
  });

  py::class_<Demo>(m, "Demo")
      .def(py::init<>())
      .def_readwrite("input", &Demo::input)
      .def_readwrite("label", &Demo::label);
  py::class_<IclPrompt>(m, "Prompt")
      .def(py::init<>())
      .def_readwrite("demos", &IclPrompt::demos)
      .def_readwrite("delimiter", &IclPrompt::delimiter)
      .def_readwrite("test_input", &IclPrompt::test_input)
      .def_readwrite("task_id", &IclPrompt::task_id)
      .def("flatten", &IclPrompt::flatten);
  m.def("build_prompt", [](const Hmm& h, int task, std::size_t n, std::size_t min_len, std::size_t max_len,
                           std::uint64_t seed) {
    return build_prompt(h, task, n, DemoLengthPolicy::uniform(min_len, max_len), seed);
  }, "hmm"_a, "task"_a, "n"_a, "min_len"_a = 6, "max_len"_a = 6, "seed"_a = 0);

  py::class_<PredictionOutcome>(m, "Prediction")
      .def_readonly("label_scores", &PredictionOutcome::label_scores)
      .def_readonly("argmax_label", &PredictionOutcome::argmax_label)
      .def_readonly("tie", &PredictionOutcome::tie)
      .def_readonly("weights", &PredictionOutcome::weights);
  m.def("bayes_predict", [](const Hmm& h, const IclPrompt& p) { return bayes_predict(h, p); });
  py::class_<SigmaInverseCache>(m, "KernelModel")
      .def(py::init([](const Hmm& h, double ridge, bool relative) {
        return std::make_unique<SigmaInverseCache>(h, h.pretrain_init(), "pretrain", MomentEstimator::exact(),
                                                   Ridge{ridge, relative});
      }), "hmm"_a, "ridge"_a = 1e-6, "relative"_a = true, py::keep_alive<1, 2>())
      .def("inverse", &SigmaInverseCache::inverse, py::return_value_policy::copy);
  m.def("kernel_predict", [](const Hmm& h, const IclPrompt& p, const SigmaInverseCache& cache) {
    return kernel_predict(h, p, [&cache](std::size_t l) -> const Matrix& { return cache.inverse(l); });
  });
  m.def("task_posterior", &task_posterior);
  m.def("prediction_similarity", [](const Hmm& h, const TokenSeq& a, const TokenSeq& b) {
    return prediction_similarity(h, a, b);
  });

  m.def("_normalize_config", [](const std::string& c) { return config_to_json(config_from(c)).dump(); });
  m.def("_config_hash", [](const std::string& c) { return config_hash(config_from(c)); });
  m.def("_run_agreement", [](const std::string& c) { return artifacts(run_agreement(config_from(c)).artifacts); });
  m.def("_run_identity", [](const std::string& c) { return artifacts(run_identity_check(config_from(c)).artifacts); });
  m.def("_run_hoeffding", [](const std::string& c) { return artifacts(run_hoeffding_check(config_from(c)).artifacts); });
  m.def("_run_concentration",
        [](const std::string& c) { return artifacts(run_concentration_check(config_from(c)).artifacts); });
  m.def("_run_retrieval", [](const std::string& c) { return artifacts(run_retrieval_ablation(config_from(c)).artifacts); });
  m.def("_run_label_permutation",
        [](const std::string& c) { return artifacts(run_label_permutation(config_from(c)).artifacts); });
  m.def("_run_ood", [](const std::string& c) { return artifacts(run_ood_ablation(config_from(c)).artifacts); });
  m.def("_run_eq2", [](const std::string& c) { return artifacts(run_eq2_check(config_from(c)).artifacts); });
}
