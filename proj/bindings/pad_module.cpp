// Python bindings for the main operations: samplers, corruption, selection,
// schedules, a small autodiff surface and the end-to-end entry points.
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pad/config.hpp"
#include "pad/data.hpp"
#include "pad/env.hpp"
#include "pad/nn.hpp"
#include "pad/planning.hpp"
#include "pad/training.hpp"

namespace py = pybind11;
using pad::i64;
using pad::Tensor;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    pad::Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    Tensor t(shape);
    std::memcpy(t.data(), a.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::memcpy(a.mutable_data(), t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    return a;
}

pad::config::RunConfig config_from(const std::string& path,
                                   const std::vector<std::string>& overrides) {
    pad::config::RunConfig cfg;
    if (!path.empty()) cfg = pad::config::load_config_file(path);
    for (const auto& ov : overrides) pad::config::apply_override(cfg, ov);
    cfg.finalize();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_pad, m) {
    m.doc() = "Goal-conditioned latent energy planning (C++ core)";

    m.def("arccos_transform", &pad::data::arccos_transform,
          "Inverse-CDF transform of the truncated arccos density", py::arg("u"));
    m.def("arccos_cdf", &pad::data::arccos_cdf, py::arg("r"));
    m.def(
        "sample_arccos",
        [](std::uint64_t seed, i64 count) {
            pad::RngStream rng(seed, 0);
            std::vector<double> out(static_cast<size_t>(count));
            for (auto& v : out) v = pad::data::sample_arccos(rng);
            return out;
        },
        py::arg("seed"), py::arg("count"));

    m.def(
        "corrupt",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& z, double beta,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& eps) {
            return array_from_tensor(pad::data::corrupt(tensor_from_array(z), beta,
                                                        tensor_from_array(eps)));
        },
        py::arg("z_clean"), py::arg("beta"), py::arg("eps"));

    m.def("cosine_lr",
          [](i64 step, double lr_start, double lr_end, i64 total) {
              return pad::nn::cosine_lr(step, {lr_start, lr_end, total});
          },
          py::arg("step"), py::arg("lr_start"), py::arg("lr_end"), py::arg("total_steps"));

    m.def("sinusoidal_embed",
          [](double lam, i64 dim) { return array_from_tensor(pad::nn::sinusoidal_embed(lam, dim)); },
          py::arg("lam"), py::arg("dim"));

    m.def("select_top_k", &pad::plan::select_top_k, py::arg("energies"), py::arg("k"));
    m.def("lambda_choice_probs", &pad::plan::lambda_choice_probs, py::arg("lambdas"));

    m.def(
        "grad_check",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
            // d(sum x^2)/dx via the graph, as a smoke hook for the bindings.
            auto rep = pad::ag::finite_difference_check(
                [](const pad::ag::NodePtr& v) { return pad::ag::sum_all(pad::ag::mul(v, v)); },
                tensor_from_array(x), 1e-5);
            return py::make_tuple(array_from_tensor(rep.analytic), rep.max_rel_err);
        },
        py::arg("x"));

    m.def(
        "gen_data",
        [](const std::string& config, const std::vector<std::string>& overrides,
           const std::string& out_path) {
            auto cfg = config_from(config, overrides);
            auto env = pad::env::make_env(cfg.env);
            pad::env::GenStats stats;
            auto ds = pad::env::generate_dataset(*env, pad::env::parse_regime(cfg.regime),
                                                 cfg.episodes, cfg.seed, cfg.episode_len, &stats);
            std::string path = out_path.empty()
                                   ? (cfg.dataset_path.empty() ? cfg.default_dataset_path()
                                                               : cfg.dataset_path)
                                   : out_path;
            pad::data::save_dataset(path, ds);
            return py::make_tuple(path, stats.success_fraction, stats.coverage);
        },
        py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("out_path") = "");

    m.def(
        "train",
        [](const std::string& config, const std::vector<std::string>& overrides) {
            auto cfg = config_from(config, overrides);
            auto ds = pad::data::load_dataset(cfg.dataset_path.empty()
                                                  ? cfg.default_dataset_path()
                                                  : cfg.dataset_path);
            auto models = pad::models::PadModels::create(cfg.model, cfg.seed);
            pad::nn::AdamW opt(models.planner_params(), cfg.train.adamw);
            auto res = pad::train::train_loop(models, opt, ds, cfg.train, cfg.run_dir(), 0,
                                              cfg.to_string());
            return py::make_tuple(res.final_step, res.checkpoint_path, res.metrics_path);
        },
        py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});

    m.def(
        "plan_lambdas_energies",
        [](const std::string& config, const std::vector<std::string>& overrides,
           const std::vector<std::vector<double>>& past, const std::vector<double>& goal,
           std::uint64_t seed) {
            auto cfg = config_from(config, overrides);
            auto models = pad::models::PadModels::create(cfg.model, cfg.seed);
            pad::plan::PlanParams params{cfg.plan_candidates, cfg.plan_top_k,
                                         cfg.model.refine_steps, cfg.train.use_projector};
            pad::plan::PlanRequest req;
            req.past = past;
            req.goal = goal;
            req.seed = seed;
            auto p = pad::plan::plan(req, models, params);
            std::vector<double> lam, en;
            for (const auto& c : p.candidates) {
                lam.push_back(c.lambda);
                en.push_back(c.energy);
            }
            return py::make_tuple(lam, en, p.chosen_index);
        },
        py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("past") = std::vector<std::vector<double>>{}, py::arg("goal"), py::arg("seed"));
}
