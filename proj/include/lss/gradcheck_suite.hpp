#pragma once

#include <string>
#include <vector>

#include "lss/gradcheck.hpp"
#include "lss/trainer.hpp"

namespace lss {

// Finite-difference verification of the full combined objective (all loss
// terms active) across randomized encoder/space configurations.

struct GradcheckCase {
    std::string description;
    double max_rel_error = 0.0;
};

struct GradcheckSuiteResult {
    double max_rel_error = 0.0;
    std::vector<GradcheckCase> cases;
};

inline GradcheckSuiteResult run_gradcheck_suite(std::size_t num_cases = 20, std::uint64_t seed = 1,
                                                std::size_t coords_per_tensor = 4,
                                                double eps = 1e-5) {
    GradcheckSuiteResult suite;
    for (std::size_t case_id = 0; case_id < num_cases; ++case_id) {
        Rng rng = Rng(seed).derive(case_id);

        EncoderConfig cfg;
        cfg.T = 2 + rng.uniform_int(2);
        cfg.S = 2 + rng.uniform_int(2);
        cfg.d_in = 3 + rng.uniform_int(3);
        cfg.H_att = 1 + rng.uniform_int(2);
        cfg.d_e = cfg.H_att * (3 + rng.uniform_int(3));
        cfg.d_out = 3 + rng.uniform_int(3);
        cfg.L = 1 + rng.uniform_int(2);

        const std::size_t n_c = 2 + rng.uniform_int(15);  // <= 16
        const std::size_t n_d = n_c;

        auto random_space = [&](std::size_t n, SpaceKind kind) {
            ConceptSpace s;
            s.kind = kind;
            s.basis = Tensor::zeros({n, cfg.d_out});
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> v(cfg.d_out);
                for (double& x : v) x = rng.normal();
                v = l2_normalize(v);
                for (std::size_t j = 0; j < cfg.d_out; ++j) s.basis.at(i, j) = v[j];
                s.labels.push_back("c" + std::to_string(i));
            }
            return s;
        };
        ConceptSpace space_c = random_space(n_c, SpaceKind::category);
        ConceptSpace space_d = random_space(n_d, SpaceKind::description);

        EncoderParams student = init_encoder(cfg, rng);
        // move temporal output projections off zero so their gradients are
        // exercised at a generic point
        for (EncoderBlock& b : student.blocks) {
            for (double& x : b.temporal.wo.data) x = 0.05 * rng.normal();
            for (double& x : b.temporal.bo.data) x = 0.05 * rng.normal();
            for (double& x : student.pos_temporal.data) x = 0.05 * rng.normal();
        }

        ObjectiveConfig ocfg;
        ocfg.lambda_teacher = 0.1;
        ocfg.lambda_student = 1.0;
        ocfg.tau = 0.5;

        const std::size_t batch = 2;
        std::vector<BatchSample> samples;
        for (std::size_t b = 0; b < batch; ++b) {
            BatchSample s;
            s.student_view.features = Tensor::zeros({cfg.T, cfg.S, cfg.d_in});
            for (double& x : s.student_view.features.data) x = rng.normal();
            s.teacher_raw_c.resize(n_c);
            s.teacher_raw_d.resize(n_d);
            for (double& x : s.teacher_raw_c) x = rng.uniform(-1.0, 1.0);
            for (double& x : s.teacher_raw_d) x = rng.uniform(-1.0, 1.0);
            samples.push_back(std::move(s));
        }

        MovingAverageState ma = MovingAverageState::uniform(n_c, n_d);
        for (double& x : ma.category.data) x = std::exp(0.3 * rng.normal());
        for (double& x : ma.description.data) x = std::exp(0.3 * rng.normal());
        double sc = sum(ma.category.data), sd = sum(ma.description.data);
        for (double& x : ma.category.data) x /= sc;
        for (double& x : ma.description.data) x /= sd;

        const Tensor basis_c_t = space_c.basis_transposed();
        const Tensor basis_d_t = space_d.basis_transposed();

        auto objective = [&]() {
            Graph g;
            StepLoss sl = build_step_loss(g, student, samples, basis_c_t, basis_d_t, ma, ocfg);
            return g.value(sl.objective.total).data[0];
        };

        Graph g;
        StepLoss sl = build_step_loss(g, student, samples, basis_c_t, basis_d_t, ma, ocfg);
        g.backward(sl.objective.total);
        std::vector<Tensor> analytic;
        for (Var leaf : sl.vars.leaves) analytic.push_back(g.grad(leaf));

        std::vector<Tensor*> param_ptrs;
        std::vector<const Tensor*> grad_ptrs;
        auto names = named_tensors(student);
        for (std::size_t i = 0; i < names.size(); ++i) {
            param_ptrs.push_back(names[i].second);
            grad_ptrs.push_back(&analytic[i]);
        }

        Rng coord_rng = rng.derive(0xC0FFEEull);
        const double err =
            grad_check(objective, param_ptrs, grad_ptrs, eps, coords_per_tensor, &coord_rng);

        GradcheckCase gc;
        gc.description = "L=" + std::to_string(cfg.L) + " d_e=" + std::to_string(cfg.d_e) +
                         " H=" + std::to_string(cfg.H_att) + " T=" + std::to_string(cfg.T) +
                         " S=" + std::to_string(cfg.S) + " n=" + std::to_string(n_c);
        gc.max_rel_error = err;
        suite.max_rel_error = std::max(suite.max_rel_error, err);
        suite.cases.push_back(std::move(gc));
    }
    return suite;
}

}  // namespace lss
