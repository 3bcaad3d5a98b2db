#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lss/autodiff.hpp"
#include "lss/concept_space.hpp"
#include "lss/math.hpp"
#include "lss/tensor.hpp"

namespace lss {

struct ObjectiveConfig {
    double lambda_teacher = 0.1;  // teacher sharpening temperature
    double lambda_student = 1.0;  // student temperature
    double tau = 0.5;             // moving-average update rate
    bool use_significance_weight = true;
    bool use_udp = true;
    bool use_description_space = true;
    bool use_alignment = true;
    double udp_weight = 1.0;       // global weight on the uniform prior terms
    bool udp_from_teacher = false;  // ablation: feed the moving average from teacher distributions

    bool alignment_active() const { return use_alignment && use_description_space; }

    void validate() const {
        if (!(lambda_teacher > 0.0) || !(lambda_student > 0.0)) {
            throw invalid_argument_error("objective config: temperatures must be positive");
        }
        if (!(tau > 0.0 && tau <= 1.0)) {
            throw invalid_argument_error("objective config: tau must be in (0,1]");
        }
        if (!(udp_weight >= 0.0)) {
            throw invalid_argument_error("objective config: udp_weight must be >= 0");
        }
    }
};

// Per-space moving average of mean score distributions, initialized uniform.
struct MovingAverageState {
    Tensor category;     // 1 x n_C
    Tensor description;  // 1 x n_D (unused when the description space is off)

    static MovingAverageState uniform(std::size_t n_category, std::size_t n_description) {
        MovingAverageState s;
        if (n_category == 0) throw invalid_argument_error("moving average: n_category must be >= 1");
        s.category = Tensor::full({1, n_category}, 1.0 / static_cast<double>(n_category));
        if (n_description > 0) {
            s.description = Tensor::full({1, n_description}, 1.0 / static_cast<double>(n_description));
        }
        return s;
    }

    Tensor& for_space(SpaceKind k) { return k == SpaceKind::category ? category : description; }
    const Tensor& for_space(SpaceKind k) const {
        return k == SpaceKind::category ? category : description;
    }
};

// Teacher sharpening; same operation as softmax_temp, re-exported under the
// name the loss stack uses.
inline std::vector<double> sharpen(const std::vector<double>& f_tilde, double lambda) {
    return softmax_temp(f_tilde, lambda);
}

// Max entry of the sharpened teacher distribution. Teacher-side quantity:
// treated as a constant, no gradient ever flows through it.
inline double significance_weight(const std::vector<double>& f_hat_teacher) {
    if (f_hat_teacher.empty()) throw invalid_argument_error("significance_weight: empty input");
    double s = 0.0, mx = 0.0;
    for (double v : f_hat_teacher) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw invalid_argument_error("significance_weight: input is not a distribution");
        }
        s += v;
        mx = std::max(mx, v);
    }
    if (std::abs(s - 1.0) > 1e-6) {
        throw invalid_argument_error("significance_weight: input sums to " + std::to_string(s));
    }
    return mx;
}

struct CdTerm {
    Var loss;
    double w_s = 1.0;
};

// Concept distillation: -w_s * sum_j f1[j] * log f2[j], with the teacher
// distribution sharpened outside the tape (f1 and w_s are constants) and the
// student side differentiable through log-softmax.
inline CdTerm cd_loss_node(Graph& g, const std::vector<double>& teacher_raw, Var student_scores,
                           const ObjectiveConfig& cfg) {
    const Tensor& sv = g.value(student_scores);
    if (sv.rows() != 1 || sv.cols() != teacher_raw.size()) {
        throw invalid_argument_error("cd_loss: teacher length " + std::to_string(teacher_raw.size()) +
                                     " vs student " + sv.shape_str());
    }
    for (double v : teacher_raw) {
        if (!std::isfinite(v)) throw invalid_argument_error("cd_loss: non-finite teacher score");
    }
    std::vector<double> f1 = sharpen(teacher_raw, cfg.lambda_teacher);
    const double w_s = cfg.use_significance_weight ? significance_weight(f1) : 1.0;
    Var logp2 = g.log_softmax_rows(student_scores, cfg.lambda_student);
    Var ce = g.sum_all(g.mul(g.constant(Tensor::row(std::move(f1))), logp2));
    return {g.scale(ce, -w_s), w_s};
}

inline double cd_loss(const std::vector<double>& teacher_raw, const std::vector<double>& student_raw,
                      const ObjectiveConfig& cfg) {
    if (teacher_raw.size() != student_raw.size()) {
        throw invalid_argument_error("cd_loss: length mismatch");
    }
    Graph g;
    CdTerm t = cd_loss_node(g, teacher_raw, g.constant(Tensor::row(student_raw)), cfg);
    return g.value(t.loss).data[0];
}

struct UdpTerm {
    Var loss;    // unweighted Eq. 8 value
    Var ma_new;  // renormalized updated moving average, read back after the step
};

// Uniform-distribution prior. The moving average is pulled toward the batch
// mean (gradient flows through the tau * mean term of the current step only;
// history enters as a constant) and renormalized against drift.
inline UdpTerm udp_node(Graph& g, Var batch_mean_dist, const Tensor& ma_prev,
                        const ObjectiveConfig& cfg) {
    const Tensor& mv = g.value(batch_mean_dist);
    if (mv.rows() != 1 || !ma_prev.same_shape(mv)) {
        throw invalid_argument_error("udp: mean/state shape mismatch");
    }
    if (!is_distribution(mv.data)) {
        throw invalid_argument_error("udp: batch mean is not a distribution");
    }
    const std::size_t n = mv.cols();
    Var ma_raw = g.add(g.scale(batch_mean_dist, cfg.tau), g.scale(g.constant(ma_prev), 1.0 - cfg.tau));
    Var ma_new = g.normalize_sum_rows(ma_raw);
    Var loss = g.scale(g.sum_all(g.log_elem(ma_new)), -1.0 / static_cast<double>(n));
    return {loss, ma_new};
}

// In-place state update variant; returns the Eq. 8 loss value.
inline double udp_update_and_loss(MovingAverageState& state, const std::vector<double>& mean_dist,
                                  SpaceKind space, const ObjectiveConfig& cfg) {
    Tensor& ma = state.for_space(space);
    if (ma.cols() != mean_dist.size()) {
        throw invalid_argument_error("udp: mean length " + std::to_string(mean_dist.size()) +
                                     " vs state " + ma.shape_str());
    }
    Graph g;
    UdpTerm t = udp_node(g, g.constant(Tensor::row(mean_dist)), ma, cfg);
    ma = g.value(t.ma_new);
    return g.value(t.loss).data[0];
}

struct CaTerm {
    Var loss;
    double w_s_category = 1.0;     // weight of the category-teacher term
    double w_s_description = 1.0;  // weight of the description-teacher term
};

// Concept alignment: cross-space distillation in both directions,
// CD(teacher_C -> student_D) + CD(teacher_D -> student_C).
inline CaTerm ca_loss_node(Graph& g, const std::vector<double>& teacher_c,
                           const std::vector<double>& teacher_d, Var student_c, Var student_d,
                           const ObjectiveConfig& cfg) {
    if (teacher_c.size() != teacher_d.size()) {
        throw invalid_argument_error("ca_loss: category n=" + std::to_string(teacher_c.size()) +
                                     " vs description n=" + std::to_string(teacher_d.size()));
    }
    CdTerm first = cd_loss_node(g, teacher_c, student_d, cfg);
    CdTerm second = cd_loss_node(g, teacher_d, student_c, cfg);
    return {g.add(first.loss, second.loss), first.w_s, second.w_s};
}

inline double ca_loss(const std::vector<double>& teacher_c, const std::vector<double>& teacher_d,
                      const std::vector<double>& student_c, const std::vector<double>& student_d,
                      const ObjectiveConfig& cfg) {
    if (student_c.size() != teacher_c.size() || student_d.size() != teacher_d.size()) {
        throw invalid_argument_error("ca_loss: raw score length mismatch");
    }
    Graph g;
    CaTerm t = ca_loss_node(g, teacher_c, teacher_d, g.constant(Tensor::row(student_c)),
                            g.constant(Tensor::row(student_d)), cfg);
    return g.value(t.loss).data[0];
}

struct LossBreakdown {
    double total = 0.0;
    double cd_c = 0.0;
    double up_c = 0.0;
    double cd_d = 0.0;
    double up_d = 0.0;
    double ca = 0.0;
    double w_s_mean = 1.0;      // batch mean of category-space significance weights
    double ma_entropy_c = 0.0;  // entropy of the updated moving averages
    double ma_entropy_d = 0.0;
};

struct TotalLoss {
    Var total;
    LossBreakdown breakdown;
    bool has_ma_c = false, has_ma_d = false;
    Var ma_new_c, ma_new_d;  // valid when the corresponding flag is set
};

// Batch objective: CD and CA averaged over samples, one UDP update per space
// per step. Teacher raw scores are plain vectors (constants); student raw
// scores are graph vars, one 1 x n row per sample.
inline TotalLoss total_loss_node(Graph& g, const std::vector<std::vector<double>>& teacher_raw_c,
                                 const std::vector<std::vector<double>>& teacher_raw_d,
                                 const std::vector<Var>& student_c, const std::vector<Var>& student_d,
                                 const MovingAverageState& state, const ObjectiveConfig& cfg) {
    cfg.validate();
    const std::size_t B = student_c.size();
    if (B == 0 || teacher_raw_c.size() != B) {
        throw invalid_argument_error("total_loss: empty or mismatched batch");
    }
    if (cfg.use_description_space && (teacher_raw_d.size() != B || student_d.size() != B)) {
        throw invalid_argument_error("total_loss: description-space batch mismatch");
    }
    const double inv_b = 1.0 / static_cast<double>(B);

    TotalLoss out;
    double ws_sum = 0.0;

    auto batch_mean_student = [&](const std::vector<Var>& scores) {
        std::vector<Var> rows;
        rows.reserve(B);
        for (Var s : scores) rows.push_back(g.softmax_rows(s, cfg.lambda_student));
        return g.mean_rows(B == 1 ? rows[0] : g.concat_rows(rows));
    };
    auto batch_mean_teacher = [&](const std::vector<std::vector<double>>& raws) {
        Tensor mean = Tensor::zeros({1, raws[0].size()});
        for (const auto& r : raws) {
            std::vector<double> p = softmax_temp(r, cfg.lambda_student);
            for (std::size_t j = 0; j < p.size(); ++j) mean.data[j] += p[j] * inv_b;
        }
        return g.constant(mean);
    };

    // category space
    Var cd_c{};
    {
        std::vector<Var> terms;
        for (std::size_t b = 0; b < B; ++b) {
            CdTerm t = cd_loss_node(g, teacher_raw_c[b], student_c[b], cfg);
            ws_sum += t.w_s;
            terms.push_back(t.loss);
        }
        Var acc = terms[0];
        for (std::size_t b = 1; b < B; ++b) acc = g.add(acc, terms[b]);
        cd_c = g.scale(acc, inv_b);
    }
    Var total = cd_c;
    out.breakdown.cd_c = g.value(cd_c).data[0];

    if (cfg.use_udp) {
        Var mean_c = cfg.udp_from_teacher ? batch_mean_teacher(teacher_raw_c)
                                          : batch_mean_student(student_c);
        UdpTerm u = udp_node(g, mean_c, state.category, cfg);
        out.has_ma_c = true;
        out.ma_new_c = u.ma_new;
        out.breakdown.up_c = g.value(u.loss).data[0];
        out.breakdown.ma_entropy_c = entropy(g.value(u.ma_new).data);
        total = g.add(total, g.scale(u.loss, cfg.udp_weight));
    } else {
        out.breakdown.ma_entropy_c = entropy(state.category.data);
    }

    if (cfg.use_description_space) {
        std::vector<Var> terms;
        for (std::size_t b = 0; b < B; ++b) {
            CdTerm t = cd_loss_node(g, teacher_raw_d[b], student_d[b], cfg);
            terms.push_back(t.loss);
        }
        Var acc = terms[0];
        for (std::size_t b = 1; b < B; ++b) acc = g.add(acc, terms[b]);
        Var cd_d = g.scale(acc, inv_b);
        out.breakdown.cd_d = g.value(cd_d).data[0];
        total = g.add(total, cd_d);

        if (cfg.use_udp) {
            Var mean_d = cfg.udp_from_teacher ? batch_mean_teacher(teacher_raw_d)
                                              : batch_mean_student(student_d);
            UdpTerm u = udp_node(g, mean_d, state.description, cfg);
            out.has_ma_d = true;
            out.ma_new_d = u.ma_new;
            out.breakdown.up_d = g.value(u.loss).data[0];
            out.breakdown.ma_entropy_d = entropy(g.value(u.ma_new).data);
            total = g.add(total, g.scale(u.loss, cfg.udp_weight));
        } else {
            out.breakdown.ma_entropy_d = entropy(state.description.data);
        }

        if (cfg.alignment_active()) {
            std::vector<Var> ca_terms;
            for (std::size_t b = 0; b < B; ++b) {
                CaTerm t = ca_loss_node(g, teacher_raw_c[b], teacher_raw_d[b], student_c[b],
                                        student_d[b], cfg);
                ca_terms.push_back(t.loss);
            }
            Var acc = ca_terms[0];
            for (std::size_t b = 1; b < B; ++b) acc = g.add(acc, ca_terms[b]);
            Var ca = g.scale(acc, inv_b);
            out.breakdown.ca = g.value(ca).data[0];
            total = g.add(total, ca);
        }
    }

    out.total = total;
    out.breakdown.total = g.value(total).data[0];
    out.breakdown.w_s_mean = ws_sum * inv_b;
    return out;
}

// Single-sample convenience wrapper; applies the moving-average update.
inline LossBreakdown total_loss(const std::vector<double>& teacher_c,
                                const std::vector<double>& teacher_d,
                                const std::vector<double>& student_c,
                                const std::vector<double>& student_d, MovingAverageState& state,
                                const ObjectiveConfig& cfg) {
    Graph g;
    std::vector<Var> sc = {g.constant(Tensor::row(student_c))};
    std::vector<Var> sd;
    std::vector<std::vector<double>> td;
    if (cfg.use_description_space) {
        sd.push_back(g.constant(Tensor::row(student_d)));
        td.push_back(teacher_d);
    }
    TotalLoss t = total_loss_node(g, {teacher_c}, td, sc, sd, state, cfg);
    if (t.has_ma_c) state.category = g.value(t.ma_new_c);
    if (t.has_ma_d) state.description = g.value(t.ma_new_d);
    return t.breakdown;
}

}  // namespace lss
