#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lss/concept_space.hpp"
#include "lss/encoder.hpp"
#include "lss/io.hpp"
#include "lss/objectives.hpp"
#include "lss/rng.hpp"
#include "lss/synth_world.hpp"

namespace lss {

struct TrainConfig {
    std::size_t epochs = 4;
    std::size_t batch_size = 8;
    double lr_init = 2e-3;
    double ema_rho = 0.01;  // per-step pull toward the student
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.02;  // matrix weights only
    double sigma_aug = 0.05;     // additive feature jitter per view
    bool scale_aug = true;       // random per-dimension scaling in [0.9, 1.1]
    bool symmetrize_views = false;
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 0;  // steps between checkpoints; 0 = final only
    std::size_t max_steps = 0;            // hard step cap; 0 = run all epochs

    void validate() const {
        if (batch_size < 1) throw invalid_argument_error("train config: batch_size must be >= 1");
        if (!(lr_init >= 0.0)) throw invalid_argument_error("train config: lr_init must be >= 0");
        if (!(ema_rho > 0.0 && ema_rho <= 1.0)) {
            throw invalid_argument_error("train config: ema_rho must be in (0,1]");
        }
        if (!(sigma_aug >= 0.0)) throw invalid_argument_error("train config: sigma_aug must be >= 0");
        if (!(weight_decay >= 0.0)) {
            throw invalid_argument_error("train config: weight_decay must be >= 0");
        }
    }
};

inline double cosine_lr(double lr_init, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return lr_init;
    const double x = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_init * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

struct MetricsRow {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

inline std::string metrics_csv_header() {
    return "step,loss_total,loss_cd_c,loss_up_c,loss_cd_d,loss_up_d,loss_ca,w_s_mean,"
           "ma_entropy_c,ma_entropy_d,lr,epoch";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
    std::ostringstream os;
    os << r.step << ',' << format_double(r.loss.total) << ',' << format_double(r.loss.cd_c) << ','
       << format_double(r.loss.up_c) << ',' << format_double(r.loss.cd_d) << ','
       << format_double(r.loss.up_d) << ',' << format_double(r.loss.ca) << ','
       << format_double(r.loss.w_s_mean) << ',' << format_double(r.loss.ma_entropy_c) << ','
       << format_double(r.loss.ma_entropy_d) << ',' << format_double(r.lr) << ',' << r.epoch;
    return os.str();
}

struct TrainerState {
    EncoderParams student;
    EncoderParams teacher;  // EMA copy, never touched by the optimizer
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;
    std::uint64_t step = 0;
    MovingAverageState ma;
    Rng rng{0};
    std::vector<MetricsRow> metrics;
};

inline TrainerState init_trainer_state(const EncoderConfig& enc_cfg, std::size_t n_category,
                                       std::size_t n_description, const TrainConfig& cfg) {
    cfg.validate();
    TrainerState st;
    Rng init_rng = Rng(cfg.seed).derive(0x696E6974ull);
    st.student = init_encoder(enc_cfg, init_rng);
    st.teacher = st.student;  // teacher == student at init
    for (auto& [name, t] : named_tensors(st.student)) {
        st.adam_m.push_back(Tensor::zeros(t->shape));
        st.adam_v.push_back(Tensor::zeros(t->shape));
    }
    st.ma = MovingAverageState::uniform(n_category, n_description);
    st.rng = Rng(cfg.seed).derive(0x76696577ull);  // view/augmentation stream
    return st;
}

// --- view generation ---

// Two clips from one video: per view, a random-stride arithmetic progression
// of T frame indices, then feature-space augmentation (gaussian jitter plus
// per-dimension scaling standing in for pixel augmentations).
inline std::pair<Clip, Clip> sample_views(const Tensor& video_tokens, std::size_t T, Rng& rng,
                                          double sigma_aug = 0.0, bool scale_aug = false) {
    if (video_tokens.shape.size() != 3) {
        throw invalid_argument_error("sample_views: video tokens must be {length, S, d_in}");
    }
    const std::size_t length = video_tokens.shape[0];
    const std::size_t S = video_tokens.shape[1];
    const std::size_t d_in = video_tokens.shape[2];
    if (T < 1) throw invalid_argument_error("sample_views: T must be >= 1");
    if (length < T) {
        throw invalid_argument_error("sample_views: video length " + std::to_string(length) +
                                     " < T " + std::to_string(T));
    }
    auto one_view = [&]() {
        std::size_t stride = 1, start = 0;
        if (T > 1) {
            const std::size_t max_stride = (length - 1) / (T - 1);
            stride = 1 + static_cast<std::size_t>(rng.uniform_int(max_stride));
            start = static_cast<std::size_t>(rng.uniform_int(length - stride * (T - 1)));
        } else {
            start = static_cast<std::size_t>(rng.uniform_int(length));
        }
        Clip clip;
        clip.features = Tensor::zeros({T, S, d_in});
        const std::size_t frame_len = S * d_in;
        for (std::size_t i = 0; i < T; ++i) {
            const std::size_t f = start + i * stride;
            for (std::size_t j = 0; j < frame_len; ++j) {
                clip.features.data[i * frame_len + j] = video_tokens.data[f * frame_len + j];
            }
        }
        if (sigma_aug > 0.0) {
            for (double& x : clip.features.data) x += sigma_aug * rng.normal();
        }
        if (scale_aug) {
            std::vector<double> scales(d_in);
            for (double& s : scales) s = rng.uniform(0.9, 1.1);
            for (std::size_t i = 0; i < T * S; ++i) {
                for (std::size_t j = 0; j < d_in; ++j) clip.features.data[i * d_in + j] *= scales[j];
            }
        }
        return clip;
    };
    Clip v1 = one_view();
    Clip v2 = one_view();
    return {v1, v2};
}

// --- EMA ---

inline void ema_update(EncoderParams& teacher, const EncoderParams& student, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw invalid_argument_error("ema_update: rho must be in (0,1]");
    auto t_list = named_tensors(teacher);
    auto s_list = named_tensors(const_cast<EncoderParams&>(student));
    if (t_list.size() != s_list.size()) {
        throw invalid_argument_error("ema_update: parameter structure mismatch");
    }
    for (std::size_t i = 0; i < t_list.size(); ++i) {
        Tensor& t = *t_list[i].second;
        const Tensor& s = *s_list[i].second;
        if (!t.same_shape(s)) {
            throw invalid_argument_error("ema_update: shape mismatch at " + t_list[i].first);
        }
        for (std::size_t j = 0; j < t.data.size(); ++j) {
            t.data[j] = (1.0 - rho) * t.data[j] + rho * s.data[j];
        }
    }
}

// --- step loss construction (shared by training and gradient checking) ---

struct BatchSample {
    Clip student_view;
    std::vector<double> teacher_raw_c;
    std::vector<double> teacher_raw_d;  // empty when the description space is off
};

struct StepLoss {
    EncoderVars vars;
    TotalLoss objective;
};

inline StepLoss build_step_loss(Graph& g, const EncoderParams& student,
                                const std::vector<BatchSample>& batch, const Tensor& basis_c_t,
                                const Tensor& basis_d_t, const MovingAverageState& ma,
                                const ObjectiveConfig& ocfg) {
    if (batch.empty()) throw invalid_argument_error("build_step_loss: empty batch");
    StepLoss out;
    out.vars = bind_encoder(g, student, true);
    Var bc = g.constant(basis_c_t);
    Var bd{};
    if (ocfg.use_description_space) bd = g.constant(basis_d_t);

    std::vector<std::vector<double>> traw_c, traw_d;
    std::vector<Var> sc, sd;
    for (const BatchSample& s : batch) {
        Var f = encode_clip(g, out.vars, s.student_view);
        sc.push_back(project_scores(g, f, bc));
        traw_c.push_back(s.teacher_raw_c);
        if (ocfg.use_description_space) {
            sd.push_back(project_scores(g, f, bd));
            traw_d.push_back(s.teacher_raw_d);
        }
    }
    out.objective = total_loss_node(g, traw_c, traw_d, sc, sd, ma, ocfg);
    return out;
}

// Teacher-side raw scores for one clip, computed off the student tape.
inline BatchSample make_batch_sample(const EncoderParams& teacher, const Clip& teacher_view,
                                     Clip student_view, const ConceptSpace& space_c,
                                     const ConceptSpace* space_d, const ObjectiveConfig& ocfg) {
    BatchSample s;
    s.student_view = std::move(student_view);
    std::vector<double> f1 = encode_clip_value(teacher, teacher_view);
    s.teacher_raw_c = project_to_space(space_c, f1).raw;
    if (ocfg.use_description_space) {
        if (space_d == nullptr) {
            throw invalid_argument_error("train: description space required by objective config");
        }
        s.teacher_raw_d = project_to_space(*space_d, f1).raw;
    }
    return s;
}

// --- optimizer ---

// Decay applies to matrix weights only (projection/attention/MLP/head), not
// to norms, biases, position embeddings, or the CLS token.
inline bool weight_decay_applies(const std::string& name) {
    return name.find("_w") != std::string::npos;
}

inline void adamw_update(TrainerState& st, const std::vector<Tensor>& grads, double lr,
                         const TrainConfig& cfg) {
    auto params = named_tensors(st.student);
    if (grads.size() != params.size()) {
        throw invalid_argument_error("adamw_update: gradient count mismatch");
    }
    const double t = static_cast<double>(st.step + 1);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].second;
        const Tensor& g = grads[i];
        Tensor& m = st.adam_m[i];
        Tensor& v = st.adam_v[i];
        const bool decay = weight_decay_applies(params[i].first);
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double gj = g.data.empty() ? 0.0 : g.data[j];
            m.data[j] = cfg.adam_beta1 * m.data[j] + (1.0 - cfg.adam_beta1) * gj;
            v.data[j] = cfg.adam_beta2 * v.data[j] + (1.0 - cfg.adam_beta2) * gj * gj;
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            double update = mhat / (std::sqrt(vhat) + cfg.adam_eps);
            if (decay) update += cfg.weight_decay * p.data[j];
            p.data[j] -= lr * update;
        }
    }
}

// --- one training step ---

struct StepResult {
    MetricsRow metrics;
    // batch mean of the sharpened teacher category distributions, for
    // collapse diagnostics
    std::vector<double> teacher_mean_c;
};

inline StepResult train_step(TrainerState& st, const std::vector<const SynthVideo*>& batch,
                             const ConceptSpace& space_c, const ConceptSpace* space_d,
                             const TrainConfig& tcfg, const ObjectiveConfig& ocfg, double lr,
                             std::size_t epoch) {
    if (batch.empty()) throw invalid_argument_error("train_step: empty batch");
    ocfg.validate();
    const auto rng_snapshot = st.rng.state();

    std::vector<BatchSample> samples;
    std::vector<double> teacher_mean_c(space_c.size(), 0.0);
    samples.reserve(batch.size());
    for (const SynthVideo* video : batch) {
        auto [view1, view2] =
            sample_views(video->tokens, st.student.cfg.T, st.rng, tcfg.sigma_aug, tcfg.scale_aug);
        BatchSample s = make_batch_sample(st.teacher, view1, std::move(view2), space_c, space_d, ocfg);
        std::vector<double> f1_hat = sharpen(s.teacher_raw_c, ocfg.lambda_teacher);
        for (std::size_t j = 0; j < f1_hat.size(); ++j) teacher_mean_c[j] += f1_hat[j];
        samples.push_back(std::move(s));
        if (tcfg.symmetrize_views) {
            // mirrored pass: swap the roles of the two views
            auto [w1, w2] = std::pair<Clip, Clip>(samples.back().student_view, view1);
            BatchSample m = make_batch_sample(st.teacher, w1, std::move(w2), space_c, space_d, ocfg);
            std::vector<double> m_hat = sharpen(m.teacher_raw_c, ocfg.lambda_teacher);
            for (std::size_t j = 0; j < m_hat.size(); ++j) teacher_mean_c[j] += m_hat[j];
            samples.push_back(std::move(m));
        }
    }
    for (double& x : teacher_mean_c) x /= static_cast<double>(samples.size());

    Graph g;
    StepLoss sl;
    try {
        sl = build_step_loss(g, st.student, samples, space_c.basis_transposed(),
                             space_d ? space_d->basis_transposed() : Tensor{}, st.ma, ocfg);
    } catch (const std::exception&) {
        st.rng.set_state(rng_snapshot);
        throw;
    }
    const double loss_value = g.value(sl.objective.total).data[0];
    if (!std::isfinite(loss_value)) {
        st.rng.set_state(rng_snapshot);
        throw numerical_failure_error("train_step: non-finite loss");
    }
    g.backward(sl.objective.total);

    std::vector<Tensor> grads;
    grads.reserve(sl.vars.leaves.size());
    bool grads_finite = true;
    for (Var leaf : sl.vars.leaves) {
        grads.push_back(g.grad(leaf));
        if (!grads.back().data.empty() && !grads.back().all_finite()) grads_finite = false;
    }
    if (!grads_finite) {
        st.rng.set_state(rng_snapshot);
        throw numerical_failure_error("train_step: non-finite gradient");
    }

    adamw_update(st, grads, lr, tcfg);
    ema_update(st.teacher, st.student, tcfg.ema_rho);
    if (sl.objective.has_ma_c) st.ma.category = g.value(sl.objective.ma_new_c);
    if (sl.objective.has_ma_d) st.ma.description = g.value(sl.objective.ma_new_d);
    st.step += 1;

    StepResult res;
    res.metrics.step = st.step;
    res.metrics.epoch = epoch;
    res.metrics.lr = lr;
    res.metrics.loss = sl.objective.breakdown;
    res.teacher_mean_c = std::move(teacher_mean_c);
    st.metrics.push_back(res.metrics);
    return res;
}

// --- checkpointing (LSSCKPT1, little endian, trailing CRC32) ---

namespace detail {

inline void ckpt_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
    for (double x : t.data) write_f64(os, x);
}

inline Tensor bits_row(const std::array<std::uint64_t, 4>& s) {
    Tensor t = Tensor::zeros({1, 4});
    for (std::size_t i = 0; i < 4; ++i) std::memcpy(&t.data[i], &s[i], 8);
    return t;
}

}  // namespace detail

inline void save_checkpoint(const TrainerState& st, const std::string& path) {
    std::ostringstream body;
    body.write("LSSCKPT1", 8);

    std::vector<std::pair<std::string, Tensor>> entries;
    const EncoderConfig& c = st.student.cfg;
    entries.push_back({"meta/encoder_cfg",
                       Tensor::row({static_cast<double>(c.T), static_cast<double>(c.S),
                                    static_cast<double>(c.d_in), static_cast<double>(c.d_e),
                                    static_cast<double>(c.d_out), static_cast<double>(c.L),
                                    static_cast<double>(c.H_att)})});
    entries.push_back({"meta/step", Tensor::row({static_cast<double>(st.step)})});
    entries.push_back({"meta/rng", detail::bits_row(st.rng.state())});
    entries.push_back({"ma/category", st.ma.category});
    if (st.ma.description.numel() > 0) entries.push_back({"ma/description", st.ma.description});
    for (auto& [name, t] : named_tensors(st.student)) entries.push_back({"student/" + name, *t});
    for (auto& [name, t] : named_tensors(st.teacher)) entries.push_back({"teacher/" + name, *t});
    auto names = named_tensors(st.student);
    for (std::size_t i = 0; i < names.size(); ++i) {
        entries.push_back({"adam_m/" + names[i].first, st.adam_m[i]});
        entries.push_back({"adam_v/" + names[i].first, st.adam_v[i]});
    }

    write_u32(body, static_cast<std::uint32_t>(entries.size()));
    for (auto& [name, t] : entries) detail::ckpt_tensor(body, name, t);

    const std::string bytes = body.str();
    Crc32 crc;
    crc.update(bytes.data(), bytes.size());

    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    write_u32(os, crc.final());
    if (!os) throw format_error("write failure on '" + path + "'");
}

inline EncoderParams alloc_encoder(const EncoderConfig& cfg) {
    // zero-valued parameter structure with the right shapes
    Rng dummy(0);
    EncoderParams p = init_encoder(cfg, dummy);
    for (auto& [name, t] : named_tensors(p)) {
        for (double& x : t->data) x = 0.0;
    }
    return p;
}

inline TrainerState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string all = buf.str();
    if (all.size() < 12) throw parse_error(path + ": truncated checkpoint");
    if (all.compare(0, 8, "LSSCKPT1") != 0) {
        throw format_error(path + ": bad magic, not an LSSCKPT1 file");
    }
    const std::string body = all.substr(0, all.size() - 4);
    Crc32 crc;
    crc.update(body.data(), body.size());
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) {
        stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(all[all.size() - 4 + i]))
                  << (8 * i);
    }
    if (crc.final() != stored) throw parse_error(path + ": CRC mismatch, file corrupted");

    std::istringstream bs(body.substr(8));
    const std::uint32_t count = read_u32(bs, "tensor count");
    std::vector<std::pair<std::string, Tensor>> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(bs, "name length");
        std::string name(name_len, '\0');
        if (!bs.read(name.data(), name_len)) throw parse_error(path + ": truncated tensor name");
        const std::uint32_t rank = read_u32(bs, "rank");
        std::vector<std::size_t> shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(read_u32(bs, "dim"));
        Tensor t = Tensor::zeros(shape);
        for (double& x : t.data) x = read_f64(bs, "tensor data");
        entries.push_back({std::move(name), std::move(t)});
    }

    auto find = [&](const std::string& name) -> Tensor* {
        for (auto& [n, t] : entries) {
            if (n == name) return &t;
        }
        return nullptr;
    };
    Tensor* cfg_t = find("meta/encoder_cfg");
    if (!cfg_t || cfg_t->numel() != 7) throw format_error(path + ": missing meta/encoder_cfg");
    EncoderConfig cfg;
    cfg.T = static_cast<std::size_t>(cfg_t->data[0]);
    cfg.S = static_cast<std::size_t>(cfg_t->data[1]);
    cfg.d_in = static_cast<std::size_t>(cfg_t->data[2]);
    cfg.d_e = static_cast<std::size_t>(cfg_t->data[3]);
    cfg.d_out = static_cast<std::size_t>(cfg_t->data[4]);
    cfg.L = static_cast<std::size_t>(cfg_t->data[5]);
    cfg.H_att = static_cast<std::size_t>(cfg_t->data[6]);
    cfg.validate();

    TrainerState st;
    st.student = alloc_encoder(cfg);
    st.teacher = alloc_encoder(cfg);
    auto assign = [&](const std::string& prefix, EncoderParams& p) {
        for (auto& [name, t] : named_tensors(p)) {
            Tensor* src = find(prefix + name);
            if (!src) throw format_error(path + ": missing tensor " + prefix + name);
            if (!src->same_shape(*t)) throw format_error(path + ": shape mismatch for " + prefix + name);
            *t = *src;
        }
    };
    assign("student/", st.student);
    assign("teacher/", st.teacher);
    for (auto& [name, t] : named_tensors(st.student)) {
        Tensor* m = find("adam_m/" + name);
        Tensor* v = find("adam_v/" + name);
        if (!m || !v) throw format_error(path + ": missing optimizer state for " + name);
        st.adam_m.push_back(*m);
        st.adam_v.push_back(*v);
    }
    Tensor* step_t = find("meta/step");
    if (!step_t || step_t->numel() != 1) throw format_error(path + ": missing meta/step");
    st.step = static_cast<std::uint64_t>(step_t->data[0]);
    Tensor* rng_t = find("meta/rng");
    if (!rng_t || rng_t->numel() != 4) throw format_error(path + ": missing meta/rng");
    std::array<std::uint64_t, 4> rs;
    for (std::size_t i = 0; i < 4; ++i) std::memcpy(&rs[i], &rng_t->data[i], 8);
    st.rng.set_state(rs);
    Tensor* ma_c = find("ma/category");
    if (!ma_c) throw format_error(path + ": missing ma/category");
    st.ma.category = *ma_c;
    Tensor* ma_d = find("ma/description");
    if (ma_d) st.ma.description = *ma_d;
    return st;
}

// --- full training loop ---

struct RunOutputs {
    std::string out_dir;  // empty = no files written
    std::string metrics_path;
    std::string final_checkpoint_path;
};

inline std::size_t steps_per_epoch(std::size_t num_videos, std::size_t batch_size) {
    return (num_videos + batch_size - 1) / batch_size;
}

inline std::size_t planned_total_steps(std::size_t num_videos, const TrainConfig& cfg) {
    std::size_t total = cfg.epochs * steps_per_epoch(num_videos, cfg.batch_size);
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
    return total;
}

// Self-supervised training over a dataset; labels are never read. Resumable:
// pass a state restored from a checkpoint and the loop continues at st.step.
// per_step, when set, observes every StepResult (used by diagnostics).
inline RunOutputs run_training(TrainerState& st, const SynthDataset& dataset,
                               const ConceptSpace& space_c, const ConceptSpace* space_d,
                               const TrainConfig& tcfg, const ObjectiveConfig& ocfg,
                               const std::string& out_dir = "",
                               const std::function<void(const StepResult&)>& per_step = {}) {
    tcfg.validate();
    ocfg.validate();
    if (dataset.videos.empty()) throw invalid_argument_error("run_training: empty dataset");
    if (space_c.dim() != st.student.cfg.d_out) {
        throw invalid_argument_error("run_training: space dim " + std::to_string(space_c.dim()) +
                                     " != encoder d_out " + std::to_string(st.student.cfg.d_out));
    }
    const std::uint64_t hash_c_before = space_c.content_hash();
    const std::uint64_t hash_d_before = space_d ? space_d->content_hash() : 0;

    RunOutputs out;
    out.out_dir = out_dir;
    std::ofstream metrics;
    if (!out_dir.empty()) {
        out.metrics_path = out_dir + "/metrics.csv";
        const bool fresh = st.step == 0;
        metrics.open(out.metrics_path, fresh ? std::ios::trunc : std::ios::app);
        if (!metrics) throw format_error("cannot open '" + out.metrics_path + "' for writing");
        if (fresh) metrics << metrics_csv_header() << "\n";
    }

    const std::size_t spe = steps_per_epoch(dataset.videos.size(), tcfg.batch_size);
    const std::size_t total = planned_total_steps(dataset.videos.size(), tcfg);

    auto write_checkpoint = [&](const std::string& name) {
        if (out_dir.empty()) return std::string();
        std::string path = out_dir + "/" + name;
        try {
            save_checkpoint(st, path);
        } catch (const std::exception& e) {
            if (metrics.is_open()) {
                metrics << "# WARNING: checkpoint write failed, state is partial: " << e.what()
                        << "\n";
                metrics.flush();
            }
            throw;
        }
        return path;
    };

    while (st.step < total) {
        const std::size_t epoch = st.step / spe;
        if (epoch >= tcfg.epochs) break;
        // epoch order derived from (seed, epoch) so a resumed run rebuilds
        // the same permutation without replaying consumed draws
        std::vector<std::size_t> order(dataset.videos.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng(tcfg.seed).derive(0x73687566ull).derive(epoch);
        shuffle_rng.shuffle(order);

        for (std::size_t b = st.step % spe; b < spe && st.step < total; ++b) {
            std::vector<const SynthVideo*> batch;
            const std::size_t begin = b * tcfg.batch_size;
            const std::size_t end = std::min(begin + tcfg.batch_size, order.size());
            for (std::size_t i = begin; i < end; ++i) batch.push_back(&dataset.videos[order[i]]);
            const double lr = cosine_lr(tcfg.lr_init, st.step, total);
            StepResult res = train_step(st, batch, space_c, space_d, tcfg, ocfg, lr, epoch);
            if (metrics.is_open()) metrics << metrics_csv_row(res.metrics) << "\n";
            if (per_step) per_step(res);
            if (tcfg.checkpoint_interval > 0 && st.step % tcfg.checkpoint_interval == 0 &&
                st.step < total) {
                write_checkpoint("ckpt_step" + std::to_string(st.step) + ".lssckpt");
            }
        }
    }

    out.final_checkpoint_path = write_checkpoint("final.lssckpt");
    if (space_c.content_hash() != hash_c_before ||
        (space_d && space_d->content_hash() != hash_d_before)) {
        throw numerical_failure_error("run_training: frozen concept space was mutated");
    }
    return out;
}

}  // namespace lss
