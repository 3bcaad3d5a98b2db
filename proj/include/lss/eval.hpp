#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lss/concept_space.hpp"
#include "lss/encoder.hpp"
#include "lss/io.hpp"
#include "lss/synth_world.hpp"
#include "lss/trainer.hpp"

namespace lss {

struct ProbeConfig {
    std::size_t epochs = 15;
    double lr = 1e-3;
    std::size_t batch = 128;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch < 1) throw invalid_argument_error("probe config: batch must be >= 1");
        if (!(lr >= 0.0)) throw invalid_argument_error("probe config: lr must be >= 0");
    }
};

struct EvalReport {
    std::string protocol;  // "zero_shot" or "linear_probe"
    double top1 = 0.0;
    std::vector<double> per_class;  // accuracy per class id
    std::vector<std::size_t> per_class_count;
    std::size_t num_samples = 0;
    std::uint64_t config_hash = 0;
    std::vector<std::size_t> missing_train_classes;
};

inline double top1_accuracy(const std::vector<std::size_t>& predictions,
                            const std::vector<std::size_t>& labels) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        throw invalid_argument_error("top1_accuracy: length mismatch or empty");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Deterministic temporal crops: num_crops windows spread across the video,
// each with T near-uniformly spaced frames.
inline std::vector<std::vector<std::size_t>> temporal_crop_indices(std::size_t video_length,
                                                                   std::size_t T,
                                                                   std::size_t num_crops) {
    if (num_crops < 1) throw invalid_argument_error("temporal_crop_indices: num_crops must be >= 1");
    if (video_length < T) {
        throw invalid_argument_error("temporal_crop_indices: video length " +
                                     std::to_string(video_length) + " < T " + std::to_string(T));
    }
    const std::size_t span = std::max(T, video_length / 2);
    std::vector<std::vector<std::size_t>> crops;
    for (std::size_t c = 0; c < num_crops; ++c) {
        const std::size_t start =
            num_crops == 1 ? 0 : c * (video_length - span) / (num_crops - 1);
        std::vector<std::size_t> idx(T);
        for (std::size_t i = 0; i < T; ++i) {
            idx[i] = start + (T == 1 ? 0 : i * (span - 1) / (T - 1));
        }
        crops.push_back(std::move(idx));
    }
    return crops;
}

inline Clip clip_from_indices(const SynthVideo& video, const std::vector<std::size_t>& idx) {
    const std::size_t S = video.tokens.shape[1], d_in = video.tokens.shape[2];
    Clip clip;
    clip.class_id = video.class_id;
    clip.features = Tensor::zeros({idx.size(), S, d_in});
    const std::size_t frame_len = S * d_in;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < frame_len; ++j) {
            clip.features.data[i * frame_len + j] = video.tokens.data[idx[i] * frame_len + j];
        }
    }
    return clip;
}

// Sub-clip features averaged before normalization.
inline std::vector<double> video_feature(const EncoderParams& params, const SynthVideo& video,
                                         std::size_t num_crops = 3) {
    auto crops = temporal_crop_indices(video.tokens.shape[0], params.cfg.T, num_crops);
    std::vector<double> mean(params.cfg.d_out, 0.0);
    for (const auto& idx : crops) {
        std::vector<double> f = encode_clip_value(params, clip_from_indices(video, idx));
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += f[j];
    }
    for (double& x : mean) x /= static_cast<double>(crops.size());
    return mean;
}

namespace detail {

inline EvalReport make_report(const std::string& protocol,
                              const std::vector<std::size_t>& predictions,
                              const std::vector<std::size_t>& labels, std::size_t num_classes) {
    EvalReport r;
    r.protocol = protocol;
    r.num_samples = labels.size();
    r.top1 = top1_accuracy(predictions, labels);
    r.per_class.assign(num_classes, 0.0);
    r.per_class_count.assign(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        r.per_class_count[labels[i]] += 1;
        if (predictions[i] == labels[i]) r.per_class[labels[i]] += 1.0;
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (r.per_class_count[k] > 0) r.per_class[k] /= static_cast<double>(r.per_class_count[k]);
    }
    return r;
}

}  // namespace detail

struct ZeroShotResult {
    std::vector<std::size_t> predictions;
    EvalReport report;
};

// Argmax cosine similarity against a downstream concept space; ties resolve
// to the lowest index.
inline ZeroShotResult zero_shot_classify(const EncoderParams& params,
                                         const std::vector<SynthVideo>& videos,
                                         const ConceptSpace& space, std::size_t num_crops = 3) {
    if (videos.empty()) throw invalid_argument_error("zero_shot_classify: no clips");
    if (space.dim() != params.cfg.d_out) {
        throw invalid_argument_error("zero_shot_classify: space dim " + std::to_string(space.dim()) +
                                     " != encoder d_out " + std::to_string(params.cfg.d_out));
    }
    ZeroShotResult out;
    std::vector<std::size_t> labels;
    for (const SynthVideo& v : videos) {
        std::vector<double> f = video_feature(params, v, num_crops);
        ScoreDistribution scores = project_to_space(space, f);
        out.predictions.push_back(scores.argmax());
        labels.push_back(v.class_id);
    }
    out.report = detail::make_report("zero_shot", out.predictions, labels, space.size());
    return out;
}

// Softmax regression on frozen features: AdamW with cosine decay, closed-form
// gradients, one cached feature vector per video.
inline EvalReport linear_probe(const EncoderParams& params, const std::vector<SynthVideo>& train,
                               const std::vector<SynthVideo>& test, const ProbeConfig& cfg,
                               std::size_t num_crops = 3) {
    cfg.validate();
    if (train.empty() || test.empty()) throw invalid_argument_error("linear_probe: empty split");
    const std::uint64_t encoder_hash_before = params_hash(params);

    std::size_t num_classes = 0;
    for (const SynthVideo& v : train) num_classes = std::max<std::size_t>(num_classes, v.class_id + 1);
    for (const SynthVideo& v : test) num_classes = std::max<std::size_t>(num_classes, v.class_id + 1);

    const std::size_t d = params.cfg.d_out;
    auto extract = [&](const std::vector<SynthVideo>& vs) {
        std::vector<std::vector<double>> feats;
        feats.reserve(vs.size());
        for (const SynthVideo& v : vs) feats.push_back(video_feature(params, v, num_crops));
        return feats;
    };
    std::vector<std::vector<double>> train_f = extract(train);
    std::vector<std::vector<double>> test_f = extract(test);

    std::vector<bool> seen(num_classes, false);
    for (const SynthVideo& v : train) seen[v.class_id] = true;

    Rng rng = Rng(cfg.seed).derive(0x70726F62ull);
    std::vector<double> w(num_classes * d);
    std::vector<double> bias(num_classes, 0.0);
    for (double& x : w) x = 0.01 * rng.normal();
    std::vector<double> m_w(w.size(), 0.0), v_w(w.size(), 0.0);
    std::vector<double> m_b(num_classes, 0.0), v_b(num_classes, 0.0);

    const std::size_t batch = std::min(cfg.batch, train.size());
    const std::size_t batches_per_epoch = (train.size() + batch - 1) / batch;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t begin = b * batch, end = std::min(begin + batch, order.size());
            const double inv = 1.0 / static_cast<double>(end - begin);
            std::vector<double> gw(w.size(), 0.0), gb(num_classes, 0.0);
            for (std::size_t i = begin; i < end; ++i) {
                const std::vector<double>& f = train_f[order[i]];
                std::vector<double> logits(num_classes);
                for (std::size_t k = 0; k < num_classes; ++k) {
                    double s = bias[k];
                    for (std::size_t j = 0; j < d; ++j) s += w[k * d + j] * f[j];
                    logits[k] = s;
                }
                std::vector<double> p = softmax_temp(logits, 1.0);
                p[train[order[i]].class_id] -= 1.0;  // dCE/dlogits = p - onehot
                for (std::size_t k = 0; k < num_classes; ++k) {
                    const double gk = p[k] * inv;
                    gb[k] += gk;
                    for (std::size_t j = 0; j < d; ++j) gw[k * d + j] += gk * f[j];
                }
            }
            const double lr = cosine_lr(cfg.lr, step, total_steps);
            const double t = static_cast<double>(step + 1);
            const double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
            auto adam = [&](std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                            const std::vector<double>& grad, bool decay) {
                for (std::size_t j = 0; j < p.size(); ++j) {
                    m[j] = 0.9 * m[j] + 0.1 * grad[j];
                    v[j] = 0.999 * v[j] + 0.001 * grad[j] * grad[j];
                    double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8);
                    if (decay) update += cfg.weight_decay * p[j];
                    p[j] -= lr * update;
                }
            };
            adam(w, m_w, v_w, gw, true);
            adam(bias, m_b, v_b, gb, false);
            ++step;
        }
    }

    std::vector<std::size_t> predictions, labels;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const std::vector<double>& f = test_f[i];
        std::size_t best = 0;
        double best_score = -1e300;
        for (std::size_t k = 0; k < num_classes; ++k) {
            double s = bias[k];
            for (std::size_t j = 0; j < d; ++j) s += w[k * d + j] * f[j];
            if (s > best_score) {
                best_score = s;
                best = k;
            }
        }
        predictions.push_back(best);
        labels.push_back(test[i].class_id);
    }

    EvalReport r = detail::make_report("linear_probe", predictions, labels, num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (!seen[k] && r.per_class_count[k] > 0) r.missing_train_classes.push_back(k);
    }
    if (params_hash(params) != encoder_hash_before) {
        throw numerical_failure_error("linear_probe: encoder parameters changed during probing");
    }
    return r;
}

inline void write_report_csv(const EvalReport& r, const std::vector<std::string>& class_labels,
                             const std::string& path) {
    std::ofstream os(path);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    os << "class,count,accuracy\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        std::string name = k < class_labels.size() ? class_labels[k] : ("class_" + std::to_string(k));
        os << name << ',' << r.per_class_count[k] << ',' << format_double(r.per_class[k]) << "\n";
    }
    os << "total," << r.num_samples << ',' << format_double(r.top1) << "\n";
    if (!os) throw format_error("write failure on '" + path + "'");
}

inline std::string report_summary(const EvalReport& r) {
    std::ostringstream os;
    os << r.protocol << ": top1=" << format_double(r.top1) << " over " << r.num_samples
       << " samples";
    if (!r.missing_train_classes.empty()) {
        os << " (classes missing from train:";
        for (std::size_t k : r.missing_train_classes) os << ' ' << k;
        os << ", scored as always-wrong)";
    }
    return os.str();
}

}  // namespace lss
