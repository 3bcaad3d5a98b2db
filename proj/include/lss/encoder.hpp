#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lss/autodiff.hpp"
#include "lss/io.hpp"
#include "lss/rng.hpp"
#include "lss/tensor.hpp"

namespace lss {

// Toy factorized space-time transformer. Each block runs temporal
// self-attention (every token position, including the per-frame CLS copy,
// attends across frames at its own position), then spatial self-attention
// within each frame, then a pre-norm MLP. Temporal output projections start
// at exactly zero, so a fresh encoder reduces to the frame-level model.
struct EncoderConfig {
    std::size_t T = 8;       // frames per clip
    std::size_t S = 4;       // spatial tokens per frame
    std::size_t d_in = 24;   // input patch feature dim
    std::size_t d_e = 32;    // token embedding dim
    std::size_t d_out = 16;  // output feature dim
    std::size_t L = 2;       // blocks
    std::size_t H_att = 2;   // attention heads

    std::size_t mlp_hidden() const { return 2 * d_e; }
    std::size_t head_dim() const { return d_e / H_att; }

    void validate() const {
        if (T < 1 || S < 1 || d_in < 1 || d_e < 1 || d_out < 1 || L < 1 || H_att < 1) {
            throw invalid_argument_error("encoder config: all dimensions must be >= 1");
        }
        if (d_e % H_att != 0) {
            throw invalid_argument_error("encoder config: d_e=" + std::to_string(d_e) +
                                         " not divisible by H_att=" + std::to_string(H_att));
        }
    }
};

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlock {
    Tensor ln_t_g, ln_t_b;  // temporal pre-norm
    AttentionWeights temporal;
    Tensor ln_s_g, ln_s_b;  // spatial pre-norm
    AttentionWeights spatial;
    Tensor ln_m_g, ln_m_b;  // mlp pre-norm
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct EncoderParams {
    EncoderConfig cfg;
    Tensor patch_w, patch_b;  // d_in x d_e, 1 x d_e
    Tensor pos_spatial;       // (S+1) x d_e
    Tensor pos_temporal;      // T x d_e, zero at init
    Tensor cls;               // 1 x d_e
    std::vector<EncoderBlock> blocks;
    Tensor ln_f_g, ln_f_b;
    Tensor head_w, head_b;  // d_e x d_out, 1 x d_out
};

// One augmented view: T x S x d_in patch features. The class id is carried
// for evaluation only and is never readable from the loss path.
struct Clip {
    Tensor features;  // shape {T, S, d_in}
    std::optional<std::uint32_t> class_id;

    std::size_t frames() const { return features.shape.size() == 3 ? features.shape[0] : 0; }

    Tensor frame(std::size_t t) const {
        const std::size_t S = features.shape[1], D = features.shape[2];
        Tensor out = Tensor::zeros({S, D});
        for (std::size_t i = 0; i < S * D; ++i) out.data[i] = features.data[t * S * D + i];
        return out;
    }
};

// Stable name -> tensor listing; the single source of traversal order for
// init draws, optimizer state, EMA updates, and checkpoints.
inline std::vector<std::pair<std::string, Tensor*>> named_tensors(EncoderParams& p) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.push_back({"patch_w", &p.patch_w});
    out.push_back({"patch_b", &p.patch_b});
    out.push_back({"pos_spatial", &p.pos_spatial});
    out.push_back({"pos_temporal", &p.pos_temporal});
    out.push_back({"cls", &p.cls});
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        EncoderBlock& b = p.blocks[l];
        std::string pre = "block" + std::to_string(l) + ".";
        out.push_back({pre + "ln_t_g", &b.ln_t_g});
        out.push_back({pre + "ln_t_b", &b.ln_t_b});
        out.push_back({pre + "t_wq", &b.temporal.wq});
        out.push_back({pre + "t_bq", &b.temporal.bq});
        out.push_back({pre + "t_wk", &b.temporal.wk});
        out.push_back({pre + "t_bk", &b.temporal.bk});
        out.push_back({pre + "t_wv", &b.temporal.wv});
        out.push_back({pre + "t_bv", &b.temporal.bv});
        out.push_back({pre + "t_wo", &b.temporal.wo});
        out.push_back({pre + "t_bo", &b.temporal.bo});
        out.push_back({pre + "ln_s_g", &b.ln_s_g});
        out.push_back({pre + "ln_s_b", &b.ln_s_b});
        out.push_back({pre + "s_wq", &b.spatial.wq});
        out.push_back({pre + "s_bq", &b.spatial.bq});
        out.push_back({pre + "s_wk", &b.spatial.wk});
        out.push_back({pre + "s_bk", &b.spatial.bk});
        out.push_back({pre + "s_wv", &b.spatial.wv});
        out.push_back({pre + "s_bv", &b.spatial.bv});
        out.push_back({pre + "s_wo", &b.spatial.wo});
        out.push_back({pre + "s_bo", &b.spatial.bo});
        out.push_back({pre + "ln_m_g", &b.ln_m_g});
        out.push_back({pre + "ln_m_b", &b.ln_m_b});
        out.push_back({pre + "mlp_w1", &b.mlp_w1});
        out.push_back({pre + "mlp_b1", &b.mlp_b1});
        out.push_back({pre + "mlp_w2", &b.mlp_w2});
        out.push_back({pre + "mlp_b2", &b.mlp_b2});
    }
    out.push_back({"ln_f_g", &p.ln_f_g});
    out.push_back({"ln_f_b", &p.ln_f_b});
    out.push_back({"head_w", &p.head_w});
    out.push_back({"head_b", &p.head_b});
    return out;
}

inline std::vector<std::pair<std::string, const Tensor*>> named_tensors(const EncoderParams& p) {
    auto mut = named_tensors(const_cast<EncoderParams&>(p));
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.push_back({name, t});
    return out;
}

inline std::size_t param_count(const EncoderParams& p) {
    std::size_t n = 0;
    for (auto& [name, t] : named_tensors(p)) n += t->numel();
    return n;
}

inline std::uint64_t params_hash(const EncoderParams& p) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (auto& [name, t] : named_tensors(p)) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t->data.data(), t->data.size() * sizeof(double), h);
    }
    return h;
}

namespace detail {

inline Tensor uniform_init(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-a, a);
    return t;
}

}  // namespace detail

inline EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    p.patch_w = detail::uniform_init(rng, {cfg.d_in, cfg.d_e}, cfg.d_in);
    p.patch_b = Tensor::zeros({1, cfg.d_e});
    p.pos_spatial = detail::uniform_init(rng, {cfg.S + 1, cfg.d_e}, cfg.d_e);
    p.pos_temporal = Tensor::zeros({cfg.T, cfg.d_e});  // temporal params start inert
    p.cls = detail::uniform_init(rng, {1, cfg.d_e}, cfg.d_e);
    for (std::size_t l = 0; l < cfg.L; ++l) {
        EncoderBlock b;
        b.ln_t_g = Tensor::full({1, cfg.d_e}, 1.0);
        b.ln_t_b = Tensor::zeros({1, cfg.d_e});
        b.temporal.wq = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.temporal.bq = Tensor::zeros({1, cfg.d_e});
        b.temporal.wk = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.temporal.bk = Tensor::zeros({1, cfg.d_e});
        b.temporal.wv = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.temporal.bv = Tensor::zeros({1, cfg.d_e});
        b.temporal.wo = Tensor::zeros({cfg.d_e, cfg.d_e});  // exact zero: frame-level equivalence
        b.temporal.bo = Tensor::zeros({1, cfg.d_e});
        b.ln_s_g = Tensor::full({1, cfg.d_e}, 1.0);
        b.ln_s_b = Tensor::zeros({1, cfg.d_e});
        b.spatial.wq = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.spatial.bq = Tensor::zeros({1, cfg.d_e});
        b.spatial.wk = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.spatial.bk = Tensor::zeros({1, cfg.d_e});
        b.spatial.wv = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.spatial.bv = Tensor::zeros({1, cfg.d_e});
        b.spatial.wo = detail::uniform_init(rng, {cfg.d_e, cfg.d_e}, cfg.d_e);
        b.spatial.bo = Tensor::zeros({1, cfg.d_e});
        b.ln_m_g = Tensor::full({1, cfg.d_e}, 1.0);
        b.ln_m_b = Tensor::zeros({1, cfg.d_e});
        b.mlp_w1 = detail::uniform_init(rng, {cfg.d_e, cfg.mlp_hidden()}, cfg.d_e);
        b.mlp_b1 = Tensor::zeros({1, cfg.mlp_hidden()});
        b.mlp_w2 = detail::uniform_init(rng, {cfg.mlp_hidden(), cfg.d_e}, cfg.mlp_hidden());
        b.mlp_b2 = Tensor::zeros({1, cfg.d_e});
        p.blocks.push_back(std::move(b));
    }
    p.ln_f_g = Tensor::full({1, cfg.d_e}, 1.0);
    p.ln_f_b = Tensor::zeros({1, cfg.d_e});
    p.head_w = detail::uniform_init(rng, {cfg.d_e, cfg.d_out}, cfg.d_e);
    p.head_b = Tensor::zeros({1, cfg.d_out});
    return p;
}

// Graph-bound mirror of EncoderParams. Bind with requires_grad=true for the
// student being trained, false for teacher / frozen evaluation.
struct AttentionVars {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockVars {
    Var ln_t_g, ln_t_b;
    AttentionVars temporal;
    Var ln_s_g, ln_s_b;
    AttentionVars spatial;
    Var ln_m_g, ln_m_b;
    Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct EncoderVars {
    EncoderConfig cfg;
    Var patch_w, patch_b, pos_spatial, pos_temporal, cls;
    std::vector<BlockVars> blocks;
    Var ln_f_g, ln_f_b, head_w, head_b;
    // leaf order matches named_tensors() so grads can be read back by name
    std::vector<Var> leaves;
};

inline EncoderVars bind_encoder(Graph& g, const EncoderParams& p, bool requires_grad) {
    EncoderVars v;
    v.cfg = p.cfg;
    auto names = named_tensors(p);
    std::vector<Var> vars;
    vars.reserve(names.size());
    for (auto& [name, t] : names) vars.push_back(g.leaf(*t, requires_grad));
    v.leaves = vars;
    std::size_t i = 0;
    v.patch_w = vars[i++];
    v.patch_b = vars[i++];
    v.pos_spatial = vars[i++];
    v.pos_temporal = vars[i++];
    v.cls = vars[i++];
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        BlockVars b;
        b.ln_t_g = vars[i++];
        b.ln_t_b = vars[i++];
        b.temporal = {vars[i], vars[i + 1], vars[i + 2], vars[i + 3],
                      vars[i + 4], vars[i + 5], vars[i + 6], vars[i + 7]};
        i += 8;
        b.ln_s_g = vars[i++];
        b.ln_s_b = vars[i++];
        b.spatial = {vars[i], vars[i + 1], vars[i + 2], vars[i + 3],
                     vars[i + 4], vars[i + 5], vars[i + 6], vars[i + 7]};
        i += 8;
        b.ln_m_g = vars[i++];
        b.ln_m_b = vars[i++];
        b.mlp_w1 = vars[i++];
        b.mlp_b1 = vars[i++];
        b.mlp_w2 = vars[i++];
        b.mlp_b2 = vars[i++];
        v.blocks.push_back(b);
    }
    v.ln_f_g = vars[i++];
    v.ln_f_b = vars[i++];
    v.head_w = vars[i++];
    v.head_b = vars[i++];
    return v;
}

namespace detail {

inline Var self_attention(Graph& g, Var x, const AttentionVars& w, std::size_t heads,
                          std::size_t head_dim) {
    Var q = g.add_rows(g.matmul(x, w.wq), w.bq);
    Var k = g.add_rows(g.matmul(x, w.wk), w.bk);
    Var v = g.add_rows(g.matmul(x, w.wv), w.bv);
    std::vector<Var> outs;
    const double lambda = std::sqrt(static_cast<double>(head_dim));
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = g.slice_cols(q, h * head_dim, head_dim);
        Var kh = g.slice_cols(k, h * head_dim, head_dim);
        Var vh = g.slice_cols(v, h * head_dim, head_dim);
        Var scores = g.matmul(qh, g.transpose(kh));
        Var attn = g.softmax_rows(scores, lambda);  // scaled dot-product via temperature
        outs.push_back(g.matmul(attn, vh));
    }
    Var merged = heads == 1 ? outs[0] : g.concat_cols(outs);
    return g.add_rows(g.matmul(merged, w.wo), w.bo);
}

// Shared forward over a list of frames. with_temporal=false runs the
// frame-level path (temporal sub-layer skipped entirely).
inline Var encode_frames(Graph& g, const EncoderVars& v, const std::vector<Tensor>& frames,
                         bool with_temporal) {
    const EncoderConfig& cfg = v.cfg;
    const std::size_t T = frames.size();
    const std::size_t tokens_per_frame = cfg.S + 1;

    std::vector<Var> frame_tokens;
    for (std::size_t t = 0; t < T; ++t) {
        Var patches = g.constant(frames[t]);  // S x d_in
        Var proj = g.add_rows(g.matmul(patches, v.patch_w), v.patch_b);
        Var toks = g.concat_rows({v.cls, proj});
        toks = g.add(toks, v.pos_spatial);
        if (with_temporal) {
            toks = g.add_rows(toks, g.gather_rows(v.pos_temporal, {t}));
        }
        frame_tokens.push_back(toks);
    }
    Var x = T == 1 ? frame_tokens[0] : g.concat_rows(frame_tokens);

    // token (t, s) lives at row t * (S+1) + s
    for (const BlockVars& b : v.blocks) {
        if (with_temporal) {
            Var xn = g.layer_norm_rows(x, b.ln_t_g, b.ln_t_b);
            std::vector<Var> per_position;
            for (std::size_t s = 0; s < tokens_per_frame; ++s) {
                std::vector<std::size_t> idx;
                for (std::size_t t = 0; t < T; ++t) idx.push_back(t * tokens_per_frame + s);
                Var group = g.gather_rows(xn, idx);  // T x d_e
                per_position.push_back(
                    detail::self_attention(g, group, b.temporal, cfg.H_att, cfg.head_dim()));
            }
            // concat is position-major; permute back to token order
            Var delta = g.concat_rows(per_position);
            std::vector<std::size_t> perm(T * tokens_per_frame);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t s = 0; s < tokens_per_frame; ++s) {
                    perm[t * tokens_per_frame + s] = s * T + t;
                }
            }
            x = g.add(x, g.gather_rows(delta, perm));
        }
        {
            Var xn = g.layer_norm_rows(x, b.ln_s_g, b.ln_s_b);
            std::vector<Var> per_frame;
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<std::size_t> idx;
                for (std::size_t s = 0; s < tokens_per_frame; ++s) idx.push_back(t * tokens_per_frame + s);
                Var group = g.gather_rows(xn, idx);  // (S+1) x d_e
                per_frame.push_back(
                    detail::self_attention(g, group, b.spatial, cfg.H_att, cfg.head_dim()));
            }
            Var delta = T == 1 ? per_frame[0] : g.concat_rows(per_frame);
            x = g.add(x, delta);
        }
        {
            Var xn = g.layer_norm_rows(x, b.ln_m_g, b.ln_m_b);
            Var h = g.gelu(g.add_rows(g.matmul(xn, b.mlp_w1), b.mlp_b1));
            Var out = g.add_rows(g.matmul(h, b.mlp_w2), b.mlp_b2);
            x = g.add(x, out);
        }
    }

    // per-frame CLS -> final norm -> head, then mean over frames; the frame
    // features stay bit-identical to the frame-level path, which is what the
    // zero-init equivalence contract relies on
    std::vector<std::size_t> cls_idx;
    for (std::size_t t = 0; t < T; ++t) cls_idx.push_back(t * tokens_per_frame);
    Var cls_tokens = g.gather_rows(x, cls_idx);  // T x d_e
    Var normed = g.layer_norm_rows(cls_tokens, v.ln_f_g, v.ln_f_b);
    Var feats = g.add_rows(g.matmul(normed, v.head_w), v.head_b);  // T x d_out
    return T == 1 ? feats : g.mean_rows(feats);
}

}  // namespace detail

inline void check_clip_shape(const EncoderConfig& cfg, const Clip& clip) {
    if (clip.features.shape.size() != 3 || clip.features.shape[0] != cfg.T ||
        clip.features.shape[1] != cfg.S || clip.features.shape[2] != cfg.d_in) {
        throw invalid_argument_error("clip shape " + clip.features.shape_str() +
                                     " does not match encoder config");
    }
    if (!clip.features.all_finite()) throw invalid_argument_error("clip contains non-finite values");
}

inline Var encode_clip(Graph& g, const EncoderVars& v, const Clip& clip) {
    check_clip_shape(v.cfg, clip);
    std::vector<Tensor> frames;
    for (std::size_t t = 0; t < v.cfg.T; ++t) frames.push_back(clip.frame(t));
    Var f = detail::encode_frames(g, v, frames, true);
    if (!g.value(f).all_finite()) throw numerical_failure_error("encode_clip: non-finite feature");
    return f;
}

inline Var encode_frame(Graph& g, const EncoderVars& v, const Tensor& frame) {
    if (frame.shape.size() != 2 || frame.shape[0] != v.cfg.S || frame.shape[1] != v.cfg.d_in) {
        throw invalid_argument_error("frame shape " + frame.shape_str() +
                                     " does not match encoder config");
    }
    if (!frame.all_finite()) throw invalid_argument_error("frame contains non-finite values");
    Var f = detail::encode_frames(g, v, {frame}, false);
    if (!g.value(f).all_finite()) throw numerical_failure_error("encode_frame: non-finite feature");
    return f;
}

// Convenience evaluation without keeping a tape around.
inline std::vector<double> encode_clip_value(const EncoderParams& p, const Clip& clip) {
    Graph g;
    EncoderVars v = bind_encoder(g, p, false);
    Var f = encode_clip(g, v, clip);
    return g.value(f).data;
}

inline std::vector<double> encode_frame_value(const EncoderParams& p, const Tensor& frame) {
    Graph g;
    EncoderVars v = bind_encoder(g, p, false);
    Var f = encode_frame(g, v, frame);
    return g.value(f).data;
}

}  // namespace lss
