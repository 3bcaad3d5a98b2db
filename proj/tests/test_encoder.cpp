#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lss/encoder.hpp"
#include "lss/gradcheck.hpp"

using namespace lss;

namespace {

EncoderConfig tiny_cfg() {
    EncoderConfig cfg;
    cfg.T = 3;
    cfg.S = 2;
    cfg.d_in = 4;
    cfg.d_e = 8;
    cfg.d_out = 5;
    cfg.L = 2;
    cfg.H_att = 2;
    return cfg;
}

Clip random_clip(const EncoderConfig& cfg, Rng& rng) {
    Clip clip;
    clip.features = Tensor::zeros({cfg.T, cfg.S, cfg.d_in});
    for (double& x : clip.features.data) x = rng.normal();
    return clip;
}

}  // namespace

TEST_CASE("init_encoder is deterministic and zero-initializes temporal projections") {
    EncoderConfig cfg;
    cfg.T = 8;
    cfg.S = 4;
    cfg.d_e = 32;
    cfg.L = 2;
    Rng a(7), b(7);
    EncoderParams pa = init_encoder(cfg, a);
    EncoderParams pb = init_encoder(cfg, b);
    auto la = named_tensors(pa);
    auto lb = named_tensors(pb);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
        REQUIRE(la[i].second->data == lb[i].second->data);
    }
    for (const EncoderBlock& blk : pa.blocks) {
        for (double x : blk.temporal.wo.data) REQUIRE(x == 0.0);
        for (double x : blk.temporal.bo.data) REQUIRE(x == 0.0);
    }
    for (double x : pa.pos_temporal.data) REQUIRE(x == 0.0);

    Rng c(8);
    EncoderParams pc = init_encoder(cfg, c);
    REQUIRE(pc.patch_w.data != pa.patch_w.data);
}

TEST_CASE("invalid configs are rejected") {
    EncoderConfig cfg = tiny_cfg();
    cfg.d_e = 33;
    cfg.H_att = 2;
    Rng rng(1);
    REQUIRE_THROWS_AS(init_encoder(cfg, rng), invalid_argument_error);
    cfg = tiny_cfg();
    cfg.L = 0;
    REQUIRE_THROWS_AS(init_encoder(cfg, rng), invalid_argument_error);
}

TEST_CASE("parameter count is a pure function of the config") {
    EncoderConfig cfg = tiny_cfg();
    Rng a(1), b(99);
    EncoderParams pa = init_encoder(cfg, a);
    EncoderParams pb = init_encoder(cfg, b);
    REQUIRE(param_count(pa) == param_count(pb));
    // patch + positions + cls + blocks + final norm + head
    const std::size_t per_attn = 4 * (cfg.d_e * cfg.d_e + cfg.d_e);
    const std::size_t per_block = 3 * 2 * cfg.d_e + 2 * per_attn + cfg.d_e * cfg.mlp_hidden() +
                                  cfg.mlp_hidden() + cfg.mlp_hidden() * cfg.d_e + cfg.d_e;
    const std::size_t expected = cfg.d_in * cfg.d_e + cfg.d_e + (cfg.S + 1) * cfg.d_e +
                                 cfg.T * cfg.d_e + cfg.d_e + cfg.L * per_block + 2 * cfg.d_e +
                                 cfg.d_e * cfg.d_out + cfg.d_out;
    REQUIRE(param_count(pa) == expected);
}

TEST_CASE("zero-init equivalence: clip feature equals the frame-feature mean") {
    Rng seed_rng(123);
    for (int rep = 0; rep < 8; ++rep) {
        EncoderConfig cfg;
        cfg.T = 2 + seed_rng.uniform_int(4);
        cfg.S = 2 + seed_rng.uniform_int(3);
        cfg.d_in = 3 + seed_rng.uniform_int(4);
        cfg.H_att = 1 + seed_rng.uniform_int(2);
        cfg.d_e = cfg.H_att * (4 + seed_rng.uniform_int(4));
        cfg.d_out = 3 + seed_rng.uniform_int(5);
        cfg.L = 1 + seed_rng.uniform_int(2);
        Rng rng(seed_rng.next_u64());
        EncoderParams params = init_encoder(cfg, rng);
        Clip clip = random_clip(cfg, rng);

        std::vector<double> clip_f = encode_clip_value(params, clip);
        std::vector<double> mean(cfg.d_out, 0.0);
        for (std::size_t t = 0; t < cfg.T; ++t) {
            std::vector<double> f = encode_frame_value(params, clip.frame(t));
            for (std::size_t j = 0; j < cfg.d_out; ++j) mean[j] += f[j];
        }
        for (double& x : mean) x /= static_cast<double>(cfg.T);
        for (std::size_t j = 0; j < cfg.d_out; ++j) {
            REQUIRE(std::abs(clip_f[j] - mean[j]) < 1e-10);
        }
    }
}

TEST_CASE("equivalence breaks once temporal projections move off zero") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(5);
    EncoderParams params = init_encoder(cfg, rng);
    Clip clip = random_clip(cfg, rng);
    for (double& x : params.blocks[0].temporal.wo.data) x = 0.3 * rng.normal();

    std::vector<double> clip_f = encode_clip_value(params, clip);
    std::vector<double> mean(cfg.d_out, 0.0);
    for (std::size_t t = 0; t < cfg.T; ++t) {
        std::vector<double> f = encode_frame_value(params, clip.frame(t));
        for (std::size_t j = 0; j < cfg.d_out; ++j) mean[j] += f[j] / cfg.T;
    }
    double diff = 0.0;
    for (std::size_t j = 0; j < cfg.d_out; ++j) diff = std::max(diff, std::abs(clip_f[j] - mean[j]));
    REQUIRE(diff > 1e-6);
}

TEST_CASE("frame permutation is invisible at initialization") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(17);
    EncoderParams params = init_encoder(cfg, rng);
    Clip clip = random_clip(cfg, rng);
    Clip permuted;
    permuted.features = Tensor::zeros(clip.features.shape);
    const std::size_t frame_len = cfg.S * cfg.d_in;
    std::vector<std::size_t> perm = {2, 0, 1};
    for (std::size_t t = 0; t < cfg.T; ++t) {
        for (std::size_t j = 0; j < frame_len; ++j) {
            permuted.features.data[t * frame_len + j] = clip.features.data[perm[t] * frame_len + j];
        }
    }
    std::vector<double> a = encode_clip_value(params, clip);
    std::vector<double> b = encode_clip_value(params, permuted);
    for (std::size_t j = 0; j < cfg.d_out; ++j) REQUIRE(std::abs(a[j] - b[j]) < 1e-10);
}

TEST_CASE("identical frames reduce to the single-frame feature at init") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(19);
    EncoderParams params = init_encoder(cfg, rng);
    Tensor frame = Tensor::zeros({cfg.S, cfg.d_in});
    for (double& x : frame.data) x = rng.normal();
    Clip clip;
    clip.features = Tensor::zeros({cfg.T, cfg.S, cfg.d_in});
    for (std::size_t t = 0; t < cfg.T; ++t) {
        for (std::size_t j = 0; j < frame.data.size(); ++j) {
            clip.features.data[t * frame.data.size() + j] = frame.data[j];
        }
    }
    std::vector<double> clip_f = encode_clip_value(params, clip);
    std::vector<double> frame_f = encode_frame_value(params, frame);
    for (std::size_t j = 0; j < cfg.d_out; ++j) REQUIRE(std::abs(clip_f[j] - frame_f[j]) < 1e-10);
}

TEST_CASE("encoding is deterministic and input sensitive") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(23);
    EncoderParams params = init_encoder(cfg, rng);
    Tensor zeros = Tensor::zeros({cfg.S, cfg.d_in});
    Tensor ones = Tensor::full({cfg.S, cfg.d_in}, 1.0);
    std::vector<double> fz = encode_frame_value(params, zeros);
    std::vector<double> fz2 = encode_frame_value(params, zeros);
    REQUIRE(fz == fz2);
    std::vector<double> fo = encode_frame_value(params, ones);
    double diff = 0.0;
    for (std::size_t j = 0; j < cfg.d_out; ++j) diff = std::max(diff, std::abs(fz[j] - fo[j]));
    REQUIRE(diff > 1e-8);
}

TEST_CASE("attention rows are probability distributions") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(29);
    EncoderParams params = init_encoder(cfg, rng);
    Clip clip = random_clip(cfg, rng);
    Graph g;
    EncoderVars vars = bind_encoder(g, params, false);
    encode_clip(g, vars, clip);
    std::size_t softmax_nodes = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.op_kind(i) != OpKind::softmax_rows) continue;
        ++softmax_nodes;
        const Tensor& v = g.node_value(i);
        for (std::size_t r = 0; r < v.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < v.cols(); ++c) s += v.at(r, c);
            REQUIRE(std::abs(s - 1.0) < 1e-12);
        }
    }
    // temporal + spatial attention per block, one softmax per head per group
    REQUIRE(softmax_nodes == cfg.L * cfg.H_att * (cfg.S + 1 + cfg.T));
}

TEST_CASE("clip and frame shape mismatches are rejected") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(31);
    EncoderParams params = init_encoder(cfg, rng);
    Graph g;
    EncoderVars vars = bind_encoder(g, params, false);
    Clip bad;
    bad.features = Tensor::zeros({cfg.T, cfg.S + 1, cfg.d_in});
    REQUIRE_THROWS_AS(encode_clip(g, vars, bad), invalid_argument_error);
    REQUIRE_THROWS_AS(encode_frame(g, vars, Tensor::zeros({cfg.S, cfg.d_in + 2})),
                      invalid_argument_error);
    Clip nan_clip;
    nan_clip.features = Tensor::zeros({cfg.T, cfg.S, cfg.d_in});
    nan_clip.features.data[0] = std::nan("");
    REQUIRE_THROWS_AS(encode_clip(g, vars, nan_clip), invalid_argument_error);
}

TEST_CASE("encoder gradients match finite differences") {
    EncoderConfig cfg;
    cfg.T = 2;
    cfg.S = 2;
    cfg.d_in = 3;
    cfg.d_e = 6;
    cfg.d_out = 4;
    cfg.L = 1;
    cfg.H_att = 2;
    Rng rng(37);
    EncoderParams params = init_encoder(cfg, rng);
    // move temporal projections off zero so every parameter is generic
    for (double& x : params.blocks[0].temporal.wo.data) x = 0.1 * rng.normal();
    for (double& x : params.pos_temporal.data) x = 0.1 * rng.normal();
    Clip clip = random_clip(cfg, rng);
    Tensor weight = Tensor::zeros({1, cfg.d_out});
    for (double& x : weight.data) x = rng.normal();

    auto objective = [&]() {
        Graph g;
        EncoderVars vars = bind_encoder(g, params, true);
        Var f = encode_clip(g, vars, clip);
        return g.value(g.sum_all(g.mul(f, g.constant(weight)))).data[0];
    };
    Graph g;
    EncoderVars vars = bind_encoder(g, params, true);
    Var f = encode_clip(g, vars, clip);
    g.backward(g.sum_all(g.mul(f, g.constant(weight))));
    std::vector<Tensor> analytic;
    for (Var leaf : vars.leaves) analytic.push_back(g.grad(leaf));

    std::vector<Tensor*> pp;
    std::vector<const Tensor*> gp;
    auto names = named_tensors(params);
    for (std::size_t i = 0; i < names.size(); ++i) {
        pp.push_back(names[i].second);
        gp.push_back(&analytic[i]);
    }
    Rng coord_rng(41);
    const double err = grad_check(objective, pp, gp, 1e-5, 6, &coord_rng);
    REQUIRE(err < 1e-5);
}
