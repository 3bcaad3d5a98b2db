#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lss/concept_space.hpp"
#include "lss/encoder.hpp"
#include "lss/io.hpp"
#include "lss/rng.hpp"
#include "lss/tensor.hpp"

namespace lss {

// Self-consistent stand-in for a CLIP-aligned universe: the same unit-norm
// class prototypes act as "text embeddings" (concept-space inputs) and as
// generative centers of video features. A fixed full-rank mixing map hides
// the prototype space from the encoder, so alignment has to be learned.
struct WorldConfig {
    std::size_t num_classes = 20;
    std::size_t d = 16;     // shared embedding dim
    std::size_t d_in = 24;  // patch feature dim
    std::size_t descriptions_per_class = 4;
    std::size_t frames_per_video = 8;  // clip length consumed by the encoder
    std::size_t S = 4;                 // patches per frame
    double intra_class_noise = 0.4;    // per-frame latent noise
    double description_noise = 0.2;
    double temporal_drift = 0.05;  // random-walk step scale
    std::uint64_t seed = 0;
    // dataset shape
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 40;
    std::size_t video_length = 40;
    double mixed_fraction = 0.0;  // fraction of train videos sampled around mixed-class centers

    void validate() const {
        if (num_classes < 1 || d < 1 || d_in < 1 || descriptions_per_class < 1 ||
            frames_per_video < 1 || S < 1 || train_per_class < 1 || test_per_class < 1 ||
            video_length < 1) {
            throw invalid_argument_error("world config: all counts must be >= 1");
        }
        if (intra_class_noise < 0.0 || description_noise < 0.0 || temporal_drift < 0.0) {
            throw invalid_argument_error("world config: noise scales must be >= 0");
        }
        if (mixed_fraction < 0.0 || mixed_fraction >= 1.0) {
            throw invalid_argument_error("world config: mixed_fraction must be in [0,1)");
        }
        if (video_length < frames_per_video) {
            throw invalid_argument_error("world config: video_length must be >= frames_per_video");
        }
    }
};

inline constexpr double kPrototypeSeparation = 0.5;  // max allowed pairwise cosine

struct SynthWorld {
    WorldConfig cfg;
    Tensor prototypes;                           // num_classes x d, unit rows
    std::vector<Tensor> description_prototypes;  // per class: descriptions_per_class x d
    Tensor mixing;                               // (S * d_in) x d, full rank
};

struct SynthVideo {
    Tensor tokens;  // {length, S, d_in}
    std::uint32_t class_id = 0;
};

struct SynthDataset {
    std::vector<SynthVideo> videos;
    std::string split = "train";
    std::size_t num_classes = 0;
};

namespace detail {

inline std::vector<double> gaussian_vec(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    return v;
}

// Cholesky of the d x d Gram matrix; fails iff the map is rank deficient.
inline bool full_rank(const Tensor& m) {
    const std::size_t rows = m.rows(), d = m.cols();
    std::vector<double> gram(d * d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j <= i; ++j) gram[i * d + j] += m.at(r, i) * m.at(r, j);
        }
    }
    std::vector<double> chol(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = gram[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= chol[i * d + k] * chol[j * d + k];
            if (i == j) {
                if (s <= 1e-12) return false;
                chol[i * d + i] = std::sqrt(s);
            } else {
                chol[i * d + j] = s / chol[j * d + j];
            }
        }
    }
    return true;
}

}  // namespace detail

inline SynthWorld generate_world(const WorldConfig& cfg) {
    cfg.validate();
    SynthWorld world;
    world.cfg = cfg;
    Rng rng = Rng(cfg.seed).derive(0x776F726Cull);  // world stream

    world.prototypes = Tensor::zeros({cfg.num_classes, cfg.d});
    std::vector<std::vector<double>> protos;
    const std::size_t max_retries = 20000;
    std::size_t retries = 0;
    while (protos.size() < cfg.num_classes) {
        std::vector<double> cand = l2_normalize(detail::gaussian_vec(rng, cfg.d));
        bool ok = true;
        for (const auto& p : protos) {
            if (dot(cand, p) >= kPrototypeSeparation) {
                ok = false;
                break;
            }
        }
        if (ok) {
            protos.push_back(std::move(cand));
        } else if (++retries > max_retries) {
            throw generation_failure_error(
                "generate_world: cannot place " + std::to_string(cfg.num_classes) +
                " prototypes with pairwise cosine < " + std::to_string(kPrototypeSeparation) +
                " in d=" + std::to_string(cfg.d));
        }
    }
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        for (std::size_t j = 0; j < cfg.d; ++j) world.prototypes.at(k, j) = protos[k][j];
    }

    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        Tensor descs = Tensor::zeros({cfg.descriptions_per_class, cfg.d});
        for (std::size_t i = 0; i < cfg.descriptions_per_class; ++i) {
            std::vector<double> v = protos[k];
            for (std::size_t j = 0; j < cfg.d; ++j) v[j] += cfg.description_noise * rng.normal();
            v = l2_normalize(v);
            for (std::size_t j = 0; j < cfg.d; ++j) descs.at(i, j) = v[j];
        }
        world.description_prototypes.push_back(std::move(descs));
    }

    const std::size_t rows = cfg.S * cfg.d_in;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    for (int attempt = 0; attempt < 16; ++attempt) {
        world.mixing = Tensor::zeros({rows, cfg.d});
        for (double& x : world.mixing.data) x = scale * rng.normal();
        if (rows >= cfg.d && detail::full_rank(world.mixing)) break;
        if (attempt == 15) {
            throw generation_failure_error("generate_world: mixing map is rank deficient (d_in*S=" +
                                           std::to_string(rows) + " < d=" + std::to_string(cfg.d) +
                                           "?)");
        }
    }
    return world;
}

inline SynthVideo generate_video_around(const SynthWorld& world, const std::vector<double>& center,
                                        std::uint32_t label, std::size_t length, Rng& rng) {
    const WorldConfig& cfg = world.cfg;
    if (center.size() != cfg.d) throw invalid_argument_error("generate_video: bad center dim");
    SynthVideo video;
    video.class_id = label;
    video.tokens = Tensor::zeros({length, cfg.S, cfg.d_in});
    std::vector<double> walk(cfg.d, 0.0);
    std::vector<double> latent(cfg.d);
    const std::size_t row_len = cfg.S * cfg.d_in;
    for (std::size_t f = 0; f < length; ++f) {
        for (std::size_t j = 0; j < cfg.d; ++j) walk[j] += cfg.temporal_drift * rng.normal();
        for (std::size_t j = 0; j < cfg.d; ++j) {
            latent[j] = center[j] + cfg.intra_class_noise * rng.normal() + walk[j];
        }
        for (std::size_t r = 0; r < row_len; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < cfg.d; ++j) s += world.mixing.at(r, j) * latent[j];
            video.tokens.data[f * row_len + r] = s;
        }
    }
    return video;
}

// Per-frame latent = prototype + noise + random-walk drift; tokens are the
// mixed latent split into S patch features.
inline SynthVideo generate_video(const SynthWorld& world, std::uint32_t class_id,
                                 std::size_t length, Rng& rng) {
    const WorldConfig& cfg = world.cfg;
    if (class_id >= cfg.num_classes) {
        throw invalid_argument_error("generate_video: unknown class " + std::to_string(class_id));
    }
    if (length < cfg.frames_per_video) {
        throw invalid_argument_error("generate_video: length " + std::to_string(length) +
                                     " < frames_per_video " + std::to_string(cfg.frames_per_video));
    }
    std::vector<double> center(cfg.d);
    for (std::size_t j = 0; j < cfg.d; ++j) center[j] = world.prototypes.at(class_id, j);
    return generate_video_around(world, center, class_id, length, rng);
}

// Deterministic per (seed, split, class, index); splits and videos never
// share a generator stream, which keeps the splits disjoint.
inline SynthDataset generate_dataset(const SynthWorld& world, const std::string& split) {
    const WorldConfig& cfg = world.cfg;
    const bool train = split == "train";
    if (!train && split != "test") {
        throw invalid_argument_error("generate_dataset: split must be train or test");
    }
    const std::size_t per_class = train ? cfg.train_per_class : cfg.test_per_class;
    const std::size_t mixed_per_class =
        train ? static_cast<std::size_t>(cfg.mixed_fraction * static_cast<double>(per_class)) : 0;

    SynthDataset ds;
    ds.split = split;
    ds.num_classes = cfg.num_classes;
    Rng split_rng = Rng(cfg.seed).derive(train ? 0x7472ull : 0x7465ull);
    for (std::uint32_t k = 0; k < cfg.num_classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            Rng video_rng = split_rng.derive((static_cast<std::uint64_t>(k) << 32) | i);
            if (i < mixed_per_class && cfg.num_classes > 1) {
                // ambiguous sample: centered between this class and a random other
                std::uint32_t other =
                    static_cast<std::uint32_t>(video_rng.uniform_int(cfg.num_classes - 1));
                if (other >= k) ++other;
                std::vector<double> center(cfg.d);
                for (std::size_t j = 0; j < cfg.d; ++j) {
                    center[j] = 0.5 * (world.prototypes.at(k, j) + world.prototypes.at(other, j));
                }
                center = l2_normalize(center);
                ds.videos.push_back(
                    generate_video_around(world, center, k, cfg.video_length, video_rng));
            } else {
                ds.videos.push_back(generate_video(world, k, cfg.video_length, video_rng));
            }
        }
    }
    return ds;
}

// Prototypes exported as the "text embeddings" the concept-space builders
// consume: one category row per class plus its description group.
inline std::pair<EmbeddingSet, DescriptionGroups> export_label_embeddings(const SynthWorld& world) {
    const WorldConfig& cfg = world.cfg;
    EmbeddingSet category;
    category.source = "synthetic";
    category.vectors = world.prototypes;
    DescriptionGroups groups;
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        std::string label = "class_" + std::to_string(k);
        category.labels.push_back(label);
        std::vector<std::vector<double>> vecs;
        const Tensor& descs = world.description_prototypes[k];
        for (std::size_t i = 0; i < descs.rows(); ++i) {
            std::vector<double> v(descs.data.begin() + i * cfg.d,
                                  descs.data.begin() + (i + 1) * cfg.d);
            vecs.push_back(std::move(v));
        }
        groups.push_back({std::move(label), std::move(vecs)});
    }
    return {category, groups};
}

// --- dataset persistence (LSSDATA1, little endian) ---

inline void save_dataset(const SynthDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    os.write("LSSDATA1", 8);
    write_u32(os, static_cast<std::uint32_t>(ds.videos.size()));
    write_u32(os, static_cast<std::uint32_t>(ds.num_classes));
    const std::size_t S = ds.videos.empty() ? 0 : ds.videos[0].tokens.shape[1];
    const std::size_t d_in = ds.videos.empty() ? 0 : ds.videos[0].tokens.shape[2];
    write_u32(os, static_cast<std::uint32_t>(S));
    write_u32(os, static_cast<std::uint32_t>(d_in));
    for (const SynthVideo& v : ds.videos) {
        write_u32(os, v.class_id);
        write_u32(os, static_cast<std::uint32_t>(v.tokens.shape[0]));
        for (double x : v.tokens.data) write_f64(os, x);
    }
    if (!os) throw format_error("write failure on '" + path + "'");
}

inline SynthDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("cannot open '" + path + "'");
    char magic[8];
    if (!is.read(magic, 8)) throw parse_error(path + ": truncated magic");
    if (std::string(magic, 8) != "LSSDATA1") {
        throw format_error(path + ": bad magic, not an LSSDATA1 file");
    }
    SynthDataset ds;
    const std::uint32_t count = read_u32(is, "video count");
    ds.num_classes = read_u32(is, "class count");
    const std::uint32_t S = read_u32(is, "patch count");
    const std::uint32_t d_in = read_u32(is, "patch dim");
    if (S == 0 || d_in == 0) throw format_error(path + ": zero dimensions in header");
    for (std::uint32_t i = 0; i < count; ++i) {
        SynthVideo v;
        v.class_id = read_u32(is, "class id");
        if (ds.num_classes > 0 && v.class_id >= ds.num_classes) {
            throw format_error(path + ": class id " + std::to_string(v.class_id) +
                               " out of range for " + std::to_string(ds.num_classes) + " classes");
        }
        const std::uint32_t len = read_u32(is, "video length");
        if (len == 0) throw format_error(path + ": zero-length video");
        v.tokens = Tensor::zeros({len, S, d_in});
        for (double& x : v.tokens.data) x = read_f64(is, "token data");
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

}  // namespace lss
