#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "lss/synth_world.hpp"

using namespace lss;

namespace {

WorldConfig small_world_cfg() {
    WorldConfig cfg;
    cfg.num_classes = 10;
    cfg.d = 16;
    cfg.d_in = 6;
    cfg.S = 3;
    cfg.frames_per_video = 4;
    cfg.video_length = 12;
    cfg.train_per_class = 4;
    cfg.test_per_class = 2;
    cfg.seed = 3;
    return cfg;
}

// Least-squares recovery of the latent from one frame's tokens, using the
// known mixing map: solves (M^T M) u = M^T y by Gaussian elimination.
std::vector<double> recover_latent(const SynthWorld& world, const SynthVideo& video,
                                   std::size_t frame) {
    const std::size_t d = world.cfg.d;
    const std::size_t rows = world.cfg.S * world.cfg.d_in;
    std::vector<double> y(rows);
    for (std::size_t r = 0; r < rows; ++r) y[r] = video.tokens.data[frame * rows + r];
    std::vector<double> ata(d * d, 0.0), aty(d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            aty[i] += world.mixing.at(r, i) * y[r];
            for (std::size_t j = 0; j < d; ++j) ata[i * d + j] += world.mixing.at(r, i) * world.mixing.at(r, j);
        }
    }
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r) {
            if (std::abs(ata[r * d + col]) > std::abs(ata[pivot * d + col])) pivot = r;
        }
        for (std::size_t j = 0; j < d; ++j) std::swap(ata[col * d + j], ata[pivot * d + j]);
        std::swap(aty[col], aty[pivot]);
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = ata[r * d + col] / ata[col * d + col];
            for (std::size_t j = 0; j < d; ++j) ata[r * d + j] -= f * ata[col * d + j];
            aty[r] -= f * aty[col];
        }
    }
    std::vector<double> u(d);
    for (std::size_t i = 0; i < d; ++i) u[i] = aty[i] / ata[i * d + i];
    return u;
}

}  // namespace

TEST_CASE("generate_world is deterministic per seed") {
    WorldConfig cfg = small_world_cfg();
    SynthWorld a = generate_world(cfg);
    SynthWorld b = generate_world(cfg);
    REQUIRE(a.prototypes.data == b.prototypes.data);
    REQUIRE(a.mixing.data == b.mixing.data);
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        REQUIRE(a.description_prototypes[k].data == b.description_prototypes[k].data);
    }
    cfg.seed = 4;
    SynthWorld c = generate_world(cfg);
    REQUIRE(a.prototypes.data != c.prototypes.data);
}

TEST_CASE("prototypes are unit norm with pairwise cosine below the bound") {
    WorldConfig cfg = small_world_cfg();
    cfg.num_classes = 2;
    SynthWorld w = generate_world(cfg);
    std::vector<double> p0(w.prototypes.data.begin(), w.prototypes.data.begin() + cfg.d);
    std::vector<double> p1(w.prototypes.data.begin() + cfg.d, w.prototypes.data.begin() + 2 * cfg.d);
    REQUIRE(std::abs(l2_norm(p0) - 1.0) < 1e-12);
    REQUIRE(dot(p0, p1) < 0.5);

    cfg = small_world_cfg();
    cfg.num_classes = 20;
    SynthWorld big = generate_world(cfg);
    for (std::size_t i = 0; i < cfg.num_classes; ++i) {
        for (std::size_t j = i + 1; j < cfg.num_classes; ++j) {
            double c = 0.0;
            for (std::size_t k = 0; k < cfg.d; ++k) c += big.prototypes.at(i, k) * big.prototypes.at(j, k);
            REQUIRE(c < 0.5);
        }
    }
}

TEST_CASE("infeasible packing fails with a named constraint") {
    WorldConfig cfg = small_world_cfg();
    cfg.num_classes = 100;
    cfg.d = 2;
    REQUIRE_THROWS_AS(generate_world(cfg), generation_failure_error);
    try {
        generate_world(cfg);
    } catch (const generation_failure_error& e) {
        REQUIRE(std::string(e.what()).find("cosine") != std::string::npos);
    }
}

TEST_CASE("world config validation") {
    WorldConfig cfg = small_world_cfg();
    cfg.intra_class_noise = -0.1;
    REQUIRE_THROWS_AS(generate_world(cfg), invalid_argument_error);
    cfg = small_world_cfg();
    cfg.video_length = 2;  // below frames_per_video
    REQUIRE_THROWS_AS(cfg.validate(), invalid_argument_error);
    cfg = small_world_cfg();
    cfg.mixed_fraction = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), invalid_argument_error);
}

TEST_CASE("noiseless videos sit exactly on the prototype") {
    WorldConfig cfg = small_world_cfg();
    cfg.intra_class_noise = 0.0;
    cfg.temporal_drift = 0.0;
    SynthWorld w = generate_world(cfg);
    Rng rng(5);
    SynthVideo video = generate_video(w, 3, cfg.video_length, rng);
    // every frame's recovered latent equals the class prototype
    for (std::size_t f = 0; f < 3; ++f) {
        std::vector<double> u = recover_latent(w, video, f);
        for (std::size_t j = 0; j < cfg.d; ++j) {
            REQUIRE(u[j] == Catch::Approx(w.prototypes.at(3, j)).margin(1e-9));
        }
    }
}

TEST_CASE("same rng state generates the identical video") {
    WorldConfig cfg = small_world_cfg();
    SynthWorld w = generate_world(cfg);
    Rng a(9), b(9);
    SynthVideo va = generate_video(w, 1, cfg.video_length, a);
    SynthVideo vb = generate_video(w, 1, cfg.video_length, b);
    REQUIRE(va.tokens.data == vb.tokens.data);
    REQUIRE_THROWS_AS(generate_video(w, 99, cfg.video_length, a), invalid_argument_error);
    REQUIRE_THROWS_AS(generate_video(w, 1, 2, a), invalid_argument_error);
}

TEST_CASE("mean recovered latent concentrates on the prototype") {
    WorldConfig cfg = small_world_cfg();
    cfg.temporal_drift = 0.0;
    cfg.intra_class_noise = 0.3;
    cfg.video_length = 400;
    SynthWorld w = generate_world(cfg);
    Rng rng(11);
    SynthVideo video = generate_video(w, 2, cfg.video_length, rng);
    std::vector<double> mean(cfg.d, 0.0);
    for (std::size_t f = 0; f < cfg.video_length; ++f) {
        std::vector<double> u = recover_latent(w, video, f);
        for (std::size_t j = 0; j < cfg.d; ++j) mean[j] += u[j] / cfg.video_length;
    }
    // law of large numbers: per-coordinate deviation within 3 sigma / sqrt(N)
    const double bound = 3.0 * cfg.intra_class_noise / std::sqrt(double(cfg.video_length));
    for (std::size_t j = 0; j < cfg.d; ++j) {
        REQUIRE(std::abs(mean[j] - w.prototypes.at(2, j)) < bound);
    }
}

TEST_CASE("exported embeddings match the world structure") {
    WorldConfig cfg = small_world_cfg();
    SynthWorld w = generate_world(cfg);
    auto [category, groups] = export_label_embeddings(w);
    REQUIRE(category.size() == cfg.num_classes);
    REQUIRE(category.dim() == cfg.d);
    REQUIRE(category.labels[0] == "class_0");
    REQUIRE(groups.size() == cfg.num_classes);
    for (const auto& [label, vecs] : groups) REQUIRE(vecs.size() == cfg.descriptions_per_class);

    // matching category/description rows correlate more than mismatched ones
    ConceptSpace c = build_category_space(category);
    ConceptSpace d = build_description_space(groups);
    verify_aligned(c, d);
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        double match = 0.0;
        for (std::size_t j = 0; j < cfg.d; ++j) match += c.basis.at(k, j) * d.basis.at(k, j);
        for (std::size_t o = 0; o < cfg.num_classes; ++o) {
            if (o == k) continue;
            double cross = 0.0;
            for (std::size_t j = 0; j < cfg.d; ++j) cross += c.basis.at(k, j) * d.basis.at(o, j);
            REQUIRE(match > cross);
        }
    }
}

TEST_CASE("zero-shot at construction: noiseless latents classify perfectly") {
    WorldConfig cfg = small_world_cfg();
    cfg.intra_class_noise = 0.0;
    cfg.temporal_drift = 0.0;
    SynthWorld w = generate_world(cfg);
    auto [category, groups] = export_label_embeddings(w);
    ConceptSpace space = build_category_space(category);
    Rng rng(13);
    for (std::uint32_t k = 0; k < cfg.num_classes; ++k) {
        SynthVideo v = generate_video(w, k, cfg.video_length, rng);
        std::vector<double> mean(cfg.d, 0.0);
        for (std::size_t f = 0; f < 4; ++f) {
            std::vector<double> u = recover_latent(w, v, f);
            for (std::size_t j = 0; j < cfg.d; ++j) mean[j] += u[j] / 4.0;
        }
        ScoreDistribution scores = project_to_space(space, mean);
        REQUIRE(scores.argmax() == k);
    }
}

TEST_CASE("datasets are class balanced, deterministic, and split disjoint") {
    WorldConfig cfg = small_world_cfg();
    SynthWorld w = generate_world(cfg);
    SynthDataset train = generate_dataset(w, "train");
    SynthDataset test = generate_dataset(w, "test");
    REQUIRE(train.videos.size() == cfg.num_classes * cfg.train_per_class);
    REQUIRE(test.videos.size() == cfg.num_classes * cfg.test_per_class);
    std::vector<std::size_t> counts(cfg.num_classes, 0);
    for (const SynthVideo& v : train.videos) counts[v.class_id]++;
    for (std::size_t c : counts) REQUIRE(c == cfg.train_per_class);

    SynthDataset train2 = generate_dataset(w, "train");
    REQUIRE(train.videos.size() == train2.videos.size());
    for (std::size_t i = 0; i < train.videos.size(); ++i) {
        REQUIRE(train.videos[i].tokens.data == train2.videos[i].tokens.data);
    }
    // no token sequence appears in both splits
    for (const SynthVideo& a : train.videos) {
        for (const SynthVideo& b : test.videos) {
            REQUIRE(a.tokens.data != b.tokens.data);
        }
    }
    REQUIRE_THROWS_AS(generate_dataset(w, "validation"), invalid_argument_error);
}

TEST_CASE("mixed-fraction videos are centered between two prototypes") {
    WorldConfig cfg = small_world_cfg();
    cfg.mixed_fraction = 0.5;
    cfg.intra_class_noise = 0.0;
    cfg.temporal_drift = 0.0;
    SynthWorld w = generate_world(cfg);
    SynthDataset train = generate_dataset(w, "train");
    std::size_t mixed = 0;
    for (const SynthVideo& v : train.videos) {
        std::vector<double> u = recover_latent(w, v, 0);
        std::vector<double> proto(cfg.d);
        for (std::size_t j = 0; j < cfg.d; ++j) proto[j] = w.prototypes.at(v.class_id, j);
        if (cosine_similarity(u, proto) < 0.999) ++mixed;
    }
    REQUIRE(mixed == cfg.num_classes * cfg.train_per_class / 2);
    // test split is never mixed
    SynthDataset test = generate_dataset(w, "test");
    for (const SynthVideo& v : test.videos) {
        std::vector<double> u = recover_latent(w, v, 0);
        std::vector<double> proto(cfg.d);
        for (std::size_t j = 0; j < cfg.d; ++j) proto[j] = w.prototypes.at(v.class_id, j);
        REQUIRE(cosine_similarity(u, proto) > 0.999);
    }
}

TEST_CASE("dataset file round trip preserves every token bit") {
    WorldConfig cfg = small_world_cfg();
    cfg.train_per_class = 2;
    SynthWorld w = generate_world(cfg);
    SynthDataset ds = generate_dataset(w, "train");
    auto path = std::filesystem::temp_directory_path() / "lss_dataset_roundtrip.lssdata";
    save_dataset(ds, path.string());
    SynthDataset loaded = load_dataset(path.string());
    REQUIRE(loaded.videos.size() == ds.videos.size());
    REQUIRE(loaded.num_classes == ds.num_classes);
    for (std::size_t i = 0; i < ds.videos.size(); ++i) {
        REQUIRE(loaded.videos[i].class_id == ds.videos[i].class_id);
        REQUIRE(loaded.videos[i].tokens.shape == ds.videos[i].tokens.shape);
        REQUIRE(loaded.videos[i].tokens.data == ds.videos[i].tokens.data);
    }
    std::filesystem::remove(path);
}

TEST_CASE("dataset loader rejects bad files") {
    auto path = std::filesystem::temp_directory_path() / "lss_dataset_bad.lssdata";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGIC";
    }
    REQUIRE_THROWS_AS(load_dataset(path.string()), format_error);
    {
        std::ofstream os(path, std::ios::binary);
        os << "LSSDATA1";  // header cut off
    }
    REQUIRE_THROWS_AS(load_dataset(path.string()), parse_error);
    std::filesystem::remove(path);
}
