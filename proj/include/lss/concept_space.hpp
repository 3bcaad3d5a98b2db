#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lss/autodiff.hpp"
#include "lss/io.hpp"
#include "lss/math.hpp"
#include "lss/tensor.hpp"

namespace lss {

enum class SpaceKind { category, description };

inline const char* space_kind_name(SpaceKind k) {
    return k == SpaceKind::category ? "category" : "description";
}

// Raw labelled embeddings as they arrive from a file or the synthetic world.
struct EmbeddingSet {
    std::vector<std::string> labels;
    Tensor vectors;  // n x d, not necessarily normalized
    std::string source = "synthetic";

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return vectors.cols(); }

    std::vector<double> row(std::size_t i) const {
        return std::vector<double>(vectors.data.begin() + i * dim(),
                                   vectors.data.begin() + (i + 1) * dim());
    }
};

// Frozen concept space: unit-norm basis rows doubling as the weight matrix of
// the bias-free text classifier. Never mutated after construction.
struct ConceptSpace {
    std::vector<std::string> labels;
    Tensor basis;  // n x d, rows unit norm
    SpaceKind kind = SpaceKind::category;
    bool frozen = true;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return basis.cols(); }

    Tensor basis_transposed() const {
        Tensor t = Tensor::zeros({basis.cols(), basis.rows()});
        for (std::size_t i = 0; i < basis.rows(); ++i) {
            for (std::size_t j = 0; j < basis.cols(); ++j) t.at(j, i) = basis.at(i, j);
        }
        return t;
    }

    // Content hash over labels and exact basis bits; the frozen-classifier
    // contract is checked by comparing this before and after training.
    std::uint64_t content_hash() const {
        std::uint64_t h = fnv1a64(space_kind_name(kind), kind == SpaceKind::category ? 8 : 11);
        for (const std::string& l : labels) {
            h = fnv1a64(l.data(), l.size(), h);
            h = fnv1a64("\x1f", 1, h);
        }
        h = fnv1a64(basis.data.data(), basis.data.size() * sizeof(double), h);
        return h;
    }
};

// Cosine score vector produced by projecting one feature into a space.
struct ScoreDistribution {
    std::vector<double> raw;  // entries in [-1, 1]
    SpaceKind kind = SpaceKind::category;

    std::size_t argmax() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < raw.size(); ++i) {
            if (raw[i] > raw[best]) best = i;
        }
        return best;
    }
};

namespace detail {

inline void validate_label(const std::string& label) {
    if (label.empty()) throw invalid_argument_error("empty label");
    if (label.find('\t') != std::string::npos || label.find('\n') != std::string::npos) {
        throw invalid_argument_error("label contains tab or newline: '" + label + "'");
    }
}

inline void validate_embedding_set(const EmbeddingSet& emb) {
    if (emb.size() == 0) throw invalid_argument_error("embedding set is empty");
    if (emb.vectors.rows() != emb.labels.size()) {
        throw invalid_argument_error("embedding set: label/vector count mismatch");
    }
    for (const std::string& l : emb.labels) validate_label(l);
    for (std::size_t i = 0; i < emb.size(); ++i) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < emb.dim(); ++j) {
            double v = emb.vectors.at(i, j);
            if (!std::isfinite(v)) {
                throw invalid_argument_error("non-finite embedding for label '" + emb.labels[i] + "'");
            }
            norm2 += v * v;
        }
        if (!(norm2 > 0.0)) {
            throw degenerate_input_error("zero embedding for label '" + emb.labels[i] + "'");
        }
    }
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace detail

// --- construction ---

inline ConceptSpace build_category_space(const EmbeddingSet& emb) {
    detail::validate_embedding_set(emb);
    ConceptSpace space;
    space.labels = emb.labels;
    space.kind = SpaceKind::category;
    space.basis = Tensor::zeros({emb.size(), emb.dim()});
    for (std::size_t i = 0; i < emb.size(); ++i) {
        std::vector<double> unit = l2_normalize(emb.row(i));
        for (std::size_t j = 0; j < emb.dim(); ++j) space.basis.at(i, j) = unit[j];
    }
    return space;
}

enum class DescriptionAveraging {
    normalize_then_average,  // default: normalize each description, mean, renormalize
    raw_mean,                // ablation: mean of raw embeddings, then normalize
};

using DescriptionGroups = std::vector<std::pair<std::string, std::vector<std::vector<double>>>>;

inline ConceptSpace build_description_space(
    const DescriptionGroups& groups,
    DescriptionAveraging mode = DescriptionAveraging::normalize_then_average) {
    if (groups.empty()) throw invalid_argument_error("build_description_space: no groups");
    std::size_t d = 0;
    for (const auto& [label, vecs] : groups) {
        detail::validate_label(label);
        if (vecs.empty()) {
            throw invalid_argument_error("empty description group for label '" + label + "'");
        }
        for (const auto& v : vecs) {
            if (d == 0) d = v.size();
            if (v.size() != d) {
                throw invalid_argument_error("description dimension mismatch in group '" + label + "'");
            }
        }
    }
    ConceptSpace space;
    space.kind = SpaceKind::description;
    space.basis = Tensor::zeros({groups.size(), d});
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& [label, vecs] = groups[i];
        space.labels.push_back(label);
        std::vector<double> mean(d, 0.0);
        for (const auto& v : vecs) {
            std::vector<double> contrib =
                mode == DescriptionAveraging::normalize_then_average ? l2_normalize(v) : v;
            for (std::size_t j = 0; j < d; ++j) mean[j] += contrib[j];
        }
        for (double& x : mean) x /= static_cast<double>(vecs.size());
        if (!(l2_norm(mean) > 0.0)) {
            throw degenerate_input_error("zero mean description vector for label '" + label + "'");
        }
        std::vector<double> unit = l2_normalize(mean);
        for (std::size_t j = 0; j < d; ++j) space.basis.at(i, j) = unit[j];
    }
    return space;
}

// Eq. 9 needs both spaces to share n and label order.
inline void verify_aligned(const ConceptSpace& category, const ConceptSpace& description) {
    if (category.size() != description.size()) {
        throw invalid_argument_error("concept spaces not aligned: n=" +
                                     std::to_string(category.size()) + " vs " +
                                     std::to_string(description.size()));
    }
    for (std::size_t i = 0; i < category.size(); ++i) {
        if (category.labels[i] != description.labels[i]) {
            throw invalid_argument_error("concept spaces not aligned at row " + std::to_string(i) +
                                         ": '" + category.labels[i] + "' vs '" +
                                         description.labels[i] + "'");
        }
    }
}

// --- projection ---

// Plain (non-differentiable) projection: b . (f / ||f||). Scale invariant in
// f by construction; entries clamped into [-1, 1] against rounding overshoot.
inline ScoreDistribution project_to_space(const ConceptSpace& space, const std::vector<double>& f) {
    if (f.size() != space.dim()) {
        throw invalid_argument_error("project_to_space: feature dim " + std::to_string(f.size()) +
                                     " vs space dim " + std::to_string(space.dim()));
    }
    std::vector<double> unit = l2_normalize(f);  // throws degenerate_input_error on zero
    ScoreDistribution out;
    out.kind = space.kind;
    out.raw.resize(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < space.dim(); ++j) s += space.basis.at(i, j) * unit[j];
        out.raw[i] = std::clamp(s, -1.0, 1.0);
    }
    return out;
}

// Differentiable projection for the loss path. `basis_t` is the d x n
// transposed basis bound once per graph as a constant leaf.
inline Var project_scores(Graph& g, Var feature_row, Var basis_t) {
    return g.matmul(g.l2_normalize_rows(feature_row), basis_t);
}

// --- deduplication ---

// Greedy pass in input order: keep a row iff its cosine to every already-kept
// row is strictly below the threshold. Deterministic and order preserving.
inline EmbeddingSet dedup_embeddings(const EmbeddingSet& emb, double sim_threshold) {
    if (!(sim_threshold > 0.0 && sim_threshold < 1.0)) {
        throw invalid_argument_error("dedup_embeddings: threshold must be in (0,1)");
    }
    detail::validate_embedding_set(emb);
    std::vector<std::vector<double>> kept_units;
    std::vector<std::size_t> kept_idx;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        std::vector<double> unit = l2_normalize(emb.row(i));
        bool keep = true;
        for (const auto& k : kept_units) {
            if (dot(unit, k) >= sim_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) {
            kept_units.push_back(std::move(unit));
            kept_idx.push_back(i);
        }
    }
    EmbeddingSet out;
    out.source = emb.source;
    out.vectors = Tensor::zeros({kept_idx.size(), emb.dim()});
    for (std::size_t r = 0; r < kept_idx.size(); ++r) {
        out.labels.push_back(emb.labels[kept_idx[r]]);
        for (std::size_t j = 0; j < emb.dim(); ++j) {
            out.vectors.at(r, j) = emb.vectors.at(kept_idx[r], j);
        }
    }
    return out;
}

// Removes labels duplicated across source sets by exact case-insensitive
// match after whitespace trimming; first occurrence wins.
inline EmbeddingSet merge_embedding_sets(const std::vector<EmbeddingSet>& sets) {
    if (sets.empty()) throw invalid_argument_error("merge_embedding_sets: no sets");
    std::size_t d = sets[0].dim();
    std::vector<std::string> labels;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> seen;
    for (const EmbeddingSet& s : sets) {
        detail::validate_embedding_set(s);
        if (s.dim() != d) throw invalid_argument_error("merge_embedding_sets: dimension mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            std::string key = detail::lower(detail::trim(s.labels[i]));
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
            seen.push_back(key);
            labels.push_back(s.labels[i]);
            rows.push_back(s.row(i));
        }
    }
    EmbeddingSet out;
    out.labels = std::move(labels);
    out.source = sets[0].source;
    out.vectors = Tensor::zeros({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out.vectors.at(i, j) = rows[i][j];
    }
    return out;
}

// --- persistence (LSS-EMB text format) ---
//
// line 1: LSS-EMB 1 <n> <d> <kind>
// then n lines: label<TAB>v1 v2 ... vd   (shortest round-trip decimals)

namespace detail {

inline void write_emb_file(std::ostream& os, const std::vector<std::string>& labels,
                           const Tensor& rows, const std::string& kind) {
    os << "LSS-EMB 1 " << rows.rows() << " " << rows.cols() << " " << kind << "\n";
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        os << labels[i] << '\t';
        for (std::size_t j = 0; j < rows.cols(); ++j) {
            if (j) os << ' ';
            os << format_double(rows.at(i, j));
        }
        os << '\n';
    }
}

struct EmbFileContent {
    std::vector<std::string> labels;
    Tensor rows;
    std::string kind;
};

inline EmbFileContent read_emb_file(std::istream& is, const std::string& path) {
    std::string header;
    if (!std::getline(is, header)) throw parse_error(path + ":1: empty file");
    std::istringstream hs(header);
    std::string magic, version, kind;
    std::size_t n = 0, d = 0;
    if (!(hs >> magic >> version >> n >> d >> kind) || magic != "LSS-EMB") {
        throw parse_error(path + ":1: bad header '" + header + "'");
    }
    if (version != "1") throw format_error(path + ":1: unsupported version '" + version + "'");
    if (n == 0 || d == 0) throw format_error(path + ":1: zero dimension in header");
    EmbFileContent out;
    out.kind = kind;
    out.rows = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        std::string line;
        if (!std::getline(is, line)) {
            throw parse_error(path + ":" + std::to_string(i + 2) + ": truncated file, expected " +
                              std::to_string(n) + " rows");
        }
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw parse_error(path + ":" + std::to_string(i + 2) + ": missing tab separator");
        }
        out.labels.push_back(line.substr(0, tab));
        std::istringstream vs(line.substr(tab + 1));
        std::string tok;
        std::size_t j = 0;
        while (vs >> tok) {
            if (j >= d) {
                throw format_error(path + ":" + std::to_string(i + 2) + ": expected " +
                                   std::to_string(d) + " values, got more");
            }
            out.rows.at(i, j) = parse_double(tok, path + ":" + std::to_string(i + 2));
            ++j;
        }
        if (j != d) {
            throw format_error(path + ":" + std::to_string(i + 2) + ": expected " +
                               std::to_string(d) + " values, got " + std::to_string(j));
        }
    }
    std::string extra;
    while (std::getline(is, extra)) {
        if (!trim(extra).empty()) {
            throw parse_error(path + ": trailing content after " + std::to_string(n) + " rows");
        }
    }
    return out;
}

}  // namespace detail

inline void save_space(const ConceptSpace& space, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    detail::write_emb_file(os, space.labels, space.basis, space_kind_name(space.kind));
    if (!os) throw format_error("write failure on '" + path + "'");
}

inline ConceptSpace load_space(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("cannot open '" + path + "'");
    detail::EmbFileContent c = detail::read_emb_file(is, path);
    ConceptSpace space;
    if (c.kind == "category") {
        space.kind = SpaceKind::category;
    } else if (c.kind == "description") {
        space.kind = SpaceKind::description;
    } else {
        throw format_error(path + ":1: '" + c.kind + "' is not a concept-space kind");
    }
    space.labels = std::move(c.labels);
    space.basis = std::move(c.rows);
    for (const std::string& l : space.labels) detail::validate_label(l);
    for (std::size_t i = 0; i < space.basis.rows(); ++i) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < space.basis.cols(); ++j) {
            norm2 += space.basis.at(i, j) * space.basis.at(i, j);
        }
        if (std::abs(std::sqrt(norm2) - 1.0) > 1e-10) {
            throw format_error(path + ": basis row " + std::to_string(i) + " is not unit norm");
        }
    }
    return space;
}

inline void save_embedding_set(const EmbeddingSet& emb, const std::string& path) {
    detail::validate_embedding_set(emb);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    detail::write_emb_file(os, emb.labels, emb.vectors, "embeddings");
    if (!os) throw format_error("write failure on '" + path + "'");
}

inline EmbeddingSet load_embedding_set(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("cannot open '" + path + "'");
    detail::EmbFileContent c = detail::read_emb_file(is, path);
    if (c.kind != "embeddings") {
        throw format_error(path + ":1: expected kind 'embeddings', got '" + c.kind + "'");
    }
    EmbeddingSet emb;
    emb.labels = std::move(c.labels);
    emb.vectors = std::move(c.rows);
    emb.source = "file";
    detail::validate_embedding_set(emb);
    return emb;
}

// Description groups share the line format; labels repeat, one line per
// description, grouped by first appearance.
inline void save_description_groups(const DescriptionGroups& groups, const std::string& path) {
    std::size_t total = 0, d = 0;
    for (const auto& [label, vecs] : groups) {
        total += vecs.size();
        for (const auto& v : vecs) d = v.size();
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    os << "LSS-EMB 1 " << total << " " << d << " descriptions\n";
    for (const auto& [label, vecs] : groups) {
        for (const auto& v : vecs) {
            os << label << '\t';
            for (std::size_t j = 0; j < v.size(); ++j) {
                if (j) os << ' ';
                os << format_double(v[j]);
            }
            os << '\n';
        }
    }
    if (!os) throw format_error("write failure on '" + path + "'");
}

inline DescriptionGroups load_description_groups(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("cannot open '" + path + "'");
    detail::EmbFileContent c = detail::read_emb_file(is, path);
    if (c.kind != "descriptions") {
        throw format_error(path + ":1: expected kind 'descriptions', got '" + c.kind + "'");
    }
    DescriptionGroups groups;
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        std::vector<double> v(c.rows.data.begin() + i * c.rows.cols(),
                              c.rows.data.begin() + (i + 1) * c.rows.cols());
        if (!groups.empty() && groups.back().first == c.labels[i]) {
            groups.back().second.push_back(std::move(v));
        } else {
            groups.push_back({c.labels[i], {std::move(v)}});
        }
    }
    return groups;
}

}  // namespace lss
