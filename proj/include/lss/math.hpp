#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lss/errors.hpp"

namespace lss {

// Probabilities are floored at this value before taking logs.
inline constexpr double kLogFloor = 1e-300;

// Temperature softmax over a flat vector: out[k] = exp(v[k]/lambda) / sum_j exp(v[j]/lambda).
// Max-subtraction keeps the exponentials bounded.
inline std::vector<double> softmax_temp(const std::vector<double>& v, double lambda) {
    if (v.empty()) throw invalid_argument_error("softmax_temp: empty vector");
    if (!(lambda > 0.0)) throw invalid_argument_error("softmax_temp: lambda must be positive");
    double m = v[0] / lambda;
    for (double x : v) m = std::max(m, x / lambda);
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] / lambda - m);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// log softmax via log-sum-exp; avoids log(0) for strongly peaked inputs.
inline std::vector<double> log_softmax_temp(const std::vector<double>& v, double lambda) {
    if (v.empty()) throw invalid_argument_error("log_softmax_temp: empty vector");
    if (!(lambda > 0.0)) throw invalid_argument_error("log_softmax_temp: lambda must be positive");
    double m = v[0] / lambda;
    for (double x : v) m = std::max(m, x / lambda);
    double sum = 0.0;
    for (double x : v) sum += std::exp(x / lambda - m);
    double lse = m + std::log(sum);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / lambda - lse;
    return out;
}

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// v / ||v||2. A zero vector is a hard error, never a silent zero result.
inline std::vector<double> l2_normalize(const std::vector<double>& v) {
    double n = l2_norm(v);
    if (!(n > 0.0)) throw degenerate_input_error("l2_normalize: zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw invalid_argument_error("cosine_similarity: length mismatch");
    double na = l2_norm(a), nb = l2_norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw degenerate_input_error("cosine_similarity: zero vector");
    return dot(a, b) / (na * nb);
}

// Shannon entropy of a probability vector, in nats.
inline double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

inline double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

inline bool is_distribution(const std::vector<double>& p, double tol = 1e-6) {
    double s = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x)) return false;
        s += x;
    }
    return std::abs(s - 1.0) <= tol;
}

}  // namespace lss
