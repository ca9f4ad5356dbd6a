#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "isc/core_math.hpp"
#include "isc/losses.hpp"
#include "isc/model.hpp"
#include "isc/signals.hpp"

namespace isc::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = nd(rng);
    return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Vector v(n);
    for (double& x : v) x = nd(rng);
    return v;
}

// (s0,A),(s0,B),(s1,A),(s1,B),(s2,A),(s2,B)
inline const std::vector<int> kCanonicalSubjects{0, 0, 1, 1, 2, 2};
inline const std::vector<int> kCanonicalLabels{0, 1, 0, 1, 0, 1};

inline std::vector<ForwardTrace> traces_from_features(const std::vector<Vector>& z) {
    std::vector<ForwardTrace> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i].z = z[i];
    return out;
}

struct PairSets {
    std::vector<std::size_t> anchors, positives, negatives;
};

// Exhaustive pair enumeration, written straight from the set definitions.
inline PairSets enumerate_pairs(const std::vector<int>& s, const std::vector<int>& y, std::size_t i, SamplingMode mode) {
    PairSets out;
    for (std::size_t j = 0; j < s.size(); ++j) {
        if (j == i) continue;
        const bool same_class = y[j] == y[i];
        const bool same_subject = s[j] == s[i];
        if (mode == SamplingMode::Conventional) {
            out.anchors.push_back(j);
            (same_class ? out.positives : out.negatives).push_back(j);
        } else if (same_class && !same_subject) {
            out.anchors.push_back(j);
            out.positives.push_back(j);
        } else if (!same_class && same_subject) {
            out.anchors.push_back(j);
            out.negatives.push_back(j);
        }
    }
    return out;
}

// Direct exponentiation in extended precision after subtracting the largest score.
inline ContrastiveLoss naive_contrastive(const std::vector<Vector>& features, const std::vector<int>& s,
                                        const std::vector<int>& y, double tau, SamplingMode mode, bool normalize) {
    std::vector<std::vector<long double>> z;
    for (const auto& f : features) {
        std::vector<long double> v(f.begin(), f.end());
        if (normalize) {
            long double n = 0;
            for (long double x : v) n += x * x;
            n = std::sqrt(n);
            if (n >= 1e-12L)
                for (long double& x : v) x /= n;
        }
        z.push_back(v);
    }
    long double sum = 0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const PairSets sets = enumerate_pairs(s, y, i, mode);
        if (sets.positives.empty()) continue;
        auto score = [&](std::size_t j) {
            long double d = 0;
            for (std::size_t c = 0; c < z[i].size(); ++c) d += z[i][c] * z[j][c];
            return d / tau;
        };
        long double m = -INFINITY;
        for (std::size_t j : sets.anchors) m = std::max(m, score(j));
        long double num = 0, den = 0;
        for (std::size_t j : sets.positives) num += std::exp(score(j) - m);
        for (std::size_t j : sets.anchors) den += std::exp(score(j) - m);
        sum += -std::log(num / den);
        ++valid;
    }
    return {valid == 0 ? 0.0 : static_cast<double>(sum / valid), valid};
}

// Small random samples for gradient checks and batch-level tests.
inline std::vector<Sample> random_samples(const std::vector<int>& subjects, const std::vector<int>& labels,
                                          std::size_t channels, std::size_t steps, std::mt19937_64& rng) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        out.push_back(Sample{random_matrix(channels, steps, rng), subjects[i], labels[i]});
    }
    return out;
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
    std::vector<const Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

// Largest elementwise |a - fd| / max(|a|, |fd|) over coordinates with |a| > floor.
inline double max_relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (std::abs(analytic[i]) <= floor) continue;
        const double denom = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("isc_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace isc::test
