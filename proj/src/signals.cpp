#include "isc/signals.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

#include "binary_io.hpp"
#include "isc/errors.hpp"
#include "isc/random.hpp"

namespace isc {

namespace {

constexpr std::string_view kDatasetMagic = "EEGS";
constexpr std::uint32_t kDatasetVersion = 1;

// Stream tags for make_rng; keep stable, they define the generated data.
enum : std::uint64_t { kClassStream = 1, kSubjectStream = 2, kPhaseStream = 3, kNoiseStream = 4, kRhythmStream = 5 };

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};

template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

void check_band(double sample_rate, double low, double high, const char* who) {
    if (!(low > 0.0 && low < high && high < sample_rate / 2.0)) {
        throw RangeError(std::string(who) + ": band [" + std::to_string(low) + ", " + std::to_string(high) +
                         "] must satisfy 0 < low < high < sample_rate/2 = " + std::to_string(sample_rate / 2.0));
    }
}

/// Real signal -> DFT -> zero bins where keep(freq) is false -> inverse DFT.
template <class Keep>
Matrix apply_frequency_mask(const Matrix& x, double sample_rate, Keep keep) {
    const std::size_t n = x.cols();
    Matrix out(x.rows(), n);
    if (n == 0 || x.rows() == 0) return out;
    const std::size_t bins = n / 2 + 1;

    FftwBuffer<double> time(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
    FftwBuffer<fftw_complex> freq(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
    {
        std::lock_guard lock(fftw_planner_mutex());
        forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), time.get(), freq.get(), FFTW_ESTIMATE);
        inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), freq.get(), time.get(), FFTW_ESTIMATE);
    }

    std::vector<char> mask(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        mask[k] = keep(static_cast<double>(k) * sample_rate / static_cast<double>(n)) ? 1 : 0;
    }

    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::copy_n(x.row(r).data(), n, time.get());
        fftw_execute(forward);
        for (std::size_t k = 0; k < bins; ++k) {
            if (!mask[k]) freq[k][0] = freq[k][1] = 0.0;
        }
        fftw_execute(inverse);
        auto dst = out.row(r);
        for (std::size_t t = 0; t < n; ++t) dst[t] = time[t] * scale;
    }

    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
    return out;
}

std::size_t ms_to_column(double ms, double sample_rate) {
    // Guard against 159.99999 style rounding of exact products.
    return static_cast<std::size_t>(std::floor(ms * sample_rate / 1000.0 + 1e-9));
}

}  // namespace

void SubjectDataset::validate() const {
    if (samples.empty()) throw DataError("subject " + std::to_string(subject_id) + " has no samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].subject_id != subject_id) {
            throw DataError("sample " + std::to_string(i) + " of subject " + std::to_string(subject_id) +
                            " carries subject id " + std::to_string(samples[i].subject_id));
        }
    }
}

void GeneratorConfig::validate() const {
    if (n_subjects < 1 || n_classes < 1 || channels < 1 || raw_timesteps < 1 || samples_per_class_per_subject < 1) {
        throw ConfigError("generator: all counts must be >= 1");
    }
    if (n_subjects > 65535 || n_classes > 65535) throw ConfigError("generator: ids must fit in 16 bits");
    if (!(sample_rate > 2.0 * 72.0)) throw ConfigError("generator: sample_rate must exceed 144 Hz");
    if (!(subject_shift_strength >= 0.0) || !(noise_std >= 0.0)) {
        throw ConfigError("generator: subject_shift_strength and noise_std must be >= 0");
    }
}

std::vector<SubjectDataset> generate_dataset(const GeneratorConfig& cfg) {
    cfg.validate();
    constexpr std::size_t kTones = 3;
    constexpr double kLowHz = 14.0;
    constexpr double kHighHz = 72.0;
    // Background rhythm amplitude per unit of subject_shift_strength.
    constexpr double kRhythmGain = 1.25;
    const std::size_t D = cfg.channels;
    const std::size_t T = cfg.raw_timesteps;
    const std::size_t K = cfg.n_classes;
    const std::size_t per_class = cfg.samples_per_class_per_subject;
    const double two_pi = 2.0 * std::numbers::pi;

    struct ClassPrototype {
        std::array<double, kTones> freq{};
        Vector gain;
    };
    std::vector<ClassPrototype> classes(K);
    {
        Rng rng = make_rng(cfg.seed, {kClassStream});
        std::uniform_real_distribution<double> freq_dist(kLowHz, kHighHz);
        std::normal_distribution<double> gain_dist(0.0, 1.0);
        for (auto& c : classes) {
            for (double& f : c.freq) f = freq_dist(rng);
            c.gain.resize(D);
            for (double& g : c.gain) g = gain_dist(rng);
        }
    }

    // Temporal waveform of the n-th sample of class k; identical for all subjects.
    auto waveform = [&](std::size_t k, std::size_t n) {
        Rng rng = make_rng(cfg.seed, {kPhaseStream, k, n});
        std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
        std::array<double, kTones> phase{};
        for (double& p : phase) p = phase_dist(rng);
        Vector w(T, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double sec = static_cast<double>(t) / cfg.sample_rate;
            for (std::size_t j = 0; j < kTones; ++j) w[t] += std::sin(two_pi * classes[k].freq[j] * sec + phase[j]);
        }
        return w;
    };

    std::vector<SubjectDataset> out(cfg.n_subjects);
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        Rng rng = make_rng(cfg.seed, {kSubjectStream, s});
        std::normal_distribution<double> normal(0.0, 1.0);
        Matrix mixing = Matrix::identity(D);
        for (double& m : mixing.values()) m += cfg.subject_shift_strength * normal(rng) / std::sqrt(double(D));
        Vector offset(D);
        for (double& o : offset) o = cfg.subject_shift_strength * normal(rng);
        // Background rhythm: two subject-specific in-band tones with their own spatial pattern.
        std::uniform_real_distribution<double> freq_dist(kLowHz, kHighHz);
        std::array<double, 2> rhythm_freq{};
        for (double& f : rhythm_freq) f = freq_dist(rng);
        Vector rhythm_gain(D);
        for (double& g : rhythm_gain) g = normal(rng);

        // Spatial pattern of each class as seen through this subject's mixing.
        std::vector<Vector> pattern(K, Vector(D, 0.0));
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t r = 0; r < D; ++r)
                for (std::size_t c = 0; c < D; ++c) pattern[k][r] += mixing(r, c) * classes[k].gain[c];
        Vector rhythm_pattern(D, 0.0);
        for (std::size_t r = 0; r < D; ++r)
            for (std::size_t c = 0; c < D; ++c)
                rhythm_pattern[r] += kRhythmGain * cfg.subject_shift_strength * mixing(r, c) * rhythm_gain[c];

        auto& ds = out[s];
        ds.subject_id = static_cast<int>(s);
        ds.samples.reserve(K * per_class);
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t n = 0; n < per_class; ++n) {
                const Vector w = waveform(k, n);
                Rng rhythm_rng = make_rng(cfg.seed, {kRhythmStream, s, k, n});
                std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
                const double phase0 = phase_dist(rhythm_rng), phase1 = phase_dist(rhythm_rng);
                Vector rhythm(T);
                for (std::size_t t = 0; t < T; ++t) {
                    const double sec = static_cast<double>(t) / cfg.sample_rate;
                    rhythm[t] = std::sin(two_pi * rhythm_freq[0] * sec + phase0) + std::sin(two_pi * rhythm_freq[1] * sec + phase1);
                }
                Rng noise_rng = make_rng(cfg.seed, {kNoiseStream, s, k, n});
                std::normal_distribution<double> noise(0.0, 1.0);
                Matrix x(D, T);
                for (std::size_t r = 0; r < D; ++r) {
                    for (std::size_t t = 0; t < T; ++t) {
                        double v = pattern[k][r] * w[t] + rhythm_pattern[r] * rhythm[t] + offset[r];
                        if (cfg.noise_std > 0.0) v += cfg.noise_std * noise(noise_rng);
                        x(r, t) = v;
                    }
                }
                ds.samples.push_back(Sample{std::move(x), static_cast<int>(s), static_cast<int>(k)});
            }
        }
    }
    return out;
}

Matrix notch_filter(const Matrix& x, double sample_rate, double low, double high) {
    check_band(sample_rate, low, high, "notch_filter");
    return apply_frequency_mask(x, sample_rate, [=](double f) { return f < low || f > high; });
}

Matrix bandpass_filter(const Matrix& x, double sample_rate, double low, double high) {
    check_band(sample_rate, low, high, "bandpass_filter");
    return apply_frequency_mask(x, sample_rate, [=](double f) { return f >= low && f <= high; });
}

Matrix clip_interval(const Matrix& x, double sample_rate, double start_ms, double end_ms) {
    const double duration_ms = static_cast<double>(x.cols()) * 1000.0 / sample_rate;
    if (!(start_ms >= 0.0 && start_ms < end_ms && end_ms <= duration_ms + 1e-9)) {
        throw RangeError("clip_interval: [" + std::to_string(start_ms) + ", " + std::to_string(end_ms) +
                         ") ms outside signal of " + std::to_string(duration_ms) + " ms");
    }
    const std::size_t first = ms_to_column(start_ms, sample_rate);
    const std::size_t last = std::min(ms_to_column(end_ms, sample_rate), x.cols());
    if (first >= last) throw RangeError("clip_interval: interval selects no samples");
    Matrix out(x.rows(), last - first);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(first), src.begin() + static_cast<std::ptrdiff_t>(last),
                  out.row(r).begin());
    }
    return out;
}

Matrix preprocess(const Matrix& x, double sample_rate, const PreprocessConfig& cfg) {
    Matrix y = x;
    if (cfg.notch) y = notch_filter(y, sample_rate, cfg.notch_low, cfg.notch_high);
    if (cfg.bandpass) y = bandpass_filter(y, sample_rate, cfg.band_low, cfg.band_high);
    if (cfg.clip) y = clip_interval(y, sample_rate, cfg.clip_start_ms, cfg.clip_end_ms);
    return y;
}

std::vector<SubjectDataset> preprocess(const std::vector<SubjectDataset>& datasets, double sample_rate,
                                       const PreprocessConfig& cfg) {
    std::vector<SubjectDataset> out;
    out.reserve(datasets.size());
    for (const auto& ds : datasets) {
        SubjectDataset p{ds.subject_id, {}};
        p.samples.reserve(ds.samples.size());
        for (const auto& s : ds.samples) {
            p.samples.push_back(Sample{preprocess(s.data, sample_rate, cfg), s.subject_id, s.class_label});
        }
        out.push_back(std::move(p));
    }
    return out;
}

DatasetSplit split_dataset(const SubjectDataset& ds, SplitRatios ratios, std::uint64_t seed) {
    if (ratios.train == 0 || ratios.val == 0 || ratios.test == 0) throw RangeError("split ratios must be positive");
    ds.validate();
    const std::array<unsigned, 3> units{ratios.train, ratios.val, ratios.test};
    const unsigned unit_sum = units[0] + units[1] + units[2];

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class[ds.samples[i].class_label].push_back(i);

    std::string too_small;
    for (const auto& [label, idx] : by_class) {
        if (idx.size() < unit_sum) {
            too_small += (too_small.empty() ? "" : ", ") + std::to_string(label) + " (" + std::to_string(idx.size()) + ")";
        }
    }
    if (!too_small.empty()) {
        throw DataError("split_dataset: subject " + std::to_string(ds.subject_id) + " has classes with fewer than " +
                        std::to_string(unit_sum) + " samples: " + too_small);
    }

    DatasetSplit out{{ds.subject_id, {}}, {ds.subject_id, {}}, {ds.subject_id, {}}};
    std::array<SubjectDataset*, 3> parts{&out.train, &out.val, &out.test};
    for (auto& [label, idx] : by_class) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(label)});
        std::shuffle(idx.begin(), idx.end(), rng);

        // Largest remainder; ties go to the earlier part.
        const std::size_t n = idx.size();
        std::array<std::size_t, 3> count{};
        std::array<std::size_t, 3> remainder{};
        std::size_t assigned = 0;
        for (std::size_t p = 0; p < 3; ++p) {
            count[p] = n * units[p] / unit_sum;
            remainder[p] = n * units[p] % unit_sum;
            assigned += count[p];
        }
        std::array<std::size_t, 3> order{0, 1, 2};
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++count[order[i]];

        std::size_t cursor = 0;
        for (std::size_t p = 0; p < 3; ++p) {
            for (std::size_t c = 0; c < count[p]; ++c) parts[p]->samples.push_back(ds.samples[idx[cursor++]]);
        }
    }
    return out;
}

void save_dataset(const std::vector<SubjectDataset>& datasets, const std::filesystem::path& path) {
    if (datasets.empty()) throw DataError("save_dataset: refusing to write an empty subject list");
    std::size_t D = 0, T = 0, n_samples = 0;
    int max_subject = 0, max_class = 0;
    bool first = true;
    for (const auto& ds : datasets) {
        ds.validate();
        for (const auto& s : ds.samples) {
            if (first) {
                D = s.data.rows();
                T = s.data.cols();
                first = false;
            } else if (s.data.rows() != D || s.data.cols() != T) {
                throw ShapeError("save_dataset: samples have inconsistent shapes");
            }
            if (s.subject_id < 0 || s.subject_id > 65535 || s.class_label < 0 || s.class_label > 65535) {
                throw DataError("save_dataset: subject/class id does not fit in u16");
            }
            max_subject = std::max(max_subject, s.subject_id);
            max_class = std::max(max_class, s.class_label);
            ++n_samples;
        }
    }

    detail::ByteWriter w(path);
    w.bytes(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(max_subject + 1));
    w.u32(static_cast<std::uint32_t>(max_class + 1));
    w.u32(static_cast<std::uint32_t>(D));
    w.u32(static_cast<std::uint32_t>(T));
    w.u64(n_samples);
    for (const auto& ds : datasets) {
        for (const auto& s : ds.samples) {
            w.u16(static_cast<std::uint16_t>(s.subject_id));
            w.u16(static_cast<std::uint16_t>(s.class_label));
            for (double v : s.data.values()) w.f64(v);
        }
    }
    w.finish(path);
}

std::vector<SubjectDataset> load_dataset(const std::filesystem::path& path) {
    detail::ByteReader r(path);
    if (r.bytes(4, "magic") != kDatasetMagic) throw FormatError("bad magic, expected \"EEGS\"", 0);
    const std::uint64_t version_at = r.offset();
    if (const auto v = r.u32("version"); v != kDatasetVersion) {
        throw FormatError("unsupported EEGS version " + std::to_string(v), version_at);
    }
    const std::uint32_t n_subjects = r.u32("n_subjects");
    const std::uint32_t n_classes = r.u32("n_classes");
    const std::uint64_t dims_at = r.offset();
    const std::uint32_t D = r.u32("D");
    const std::uint32_t T = r.u32("T");
    const std::uint64_t n_samples = r.u64("n_samples");
    if (n_subjects == 0 || n_classes == 0) throw FormatError("n_subjects and n_classes must be positive", 8);
    if (D == 0 || T == 0) throw FormatError("sample dimensions must be positive", dims_at);

    std::map<int, SubjectDataset> grouped;
    for (std::uint64_t i = 0; i < n_samples; ++i) {
        const std::uint64_t at = r.offset();
        const int subject = r.u16("subject_id");
        const int label = r.u16("class_label");
        if (static_cast<std::uint32_t>(subject) >= n_subjects) {
            throw FormatError("sample " + std::to_string(i) + " subject id out of range", at);
        }
        if (static_cast<std::uint32_t>(label) >= n_classes) {
            throw FormatError("sample " + std::to_string(i) + " class label out of range", at + 2);
        }
        std::vector<double> values(std::size_t(D) * T);
        for (double& v : values) {
            const std::uint64_t value_at = r.offset();
            v = r.f64("sample data");
            if (!std::isfinite(v)) throw FormatError("non-finite sample value", value_at);
        }
        auto& ds = grouped[subject];
        ds.subject_id = subject;
        ds.samples.push_back(Sample{Matrix(D, T, std::move(values)), subject, label});
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last sample", r.offset());

    std::vector<SubjectDataset> out;
    out.reserve(grouped.size());
    for (auto& [id, ds] : grouped) out.push_back(std::move(ds));
    return out;
}

}  // namespace isc
