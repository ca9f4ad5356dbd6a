#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "isc/core_math.hpp"

namespace isc {

/// One multi-channel recording: `data` is channels x timesteps.
struct Sample {
    Matrix data;
    int subject_id = 0;
    int class_label = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// All samples of one subject.
struct SubjectDataset {
    int subject_id = 0;
    std::vector<Sample> samples;

    /// Throws DataError if empty or if a sample carries another subject id.
    void validate() const;
    friend bool operator==(const SubjectDataset&, const SubjectDataset&) = default;
};

struct GeneratorConfig {
    std::size_t n_subjects = 4;
    std::size_t n_classes = 8;
    std::size_t channels = 16;
    std::size_t raw_timesteps = 500;
    double sample_rate = 1000.0;
    std::size_t samples_per_class_per_subject = 60;
    double subject_shift_strength = 0.8;
    double noise_std = 0.5;
    std::uint64_t seed = 0;

    /// Throws ConfigError on invalid settings.
    void validate() const;
};

/// Synthetic subject-shifted dataset.
///
/// Each class owns three sinusoid frequencies drawn from [14, 72] Hz and a
/// spatial gain pattern over channels; both are shared by every subject. The
/// n-th sample of a class draws fresh phases, again shared across subjects.
/// Subjects differ through their channel mixing M_s = I + shift * G_s / sqrt(D),
/// a per-channel offset scaled by the shift strength, and a background rhythm:
/// two subject-specific in-band tones on their own spatial pattern, amplitude
/// 1.25 * shift, random phases per sample. Additive Gaussian noise comes last.
/// With shift 0 and noise 0 every subject records the same samples.
std::vector<SubjectDataset> generate_dataset(const GeneratorConfig& cfg);

/// Zeroes every DFT bin whose frequency lies in [low, high] (per channel).
Matrix notch_filter(const Matrix& x, double sample_rate, double low, double high);

/// Keeps only DFT bins whose frequency lies in [low, high] (per channel).
Matrix bandpass_filter(const Matrix& x, double sample_rate, double low, double high);

/// Columns [floor(start_ms * rate / 1000), floor(end_ms * rate / 1000)).
Matrix clip_interval(const Matrix& x, double sample_rate, double start_ms, double end_ms);

struct PreprocessConfig {
    bool notch = true;
    double notch_low = 49.0;
    double notch_high = 51.0;
    bool bandpass = true;
    double band_low = 14.0;
    double band_high = 72.0;
    bool clip = true;
    double clip_start_ms = 320.0;
    double clip_end_ms = 480.0;
};

/// notch -> band-pass -> clip, each step optional.
Matrix preprocess(const Matrix& x, double sample_rate, const PreprocessConfig& cfg);
std::vector<SubjectDataset> preprocess(const std::vector<SubjectDataset>& datasets, double sample_rate,
                                       const PreprocessConfig& cfg);

struct SplitRatios {
    unsigned train = 4;
    unsigned val = 1;
    unsigned test = 1;
};

struct DatasetSplit {
    SubjectDataset train;
    SubjectDataset val;
    SubjectDataset test;
};

/// Stratified split: each class is shuffled with `seed` and cut by
/// largest-remainder rounding of the ratios. Throws DataError naming any class
/// with fewer samples than train+val+test ratio units.
DatasetSplit split_dataset(const SubjectDataset& ds, SplitRatios ratios, std::uint64_t seed);

/// EEGS binary format, little-endian:
///   "EEGS" | version u32 = 1 | n_subjects u32 | n_classes u32 | D u32 | T u32 |
///   n_samples u64 | per sample: subject u16, class u16, D*T f64 row-major.
void save_dataset(const std::vector<SubjectDataset>& datasets, const std::filesystem::path& path);
std::vector<SubjectDataset> load_dataset(const std::filesystem::path& path);

}  // namespace isc
