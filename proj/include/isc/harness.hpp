#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "isc/metrics.hpp"
#include "isc/signals.hpp"
#include "isc/training.hpp"

namespace isc {

enum class Method { Vanilla, Conventional, InterSubject };

/// CLI/config names: vanilla, conv, inter.
std::string_view to_string(Method m);
/// Accepts the short names plus conventional-contrast / inter-subject-contrast.
Method parse_method(std::string_view name);

struct ModelSettings {
    std::size_t encoder_dim = 128;
    std::size_t embedding_dim = 128;
};

struct GridSpec {
    std::vector<int> targets{0, 1, 2, 3};
    std::vector<std::size_t> k_values{1, 2, 3, 4, 5};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<Method> methods{Method::Vanilla, Method::Conventional, Method::InterSubject};
    /// Worker threads for independent cells; 0 = hardware concurrency.
    std::size_t threads = 0;
};

struct ExperimentConfig {
    GeneratorConfig generator;
    PreprocessConfig preprocess;
    ModelSettings model;
    TrainConfig train;
    GridSpec grid;

    /// Throws ConfigError on invalid combinations.
    void validate() const;
    /// Training settings for one method: vanilla -> lambda 0, contrastive methods -> configured lambda.
    TrainConfig train_config_for(Method method, std::uint64_t seed) const;
};

/// Sections generator, preprocess, model, train, grid; all keys optional.
/// Unknown keys raise ConfigError naming the key path (e.g. "train.lr").
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Pretty-printed JSON holding every setting; parse_config reads it back unchanged.
std::string config_to_json(const ExperimentConfig& cfg);

struct ResultRecord {
    int target = 0;
    std::size_t k = 0;
    Method method = Method::Vanilla;
    std::uint64_t seed = 0;
    double top1 = 0.0;  // test split, percent
    double top3 = 0.0;
    double val_top1 = 0.0;
    double val_top3 = 0.0;
};

struct CellSpec {
    int target = 0;
    std::size_t k = 1;
    Method method = Method::Vanilla;
    std::uint64_t seed = 0;
};

struct CellOutcome {
    ResultRecord record;
    FitResult fit;
};

/// Preprocessed datasets, one per subject, ready for splitting.
std::vector<SubjectDataset> prepare_data(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& raw);

/// Split 4:1:1 per subject, build the k-shot pool from the target's training part,
/// fit, and score the selected snapshot on the target's test part.
CellOutcome run_cell(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& prepared, const CellSpec& cell);

/// Generates and preprocesses data from cfg.generator, then runs one cell.
ResultRecord run_experiment_cell(const ExperimentConfig& cfg, int target, std::size_t k, Method method,
                                 std::uint64_t seed);

/// Every cell of cfg.grid, in grid order, optionally across threads.
/// `progress` (may be empty) is called after each finished cell.
std::vector<ResultRecord> run_grid(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& prepared,
                                   const std::function<void(const ResultRecord&)>& progress = {});

struct AggregateRow {
    Method method = Method::Vanilla;
    int target = 0;
    std::size_t k = 0;
    std::size_t n = 0;
    double top1_mean = 0.0;
    double top1_std = 0.0;
    double top3_mean = 0.0;
    double top3_std = 0.0;
};

/// Mean and sample standard deviation per (method, target, k), sorted by that key.
std::vector<AggregateRow> aggregate(std::span<const ResultRecord> records);

enum class ReportFormat { Csv, Markdown };

std::string render_report(std::span<const AggregateRow> table, ReportFormat format);
void emit_report(std::span<const AggregateRow> table, ReportFormat format, const std::filesystem::path& path);

}  // namespace isc
