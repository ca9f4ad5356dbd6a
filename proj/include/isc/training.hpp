#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "isc/batching.hpp"
#include "isc/losses.hpp"
#include "isc/model.hpp"

namespace isc {

struct AdamState {
    GradientBundle m;
    GradientBundle v;
    std::size_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-3;

    static AdamState for_params(const ModelParams& params, double learning_rate, double beta1 = 0.9,
                                double beta2 = 0.999, double epsilon = 1e-8);
};

/// One bias-corrected Adam update. Throws NumericError (leaving params and state
/// untouched) if any gradient entry is non-finite.
void adam_step(ModelParams& params, const GradientBundle& grads, AdamState& state);

struct TrainConfig {
    std::size_t epochs = 150;
    std::size_t batch_per_subject = 200;  // N
    LossHyperparams loss;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double cls_loss = 0.0;
    double contrast_loss = 0.0;
    double total_loss = 0.0;
    double val_top1 = 0.0;
    double val_top3 = 0.0;
};

struct FitResult {
    ModelParams best;
    std::size_t best_epoch = 0;
    std::vector<EpochLog> log;
};

/// Adam on balanced batches for cfg.epochs epochs; after every epoch the
/// validation top-1 is measured and the best snapshot (earliest on ties) kept.
FitResult fit(const TrainingPool& pool, std::span<const Sample> val_set, ModelParams initial, const TrainConfig& cfg);

/// CSV: epoch,cls_loss,contrast_loss,val_top1,val_top3 with 6 decimals.
void write_log_csv(std::span<const EpochLog> log, std::ostream& out);
void write_log_csv(std::span<const EpochLog> log, const std::filesystem::path& path);

}  // namespace isc
