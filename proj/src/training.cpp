#include "isc/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <string>

#include "isc/errors.hpp"
#include "isc/metrics.hpp"

namespace isc {

namespace {

std::vector<Matrix*> tensors_of(ParameterTensors& t) {
    std::vector<Matrix*> out;
    t.for_each([&](std::string_view, Matrix& m) { out.push_back(&m); });
    return out;
}

std::vector<const Matrix*> tensors_of(const ParameterTensors& t) {
    std::vector<const Matrix*> out;
    t.for_each([&](std::string_view, const Matrix& m) { out.push_back(&m); });
    return out;
}

enum : std::uint64_t { kBatchStream = 0xBA7C };

}  // namespace

AdamState AdamState::for_params(const ModelParams& params, double learning_rate, double beta1, double beta2,
                                double epsilon) {
    AdamState s;
    s.m = zeros_like(params);
    s.v = zeros_like(params);
    s.learning_rate = learning_rate;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    return s;
}

void adam_step(ModelParams& params, const GradientBundle& grads, AdamState& state) {
    auto p = tensors_of(params);
    const auto g = tensors_of(grads);
    auto m = tensors_of(state.m);
    auto v = tensors_of(state.v);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!g[i]->same_shape(*p[i]) || !m[i]->same_shape(*p[i]) || !v[i]->same_shape(*p[i])) {
            throw ShapeError("adam_step: gradient/state shapes do not match parameters");
        }
        if (!all_finite(g[i]->values())) throw NumericError("adam_step: non-finite gradient");
    }

    ++state.t;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto pv = p[i]->values();
        auto gv = g[i]->values();
        auto mv = m[i]->values();
        auto vv = v[i]->values();
        for (std::size_t j = 0; j < pv.size(); ++j) {
            mv[j] = b1 * mv[j] + (1.0 - b1) * gv[j];
            vv[j] = b2 * vv[j] + (1.0 - b2) * gv[j] * gv[j];
            const double m_hat = mv[j] / c1;
            const double v_hat = vv[j] / c2;
            pv[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_per_subject < 1) throw ConfigError("train: batch_per_subject must be >= 1");
    if (!(loss.temperature > 0.0)) throw ConfigError("train: temperature must be positive");
    if (!(loss.lambda >= 0.0) || !std::isfinite(loss.lambda)) throw ConfigError("train: lambda must be finite and >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
}

FitResult fit(const TrainingPool& pool, std::span<const Sample> val_set, ModelParams initial, const TrainConfig& cfg) {
    cfg.validate();
    if (val_set.empty()) throw DataError("fit: validation set is empty");
    const int val_subject = val_set.front().subject_id;
    for (const auto& s : val_set) {
        if (s.subject_id != val_subject) throw DataError("fit: validation set mixes subjects");
    }
    if (!pool.by_subject().contains(val_subject)) {
        throw DataError("fit: validation subject " + std::to_string(val_subject) + " is absent from the training pool");
    }

    const std::size_t steps = steps_per_epoch(pool, cfg.batch_per_subject);
    Rng rng = make_rng(cfg.seed, {kBatchStream});
    AdamState adam = AdamState::for_params(initial, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    FitResult result;
    ModelParams params = std::move(initial);
    double best_top1 = -1.0;
    LossWorkspace workspace;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochLog entry;
        entry.epoch = epoch;
        for (std::size_t step = 0; step < steps; ++step) {
            const Batch batch = sample_balanced_batch(pool, cfg.batch_per_subject, rng);
            const auto samples = batch.samples();
            try {
                const auto lg = loss_and_gradients(params, samples, cfg.loss, workspace);
                adam_step(params, lg.grads, adam);
                entry.cls_loss += lg.loss.cls;
                entry.contrast_loss += lg.loss.contrast;
                entry.total_loss += lg.loss.total;
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            }
        }
        entry.cls_loss /= static_cast<double>(steps);
        entry.contrast_loss /= static_cast<double>(steps);
        entry.total_loss /= static_cast<double>(steps);

        const Accuracy acc = evaluate_accuracy(params, val_set);
        entry.val_top1 = acc.top1;
        entry.val_top3 = acc.top3;
        result.log.push_back(entry);
        if (acc.top1 > best_top1) {
            best_top1 = acc.top1;
            result.best = params;
            result.best_epoch = epoch;
        }
    }
    return result;
}

void write_log_csv(std::span<const EpochLog> log, std::ostream& out) {
    out << "epoch,cls_loss,contrast_loss,val_top1,val_top3\n";
    char line[256];
    for (const auto& e : log) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.cls_loss, e.contrast_loss, e.val_top1,
                      e.val_top3);
        out << line;
    }
}

void write_log_csv(std::span<const EpochLog> log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_log_csv(log, out);
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace isc
