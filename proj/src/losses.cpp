#include "isc/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "isc/errors.hpp"
#include "network.hpp"

namespace isc {

namespace {

using detail::RowMat;

constexpr double kProbFloor = 1e-12;
constexpr double kNormEps = 1e-12;

void require_same_length(std::size_t a, std::size_t b, const char* who) {
    if (a != b) throw ShapeError(std::string(who) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

/// Contrastive loss over the rows of `features`; writes dL/dfeatures into `grad` when non-null.
ContrastiveLoss contrast_on_features(const RowMat& features, std::span<const int> subjects, std::span<const int> labels,
                                     double temperature, SamplingMode mode, bool normalize, RowMat* grad) {
    if (!(temperature > 0.0)) throw RangeError("contrastive loss: temperature must be positive");
    const auto B = features.rows();
    require_same_length(static_cast<std::size_t>(B), subjects.size(), "contrastive loss");
    if (B < 2) throw ShapeError("contrastive loss: batch needs at least 2 samples");

    RowMat e = features;
    Eigen::VectorXd norms = features.rowwise().norm();
    std::vector<char> scaled(static_cast<std::size_t>(B), 0);
    if (normalize) {
        for (Eigen::Index i = 0; i < B; ++i) {
            if (norms(i) >= kNormEps) {
                e.row(i) /= norms(i);
                scaled[static_cast<std::size_t>(i)] = 1;
            }
        }
    }
    const RowMat scores = (e * e.transpose()) / temperature;
    const ContrastiveSets sets = build_sets(subjects, labels, mode);

    ContrastiveLoss out;
    double sum = 0.0;
    RowMat coef;  // dL/dscores (unscaled by 1/valid until the end)
    if (grad) coef = RowMat::Zero(B, B);
    std::vector<double> buf;
    for (Eigen::Index i = 0; i < B; ++i) {
        const auto& pos = sets.positives[static_cast<std::size_t>(i)];
        const auto& anc = sets.anchors[static_cast<std::size_t>(i)];
        if (pos.empty()) continue;
        buf.clear();
        for (std::size_t k : anc) buf.push_back(scores(i, static_cast<Eigen::Index>(k)));
        const double lse_all = log_sum_exp(buf);
        buf.clear();
        for (std::size_t j : pos) buf.push_back(scores(i, static_cast<Eigen::Index>(j)));
        const double lse_pos = log_sum_exp(buf);
        sum += lse_all - lse_pos;
        ++out.valid_anchor_count;
        if (grad) {
            for (std::size_t k : anc) coef(i, static_cast<Eigen::Index>(k)) += std::exp(scores(i, static_cast<Eigen::Index>(k)) - lse_all);
            for (std::size_t j : pos) coef(i, static_cast<Eigen::Index>(j)) -= std::exp(scores(i, static_cast<Eigen::Index>(j)) - lse_pos);
        }
    }
    if (out.valid_anchor_count == 0) {
        if (grad) *grad = RowMat::Zero(B, features.cols());
        return out;
    }
    const double inv = 1.0 / static_cast<double>(out.valid_anchor_count);
    out.value = sum * inv;

    if (grad) {
        // s_ik = e_i . e_k / tau touches both rows.
        RowMat de = ((coef + coef.transpose()) * e) * (inv / temperature);
        for (Eigen::Index i = 0; i < B; ++i) {
            if (!scaled[static_cast<std::size_t>(i)]) continue;
            const double proj = e.row(i).dot(de.row(i));
            de.row(i) = (de.row(i) - proj * e.row(i)) / norms(i);
        }
        *grad = std::move(de);
    }
    return out;
}

RowMat feature_matrix(std::span<const ForwardTrace> traces) {
    if (traces.empty()) return {};
    RowMat z(static_cast<Eigen::Index>(traces.size()), static_cast<Eigen::Index>(traces[0].z.size()));
    for (std::size_t i = 0; i < traces.size(); ++i) {
        require_same_length(traces[i].z.size(), traces[0].z.size(), "contrastive loss features");
        for (std::size_t c = 0; c < traces[i].z.size(); ++c) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = traces[i].z[c];
    }
    return z;
}

void check_label(int label, std::size_t n_classes, std::size_t i) {
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
        throw IndexError("label " + std::to_string(label) + " of sample " + std::to_string(i) + " outside [0, " +
                         std::to_string(n_classes) + ")");
    }
}

void check_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term + " loss");
}

struct BatchLabels {
    std::vector<int> subjects;
    std::vector<int> labels;
};

BatchLabels labels_of(std::span<const Sample* const> batch) {
    BatchLabels out;
    out.subjects.reserve(batch.size());
    out.labels.reserve(batch.size());
    for (const Sample* s : batch) {
        out.subjects.push_back(s->subject_id);
        out.labels.push_back(s->class_label);
    }
    return out;
}

/// Shared by loss_and_gradients and batch_loss.
LossBreakdown evaluate(const detail::BatchActivations& act, const BatchLabels& bl, const LossHyperparams& hp,
                       RowMat* d_logits, RowMat* d_z) {
    const auto B = act.probs.rows();
    const auto K = act.probs.cols();
    LossBreakdown out;
    double ce = 0.0;
    if (d_logits) *d_logits = act.probs / static_cast<double>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        const int y = bl.labels[static_cast<std::size_t>(i)];
        check_label(y, static_cast<std::size_t>(K), static_cast<std::size_t>(i));
        const double py = act.probs(i, y);
        if (py < kProbFloor) {
            ce -= std::log(kProbFloor);
            if (d_logits) d_logits->row(i).setZero();  // clamp is flat
        } else {
            ce -= std::log(py);
            if (d_logits) (*d_logits)(i, y) -= 1.0 / static_cast<double>(B);
        }
    }
    out.cls = ce / static_cast<double>(B);
    check_finite(out.cls, "classification");

    if (hp.lambda != 0.0) {
        const auto c = contrast_on_features(act.z, bl.subjects, bl.labels, hp.temperature, hp.mode, hp.normalize, d_z);
        out.contrast = c.value;
        out.valid_anchor_count = c.valid_anchor_count;
        check_finite(out.contrast, "contrastive");
        if (d_z) *d_z *= hp.lambda;
    }
    out.total = out.cls + hp.lambda * out.contrast;
    return out;
}

std::vector<const Matrix*> inputs_of(std::span<const Sample* const> batch) {
    std::vector<const Matrix*> inputs;
    inputs.reserve(batch.size());
    for (const Sample* s : batch) inputs.push_back(&s->data);
    return inputs;
}

}  // namespace

std::string_view to_string(SamplingMode mode) {
    return mode == SamplingMode::Conventional ? "conventional" : "inter-subject";
}

ContrastiveSets build_sets(std::span<const int> subjects, std::span<const int> labels, SamplingMode mode) {
    require_same_length(subjects.size(), labels.size(), "build_sets");
    const std::size_t n = subjects.size();
    ContrastiveSets sets;
    sets.anchors.resize(n);
    sets.positives.resize(n);
    sets.negatives.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const bool same_class = labels[j] == labels[i];
            const bool same_subject = subjects[j] == subjects[i];
            if (mode == SamplingMode::InterSubject && same_class == same_subject) continue;
            sets.anchors[i].push_back(j);
            (same_class ? sets.positives[i] : sets.negatives[i]).push_back(j);
        }
    }
    return sets;
}

double cross_entropy(std::span<const ForwardTrace> traces, std::span<const int> labels) {
    require_same_length(traces.size(), labels.size(), "cross_entropy");
    if (traces.empty()) throw ShapeError("cross_entropy: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        check_label(labels[i], traces[i].p.size(), i);
        sum -= std::log(std::max(traces[i].p[static_cast<std::size_t>(labels[i])], kProbFloor));
    }
    return sum / static_cast<double>(traces.size());
}

ContrastiveLoss inter_subject_contrastive(std::span<const ForwardTrace> traces, std::span<const int> subjects,
                                          std::span<const int> labels, double temperature, SamplingMode mode,
                                          bool normalize) {
    require_same_length(traces.size(), labels.size(), "inter_subject_contrastive");
    return contrast_on_features(feature_matrix(traces), subjects, labels, temperature, mode, normalize, nullptr);
}

LossBreakdown total_loss(std::span<const ForwardTrace> traces, std::span<const int> subjects,
                         std::span<const int> labels, const LossHyperparams& hp) {
    LossBreakdown out;
    out.cls = cross_entropy(traces, labels);
    check_finite(out.cls, "classification");
    if (hp.lambda != 0.0) {
        const auto c = inter_subject_contrastive(traces, subjects, labels, hp.temperature, hp.mode, hp.normalize);
        out.contrast = c.value;
        out.valid_anchor_count = c.valid_anchor_count;
        check_finite(out.contrast, "contrastive");
    }
    out.total = out.cls + hp.lambda * out.contrast;
    return out;
}

struct LossWorkspace::Buffers {
    detail::BatchActivations act;
    detail::BackwardScratch scratch;
};

LossWorkspace::LossWorkspace() : buffers_(std::make_unique<Buffers>()) {}
LossWorkspace::~LossWorkspace() = default;
LossWorkspace::LossWorkspace(LossWorkspace&&) noexcept = default;
LossWorkspace& LossWorkspace::operator=(LossWorkspace&&) noexcept = default;

LossGradients loss_and_gradients(const ModelParams& params, std::span<const Sample* const> batch,
                                 const LossHyperparams& hp, LossWorkspace& workspace) {
    auto& buf = workspace.buffers();
    const auto inputs = inputs_of(batch);
    detail::forward_batch(params, inputs, true, buf.act);
    RowMat d_logits, d_z;
    LossGradients out;
    out.loss = evaluate(buf.act, labels_of(batch), hp, &d_logits, &d_z);
    out.grads = detail::backward_batch(params, buf.act, d_logits, d_z, buf.scratch);
    return out;
}

LossGradients loss_and_gradients(const ModelParams& params, std::span<const Sample* const> batch,
                                 const LossHyperparams& hp) {
    LossWorkspace workspace;
    return loss_and_gradients(params, batch, hp, workspace);
}

GradientBundle total_loss_gradients(const ModelParams& params, std::span<const Sample* const> batch,
                                    const LossHyperparams& hp) {
    return loss_and_gradients(params, batch, hp).grads;
}

LossBreakdown batch_loss(const ModelParams& params, std::span<const Sample* const> batch, const LossHyperparams& hp) {
    const auto inputs = inputs_of(batch);
    const auto act = detail::forward_batch(params, inputs, false);
    return evaluate(act, labels_of(batch), hp, nullptr, nullptr);
}

}  // namespace isc
