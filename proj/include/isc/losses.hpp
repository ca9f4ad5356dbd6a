#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "isc/model.hpp"

namespace isc {

enum class SamplingMode {
    /// Supervised-contrastive sets: anchors are all other batch entries, positives share the label.
    Conventional,
    /// Positives share the label but come from another subject; negatives have another
    /// label but the same subject. Everything else is left out of the anchor set.
    InterSubject,
};

std::string_view to_string(SamplingMode mode);

/// Per-anchor index sets, each sorted ascending.
struct ContrastiveSets {
    std::vector<std::vector<std::size_t>> anchors;
    std::vector<std::vector<std::size_t>> positives;
    std::vector<std::vector<std::size_t>> negatives;
};

ContrastiveSets build_sets(std::span<const int> subjects, std::span<const int> labels, SamplingMode mode);

struct LossHyperparams {
    double temperature = 0.05;
    double lambda = 1.0;
    SamplingMode mode = SamplingMode::InterSubject;
    /// l2-normalize encoder features before the dot products.
    bool normalize = true;
};

struct LossBreakdown {
    double cls = 0.0;
    double contrast = 0.0;
    double total = 0.0;
    std::size_t valid_anchor_count = 0;
};

struct ContrastiveLoss {
    double value = 0.0;
    std::size_t valid_anchor_count = 0;
};

/// Mean of -log max(p_i[y_i], 1e-12). Throws IndexError for labels outside [0, K).
double cross_entropy(std::span<const ForwardTrace> traces, std::span<const int> labels);

/// Contrastive loss on the encoder features z.
///
/// For every anchor i with a non-empty positive set:
///   term_i = logsumexp_{k in A(i)} s_ik - logsumexp_{j in P(i)} s_ij,  s_ij = z_i . z_j / tau,
/// and the result is the mean of term_i over those anchors (0 when there are none).
/// Averaging over valid anchors instead of the batch size keeps the loss defined
/// when some anchors have no positives.
ContrastiveLoss inter_subject_contrastive(std::span<const ForwardTrace> traces, std::span<const int> subjects,
                                          std::span<const int> labels, double temperature, SamplingMode mode,
                                          bool normalize);

/// cls + lambda * contrast. A zero lambda skips the contrastive term (reported as 0).
LossBreakdown total_loss(std::span<const ForwardTrace> traces, std::span<const int> subjects,
                         std::span<const int> labels, const LossHyperparams& hp);

struct LossGradients {
    LossBreakdown loss;
    GradientBundle grads;
};

/// Buffers reused across calls to loss_and_gradients.
class LossWorkspace {
public:
    LossWorkspace();
    ~LossWorkspace();
    LossWorkspace(LossWorkspace&&) noexcept;
    LossWorkspace& operator=(LossWorkspace&&) noexcept;

    struct Buffers;
    Buffers& buffers() { return *buffers_; }

private:
    std::unique_ptr<Buffers> buffers_;
};

/// Forward + exact backward of the total loss over one batch.
/// Throws NumericError naming the term that became non-finite.
LossGradients loss_and_gradients(const ModelParams& params, std::span<const Sample* const> batch,
                                 const LossHyperparams& hp);
LossGradients loss_and_gradients(const ModelParams& params, std::span<const Sample* const> batch,
                                 const LossHyperparams& hp, LossWorkspace& workspace);

GradientBundle total_loss_gradients(const ModelParams& params, std::span<const Sample* const> batch,
                                    const LossHyperparams& hp);

/// Loss value only, via the same batched forward pass (used by gradient checks).
LossBreakdown batch_loss(const ModelParams& params, std::span<const Sample* const> batch, const LossHyperparams& hp);

}  // namespace isc
