#pragma once

#include <span>
#include <vector>

#include "eigen_view.hpp"
#include "isc/model.hpp"

namespace isc::detail {

/// Everything the backward pass needs from one batched forward pass.
/// Per-timestep caches are stacked: rows [t*B, (t+1)*B) hold step t.
struct BatchActivations {
    std::size_t batch = 0;
    std::size_t steps = 0;
    std::vector<const Matrix*> inputs;  // D x T each, not owned
    RowMat h_prev;     // (T*B) x D_enc
    RowMat reset;      // (T*B) x D_enc
    RowMat update;     // (T*B) x D_enc
    RowMat candidate;  // (T*B) x D_enc
    RowMat z;          // B x D_enc
    RowMat embed_pre;  // B x D_emb, before ReLU
    RowMat w;          // B x D_emb
    RowMat probs;      // B x K

    // Per-step scratch.
    RowMat x_step;     // B x D
    RowMat gates;      // B x 3*D_enc, pre-activations of [reset | update | candidate]
    RowMat gated;      // B x D_enc
};

/// Scratch for backward_batch.
struct BackwardScratch {
    RowMat d_gates;    // B x 3*D_enc
    RowMat dh, dhp;    // B x D_enc
    RowMat gated_grad;
    RowMat gated_prev;
    RowMat x_step;
    RowMat dw_all;     // 3*D_enc x D
    RowMat du_ru;      // 2*D_enc x D_enc
};

/// Fills `act` (reusing its buffers). Throws ShapeError naming the first
/// sample whose shape does not match.
void forward_batch(const ModelParams& params, std::span<const Matrix* const> inputs, bool keep_gate_cache,
                   BatchActivations& act);
BatchActivations forward_batch(const ModelParams& params, std::span<const Matrix* const> inputs,
                               bool keep_gate_cache);

/// Back-propagates dL/dlogits (B x K) plus an extra dL/dz (B x D_enc, may be empty).
GradientBundle backward_batch(const ModelParams& params, const BatchActivations& act, const RowMat& d_logits,
                              const RowMat& d_z_extra, BackwardScratch& scratch);

}  // namespace isc::detail
