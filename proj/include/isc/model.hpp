#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "isc/core_math.hpp"
#include "isc/signals.hpp"

namespace isc {

struct ModelDims {
    std::size_t input_channels = 128;  // D
    std::size_t encoder_dim = 128;     // D_enc, GRU hidden size
    std::size_t embedding_dim = 128;   // D_emb
    std::size_t n_classes = 40;        // K

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Every trainable tensor of the network. Biases are stored as n x 1 matrices.
struct ParameterTensors {
    // GRU: gates read W x_t + U h_{t-1} + b.
    Matrix w_reset, w_update, w_candidate;  // D_enc x D
    Matrix u_reset, u_update, u_candidate;  // D_enc x D_enc
    Matrix b_reset, b_update, b_candidate;  // D_enc x 1
    Matrix w_embed, b_embed;                // D_emb x D_enc, D_emb x 1
    Matrix w_classify, b_classify;          // K x D_emb, K x 1

    /// Calls f(name, tensor) in a fixed order (the checkpoint order).
    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    std::size_t parameter_count() const;
    ModelDims dims() const;
    friend bool operator==(const ParameterTensors&, const ParameterTensors&) = default;

private:
    template <class Self, class F>
    static void visit(Self& s, F& f) {
        f(std::string_view("W_r"), s.w_reset);
        f(std::string_view("W_u"), s.w_update);
        f(std::string_view("W_h"), s.w_candidate);
        f(std::string_view("U_r"), s.u_reset);
        f(std::string_view("U_u"), s.u_update);
        f(std::string_view("U_h"), s.u_candidate);
        f(std::string_view("b_r"), s.b_reset);
        f(std::string_view("b_u"), s.b_update);
        f(std::string_view("b_h"), s.b_candidate);
        f(std::string_view("W_g"), s.w_embed);
        f(std::string_view("b_g"), s.b_embed);
        f(std::string_view("W_c"), s.w_classify);
        f(std::string_view("b_c"), s.b_classify);
    }
};

struct ModelParams : ParameterTensors {};

/// Gradient of a scalar loss; one tensor per parameter tensor, same shapes.
struct GradientBundle : ParameterTensors {};

ModelParams zero_params(const ModelDims& dims);
GradientBundle zeros_like(const ModelParams& params);

/// All tensors concatenated in for_each order.
Vector flatten(const ParameterTensors& tensors);
/// Inverse of flatten; `values` must hold exactly parameter_count() entries.
void unflatten(std::span<const double> values, ParameterTensors& tensors);

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// h_T of the GRU run over the columns of x (D x T), starting from h_0 = 0.
Vector gru_forward(const ModelParams& params, const Matrix& x);
/// ReLU(W_g z + b_g).
Vector embed(const ModelParams& params, std::span<const double> z);
/// softmax(W_c w + b_c).
Vector classify(const ModelParams& params, std::span<const double> w);

struct ForwardTrace {
    Vector z;  // encoder output
    Vector w;  // embedding
    Vector p;  // class probabilities
};

std::vector<ForwardTrace> model_forward(const ModelParams& params, std::span<const Sample* const> batch);
std::vector<ForwardTrace> model_forward(const ModelParams& params, std::span<const Sample> batch);

/// Central-difference gradient of `loss` over every coordinate of `params`.
GradientBundle finite_difference_grad(const std::function<double(const ModelParams&)>& loss,
                                      const ModelParams& params, double h);

/// EEGM checkpoint: "EEGM" | version u32 = 1 | per tensor: name length u16,
/// name bytes, rows u32, cols u32, rows*cols f64. Tensors run to end of file.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace isc
