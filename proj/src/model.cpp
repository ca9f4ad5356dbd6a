#include "isc/model.hpp"

#include <cmath>
#include <map>
#include <string>

#include "binary_io.hpp"
#include "isc/errors.hpp"
#include "isc/random.hpp"
#include "network.hpp"

namespace isc {

namespace {

constexpr std::string_view kCheckpointMagic = "EEGM";
constexpr std::uint32_t kCheckpointVersion = 1;

template <class Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
    return 1.0 / (1.0 + (-x).exp());
}

// tanh(x) = 2 sigmoid(2x) - 1; Eigen vectorizes exp for doubles but not tanh.
template <class Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
    return 2.0 / (1.0 + (-2.0 * x).exp()) - 1.0;
}

void require_len(std::span<const double> v, std::size_t n, const char* who) {
    if (v.size() != n) {
        throw ShapeError(std::string(who) + ": expected length " + std::to_string(n) + ", got " +
                         std::to_string(v.size()));
    }
}

}  // namespace

std::size_t ParameterTensors::parameter_count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const Matrix& m) { n += m.size(); });
    return n;
}

ModelDims ParameterTensors::dims() const {
    return {w_reset.cols(), w_reset.rows(), w_embed.rows(), w_classify.rows()};
}

ModelParams zero_params(const ModelDims& d) {
    ModelParams p;
    p.w_reset = p.w_update = p.w_candidate = Matrix(d.encoder_dim, d.input_channels);
    p.u_reset = p.u_update = p.u_candidate = Matrix(d.encoder_dim, d.encoder_dim);
    p.b_reset = p.b_update = p.b_candidate = Matrix(d.encoder_dim, 1);
    p.w_embed = Matrix(d.embedding_dim, d.encoder_dim);
    p.b_embed = Matrix(d.embedding_dim, 1);
    p.w_classify = Matrix(d.n_classes, d.embedding_dim);
    p.b_classify = Matrix(d.n_classes, 1);
    return p;
}

GradientBundle zeros_like(const ModelParams& params) {
    GradientBundle g;
    static_cast<ParameterTensors&>(g) = zero_params(params.dims());
    return g;
}

Vector flatten(const ParameterTensors& tensors) {
    Vector out;
    out.reserve(tensors.parameter_count());
    tensors.for_each([&](std::string_view, const Matrix& m) { out.insert(out.end(), m.values().begin(), m.values().end()); });
    return out;
}

void unflatten(std::span<const double> values, ParameterTensors& tensors) {
    if (values.size() != tensors.parameter_count()) throw ShapeError("unflatten: length does not match parameters");
    std::size_t at = 0;
    tensors.for_each([&](std::string_view, Matrix& m) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(at), m.size(), m.values().begin());
        at += m.size();
    });
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    if (dims.input_channels == 0 || dims.encoder_dim == 0 || dims.embedding_dim == 0 || dims.n_classes == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    ModelParams p = zero_params(dims);
    Rng rng = make_rng(seed, {0x1417});
    p.for_each([&](std::string_view name, Matrix& m) {
        if (name.starts_with("b_")) return;
        const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        std::uniform_real_distribution<double> dist(-a, a);
        for (double& v : m.values()) v = dist(rng);
    });
    return p;
}

namespace detail {

namespace {

// Columns t of every sample, as a B x D block.
void gather_step(const std::vector<const Matrix*>& inputs, std::size_t t, RowMat& out) {
    const auto B = static_cast<Eigen::Index>(inputs.size());
    for (Eigen::Index b = 0; b < B; ++b) {
        const Matrix& x = *inputs[static_cast<std::size_t>(b)];
        const double* src = x.values().data() + t;
        const std::size_t T = x.cols();
        double* dst = out.row(b).data();
        for (std::size_t c = 0; c < x.rows(); ++c) dst[c] = src[c * T];
    }
}

// [W_r; W_u; W_h] and [U_r; U_u], stacked so each step needs fewer, larger products.
struct StackedWeights {
    RowMat w_all;   // 3H x D
    RowVec b_all;   // 3H
    RowMat u_ru;    // 2H x H

    explicit StackedWeights(const ModelParams& p) {
        const auto H = static_cast<Eigen::Index>(p.w_reset.rows());
        const auto D = static_cast<Eigen::Index>(p.w_reset.cols());
        w_all.resize(3 * H, D);
        w_all << view(p.w_reset), view(p.w_update), view(p.w_candidate);
        b_all.resize(3 * H);
        b_all << row_view(p.b_reset), row_view(p.b_update), row_view(p.b_candidate);
        u_ru.resize(2 * H, H);
        u_ru << view(p.u_reset), view(p.u_update);
    }
};

}  // namespace

void forward_batch(const ModelParams& params, std::span<const Matrix* const> inputs, bool keep_gate_cache,
                   BatchActivations& act) {
    const ModelDims d = params.dims();
    const auto B = static_cast<Eigen::Index>(inputs.size());
    if (B == 0) throw ShapeError("forward: empty batch");
    const std::size_t T = inputs[0]->cols();
    if (T == 0) throw ShapeError("forward: sample 0 has no timesteps");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i]->rows() != d.input_channels || inputs[i]->cols() != T) {
            throw ShapeError("forward: sample " + std::to_string(i) + " has shape " +
                             std::to_string(inputs[i]->rows()) + "x" + std::to_string(inputs[i]->cols()) +
                             ", expected " + std::to_string(d.input_channels) + "x" + std::to_string(T));
        }
    }
    const auto H = static_cast<Eigen::Index>(d.encoder_dim);
    const auto TB = static_cast<Eigen::Index>(T) * B;
    const StackedWeights sw(params);
    const auto U_h = view(params.u_candidate);

    act.batch = inputs.size();
    act.steps = T;
    act.inputs.assign(inputs.begin(), inputs.end());
    const Eigen::Index cached = keep_gate_cache ? TB : 0;
    act.h_prev.resize(cached, H);
    act.reset.resize(cached, H);
    act.update.resize(cached, H);
    act.candidate.resize(cached, H);
    act.x_step.resize(B, static_cast<Eigen::Index>(d.input_channels));
    act.gates.resize(B, 3 * H);
    act.gated.resize(B, H);

    RowMat& h = act.z;
    h.setZero(B, H);
    for (std::size_t t = 0; t < T; ++t) {
        gather_step(act.inputs, t, act.x_step);
        auto ru = act.gates.leftCols(2 * H);
        auto c = act.gates.rightCols(H);
        act.gates.noalias() = act.x_step * sw.w_all.transpose();
        act.gates.rowwise() += sw.b_all;
        ru.noalias() += h * sw.u_ru.transpose();
        ru = sigmoid(ru.array());
        act.gated = act.gates.leftCols(H).cwiseProduct(h);
        c.noalias() += act.gated * U_h.transpose();
        c = fast_tanh(c.array());
        if (keep_gate_cache) {
            const Eigen::Index row0 = static_cast<Eigen::Index>(t) * B;
            act.h_prev.middleRows(row0, B) = h;
            act.reset.middleRows(row0, B) = act.gates.leftCols(H);
            act.update.middleRows(row0, B) = act.gates.middleCols(H, H);
            act.candidate.middleRows(row0, B) = c;
        }
        h.array() += act.gates.middleCols(H, H).array() * (c.array() - h.array());  // (1 - u) h + u c
    }

    act.embed_pre.resize(B, static_cast<Eigen::Index>(d.embedding_dim));
    act.embed_pre.noalias() = act.z * view(params.w_embed).transpose();
    act.embed_pre.rowwise() += row_view(params.b_embed);
    act.w = act.embed_pre.cwiseMax(0.0);
    RowMat logits = (act.w * view(params.w_classify).transpose()).rowwise() + row_view(params.b_classify);
    act.probs.resize(B, logits.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
        const Vector p = stable_softmax(std::span<const double>(logits.row(b).data(), static_cast<std::size_t>(logits.cols())));
        for (Eigen::Index k = 0; k < logits.cols(); ++k) act.probs(b, k) = p[static_cast<std::size_t>(k)];
    }
}

BatchActivations forward_batch(const ModelParams& params, std::span<const Matrix* const> inputs,
                               bool keep_gate_cache) {
    BatchActivations act;
    forward_batch(params, inputs, keep_gate_cache, act);
    return act;
}

GradientBundle backward_batch(const ModelParams& params, const BatchActivations& act, const RowMat& d_logits,
                              const RowMat& d_z_extra, BackwardScratch& scratch) {
    GradientBundle g = zeros_like(params);
    const auto B = static_cast<Eigen::Index>(act.batch);
    const auto H = act.z.cols();
    const auto D = static_cast<Eigen::Index>(params.w_reset.cols());
    const auto TB = static_cast<Eigen::Index>(act.steps) * B;
    if (act.reset.rows() != TB) throw ShapeError("backward: forward pass ran without gate cache");
    const StackedWeights sw(params);
    const auto U_h = view(params.u_candidate);

    // Classifier and embedding.
    view(g.w_classify).noalias() = d_logits.transpose() * act.w;
    row_view(g.b_classify) = d_logits.colwise().sum();
    RowMat d_pre = d_logits * view(params.w_classify);
    d_pre = (act.embed_pre.array() > 0.0).select(d_pre, 0.0);
    view(g.w_embed).noalias() = d_pre.transpose() * act.z;
    row_view(g.b_embed) = d_pre.colwise().sum();

    auto& dh = scratch.dh;
    auto& dhp = scratch.dhp;
    dh.noalias() = d_pre * view(params.w_embed);
    if (d_z_extra.size() != 0) dh += d_z_extra;

    // Back-propagation through time.
    scratch.d_gates.resize(B, 3 * H);
    scratch.gated_grad.resize(B, H);
    scratch.gated_prev.resize(B, H);
    scratch.x_step.resize(B, D);
    scratch.dw_all.setZero(3 * H, D);
    scratch.du_ru.setZero(2 * H, H);
    RowVec db_all = RowVec::Zero(3 * H);
    auto du_h = view(g.u_candidate);
    for (std::size_t step = act.steps; step-- > 0;) {
        const Eigen::Index row0 = static_cast<Eigen::Index>(step) * B;
        const auto hp = act.h_prev.middleRows(row0, B);
        const auto r = act.reset.middleRows(row0, B).array();
        const auto u = act.update.middleRows(row0, B).array();
        const auto c = act.candidate.middleRows(row0, B).array();
        auto ar = scratch.d_gates.leftCols(H);
        auto au = scratch.d_gates.middleCols(H, H);
        auto ac = scratch.d_gates.rightCols(H);

        ac = (dh.array() * u * (1.0 - c * c)).matrix();
        au = (dh.array() * (c - hp.array()) * u * (1.0 - u)).matrix();
        dhp = (dh.array() * (1.0 - u)).matrix();
        scratch.gated_grad.noalias() = ac * U_h;
        ar = (scratch.gated_grad.array() * hp.array() * r * (1.0 - r)).matrix();
        dhp.array() += scratch.gated_grad.array() * r;
        dhp.noalias() += scratch.d_gates.leftCols(2 * H) * sw.u_ru;

        gather_step(act.inputs, step, scratch.x_step);
        scratch.dw_all.noalias() += scratch.d_gates.transpose() * scratch.x_step;
        scratch.du_ru.noalias() += scratch.d_gates.leftCols(2 * H).transpose() * hp;
        scratch.gated_prev = (r * hp.array()).matrix();
        du_h.noalias() += ac.transpose() * scratch.gated_prev;
        db_all += scratch.d_gates.colwise().sum();
        dh.swap(dhp);
    }

    view(g.w_reset) = scratch.dw_all.topRows(H);
    view(g.w_update) = scratch.dw_all.middleRows(H, H);
    view(g.w_candidate) = scratch.dw_all.bottomRows(H);
    view(g.u_reset) = scratch.du_ru.topRows(H);
    view(g.u_update) = scratch.du_ru.bottomRows(H);
    row_view(g.b_reset) = db_all.head(H);
    row_view(g.b_update) = db_all.segment(H, H);
    row_view(g.b_candidate) = db_all.tail(H);
    return g;
}

}  // namespace detail

Vector gru_forward(const ModelParams& params, const Matrix& x) {
    const Matrix* one[] = {&x};
    const auto act = detail::forward_batch(params, one, false);
    return Vector(act.z.data(), act.z.data() + act.z.size());
}

Vector embed(const ModelParams& params, std::span<const double> z) {
    require_len(z, params.w_embed.cols(), "embed");
    Vector out(params.w_embed.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::max(0.0, dot(params.w_embed.row(i), z) + params.b_embed(i, 0));
    }
    return out;
}

Vector classify(const ModelParams& params, std::span<const double> w) {
    require_len(w, params.w_classify.cols(), "classify");
    Vector logits(params.w_classify.rows());
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = dot(params.w_classify.row(k), w) + params.b_classify(k, 0);
    return stable_softmax(logits);
}

std::vector<ForwardTrace> model_forward(const ModelParams& params, std::span<const Sample* const> batch) {
    std::vector<const Matrix*> inputs;
    inputs.reserve(batch.size());
    for (const Sample* s : batch) inputs.push_back(&s->data);
    const auto act = detail::forward_batch(params, inputs, false);
    std::vector<ForwardTrace> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto b = static_cast<Eigen::Index>(i);
        out[i].z.assign(act.z.row(b).begin(), act.z.row(b).end());
        out[i].w.assign(act.w.row(b).begin(), act.w.row(b).end());
        out[i].p.assign(act.probs.row(b).begin(), act.probs.row(b).end());
    }
    return out;
}

std::vector<ForwardTrace> model_forward(const ModelParams& params, std::span<const Sample> batch) {
    std::vector<const Sample*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& s : batch) ptrs.push_back(&s);
    return model_forward(params, std::span<const Sample* const>(ptrs));
}

GradientBundle finite_difference_grad(const std::function<double(const ModelParams&)>& loss,
                                      const ModelParams& params, double h) {
    ModelParams probe = params;
    const Vector flat = flatten(params);
    const Vector grad = finite_difference_grad(
        [&](std::span<const double> x) {
            unflatten(x, probe);
            return loss(probe);
        },
        flat, h);
    GradientBundle g = zeros_like(params);
    unflatten(grad, g);
    return g;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    detail::ByteWriter w(path);
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    params.for_each([&](std::string_view name, const Matrix& m) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(m.rows()));
        w.u32(static_cast<std::uint32_t>(m.cols()));
        for (double v : m.values()) w.f64(v);
    });
    w.finish(path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    detail::ByteReader r(path);
    if (r.bytes(4, "magic") != kCheckpointMagic) throw FormatError("bad magic, expected \"EEGM\"", 0);
    if (const auto v = r.u32("version"); v != kCheckpointVersion) {
        throw FormatError("unsupported EEGM version " + std::to_string(v), 4);
    }

    std::map<std::string, Matrix, std::less<>> tensors;
    while (!r.at_end()) {
        const std::uint64_t at = r.offset();
        const std::uint16_t len = r.u16("tensor name length");
        std::string name = r.bytes(len, "tensor name");
        const std::uint32_t rows = r.u32("tensor rows");
        const std::uint32_t cols = r.u32("tensor cols");
        std::vector<double> values(std::size_t(rows) * cols);
        for (double& v : values) {
            const std::uint64_t value_at = r.offset();
            v = r.f64("tensor values");
            if (!std::isfinite(v)) throw FormatError("non-finite value in tensor " + name, value_at);
        }
        if (!tensors.emplace(name, Matrix(rows, cols, std::move(values))).second) {
            throw FormatError("duplicate tensor " + name, at);
        }
    }

    ModelParams p;
    p.for_each([&](std::string_view name, Matrix& m) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("missing tensor " + std::string(name), r.offset());
        m = std::move(it->second);
        tensors.erase(it);
    });
    if (!tensors.empty()) throw FormatError("unknown tensor " + tensors.begin()->first, r.offset());

    const ModelParams expected = zero_params(p.dims());
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    expected.for_each([&](std::string_view, const Matrix& m) { shapes.emplace_back(m.rows(), m.cols()); });
    std::size_t i = 0;
    p.for_each([&](std::string_view name, const Matrix& m) {
        if (shapes[i++] != std::pair{m.rows(), m.cols()}) {
            throw FormatError("tensor " + std::string(name) + " has a shape inconsistent with the model", r.offset());
        }
    });
    return p;
}

}  // namespace isc
