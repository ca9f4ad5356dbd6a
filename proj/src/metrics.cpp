#include "isc/metrics.hpp"

#include <algorithm>
#include <string>

#include "isc/errors.hpp"

namespace isc {

double topk_accuracy(std::span<const ForwardTrace> traces, std::span<const int> labels, std::size_t k) {
    if (traces.empty()) throw DataError("topk_accuracy: no predictions");
    if (traces.size() != labels.size()) throw ShapeError("topk_accuracy: labels and traces differ in length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& p = traces[i].p;
        if (k < 1 || k > p.size()) throw RangeError("topk_accuracy: k must lie in [1, K]");
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= p.size()) throw IndexError("topk_accuracy: label out of range");
        const double py = p[static_cast<std::size_t>(y)];
        std::size_t rank = 0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            if (p[c] > py || (p[c] == py && c < static_cast<std::size_t>(y))) ++rank;
        }
        if (rank < k) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(traces.size());
}

Accuracy evaluate_accuracy(const ModelParams& params, std::span<const Sample> samples) {
    const auto traces = model_forward(params, samples);
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.class_label);
    const std::size_t K = params.w_classify.rows();
    return {topk_accuracy(traces, labels, 1), topk_accuracy(traces, labels, std::min<std::size_t>(3, K))};
}

}  // namespace isc
