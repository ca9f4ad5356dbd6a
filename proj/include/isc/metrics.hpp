#pragma once

#include <span>

#include "isc/model.hpp"

namespace isc {

/// Percentage of samples whose label ranks among the k most probable classes.
/// Equal probabilities rank the lower class index first.
double topk_accuracy(std::span<const ForwardTrace> traces, std::span<const int> labels, std::size_t k);

struct Accuracy {
    double top1 = 0.0;
    double top3 = 0.0;
};

/// Top-1 and top-min(3, K) accuracy of `params` over `samples`.
Accuracy evaluate_accuracy(const ModelParams& params, std::span<const Sample> samples);

}  // namespace isc
