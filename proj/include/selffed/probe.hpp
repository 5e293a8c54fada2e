#pragma once

#include <span>
#include <vector>

#include "selffed/tensor.hpp"

namespace selffed {

/// Multinomial logistic probe fit on frozen features by full-batch gradient
/// descent from a zero init. Deterministic: no randomness anywhere.
/// Features are standardized with statistics estimated from the fit set.
struct LinearProbe {
    int64_t dim = 0;
    int64_t classes = 0;
    std::vector<double> mean, inv_std;
    std::vector<double> weights;  // (dim + 1) x classes, bias folded in

    std::vector<double> logits(std::span<const double> feature) const;
    int64_t predict(std::span<const double> feature) const;
};

LinearProbe fit_linear_probe(const std::vector<Tensor>& features,
                             const std::vector<int64_t>& labels, int64_t classes,
                             int iters = 300, double lr = 0.5);

double probe_accuracy(const LinearProbe& probe, const std::vector<Tensor>& features,
                      const std::vector<int64_t>& labels);

}  // namespace selffed
