#include "selffed/probe.hpp"

#include <cmath>

namespace selffed {

namespace {

void softmax_inplace(std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : z) v /= s;
}

}  // namespace

std::vector<double> LinearProbe::logits(std::span<const double> feature) const {
    std::vector<double> z(static_cast<size_t>(classes), 0.0);
    for (int64_t c = 0; c < classes; ++c) {
        double acc = weights[static_cast<size_t>(dim * classes + c)];  // bias row
        for (int64_t d = 0; d < dim; ++d) {
            const double x = (feature[static_cast<size_t>(d)] - mean[static_cast<size_t>(d)]) *
                             inv_std[static_cast<size_t>(d)];
            acc += x * weights[static_cast<size_t>(d * classes + c)];
        }
        z[static_cast<size_t>(c)] = acc;
    }
    return z;
}

int64_t LinearProbe::predict(std::span<const double> feature) const {
    const auto z = logits(feature);
    int64_t best = 0;
    for (int64_t c = 1; c < classes; ++c) {
        if (z[static_cast<size_t>(c)] > z[static_cast<size_t>(best)]) best = c;
    }
    return best;
}

LinearProbe fit_linear_probe(const std::vector<Tensor>& features,
                             const std::vector<int64_t>& labels, int64_t classes,
                             int iters, double lr) {
    if (features.empty() || features.size() != labels.size()) {
        throw SizeMismatch("probe fit needs matching non-empty features and labels");
    }
    const int64_t n = static_cast<int64_t>(features.size());
    const int64_t dim = features[0].numel();

    LinearProbe probe;
    probe.dim = dim;
    probe.classes = classes;
    probe.mean.assign(static_cast<size_t>(dim), 0.0);
    probe.inv_std.assign(static_cast<size_t>(dim), 1.0);
    probe.weights.assign(static_cast<size_t>((dim + 1) * classes), 0.0);

    for (const auto& f : features) {
        for (int64_t d = 0; d < dim; ++d) probe.mean[static_cast<size_t>(d)] += f.data[static_cast<size_t>(d)];
    }
    for (auto& m : probe.mean) m /= static_cast<double>(n);
    std::vector<double> var(static_cast<size_t>(dim), 0.0);
    for (const auto& f : features) {
        for (int64_t d = 0; d < dim; ++d) {
            const double c = f.data[static_cast<size_t>(d)] - probe.mean[static_cast<size_t>(d)];
            var[static_cast<size_t>(d)] += c * c;
        }
    }
    for (int64_t d = 0; d < dim; ++d) {
        probe.inv_std[static_cast<size_t>(d)] =
            1.0 / std::sqrt(var[static_cast<size_t>(d)] / static_cast<double>(n) + 1e-8);
    }

    std::vector<double> x(static_cast<size_t>(n * dim));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t d = 0; d < dim; ++d) {
            x[static_cast<size_t>(i * dim + d)] =
                (features[static_cast<size_t>(i)].data[static_cast<size_t>(d)] -
                 probe.mean[static_cast<size_t>(d)]) *
                probe.inv_std[static_cast<size_t>(d)];
        }
    }

    std::vector<double> grad(probe.weights.size());
    std::vector<double> z(static_cast<size_t>(classes));
    for (int it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            const double* xi = &x[static_cast<size_t>(i * dim)];
            for (int64_t c = 0; c < classes; ++c) {
                double acc = probe.weights[static_cast<size_t>(dim * classes + c)];
                for (int64_t d = 0; d < dim; ++d) {
                    acc += xi[d] * probe.weights[static_cast<size_t>(d * classes + c)];
                }
                z[static_cast<size_t>(c)] = acc;
            }
            softmax_inplace(z);
            z[static_cast<size_t>(labels[static_cast<size_t>(i)])] -= 1.0;
            for (int64_t c = 0; c < classes; ++c) {
                const double gz = z[static_cast<size_t>(c)];
                for (int64_t d = 0; d < dim; ++d) {
                    grad[static_cast<size_t>(d * classes + c)] += gz * xi[d];
                }
                grad[static_cast<size_t>(dim * classes + c)] += gz;
            }
        }
        const double step = lr / static_cast<double>(n);
        for (size_t k = 0; k < probe.weights.size(); ++k) {
            probe.weights[k] -= step * grad[k];
        }
    }
    return probe;
}

double probe_accuracy(const LinearProbe& probe, const std::vector<Tensor>& features,
                      const std::vector<int64_t>& labels) {
    if (features.empty()) return 0.0;
    int64_t correct = 0;
    for (size_t i = 0; i < features.size(); ++i) {
        if (probe.predict(features[i].data) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(features.size());
}

}  // namespace selffed
