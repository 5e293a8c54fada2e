#include "selffed/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace selffed {

Tensor::Tensor(std::vector<int64_t> shape_in, double fill) : shape(std::move(shape_in)) {
    const int64_t n = shape_numel(shape);
    data.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape_in, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(shape_in);
    if (shape_numel(t.shape) != static_cast<int64_t>(values.size())) {
        throw ShapeMismatch("Tensor::from: " + shape_str(t.shape) + " does not hold " +
                            std::to_string(values.size()) + " values");
    }
    t.data = std::move(values);
    return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

double& Tensor::at(int64_t r, int64_t c) {
    return data[static_cast<size_t>(r * shape.back() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * shape.back() + c)];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

int64_t shape_numel(std::span<const int64_t> shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeMismatch("non-positive extent in " + shape_str(shape));
        n *= e;
    }
    return n;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

std::string shape_str(std::span<const int64_t> shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void require_finite(const Tensor& t, const std::string& where) {
    if (!t.all_finite()) throw NonFinite("non-finite value produced by " + where);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.data.size() != b.data.size()) return HUGE_VAL;
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    }
    return m;
}

}  // namespace selffed
