#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selffed/common.hpp"

namespace selffed {

/// Dense row-major tensor of 64-bit floats with an optional gradient
/// buffer of the same extent. The single numeric carrier of the library.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty == no gradient attached

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape_in, double fill = 0.0);

    static Tensor scalar(double v);
    static Tensor from(std::vector<int64_t> shape_in, std::vector<double> values);

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    // 2-D accessors (row-major)
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    bool all_finite() const;
    void ensure_grad();  // allocate zeroed grad buffer if absent
};

int64_t shape_numel(std::span<const int64_t> shape);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(std::span<const int64_t> shape);

/// Throws NonFinite if any entry of t is NaN or infinite.
void require_finite(const Tensor& t, const std::string& where);

bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace selffed
