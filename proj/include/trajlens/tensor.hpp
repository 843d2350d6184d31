#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace trajlens {

/// Dense n-dimensional array of doubles, row-major. All compute runs in
/// f64; the f32 option exists only as a storage dtype in trajectory files.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape. Every extent must be > 0.
    explicit Tensor(std::vector<std::size_t> shape);

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    /// 1-D convenience constructor.
    static Tensor from_values(std::initializer_list<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Element access for 2-D tensors.
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Checked mode: when enabled, the ops below verify their results are finite
// and throw DivergenceError on NaN/Inf. Off by default; the training loop
// checks the loss regardless.
void set_checked_mode(bool enabled);
bool checked_mode();

bool all_finite(const Tensor& t);

/// Matrix product of a[m x k] and b[k x n]. Summation over k runs left to
/// right for every output element, so results are bit-reproducible.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation (no kernel flip) of input[C_in x H x W] with
/// kernels[C_out x C_in x kh x kw]. The output extent
/// (H + 2*padding - kh) / stride + 1 must be integral, else DimensionError.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor map(const Tensor& a, const std::function<double(double)>& fn);

/// Inner product of two equal-length flat vectors, summed left to right.
double dot(const std::vector<double>& a, const std::vector<double>& b);
double dot(const Tensor& a, const Tensor& b);

/// Squared Euclidean norm, dot(x, x).
double sq_norm(const std::vector<double>& a);

}  // namespace trajlens
