#include "trajlens/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "trajlens/errors.hpp"

namespace trajlens {

namespace {

std::atomic<bool> g_checked{false};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

void maybe_check(const Tensor& t, const char* op) {
    if (g_checked.load(std::memory_order_relaxed) && !all_finite(t)) {
        throw DivergenceError(std::string("non-finite value produced by ") + op);
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
    }
}

Tensor Tensor::from_values(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

void set_checked_mode(bool enabled) { g_checked.store(enabled); }
bool checked_mode() { return g_checked.load(); }

bool all_finite(const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul expects rank-2 tensors, got " + a.shape_string() +
                             " and " + b.shape_string());
    }
    const std::size_t m = a.extent(0), k = a.extent(1);
    const std::size_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw DimensionError("matmul inner dimensions disagree: " + a.shape_string() +
                             " vs " + b.shape_string());
    }
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    // i-k-j loop order: contiguous inner access, and each out[i][j] still
    // accumulates over k strictly left to right.
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            const double* pbk = pb + kk * n;
            double* poi = po + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                poi[j] += aik * pbk[j];
            }
        }
    }
    maybe_check(out, "matmul");
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
    if (input.rank() != 3 || kernels.rank() != 4) {
        throw DimensionError("conv2d expects input[C x H x W], kernels[O x C x kh x kw]");
    }
    if (stride == 0) throw DimensionError("conv2d stride must be positive");
    const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t cout = kernels.extent(0);
    const std::size_t kcin = kernels.extent(1);
    const std::size_t kh = kernels.extent(2), kw = kernels.extent(3);
    if (kcin != cin) {
        throw DimensionError("conv2d channel mismatch: input has " + std::to_string(cin) +
                             ", kernels expect " + std::to_string(kcin));
    }
    const std::size_t ph = h + 2 * padding, pw = w + 2 * padding;
    if (kh > ph || kw > pw) {
        throw DimensionError("conv2d kernel larger than padded input");
    }
    if ((ph - kh) % stride != 0 || (pw - kw) % stride != 0) {
        throw DimensionError("conv2d output extent is not integral for stride " +
                             std::to_string(stride));
    }
    const std::size_t oh = (ph - kh) / stride + 1;
    const std::size_t ow = (pw - kw) / stride + 1;

    Tensor out({cout, oh, ow});
    const double* pin = input.data();
    const double* pk = kernels.data();
    double* po = out.data();
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t u = 0; u < kh; ++u) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride + u) -
                            static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t v = 0; v < kw; ++v) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride + v) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += pin[(c * h + iy) * w + ix] *
                                   pk[((o * cin + c) * kh + u) * kw + v];
                        }
                    }
                }
                po[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    maybe_check(out, "conv2d");
    return out;
}

namespace {

Tensor zip(const Tensor& a, const Tensor& b, const char* op, double (*fn)(double, double)) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() +
                             " vs " + b.shape_string());
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    maybe_check(out, op);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
    maybe_check(out, "scale");
    return out;
}

Tensor map(const Tensor& a, const std::function<double(double)>& fn) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
    maybe_check(out, "map");
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot length mismatch: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double dot(const Tensor& a, const Tensor& b) { return dot(a.values(), b.values()); }

double sq_norm(const std::vector<double>& a) { return dot(a, a); }

}  // namespace trajlens
