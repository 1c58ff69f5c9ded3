#include "msmbd/tensor.hpp"

#include "msmbd/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace msmbd {

namespace {

std::size_t shape_product(const Shape& shape)
{
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <typename F>
Tensor map(const Tensor& x, F f, const char* op)
{
    std::vector<double> out(x.size());
    std::transform(x.data().begin(), x.data().end(), out.begin(), f);
    Tensor t(x.shape(), std::move(out));
    ensure_finite(t, op);
    return t;
}

} // namespace

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw DimensionError("ragged matrix literal");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const
{
    if (rank() == 1) {
        return 1;
    }
    if (rank() != 2) {
        throw DimensionError("rows(): expected rank 1 or 2, got " + shape_str(shape_));
    }
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (rank() == 1) {
        return shape_[0];
    }
    if (rank() != 2) {
        throw DimensionError("cols(): expected rank 1 or 2, got " + shape_str(shape_));
    }
    return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::row(std::size_t r) const
{
    const std::size_t c = cols();
    if (r >= rows()) {
        throw DimensionError("row index out of range");
    }
    return Tensor({c}, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                                           data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mask::Mask(std::size_t rows, std::size_t cols, bool fill) : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0)
{
}

Mask Mask::from_keys(std::size_t rows, const std::vector<bool>& keys)
{
    Mask m(rows, keys.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < keys.size(); ++c) {
            m.set(r, c, keys[c]);
        }
    }
    return m;
}

void ensure_finite(const Tensor& t, const char* op)
{
    if (!t.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite value in result");
    }
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    ensure_finite(out, "matmul");
    return out;
}

Tensor transpose(const Tensor& m)
{
    const std::size_t r = m.rows();
    const std::size_t c = m.cols();
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out.at(j, i) = m.at(i, j);
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::plus<>{});
    Tensor t(a.shape(), std::move(out));
    ensure_finite(t, "add");
    return t;
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::minus<>{});
    Tensor t(a.shape(), std::move(out));
    ensure_finite(t, "sub");
    return t;
}

Tensor hadamard(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "hadamard");
    std::vector<double> out(a.size());
    std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::multiplies<>{});
    Tensor t(a.shape(), std::move(out));
    ensure_finite(t, "hadamard");
    return t;
}

Tensor scale(const Tensor& a, double s)
{
    return map(a, [s](double v) { return v * s; }, "scale");
}

Tensor add_row_bias(const Tensor& m, const Tensor& bias)
{
    const std::size_t c = m.cols();
    if (bias.size() != c) {
        throw DimensionError("add_row_bias: bias length " + std::to_string(bias.size()) + " vs " +
                             std::to_string(c) + " columns");
    }
    Tensor out = m;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out.at(i, j) += bias[j];
        }
    }
    ensure_finite(out, "add_row_bias");
    return out;
}

Tensor softmax_rows(const Tensor& m, const Mask* mask)
{
    const std::size_t r = m.rows();
    const std::size_t c = m.cols();
    if (c == 0) {
        throw DimensionError("softmax_rows: need at least one column");
    }
    if (mask && (mask->rows() != r || mask->cols() != c)) {
        throw DimensionError("softmax_rows: mask shape does not match input");
    }
    ensure_finite(m, "softmax_rows");
    Tensor out(m.shape());
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            if (!mask || mask->allowed(i, j)) {
                mx = std::max(mx, m.at(i, j));
            }
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw DegenerateMaskError("softmax_rows: row " + std::to_string(i) + " is fully masked");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            // masked entries stay exactly 0, i.e. exp of a -inf score
            if (!mask || mask->allowed(i, j)) {
                const double e = std::exp(m.at(i, j) - mx);
                out.at(i, j) = e;
                total += e;
            }
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < c; ++j) {
            out.at(i, j) *= inv;
        }
    }
    return out;
}

double std_normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double gelu(double x)
{
    return x * std_normal_cdf(x);
}

double gelu_derivative(double x)
{
    const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return std_normal_cdf(x) + x * pdf;
}

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor gelu(const Tensor& x)
{
    return map(x, [](double v) { return gelu(v); }, "gelu");
}

Tensor sigmoid(const Tensor& x)
{
    return map(x, [](double v) { return sigmoid(v); }, "sigmoid");
}

} // namespace msmbd
