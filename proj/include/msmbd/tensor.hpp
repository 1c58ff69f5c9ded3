#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace msmbd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Rank 1 and rank 2 are the only ranks
/// the model uses, but the container itself does not restrict rank.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Matrix view helpers: rank-1 tensors read as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    Tensor reshaped(Shape shape) const;
    Tensor row(std::size_t r) const;

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Row-major boolean matrix; true marks a position that may be attended.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t rows, std::size_t cols, bool fill = true);

    /// Broadcasts a key-validity vector to every query row.
    static Mask from_keys(std::size_t rows, const std::vector<bool>& keys);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool allowed(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<unsigned char> bits_;
};

// ---------------------------------------------------------------------------
// Kernels. Each returns a fresh tensor and throws NumericError when the
// result would contain a NaN or infinity.
// ---------------------------------------------------------------------------

void ensure_finite(const Tensor& t, const char* op);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds `bias` (length = cols) to every row of `m`.
Tensor add_row_bias(const Tensor& m, const Tensor& bias);

/// Row-wise softmax with the row maximum subtracted before exponentiation.
/// Masked entries come out as exactly 0.
Tensor softmax_rows(const Tensor& m, const Mask* mask = nullptr);

double std_normal_cdf(double x);
double gelu(double x);
double gelu_derivative(double x);
double sigmoid(double x);

/// Exact x * Phi(x), Phi via erfc.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

} // namespace msmbd
