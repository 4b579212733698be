#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "seqdistill/errors.hpp"

namespace seqdistill {

// Dense row-major matrix of doubles. The single numeric carrier for signals,
// weights and activations. 64-bit precision throughout: finite-difference
// gradient checks at 1e-4 relative tolerance do not survive float32.
class Matrix {
  public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_)
                throw ShapeError("Matrix::from_rows: ragged initializer");
            std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
            ++r;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    std::span<double> values() { return {data_.data(), data_.size()}; }
    std::span<const double> values() const { return {data_.data(), data_.size()}; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(m.values()); }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data() + k * b.cols();
            double* orow = out.data() + i * out.cols();
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// out += A * x
inline void matvec_acc(const Matrix& a, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + i * a.cols();
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
        out[i] += acc;
    }
}

// out += A^T * y
inline void matvec_transpose_acc(const Matrix& a, std::span<const double> y, std::span<double> out) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double yi = y[i];
        if (yi == 0.0) continue;
        const double* arow = a.data() + i * a.cols();
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += arow[j] * yi;
    }
}

// A += u * v^T
inline void outer_acc(std::span<const double> u, std::span<const double> v, Matrix& a) {
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double ui = u[i];
        if (ui == 0.0) continue;
        double* arow = a.data() + i * a.cols();
        for (std::size_t j = 0; j < v.size(); ++j) arow[j] += ui * v[j];
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double sigmoid_prime(double x) {
    double s = sigmoid(x);
    return s * (1.0 - s);
}
inline double tanh_prime(double x) {
    double t = std::tanh(x);
    return 1.0 - t * t;
}

enum class Unary { sigmoid, tanh, sigmoid_prime, tanh_prime };

inline Matrix elementwise(Unary op, const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    auto src = m.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        switch (op) {
            case Unary::sigmoid: dst[i] = sigmoid(src[i]); break;
            case Unary::tanh: dst[i] = std::tanh(src[i]); break;
            case Unary::sigmoid_prime: dst[i] = sigmoid_prime(src[i]); break;
            case Unary::tanh_prime: dst[i] = tanh_prime(src[i]); break;
        }
    }
    return out;
}

// Temperature-scaled softmax, stabilized by max subtraction. T flattens the
// distribution as it grows; T -> 0+ sharpens toward one-hot.
inline std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature) {
    if (logits.empty())
        throw DomainError("softmax_with_temperature: empty logit vector");
    if (!(temperature > 0.0))
        throw DomainError("softmax_with_temperature: temperature must be positive, got " +
                          std::to_string(temperature));
    if (!all_finite(logits))
        throw NumericError("softmax_with_temperature: non-finite logits");

    double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - max_logit) / temperature);
        sum += out[i];
    }
    for (double& p : out) p /= sum;
    return out;
}

} // namespace seqdistill
