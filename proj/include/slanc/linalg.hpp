#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace slanc::linalg {

using RealVector = std::vector<double>;

// Dense row-major double-precision matrix.
class RealMatrix {
public:
    RealMatrix() = default;
    RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    RealMatrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    RealMatrix transpose() const;
    bool all_finite() const;

    friend bool operator==(const RealMatrix&, const RealMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b);
RealMatrix add(const RealMatrix& a, const RealMatrix& b);
RealMatrix scale(const RealMatrix& m, double c);
RealMatrix identity(std::size_t d);
RealMatrix diag(std::span<const double> v);

// diag(v) * m without forming the diagonal matrix.
RealMatrix scale_rows(std::span<const double> v, const RealMatrix& m);

double frobenius_norm(const RealMatrix& m);
double euclidean_norm(std::span<const double> v);

struct PowerIterationOptions {
    double tol = 1e-6;
    int max_iter = 1000;
    std::uint64_t seed = 0x5eed;
};

struct SpectralNormResult {
    double value = 0.0;
    int iterations = 0;
};

// Largest singular value by power iteration on m^T m with a Rayleigh-quotient
// estimate. Stops once the relative change of the estimate drops below tol.
// The zero matrix returns 0 without iterating. Throws NonConvergenceError
// (carrying the best estimate) after max_iter iterations.
SpectralNormResult spectral_norm(const RealMatrix& m, const PowerIterationOptions& opts = {});

} // namespace slanc::linalg
