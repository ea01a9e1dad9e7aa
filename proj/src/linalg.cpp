#include "slanc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "slanc/errors.hpp"
#include "slanc/random.hpp"

namespace slanc::linalg {

namespace {

std::string shape_str(const RealMatrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

RealMatrix::RealMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

RealMatrix::RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("RealMatrix: data length " + std::to_string(data_.size()) +
                             " does not match " + shape_str(*this));
    }
}

RealMatrix::RealMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("RealMatrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

RealMatrix RealMatrix::transpose() const {
    RealMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool RealMatrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a) + " by " + shape_str(b));
    }
    RealMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

RealMatrix add(const RealMatrix& a, const RealMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("add: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    RealMatrix out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
    return out;
}

RealMatrix scale(const RealMatrix& m, double c) {
    RealMatrix out = m;
    for (double& v : out.data()) v *= c;
    return out;
}

RealMatrix identity(std::size_t d) {
    RealMatrix out(d, d);
    for (std::size_t i = 0; i < d; ++i) out(i, i) = 1.0;
    return out;
}

RealMatrix diag(std::span<const double> v) {
    RealMatrix out(v.size(), v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out(i, i) = v[i];
    return out;
}

RealMatrix scale_rows(std::span<const double> v, const RealMatrix& m) {
    if (v.size() != m.rows()) {
        throw DimensionError("scale_rows: vector of length " + std::to_string(v.size()) +
                             " against " + shape_str(m));
    }
    RealMatrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (double& x : out.row(r)) x *= v[r];
    return out;
}

double frobenius_norm(const RealMatrix& m) {
    double sum = 0.0;
    for (const double v : m.data()) sum += v * v;
    return std::sqrt(sum);
}

double euclidean_norm(std::span<const double> v) {
    double sum = 0.0;
    for (const double x : v) sum += x * x;
    return std::sqrt(sum);
}

SpectralNormResult spectral_norm(const RealMatrix& m, const PowerIterationOptions& opts) {
    if (m.empty()) throw DimensionError("spectral_norm: empty matrix");
    if (!(opts.tol > 0.0) || opts.max_iter < 1) throw Error("spectral_norm: tol must be > 0 and max_iter >= 1");
    if (std::all_of(m.data().begin(), m.data().end(), [](double v) { return v == 0.0; })) return {0.0, 0};

    const std::size_t n = m.cols();
    DeterministicRng rng(opts.seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);

    auto normalize = [](std::vector<double>& x) {
        const double nrm = euclidean_norm(x);
        for (double& e : x) e /= nrm;
        return nrm;
    };
    normalize(v);

    std::vector<double> mv(m.rows());
    std::vector<double> w(n);
    double lambda = 0.0;
    for (int iter = 1; iter <= opts.max_iter; ++iter) {
        // mv = m v; lambda = |m v|^2 is the Rayleigh quotient of m^T m at v.
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const auto r = m.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += r[j] * v[j];
            mv[i] = acc;
        }
        double next = 0.0;
        for (const double x : mv) next += x * x;

        // w = m^T (m v)
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const auto r = m.row(i);
            for (std::size_t j = 0; j < n; ++j) w[j] += r[j] * mv[i];
        }

        const bool converged = iter > 1 && std::fabs(next - lambda) < opts.tol * next;
        lambda = next;
        if (converged) return {std::sqrt(lambda), iter};

        if (euclidean_norm(w) == 0.0) {
            // v landed in the null space; restart from a fresh direction.
            for (double& x : v) x = rng.uniform(-1.0, 1.0);
            normalize(v);
            continue;
        }
        v = w;
        normalize(v);
    }
    throw NonConvergenceError(std::sqrt(lambda), opts.max_iter);
}

} // namespace slanc::linalg
