#pragma once

#include <stdexcept>
#include <string>

namespace slanc {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

// A scale fell below the degenerate threshold (2^-24).
class DegenerateScaleError : public Error {
public:
    DegenerateScaleError(std::string norm_id, double value)
        : Error("degenerate scale " + std::to_string(value) +
                (norm_id.empty() ? std::string{} : " at norm '" + norm_id + "'")),
          norm_id_(std::move(norm_id)), value_(value) {}

    const std::string& norm_id() const noexcept { return norm_id_; }
    double value() const noexcept { return value_; }

private:
    std::string norm_id_;
    double value_;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(double best_estimate, int iterations)
        : Error("power iteration did not converge after " + std::to_string(iterations) +
                " iterations (best estimate " + std::to_string(best_estimate) + ")"),
          best_estimate_(best_estimate), iterations_(iterations) {}

    double best_estimate() const noexcept { return best_estimate_; }
    int iterations() const noexcept { return iterations_; }

private:
    double best_estimate_;
    int iterations_;
};

class FingerprintMismatchError : public Error {
public:
    using Error::Error;
};

} // namespace slanc
