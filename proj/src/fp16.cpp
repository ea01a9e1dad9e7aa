#include "slanc/fp16.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "slanc/errors.hpp"

namespace slanc::fp16 {

namespace {

// Round a non-negative double holding an integer plus fraction to the nearest
// integer, ties to even. The subtraction q - floor(q) is exact for q < 2^52.
double round_half_even(double q) {
    const double lo = std::floor(q);
    const double frac = q - lo;
    if (frac > 0.5) return lo + 1.0;
    if (frac < 0.5) return lo;
    return std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1.0;
}

} // namespace

Fp16Bits encode(double x) {
    if (std::isnan(x)) return kCanonicalNaN;
    const std::uint16_t sign = std::signbit(x) ? 0x8000u : 0u;
    const double a = std::fabs(x);
    if (std::isinf(a) || a >= 65520.0) return Fp16Bits(static_cast<std::uint16_t>(sign | 0x7C00u));
    if (a == 0.0) return Fp16Bits(sign);

    if (a < kMinNormalValue) {
        // Quantum is 2^-24; scaling by a power of two is exact.
        const double q = round_half_even(std::ldexp(a, 24));
        return Fp16Bits(static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(q)));
    }

    int exp2 = 0;
    std::frexp(a, &exp2); // a = m * 2^exp2, m in [0.5, 1)
    const int e = exp2 - 1;
    // q in [1024, 2048]; 2048 carries into the next binade.
    const double q = round_half_even(std::ldexp(a, 10 - e));
    const auto bits = static_cast<std::uint32_t>((e + 15) << 10) + static_cast<std::uint32_t>(q) - 1024u;
    if (bits >= 0x7C00u) return Fp16Bits(static_cast<std::uint16_t>(sign | 0x7C00u));
    return Fp16Bits(static_cast<std::uint16_t>(sign | bits));
}

double decode(Fp16Bits b) {
    const bool negative = b.sign();
    const int exponent = (b.bits >> 10) & 0x1F;
    const int mantissa = b.bits & 0x3FF;
    double magnitude = 0.0;
    if (exponent == 0x1F) {
        magnitude = mantissa == 0 ? HUGE_VAL : std::numeric_limits<double>::quiet_NaN();
    } else if (exponent == 0) {
        magnitude = std::ldexp(static_cast<double>(mantissa), -24);
    } else {
        magnitude = std::ldexp(static_cast<double>(1024 + mantissa), exponent - 25);
    }
    return negative ? -magnitude : magnitude;
}

Fp16Bits add(Fp16Bits a, Fp16Bits b) { return encode(decode(a) + decode(b)); }
Fp16Bits mul(Fp16Bits a, Fp16Bits b) { return encode(decode(a) * decode(b)); }
Fp16Bits div(Fp16Bits a, Fp16Bits b) { return encode(decode(a) / decode(b)); }
Fp16Bits sqrt(Fp16Bits a) { return encode(std::sqrt(decode(a))); }

Fp16Tensor::Fp16Tensor(std::vector<std::size_t> shape, std::vector<Fp16Bits> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    const std::size_t expected =
        std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>{});
    if (expected != data_.size()) {
        throw DimensionError("Fp16Tensor: shape product " + std::to_string(expected) +
                             " does not match data length " + std::to_string(data_.size()));
    }
}

Fp16Tensor Fp16Tensor::from_values(std::span<const double> values) {
    std::vector<Fp16Bits> data(values.size());
    std::transform(values.begin(), values.end(), data.begin(), [](double v) { return encode(v); });
    return Fp16Tensor({values.size()}, std::move(data));
}

AccumulationTrace accumulate_sum_of_squares(std::span<const Fp16Bits> v) {
    if (v.empty()) throw std::invalid_argument("empty vector");

    AccumulationTrace trace;
    Fp16Bits sum = kPositiveZero;
    bool any_nonzero_input = false;
    bool every_square_zero = true;
    double exact = 0.0;
    for (const Fp16Bits x : v) {
        const Fp16Bits sq = mul(x, x);
        if (!x.is_zero()) any_nonzero_input = true;
        if (!sq.is_zero()) every_square_zero = false;
        sum = add(sum, sq);

        const double xv = decode(x);
        exact += xv * xv;
        trace.max_partial = std::max(trace.max_partial, exact);
    }
    trace.final_sum = sum;
    trace.overflowed = !sum.is_finite();
    trace.underflowed_to_zero = any_nonzero_input && every_square_zero;
    trace.exact_sum = exact;
    trace.count = v.size();
    return trace;
}

AccumulationTrace accumulate_sum_of_squares(const Fp16Tensor& v) {
    if (v.rank() != 1) throw DimensionError("accumulate_sum_of_squares expects a rank-1 tensor");
    return accumulate_sum_of_squares(v.data());
}

} // namespace slanc::fp16
