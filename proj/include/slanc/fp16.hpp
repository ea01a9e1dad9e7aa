#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace slanc::fp16 {

// IEEE 754 binary16 bit pattern: 1 sign, 5 exponent, 10 mantissa bits.
struct Fp16Bits {
    std::uint16_t bits = 0;

    constexpr Fp16Bits() = default;
    constexpr explicit Fp16Bits(std::uint16_t b) : bits(b) {}

    constexpr bool is_nan() const { return (bits & 0x7C00u) == 0x7C00u && (bits & 0x03FFu) != 0; }
    constexpr bool is_inf() const { return (bits & 0x7FFFu) == 0x7C00u; }
    constexpr bool is_finite() const { return (bits & 0x7C00u) != 0x7C00u; }
    constexpr bool is_zero() const { return (bits & 0x7FFFu) == 0; }
    constexpr bool sign() const { return (bits & 0x8000u) != 0; }

    friend constexpr bool operator==(Fp16Bits, Fp16Bits) = default;
};

inline constexpr Fp16Bits kPositiveZero{0x0000};
inline constexpr Fp16Bits kPositiveInfinity{0x7C00};
inline constexpr Fp16Bits kNegativeInfinity{0xFC00};
inline constexpr Fp16Bits kCanonicalNaN{0x7E00};
inline constexpr Fp16Bits kMaxFinite{0x7BFF};

inline constexpr double kMaxFiniteValue = 65504.0;
inline constexpr double kMinNormalValue = 0x1.0p-14;
inline constexpr double kMinSubnormalValue = 0x1.0p-24;

// Round-to-nearest-even conversion. Magnitudes >= 65520 become infinity,
// small values underflow gradually through the subnormals. Every NaN maps to
// the canonical quiet pattern 0x7E00.
Fp16Bits encode(double x);

// Exact value of the pattern.
double decode(Fp16Bits b);

// Each primitive is evaluated exactly-then-rounded: the double-precision
// intermediate is exact for add/mul and innocuous for div/sqrt, since 53 >= 2*11 + 2.
Fp16Bits add(Fp16Bits a, Fp16Bits b);
Fp16Bits mul(Fp16Bits a, Fp16Bits b);
Fp16Bits div(Fp16Bits a, Fp16Bits b);
Fp16Bits sqrt(Fp16Bits a);

inline double round_trip(double x) { return decode(encode(x)); }

// Dense row-major tensor of binary16 values.
class Fp16Tensor {
public:
    Fp16Tensor() = default;
    Fp16Tensor(std::vector<std::size_t> shape, std::vector<Fp16Bits> data);

    static Fp16Tensor from_values(std::span<const double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::span<const Fp16Bits> data() const { return data_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    Fp16Bits operator[](std::size_t i) const { return data_[i]; }

private:
    std::vector<std::size_t> shape_;
    std::vector<Fp16Bits> data_;
};

struct AccumulationTrace {
    Fp16Bits final_sum;
    bool overflowed = false;
    bool underflowed_to_zero = false;
    // Largest exact partial sum, reporting only.
    double max_partial = 0.0;
    // Exact (double) sum of the squared binary16 inputs.
    double exact_sum = 0.0;
    std::size_t count = 0;
};

// s_0 = 0, s_i = add(s_{i-1}, mul(v_i, v_i)), strictly left to right.
// Throws std::invalid_argument("empty vector") for empty input.
AccumulationTrace accumulate_sum_of_squares(std::span<const Fp16Bits> v);
AccumulationTrace accumulate_sum_of_squares(const Fp16Tensor& v);

} // namespace slanc::fp16
