#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slanc/errors.hpp"
#include "slanc/fp16.hpp"
#include "slanc/linalg.hpp"
#include "slanc/model.hpp"
#include "slanc/scales.hpp"

namespace slanc::engine {

using linalg::RealMatrix;
using linalg::RealVector;

enum class Accumulation { FP64, FP16 };
enum class Activations { FP64, FP16Storage };

// FP16Storage rounds every activation to binary16 between ops; matmuls still
// accumulate in double.
struct PrecisionPolicy {
    Accumulation norm_accumulation = Accumulation::FP64;
    Activations activations = Activations::FP64;

    static constexpr PrecisionPolicy reference() { return {}; }
    static constexpr PrecisionPolicy fp16() { return {Accumulation::FP16, Activations::FP16Storage}; }

    bool is_reference() const {
        return norm_accumulation == Accumulation::FP64 && activations == Activations::FP64;
    }
};

struct NormAuditRecord {
    std::string norm_id;
    std::size_t token_index = 0;
    // Exact sum of squares of the (scaled) values fed to the accumulator.
    double raw_sum_of_squares = 0.0;
    // Emulated binary16 accumulator result; under FP64 accumulation this is
    // the binary16 rounding of the exact sum.
    fp16::Fp16Bits fp16_sum;
    bool overflowed = false;
    bool underflowed_to_zero = false;
    double scale_applied = 1.0;
};

class NonPositiveVarianceError : public Error {
public:
    explicit NonPositiveVarianceError(NormAuditRecord record)
        : Error("non-positive variance at norm '" + record.norm_id + "' token " +
                std::to_string(record.token_index)),
          record_(std::move(record)) {}

    const NormAuditRecord& record() const noexcept { return record_; }

private:
    NormAuditRecord record_;
};

// log2 buckets [2^k, 2^(k+1)) for k in [-30, 30) plus underflow (< 2^-30,
// including zero) and overflow (>= 2^30 or non-finite) bins.
struct Histogram {
    static constexpr int kMinExp = -30;
    static constexpr int kMaxExp = 30;
    static constexpr std::size_t kBuckets = kMaxExp - kMinExp;

    std::array<std::uint64_t, kBuckets> buckets{};
    std::uint64_t underflow_bin = 0;
    std::uint64_t overflow_bin = 0;

    void add(double v);
    std::uint64_t total() const;

    friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct NormOutput {
    RealVector y;
    RealVector normalized; // (x' - mu) / sigma, before gamma and beta
    NormAuditRecord audit;
};

// Scale is applied as x' = x * scale.reciprocal and scale.epsilon_adjusted is
// the epsilon used; pass NormScale::unit(...) for an unscaled norm. Only the
// sum of squares (FP16 accumulation) and activation storage are binary16; the
// mean, division, sqrt and gamma/beta epilogue run in double.
NormOutput norm_forward(std::span<const double> x, const RealVector& gamma, const RealVector& beta,
                        model::NormKind kind, const PrecisionPolicy& policy, const scales::NormScale& scale);

// Causal multi-head attention; per-head softmax probabilities are written to
// `probabilities` when non-null.
RealMatrix attention_forward(const RealMatrix& x, const model::DecoderWeights& w, const model::ModelConfig& c,
                             const PrecisionPolicy& policy, std::vector<RealMatrix>* probabilities = nullptr);

double apply_nonlinearity(model::Nonlinearity f, double v);

// Standard: F(X E) G.  LlamaGated: (F(X E) * (X B)) G.
RealMatrix mlp_forward(const RealMatrix& x, const model::DecoderWeights& w, model::MlpKind kind,
                       model::Nonlinearity f, const PrecisionPolicy& policy);

struct ForwardResult {
    RealMatrix output;
    std::vector<NormAuditRecord> audit;                       // norm-major, token-minor
    std::vector<std::pair<std::string, Histogram>> histograms; // graph order

    std::size_t overflow_count() const;
    std::size_t underflow_count() const;
};

// Runs the decoders with the configured residual placement. With a scale
// table every norm uses its entry; the table's fingerprint must match.
ForwardResult forward(const model::ModelGraph& g, const RealMatrix& x0, const PrecisionPolicy& policy,
                      const scales::ScaleTable* table = nullptr);

enum class Statistic { Mean, Median };

// Sets each norm's scale to the chosen statistic of its per-token input
// Euclidean norm, measured by FP64 forward passes over the calibration set.
scales::ScaleTable calibrate_dynamic(const model::ModelGraph& g, const std::vector<RealMatrix>& inputs,
                                     Statistic statistic);

} // namespace slanc::engine
