#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "slanc/engine.hpp"

namespace slanc::report {

// n x d standard Gaussian tokens, rounded to binary16 so every precision mode
// sees the same input.
linalg::RealMatrix gaussian_tokens(std::size_t n, std::size_t d, std::uint64_t seed);

struct NormAudit {
    std::string norm_id;
    engine::Histogram histogram;
    std::uint64_t token_count = 0;
    std::uint64_t overflow_count = 0;
    std::uint64_t underflow_count = 0;
    double min_raw = 0.0;
    double max_raw = 0.0;

    friend bool operator==(const NormAudit&, const NormAudit&) = default;
};

struct AuditReport {
    std::string fingerprint;
    std::string policy; // "fp16" or "fp64"
    bool scaled = false;
    double max_finite_marker = 65504.0;
    double min_normal_marker = 0x1.0p-14;
    std::vector<NormAudit> norms;

    std::uint64_t overflow_total() const;
    std::uint64_t underflow_total() const;

    nlohmann::json to_json() const;
    static AuditReport from_json(const nlohmann::json& j);
    // One row per bucket (underflow, 2^-30 .. 2^29, overflow), one count column per norm.
    std::string to_csv() const;

    friend bool operator==(const AuditReport&, const AuditReport&) = default;
};

AuditReport make_audit(const model::ModelGraph& g, const engine::ForwardResult& r, const std::string& policy,
                       bool scaled);

// Elementwise |a - ref| / max(|ref|, rms of the reference row); non-finite
// entries of `a` give infinity.
std::vector<double> relative_errors(const linalg::RealMatrix& a, const linalg::RealMatrix& ref);

struct CompareRow {
    std::string mode;
    double median_rel_error = 0.0; // may be infinite
    double max_rel_error = 0.0;
    std::uint64_t overflow_count = 0;
    std::uint64_t underflow_count = 0;

    friend bool operator==(const CompareRow&, const CompareRow&) = default;
};

struct CompareReport {
    std::string fingerprint;
    std::uint64_t tokens = 0;
    std::vector<CompareRow> rows; // FP64, FP16, FP16+SLaNC

    const CompareRow& row(const std::string& mode) const;

    nlohmann::json to_json() const;
    static CompareReport from_json(const nlohmann::json& j);
    std::string to_text() const;

    friend bool operator==(const CompareReport&, const CompareReport&) = default;
};

CompareReport run_compare(const model::ModelGraph& g, const linalg::RealMatrix& x, const scales::ScaleTable& table);

} // namespace slanc::report
