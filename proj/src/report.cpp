#include "slanc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "slanc/json_io.hpp"
#include "slanc/random.hpp"

namespace slanc::report {

using engine::Histogram;
using nlohmann::json;

linalg::RealMatrix gaussian_tokens(std::size_t n, std::size_t d, std::uint64_t seed) {
    DeterministicRng rng(seed);
    linalg::RealMatrix x(n, d);
    for (double& v : x.data()) v = fp16::round_trip(rng.gaussian());
    return x;
}

std::uint64_t AuditReport::overflow_total() const {
    std::uint64_t n = 0;
    for (const auto& a : norms) n += a.overflow_count;
    return n;
}

std::uint64_t AuditReport::underflow_total() const {
    std::uint64_t n = 0;
    for (const auto& a : norms) n += a.underflow_count;
    return n;
}

namespace {

double number_or_inf(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

json histogram_json(const Histogram& h) {
    return {{"min_exp", Histogram::kMinExp},
            {"max_exp", Histogram::kMaxExp},
            {"underflow", h.underflow_bin},
            {"overflow", h.overflow_bin},
            {"buckets", h.buckets}};
}

Histogram histogram_from_json(const json& j) {
    if (j.at("min_exp").get<int>() != Histogram::kMinExp || j.at("max_exp").get<int>() != Histogram::kMaxExp)
        throw Error("histogram: unsupported bucket range");
    Histogram h;
    h.underflow_bin = j.at("underflow").get<std::uint64_t>();
    h.overflow_bin = j.at("overflow").get<std::uint64_t>();
    const auto b = j.at("buckets").get<std::vector<std::uint64_t>>();
    if (b.size() != Histogram::kBuckets) throw Error("histogram: expected " + std::to_string(Histogram::kBuckets) + " buckets");
    std::copy(b.begin(), b.end(), h.buckets.begin());
    return h;
}

} // namespace

json AuditReport::to_json() const {
    json out = {{"fingerprint", fingerprint},
                {"policy", policy},
                {"scaled", scaled},
                {"markers", {{"fp16_max_finite", max_finite_marker}, {"fp16_min_normal", min_normal_marker}}},
                {"norms", json::array()}};
    for (const auto& n : norms) {
        out["norms"].push_back({{"norm_id", n.norm_id},
                                {"tokens", n.token_count},
                                {"overflow", n.overflow_count},
                                {"underflow", n.underflow_count},
                                {"min_sum_of_squares", n.min_raw},
                                {"max_sum_of_squares", n.max_raw},
                                {"histogram", histogram_json(n.histogram)}});
    }
    return out;
}

AuditReport AuditReport::from_json(const json& j) {
    try {
        AuditReport r;
        r.fingerprint = j.at("fingerprint").get<std::string>();
        r.policy = j.at("policy").get<std::string>();
        r.scaled = j.at("scaled").get<bool>();
        r.max_finite_marker = j.at("markers").at("fp16_max_finite").get<double>();
        r.min_normal_marker = j.at("markers").at("fp16_min_normal").get<double>();
        for (const auto& n : j.at("norms")) {
            NormAudit a;
            a.norm_id = n.at("norm_id").get<std::string>();
            a.token_count = n.at("tokens").get<std::uint64_t>();
            a.overflow_count = n.at("overflow").get<std::uint64_t>();
            a.underflow_count = n.at("underflow").get<std::uint64_t>();
            a.min_raw = number_or_inf(n.at("min_sum_of_squares"));
            a.max_raw = number_or_inf(n.at("max_sum_of_squares"));
            a.histogram = histogram_from_json(n.at("histogram"));
            r.norms.push_back(std::move(a));
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("audit report: ") + e.what());
    }
}

std::string AuditReport::to_csv() const {
    std::ostringstream out;
    out << "bucket_lo,bucket_hi";
    for (const auto& n : norms) out << ',' << n.norm_id;
    out << '\n';
    auto row = [&](const std::string& lo, const std::string& hi, auto count) {
        out << lo << ',' << hi;
        for (const auto& n : norms) out << ',' << count(n.histogram);
        out << '\n';
    };
    row("0", json_io::format_double(std::ldexp(1.0, Histogram::kMinExp)),
        [](const Histogram& h) { return h.underflow_bin; });
    for (std::size_t b = 0; b < Histogram::kBuckets; ++b) {
        const int k = Histogram::kMinExp + static_cast<int>(b);
        row(json_io::format_double(std::ldexp(1.0, k)), json_io::format_double(std::ldexp(1.0, k + 1)),
            [b](const Histogram& h) { return h.buckets[b]; });
    }
    row(json_io::format_double(std::ldexp(1.0, Histogram::kMaxExp)), "inf",
        [](const Histogram& h) { return h.overflow_bin; });
    return out.str();
}

AuditReport make_audit(const model::ModelGraph& g, const engine::ForwardResult& r, const std::string& policy,
                       bool scaled) {
    AuditReport report;
    report.fingerprint = model::fingerprint(g);
    report.policy = policy;
    report.scaled = scaled;
    const std::size_t n_norms = r.histograms.size();
    const std::size_t tokens = n_norms ? r.audit.size() / n_norms : 0;
    for (std::size_t k = 0; k < n_norms; ++k) {
        NormAudit a;
        a.norm_id = r.histograms[k].first;
        a.histogram = r.histograms[k].second;
        a.token_count = tokens;
        a.min_raw = std::numeric_limits<double>::infinity();
        a.max_raw = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < tokens; ++t) {
            const auto& rec = r.audit[k * tokens + t];
            a.overflow_count += rec.overflowed ? 1 : 0;
            a.underflow_count += rec.underflowed_to_zero ? 1 : 0;
            a.min_raw = std::min(a.min_raw, rec.raw_sum_of_squares);
            a.max_raw = std::max(a.max_raw, rec.raw_sum_of_squares);
        }
        if (tokens == 0) a.min_raw = a.max_raw = 0.0;
        report.norms.push_back(std::move(a));
    }
    return report;
}

std::vector<double> relative_errors(const linalg::RealMatrix& a, const linalg::RealMatrix& ref) {
    if (a.rows() != ref.rows() || a.cols() != ref.cols()) throw DimensionError("relative_errors: shape mismatch");
    std::vector<double> out;
    out.reserve(a.data().size());
    const double inf = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < ref.rows(); ++t) {
        const auto rr = ref.row(t);
        const auto ar = a.row(t);
        double ms = 0.0;
        for (const double v : rr) ms += v * v;
        const double rms = std::sqrt(ms / static_cast<double>(rr.size()));
        for (std::size_t i = 0; i < rr.size(); ++i) {
            if (!std::isfinite(ar[i])) {
                out.push_back(inf);
                continue;
            }
            const double denom = std::max(std::abs(rr[i]), rms);
            const double diff = std::abs(ar[i] - rr[i]);
            out.push_back(diff == 0.0 ? 0.0 : (denom > 0.0 ? diff / denom : inf));
        }
    }
    return out;
}

namespace {

CompareRow summarize(std::string mode, const linalg::RealMatrix& out, const linalg::RealMatrix& ref,
                     const engine::ForwardResult& r) {
    CompareRow row;
    row.mode = std::move(mode);
    auto errs = relative_errors(out, ref);
    if (!errs.empty()) {
        std::sort(errs.begin(), errs.end());
        const std::size_t mid = errs.size() / 2;
        row.median_rel_error = errs.size() % 2 ? errs[mid] : 0.5 * (errs[mid - 1] + errs[mid]);
        if (std::isnan(row.median_rel_error)) row.median_rel_error = std::numeric_limits<double>::infinity();
        row.max_rel_error = errs.back();
    }
    row.overflow_count = r.overflow_count();
    row.underflow_count = r.underflow_count();
    return row;
}

} // namespace

const CompareRow& CompareReport::row(const std::string& mode) const {
    for (const auto& r : rows)
        if (r.mode == mode) return r;
    throw Error("compare report has no row '" + mode + "'");
}

json CompareReport::to_json() const {
    json out = {{"fingerprint", fingerprint}, {"tokens", tokens}, {"rows", json::array()}};
    for (const auto& r : rows) {
        out["rows"].push_back({{"mode", r.mode},
                               {"median_rel_error", r.median_rel_error},
                               {"max_rel_error", r.max_rel_error},
                               {"overflow", r.overflow_count},
                               {"underflow", r.underflow_count}});
    }
    return out;
}

CompareReport CompareReport::from_json(const json& j) {
    try {
        CompareReport c;
        c.fingerprint = j.at("fingerprint").get<std::string>();
        c.tokens = j.at("tokens").get<std::uint64_t>();
        for (const auto& r : j.at("rows")) {
            c.rows.push_back({r.at("mode").get<std::string>(), number_or_inf(r.at("median_rel_error")),
                              number_or_inf(r.at("max_rel_error")), r.at("overflow").get<std::uint64_t>(),
                              r.at("underflow").get<std::uint64_t>()});
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(std::string("compare report: ") + e.what());
    }
}

std::string CompareReport::to_text() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %14s %14s %10s %10s\n", "mode", "median_rel", "max_rel", "overflow",
                  "underflow");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-12s %14.6e %14.6e %10llu %10llu\n", r.mode.c_str(), r.median_rel_error,
                      r.max_rel_error, static_cast<unsigned long long>(r.overflow_count),
                      static_cast<unsigned long long>(r.underflow_count));
        out << line;
    }
    return out.str();
}

CompareReport run_compare(const model::ModelGraph& g, const linalg::RealMatrix& x, const scales::ScaleTable& table) {
    CompareReport report;
    report.fingerprint = model::fingerprint(g);
    report.tokens = x.rows();
    const auto ref = engine::forward(g, x, engine::PrecisionPolicy::reference());
    const auto plain = engine::forward(g, x, engine::PrecisionPolicy::fp16());
    const auto scaled = engine::forward(g, x, engine::PrecisionPolicy::fp16(), &table);
    report.rows.push_back(summarize("FP64", ref.output, ref.output, ref));
    report.rows.push_back(summarize("FP16", plain.output, ref.output, plain));
    report.rows.push_back(summarize("FP16+SLaNC", scaled.output, ref.output, scaled));
    return report;
}

} // namespace slanc::report
