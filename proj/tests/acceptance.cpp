// Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>

#include "oracles/fp16_oracle.hpp"
#include "oracles/svd_oracle.hpp"
#include "slanc/engine.hpp"
#include "slanc/fp16.hpp"
#include "slanc/random.hpp"
#include "slanc/report.hpp"
#include "slanc/safetensors.hpp"
#include "slanc/scales.hpp"

using namespace slanc;
using linalg::RealMatrix;
using linalg::RealVector;

namespace {

// Pinned thresholds.
constexpr std::size_t kRandomOps = 1'000'000;
constexpr std::size_t kHomogeneityPairs = 1000;
constexpr double kHomogeneityTol = 1e-12;
constexpr std::size_t kSvdMatrices = 100;
constexpr double kSvdTol = 1e-4;
constexpr double kExampleTol = 1e-12;
constexpr double kOverflowFraction = 0.10;
constexpr double kSafeLow = 0x1.0p-14 * 4.0;  // 2^-12
constexpr double kSafeHigh = 65504.0 / 4.0;   // 16376
constexpr double kUnscaledMedianFloor = 0.5;
constexpr double kScaledMedianCeil = 2e-2;
constexpr double kScaledMaxCeil = 2e-1;
constexpr double kDynamicRatioCeil = 32.0;

// Seeded post-LN RMSNorm model used by criteria 4-6. The MLP of layer 0 is
// amplified past the binary16 overflow threshold; its output norm is the
// designated norm.
constexpr std::uint64_t kModelSeed = 2024;
constexpr std::uint64_t kTokenSeed = 1;
constexpr std::uint64_t kCalibrationSeed = 99;
constexpr std::size_t kTokens = 512;
const char* const kDesignatedNorm = "layers.0.post_mlp_norm";

model::ModelConfig acceptance_config() {
    model::ModelConfig c;
    c.d_model = 256;
    c.n_heads = 4;
    c.head_dim = 64;
    c.mlp_hidden = 512;
    c.n_layers = 4;
    c.norm_kind = model::NormKind::RMSNorm;
    c.residual_placement = model::ResidualPlacement::PostLN;
    c.mlp_kind = model::MlpKind::LlamaGated;
    c.nonlinearity = model::Nonlinearity::SiLU;
    return c;
}

model::InitSpec acceptance_init() {
    model::InitSpec init;
    init.gamma_jitter = 0.1;
    init.amplifications.push_back({{"e", "g"}, 8.0, {0}});
    return init;
}

enum class Status { Pass, Fail, Skip };

struct Outcome {
    Status status;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome pass_if(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

Outcome fp16_correctness() {
    std::size_t round_trip_bad = 0;
    for (std::uint32_t b = 0; b < 65536; ++b) {
        const fp16::Fp16Bits h{static_cast<std::uint16_t>(b)};
        const auto back = fp16::encode(fp16::decode(h));
        const bool ok = h.is_nan() ? back.is_nan() : back == h;
        round_trip_bad += ok ? 0 : 1;
    }
    DeterministicRng rng(0xacce55);
    std::size_t op_bad = 0;
    for (std::size_t i = 0; i < kRandomOps; ++i) {
        const auto a = static_cast<std::uint16_t>(rng.next_u64());
        const auto b = static_cast<std::uint16_t>(rng.next_u64());
        const fp16::Fp16Bits x{a}, y{b};
        std::uint16_t got = 0, want = 0;
        switch (i % 4) {
        case 0: got = fp16::add(x, y).bits, want = oracle::add(a, b); break;
        case 1: got = fp16::mul(x, y).bits, want = oracle::mul(a, b); break;
        case 2: got = fp16::div(x, y).bits, want = oracle::div(a, b); break;
        default: got = fp16::sqrt(x).bits, want = oracle::sqrt(a); break;
        }
        op_bad += got == want ? 0 : 1;
    }
    return pass_if(round_trip_bad == 0 && op_bad == 0,
                   fmt("round-trip mismatches %zu/65536; op mismatches %zu/%zu vs integer oracle", round_trip_bad,
                       op_bad, kRandomOps));
}

Outcome homogeneity() {
    DeterministicRng rng(0x4040);
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t d : {8, 64, 4096}) {
        for (auto kind : {model::NormKind::RMSNorm, model::NormKind::LayerNorm}) {
            for (std::size_t n = 0; n < kHomogeneityPairs; ++n) {
                RealVector x(d), gamma(d), beta;
                const double magnitude = std::exp2(rng.uniform(-8.0, 8.0));
                for (std::size_t i = 0; i < d; ++i) {
                    x[i] = magnitude * rng.gaussian();
                    gamma[i] = 1.0 + 0.2 * rng.gaussian();
                }
                if (kind == model::NormKind::LayerNorm) {
                    beta.resize(d);
                    for (double& b : beta) b = 0.1 * rng.gaussian();
                }
                const double s = std::exp2(rng.uniform(-12.0, 12.0));
                const double eps = 1e-5;
                const auto ref = engine::norm_forward(x, gamma, beta, kind, {}, scales::NormScale::unit("h", 0, eps));
                const auto sc = engine::norm_forward(x, gamma, beta, kind, {},
                                                     scales::NormScale::make("h", 0, scales::Formula::Dynamic, s, eps));
                double diff = 0.0, mag = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    diff = std::max(diff, std::abs(sc.y[i] - ref.y[i]));
                    mag = std::max(mag, std::abs(ref.y[i]));
                }
                worst = std::max(worst, diff / mag);
                ++cases;
            }
        }
    }
    return pass_if(worst <= kHomogeneityTol,
                   fmt("%zu pairs, worst norm-wise relative difference %.3e (limit %.0e)", cases, worst, kHomogeneityTol));
}

Outcome scale_formulas() {
    using namespace scales;
    std::vector<std::string> failures;
    auto near = [&](const char* name, double got, double want) {
        if (!(std::abs(got - want) <= kExampleTol * std::abs(want))) failures.push_back(name);
    };
    auto degenerate = [&](const char* name, const std::function<double()>& fn) {
        try {
            fn();
            failures.push_back(name);
        } catch (const DegenerateScaleError&) {
        }
    };
    const RealMatrix i2 = linalg::identity(2);
    const RealMatrix z4(4, 4);
    const RealVector ones2{1, 1}, ones4(4, 1.0);
    near("standard zero", scale_standard_mlp(ones4, z4, z4), 2.0);
    near("standard 2I", scale_standard_mlp({2, 2}, i2, i2), 4.0 * std::sqrt(2.0));
    degenerate("standard cancel", [&] { return scale_standard_mlp(ones2, i2, linalg::scale(i2, -1.0)); });
    near("llama identity", scale_llama_mlp(ones2, i2, i2, i2), 2.0 * std::sqrt(2.0));
    DeterministicRng rng(17);
    RealMatrix e(4, 6);
    for (double& v : e.data()) v = rng.gaussian();
    near("llama BG=0", scale_llama_mlp(ones4, e, RealMatrix(4, 6), RealMatrix(6, 4)), 2.0);
    degenerate("llama zero gamma", [&] { return scale_llama_mlp(RealVector(2, 0.0), i2, i2, i2); });
    near("attention zero", scale_attention(ones4, z4, z4), 2.0);
    near("attention identity", scale_attention(ones2, i2, i2), 2.0 * std::sqrt(2.0));
    degenerate("attention cancel", [&] { return scale_attention(ones2, i2, linalg::scale(i2, -1.0)); });
    near("eps unit", adjust_epsilon(1e-5, 1.0), 1e-5);
    near("eps 10", adjust_epsilon(1e-5, 10.0), 1e-7);
    near("eps 2sqrt2", adjust_epsilon(1e-6, 2.0 * std::sqrt(2.0)), 1.25e-7);

    double worst = 0.0;
    for (std::size_t n = 0; n < kSvdMatrices; ++n) {
        const auto r = static_cast<std::size_t>(1 + rng.next_u64() % 32);
        const auto c = static_cast<std::size_t>(1 + rng.next_u64() % 32);
        RealMatrix m(r, c);
        for (double& v : m.data()) v = rng.gaussian();
        const double want = oracle::svd_spectral_norm(m);
        worst = std::max(worst, std::abs(linalg::spectral_norm(m).value - want) / want);
    }
    std::string detail = fmt("%zu closed-form examples failed; spectral norm worst relative error %.3e over %zu "
                             "matrices (limit %.0e)",
                             failures.size(), worst, kSvdMatrices, kSvdTol);
    for (const auto& f : failures) detail += " [" + f + "]";
    return pass_if(failures.empty() && worst <= kSvdTol, detail);
}

struct Fixture {
    model::ModelGraph g;
    RealMatrix x;
    scales::ScaleTable table;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture f;
        f.g = model::generate_synthetic(acceptance_config(), acceptance_init(), kModelSeed);
        f.x = report::gaussian_tokens(kTokens, 256, kTokenSeed);
        f.table = scales::compute_scale_table(f.g);
        return f;
    }();
    return f;
}

Outcome histogram_analogue() {
    const auto& f = fixture();
    const auto plain = engine::forward(f.g, f.x, engine::PrecisionPolicy::fp16());
    const auto scaled = engine::forward(f.g, f.x, engine::PrecisionPolicy::fp16(), &f.table);
    std::size_t designated = 0, designated_overflow = 0;
    for (const auto& r : plain.audit) {
        if (r.norm_id != kDesignatedNorm) continue;
        ++designated;
        designated_overflow += r.overflowed ? 1 : 0;
    }
    double lo = INFINITY, hi = 0.0;
    std::size_t outside = 0;
    for (const auto& r : scaled.audit) {
        lo = std::min(lo, r.raw_sum_of_squares);
        hi = std::max(hi, r.raw_sum_of_squares);
        if (!(r.raw_sum_of_squares >= kSafeLow && r.raw_sum_of_squares <= kSafeHigh)) ++outside;
    }
    const double frac = designated ? double(designated_overflow) / double(designated) : 0.0;
    const bool ok = designated > 0 && frac >= kOverflowFraction && scaled.overflow_count() == 0 &&
                    scaled.underflow_count() == 0 && outside == 0;
    return pass_if(ok, fmt("unscaled: %zu/%zu overflows at %s (%.1f%%, need >= %.0f%%), %zu overflows overall; "
                           "scaled: %zu overflows, %zu underflows, sum of squares in [%.4g, %.4g] "
                           "(%zu outside [2^-12, 16376])",
                           designated_overflow, designated, kDesignatedNorm, 100.0 * frac, 100.0 * kOverflowFraction,
                           plain.overflow_count(), scaled.overflow_count(), scaled.underflow_count(), lo, hi, outside));
}

Outcome compare_analogue() {
    const auto& f = fixture();
    const auto rep = report::run_compare(f.g, f.x, f.table);
    const auto& plain = rep.row("FP16");
    const auto& scaled = rep.row("FP16+SLaNC");
    const bool plain_bad = !std::isfinite(plain.median_rel_error) || plain.median_rel_error > kUnscaledMedianFloor;
    const bool scaled_good = scaled.median_rel_error < kScaledMedianCeil && scaled.max_rel_error < kScaledMaxCeil;
    return pass_if(rep.row("FP64").max_rel_error == 0.0 && plain_bad && scaled_good,
                   fmt("FP16 median %.4g (need > %.1f or non-finite); FP16+SLaNC median %.4g (< %.0e), max %.4g "
                       "(< %.0e)",
                       plain.median_rel_error, kUnscaledMedianFloor, scaled.median_rel_error, kScaledMedianCeil,
                       scaled.max_rel_error, kScaledMaxCeil));
}

Outcome dynamic_baseline() {
    const auto& f = fixture();
    const auto calib = report::gaussian_tokens(kTokens, 256, kCalibrationSeed);
    const auto dynamic = engine::calibrate_dynamic(f.g, {calib}, engine::Statistic::Median);
    double worst = 0.0;
    std::string worst_id;
    for (std::size_t k = 0; k < f.table.entries.size(); ++k) {
        const double a = f.table.entries[k].s, b = dynamic.entries[k].s;
        const double ratio = std::max(a / b, b / a);
        if (ratio > worst) worst = ratio, worst_id = f.table.entries[k].norm_id;
    }
    return pass_if(worst <= kDynamicRatioCeil,
                   fmt("max SLaNC/dynamic ratio %.3f at %s (limit %.0f)", worst, worst_id.c_str(), kDynamicRatioCeil));
}

Outcome real_weights() {
    const char* path = std::getenv("SLANC_REAL_WEIGHTS");
    if (!path || !*path) return {Status::Skip, "set SLANC_REAL_WEIGHTS to a Llama-style safetensors file"};
    try {
        const char* map = std::getenv("SLANC_NAME_MAP");
        const auto names = map && *map ? safetensors::NameMap::load(map) : safetensors::NameMap::llama();
        const auto g = safetensors::load_model(std::filesystem::path(path), names);
        const auto t = scales::compute_scale_table(g);
        std::size_t bad = 0;
        for (const auto& e : t.entries) bad += std::isfinite(e.s) && e.s > 0.0 ? 0 : 1;
        return pass_if(bad == 0 && t.entries.size() == g.norm_count(),
                       fmt("%zu layers, %zu entries, %zu non-finite or non-positive", g.layers.size(), t.entries.size(), bad));
    } catch (const std::exception& e) {
        return {Status::Fail, e.what()};
    }
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
        {"binary16 soft-float vs oracle", fp16_correctness},
        {"norm homogeneity under input scaling", homogeneity},
        {"scale formulas and spectral norm", scale_formulas},
        {"sum-of-squares histogram, amplified model", histogram_analogue},
        {"FP64 / FP16 / FP16+SLaNC comparison", compare_analogue},
        {"static vs dynamic calibration", dynamic_baseline},
        {"real checkpoint scale table", real_weights},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {Status::Fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
        failures += o.status == Status::Fail ? 1 : 0;
        std::printf("criterion %zu %s: %s (%.1fs) - %s\n", i + 1, tag, criteria[i].first, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
