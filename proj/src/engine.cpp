#include "slanc/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace slanc::engine {

using model::NormKind;

void Histogram::add(double v) {
    if (!std::isfinite(v) || v >= std::ldexp(1.0, kMaxExp)) {
        ++overflow_bin;
        return;
    }
    if (!(v >= std::ldexp(1.0, kMinExp))) {
        ++underflow_bin;
        return;
    }
    int e = 0;
    std::frexp(v, &e); // v in [2^(e-1), 2^e)
    ++buckets[static_cast<std::size_t>(e - 1 - kMinExp)];
}

std::uint64_t Histogram::total() const {
    std::uint64_t n = underflow_bin + overflow_bin;
    for (const auto c : buckets) n += c;
    return n;
}

std::size_t ForwardResult::overflow_count() const {
    return static_cast<std::size_t>(std::count_if(audit.begin(), audit.end(), [](const auto& r) { return r.overflowed; }));
}

std::size_t ForwardResult::underflow_count() const {
    return static_cast<std::size_t>(
        std::count_if(audit.begin(), audit.end(), [](const auto& r) { return r.underflowed_to_zero; }));
}

namespace {

bool stores_fp16(const PrecisionPolicy& p) { return p.activations == Activations::FP16Storage; }

void store(RealMatrix& m, const PrecisionPolicy& p) {
    if (!stores_fp16(p)) return;
    for (double& v : m.data()) v = fp16::round_trip(v);
}

RealMatrix project(const RealMatrix& x, const RealMatrix& w, const PrecisionPolicy& p) {
    RealMatrix out = linalg::matmul(x, w);
    store(out, p);
    return out;
}

} // namespace

NormOutput norm_forward(std::span<const double> x, const RealVector& gamma, const RealVector& beta, NormKind kind,
                        const PrecisionPolicy& policy, const scales::NormScale& scale) {
    const std::size_t d = x.size();
    if (d == 0 || gamma.size() != d || (kind == NormKind::LayerNorm && beta.size() != d)) {
        throw DimensionError("norm_forward: input of length " + std::to_string(d) + " against gamma of length " +
                             std::to_string(gamma.size()));
    }
    if (!(scale.s > 0.0)) throw Error("norm_forward: scale must be positive");

    const bool fp16_values = stores_fp16(policy) || policy.norm_accumulation == Accumulation::FP16;
    RealVector xs(d);
    for (std::size_t i = 0; i < d; ++i) {
        xs[i] = x[i] * scale.reciprocal;
        if (fp16_values) xs[i] = fp16::round_trip(xs[i]);
    }

    NormOutput out;
    NormAuditRecord& rec = out.audit;
    rec.norm_id = scale.norm_id;
    rec.scale_applied = scale.s;

    double sum_sq = 0.0;
    if (policy.norm_accumulation == Accumulation::FP16) {
        std::vector<fp16::Fp16Bits> bits(d);
        for (std::size_t i = 0; i < d; ++i) bits[i] = fp16::encode(xs[i]);
        const auto trace = fp16::accumulate_sum_of_squares(bits);
        sum_sq = fp16::decode(trace.final_sum);
        rec.raw_sum_of_squares = trace.exact_sum;
        rec.fp16_sum = trace.final_sum;
        rec.overflowed = trace.overflowed;
        rec.underflowed_to_zero = trace.underflowed_to_zero;
    } else {
        for (const double v : xs) sum_sq += v * v;
        rec.raw_sum_of_squares = sum_sq;
        rec.fp16_sum = fp16::encode(sum_sq);
    }

    const double dd = static_cast<double>(d);
    double mu = 0.0;
    if (kind == NormKind::LayerNorm) {
        for (const double v : xs) mu += v;
        mu /= dd;
    }
    const double var = sum_sq / dd - mu * mu + scale.epsilon_adjusted;
    if (var <= 0.0) throw NonPositiveVarianceError(rec);
    const double sigma = std::sqrt(var);

    out.normalized.resize(d);
    out.y.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double n = (xs[i] - mu) / sigma;
        out.normalized[i] = n;
        double y = n * gamma[i];
        if (kind == NormKind::LayerNorm) y += beta[i];
        out.y[i] = stores_fp16(policy) ? fp16::round_trip(y) : y;
    }
    return out;
}

RealMatrix attention_forward(const RealMatrix& x, const model::DecoderWeights& w, const model::ModelConfig& c,
                             const PrecisionPolicy& policy, std::vector<RealMatrix>* probabilities) {
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto hd = static_cast<std::size_t>(c.head_dim);
    const auto heads = static_cast<std::size_t>(c.n_heads);
    if (x.cols() != d || heads * hd != d) throw DimensionError("attention_forward: shape mismatch");

    const RealMatrix q = project(x, w.w_q, policy);
    const RealMatrix k = project(x, w.w_k, policy);
    const RealMatrix v = project(x, w.w_v, policy);
    const std::size_t n = x.rows();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    RealMatrix concat(n, d);
    if (probabilities) probabilities->assign(heads, RealMatrix(n, n));
    std::vector<double> probs(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t t = 0; t < n; ++t) {
            const auto qt = q.row(t).subspan(off, hd);
            double max_score = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= t; ++j) {
                const auto kj = k.row(j).subspan(off, hd);
                double s = 0.0;
                for (std::size_t i = 0; i < hd; ++i) s += qt[i] * kj[i];
                probs[j] = s * inv_sqrt;
                max_score = std::max(max_score, probs[j]);
            }
            double total = 0.0;
            for (std::size_t j = 0; j <= t; ++j) {
                probs[j] = std::exp(probs[j] - max_score);
                total += probs[j];
            }
            auto out = concat.row(t).subspan(off, hd);
            for (std::size_t j = 0; j <= t; ++j) {
                double p = probs[j] / total;
                if (stores_fp16(policy)) p = fp16::round_trip(p);
                if (probabilities) (*probabilities)[h](t, j) = p;
                const auto vj = v.row(j).subspan(off, hd);
                for (std::size_t i = 0; i < hd; ++i) out[i] += p * vj[i];
            }
        }
    }
    store(concat, policy);
    return project(concat, w.p, policy);
}

double apply_nonlinearity(model::Nonlinearity f, double v) {
    switch (f) {
    case model::Nonlinearity::ReLU: return v > 0.0 ? v : 0.0;
    case model::Nonlinearity::GeLU: return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    case model::Nonlinearity::SiLU: return v / (1.0 + std::exp(-v));
    }
    return v;
}

RealMatrix mlp_forward(const RealMatrix& x, const model::DecoderWeights& w, model::MlpKind kind,
                       model::Nonlinearity f, const PrecisionPolicy& policy) {
    if (x.cols() != w.e.rows() || w.e.cols() != w.g.rows()) throw DimensionError("mlp_forward: shape mismatch");
    RealMatrix hidden = project(x, w.e, policy);
    for (double& v : hidden.data()) v = apply_nonlinearity(f, v);
    store(hidden, policy);
    if (kind == model::MlpKind::LlamaGated) {
        if (w.b.rows() != w.e.rows() || w.b.cols() != w.e.cols()) throw DimensionError("mlp_forward: B shape mismatch");
        const RealMatrix up = project(x, w.b, policy);
        auto hd = hidden.data();
        auto ud = up.data();
        for (std::size_t i = 0; i < hd.size(); ++i) hd[i] *= ud[i];
        store(hidden, policy);
    }
    return project(hidden, w.g, policy);
}

namespace {

class ForwardRun {
public:
    ForwardRun(const model::ModelGraph& g, const PrecisionPolicy& policy, const scales::ScaleTable* table)
        : g_(g), policy_(policy), table_(table) {}

    RealMatrix normalize(const RealMatrix& h, const model::NormSite& site, ForwardResult& result) {
        const model::NormWeights w = g_.norm_weights(site);
        scales::NormScale scale;
        if (table_) {
            const auto* entry = table_->find(site.id);
            if (!entry) throw Error("scale table has no entry for norm '" + site.id + "'");
            scale = *entry;
        } else {
            scale = scales::NormScale::unit(site.id, site.layer, g_.config.epsilon);
        }
        scale.norm_id = site.id;

        RealMatrix out(h.rows(), h.cols());
        auto& hist = result.histograms.emplace_back(site.id, Histogram{}).second;
        for (std::size_t t = 0; t < h.rows(); ++t) {
            NormOutput n;
            try {
                n = norm_forward(h.row(t), w.gamma, w.beta, g_.config.norm_kind, policy_, scale);
            } catch (const NonPositiveVarianceError& e) {
                NormAuditRecord rec = e.record();
                rec.token_index = t;
                throw NonPositiveVarianceError(rec);
            }
            n.audit.token_index = t;
            hist.add(n.audit.raw_sum_of_squares);
            result.audit.push_back(std::move(n.audit));
            std::copy(n.y.begin(), n.y.end(), out.row(t).begin());
        }
        return out;
    }

    static void add_residual(RealMatrix& h, const RealMatrix& delta, const PrecisionPolicy& p) {
        auto hd = h.data();
        auto dd = delta.data();
        for (std::size_t i = 0; i < hd.size(); ++i) hd[i] += dd[i];
        store(h, p);
    }

private:
    const model::ModelGraph& g_;
    PrecisionPolicy policy_;
    const scales::ScaleTable* table_;
};

} // namespace

ForwardResult forward(const model::ModelGraph& g, const RealMatrix& x0, const PrecisionPolicy& policy,
                      const scales::ScaleTable* table) {
    const auto& c = g.config;
    if (x0.cols() != static_cast<std::size_t>(c.d_model)) {
        throw DimensionError("forward: input has " + std::to_string(x0.cols()) + " columns, model d_model is " +
                             std::to_string(c.d_model));
    }
    if (table && table->fingerprint != model::fingerprint(g)) {
        throw FingerprintMismatchError("scale table fingerprint " + table->fingerprint +
                                       " does not match model fingerprint " + model::fingerprint(g));
    }

    ForwardResult result;
    ForwardRun run(g, policy, table);
    const auto sites = g.norm_sites();
    std::size_t next_site = 0;
    auto norm = [&](const RealMatrix& h) { return run.normalize(h, sites.at(next_site++), result); };

    RealMatrix h = x0;
    store(h, policy);
    const bool post = c.residual_placement == model::ResidualPlacement::PostLN;
    if (post && g.boundary) h = norm(h);
    for (const auto& layer : g.layers) {
        if (post) {
            ForwardRun::add_residual(h, attention_forward(h, layer, c, policy), policy);
            h = norm(h);
            ForwardRun::add_residual(h, mlp_forward(h, layer, c.mlp_kind, c.nonlinearity, policy), policy);
            h = norm(h);
        } else {
            const RealMatrix a_in = norm(h);
            ForwardRun::add_residual(h, attention_forward(a_in, layer, c, policy), policy);
            const RealMatrix m_in = norm(h);
            ForwardRun::add_residual(h, mlp_forward(m_in, layer, c.mlp_kind, c.nonlinearity, policy), policy);
        }
    }
    if (!post && g.boundary) h = norm(h);
    result.output = std::move(h);
    return result;
}

scales::ScaleTable calibrate_dynamic(const model::ModelGraph& g, const std::vector<RealMatrix>& inputs,
                                     Statistic statistic) {
    if (inputs.empty()) throw Error("calibrate_dynamic: empty calibration set");
    const auto sites = g.norm_sites();
    std::vector<std::vector<double>> norms(sites.size());
    for (const auto& x : inputs) {
        const ForwardResult r = forward(g, x, PrecisionPolicy::reference());
        const std::size_t tokens = x.rows();
        for (std::size_t k = 0; k < sites.size(); ++k)
            for (std::size_t t = 0; t < tokens; ++t)
                norms[k].push_back(std::sqrt(r.audit[k * tokens + t].raw_sum_of_squares));
    }

    scales::ScaleTable table;
    table.fingerprint = model::fingerprint(g);
    for (std::size_t k = 0; k < sites.size(); ++k) {
        auto& v = norms[k];
        if (v.empty()) throw Error("calibrate_dynamic: calibration inputs have no tokens");
        double s = 0.0;
        if (statistic == Statistic::Mean) {
            for (const double x : v) s += x;
            s /= static_cast<double>(v.size());
        } else {
            std::sort(v.begin(), v.end());
            const std::size_t mid = v.size() / 2;
            s = v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
        }
        table.entries.push_back(
            scales::NormScale::make(sites[k].id, sites[k].layer, scales::Formula::Dynamic, s, g.config.epsilon));
    }
    return table;
}

} // namespace slanc::engine
