#include "slanc/scales.hpp"

#include <cmath>

#include "slanc/errors.hpp"

namespace slanc::scales {

using linalg::matmul;

std::string to_string(Formula f) {
    switch (f) {
    case Formula::StandardMlp: return "StandardMlp";
    case Formula::LlamaMlp: return "LlamaMlp";
    case Formula::Attention: return "Attention";
    case Formula::Unit: return "Unit";
    case Formula::Dynamic: return "Dynamic";
    }
    return "?";
}

Formula parse_formula(const std::string& s) {
    for (Formula f : {Formula::StandardMlp, Formula::LlamaMlp, Formula::Attention, Formula::Unit, Formula::Dynamic})
        if (to_string(f) == s) return f;
    throw Error("unknown formula '" + s + "'");
}

NormScale NormScale::make(std::string norm_id, int layer, Formula formula, double s, double epsilon) {
    if (!std::isfinite(s) || s < kDegenerateThreshold) throw DegenerateScaleError(norm_id, s);
    NormScale n;
    n.s = s;
    n.reciprocal = 1.0 / s;
    n.epsilon_adjusted = adjust_epsilon(epsilon, s);
    n.formula = formula;
    n.layer_index = layer;
    n.norm_id = std::move(norm_id);
    return n;
}

NormScale NormScale::unit(std::string norm_id, int layer, double epsilon) {
    return make(std::move(norm_id), layer, Formula::Unit, 1.0, epsilon);
}

const NormScale* ScaleTable::find(const std::string& norm_id) const {
    for (const auto& e : entries)
        if (e.norm_id == norm_id) return &e;
    return nullptr;
}

nlohmann::json ScaleTable::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) {
        arr.push_back({{"norm_id", e.norm_id},
                       {"layer", e.layer_index},
                       {"formula", to_string(e.formula)},
                       {"s", e.s},
                       {"reciprocal", e.reciprocal},
                       {"eps_adjusted", e.epsilon_adjusted}});
    }
    return {{"fingerprint", fingerprint}, {"entries", arr}};
}

ScaleTable ScaleTable::from_json(const nlohmann::json& j) {
    ScaleTable t;
    try {
        t.fingerprint = j.at("fingerprint").get<std::string>();
        for (const auto& e : j.at("entries")) {
            NormScale n;
            n.norm_id = e.at("norm_id").get<std::string>();
            n.layer_index = e.at("layer").get<int>();
            n.formula = parse_formula(e.at("formula").get<std::string>());
            n.s = e.at("s").get<double>();
            n.reciprocal = e.at("reciprocal").get<double>();
            n.epsilon_adjusted = e.at("eps_adjusted").get<double>();
            if (!(n.s > 0.0) || !(n.reciprocal > 0.0) || !(n.epsilon_adjusted > 0.0)) {
                throw Error("scale table entry '" + n.norm_id + "' is not positive");
            }
            t.entries.push_back(std::move(n));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("scale table: ") + e.what());
    }
    return t;
}

namespace {

void require_finite(const RealMatrix& m, const char* what) {
    if (!m.all_finite()) throw NonFiniteError(std::string(what) + " contains non-finite values");
}

void require_finite(const RealVector& v, const char* what) {
    for (const double x : v)
        if (!std::isfinite(x)) throw NonFiniteError(std::string(what) + " contains non-finite values");
}

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

// ||diag(gamma) (c * M + I)||_F for square M, without materialising the sum.
double gamma_residual_frobenius(const RealVector& gamma, const RealMatrix& m, double c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        double row_sum = 0.0;
        for (std::size_t k = 0; k < m.cols(); ++k) {
            const double v = c * row[k] + (r == k ? 1.0 : 0.0);
            row_sum += v * v;
        }
        sum += gamma[r] * gamma[r] * row_sum;
    }
    const double s = std::sqrt(sum);
    if (s < kDegenerateThreshold) throw DegenerateScaleError("", s);
    return s;
}

} // namespace

double scale_standard_mlp(const RealVector& gamma, const RealMatrix& e, const RealMatrix& g) {
    const std::size_t d = gamma.size();
    require(e.rows() == d && g.cols() == d && e.cols() == g.rows(),
            "scale_standard_mlp: expected E d x m and G m x d for d = " + std::to_string(d));
    require_finite(gamma, "gamma");
    require_finite(e, "E");
    require_finite(g, "G");
    return gamma_residual_frobenius(gamma, matmul(e, g), 1.0);
}

double scale_llama_mlp(const RealVector& gamma, const RealMatrix& e, const RealMatrix& b, const RealMatrix& g,
                       const linalg::PowerIterationOptions& opts) {
    const std::size_t d = gamma.size();
    require(e.rows() == d && b.rows() == d && g.cols() == d && e.cols() == b.cols() && b.cols() == g.rows(),
            "scale_llama_mlp: expected E, B d x m and G m x d for d = " + std::to_string(d));
    require_finite(gamma, "gamma");
    require_finite(e, "E");
    require_finite(b, "B");
    require_finite(g, "G");
    const double c = linalg::spectral_norm(linalg::scale_rows(gamma, e), opts).value;
    return gamma_residual_frobenius(gamma, matmul(b, g), c);
}

double scale_attention(const RealVector& gamma, const RealMatrix& w_v, const RealMatrix& p) {
    const std::size_t d = gamma.size();
    require(w_v.rows() == d && p.cols() == d && w_v.cols() == p.rows(),
            "scale_attention: expected W_V d x (h*d_head) and P (h*d_head) x d for d = " + std::to_string(d));
    require_finite(gamma, "gamma");
    require_finite(w_v, "W_V");
    require_finite(p, "P");
    return gamma_residual_frobenius(gamma, matmul(w_v, p), 1.0);
}

double adjust_epsilon(double epsilon, double s) { return epsilon / (s * s); }

ScaleTable compute_scale_table(const model::ModelGraph& g, const linalg::PowerIterationOptions& opts) {
    using model::NormPosition;
    ScaleTable table;
    table.fingerprint = model::fingerprint(g);
    const auto sites = g.norm_sites();
    const double eps = g.config.epsilon;
    const bool post = g.config.residual_placement == model::ResidualPlacement::PostLN;
    const bool gated = g.config.mlp_kind == model::MlpKind::LlamaGated;

    auto mlp_scale = [&](const RealVector& gamma, const model::DecoderWeights& l) {
        return gated ? scale_llama_mlp(gamma, l.e, l.b, l.g, opts) : scale_standard_mlp(gamma, l.e, l.g);
    };
    const Formula mlp_formula = gated ? Formula::LlamaMlp : Formula::StandardMlp;

    for (std::size_t k = 0; k < sites.size(); ++k) {
        const auto& site = sites[k];
        try {
            if (k == 0) {
                table.entries.push_back(NormScale::unit(site.id, site.layer, eps));
                continue;
            }
            // In both placements the block in front of this norm consumes the
            // output of the previous norm.
            const model::NormWeights feeding = g.norm_weights(sites[k - 1]);
            bool attention_block = false;
            const model::DecoderWeights* block = nullptr;
            if (post) {
                // PostLN: post_attention_norm follows attention of its own layer,
                // post_mlp_norm follows the MLP of its own layer.
                attention_block = site.position == NormPosition::AttentionSide;
                block = &g.layers.at(static_cast<std::size_t>(site.layer));
            } else {
                // PreLN: post_attention_norm follows attention of its layer; an
                // input_norm or the final norm follows the previous layer's MLP.
                attention_block = site.position == NormPosition::MlpSide;
                const int layer = attention_block ? site.layer : site.layer - 1;
                block = &g.layers.at(static_cast<std::size_t>(layer));
            }
            if (attention_block) {
                const double s = scale_attention(feeding.gamma, block->w_v, block->p);
                table.entries.push_back(NormScale::make(site.id, site.layer, Formula::Attention, s, eps));
            } else {
                const double s = mlp_scale(feeding.gamma, *block);
                table.entries.push_back(NormScale::make(site.id, site.layer, mlp_formula, s, eps));
            }
        } catch (const DegenerateScaleError& e) {
            throw DegenerateScaleError(site.id, e.value());
        }
    }
    return table;
}

} // namespace slanc::scales
