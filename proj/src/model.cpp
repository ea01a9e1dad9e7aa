#include "slanc/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "slanc/errors.hpp"
#include "slanc/random.hpp"

namespace slanc::model {

std::string to_string(NormKind k) { return k == NormKind::LayerNorm ? "LayerNorm" : "RMSNorm"; }
std::string to_string(ResidualPlacement p) { return p == ResidualPlacement::PostLN ? "PostLN" : "PreLN"; }
std::string to_string(MlpKind k) { return k == MlpKind::Standard ? "Standard" : "LlamaGated"; }
std::string to_string(Nonlinearity n) {
    switch (n) {
    case Nonlinearity::ReLU: return "ReLU";
    case Nonlinearity::GeLU: return "GeLU";
    case Nonlinearity::SiLU: return "SiLU";
    }
    return "?";
}

NormKind parse_norm_kind(const std::string& s) {
    if (s == "LayerNorm") return NormKind::LayerNorm;
    if (s == "RMSNorm") return NormKind::RMSNorm;
    throw Error("unknown norm_kind '" + s + "'");
}
ResidualPlacement parse_residual_placement(const std::string& s) {
    if (s == "PostLN") return ResidualPlacement::PostLN;
    if (s == "PreLN") return ResidualPlacement::PreLN;
    throw Error("unknown residual_placement '" + s + "'");
}
MlpKind parse_mlp_kind(const std::string& s) {
    if (s == "Standard") return MlpKind::Standard;
    if (s == "LlamaGated") return MlpKind::LlamaGated;
    throw Error("unknown mlp_kind '" + s + "'");
}
Nonlinearity parse_nonlinearity(const std::string& s) {
    if (s == "ReLU") return Nonlinearity::ReLU;
    if (s == "GeLU") return Nonlinearity::GeLU;
    if (s == "SiLU") return Nonlinearity::SiLU;
    throw Error("unknown nonlinearity '" + s + "'");
}

std::vector<std::string> check_config(const ModelConfig& c) {
    std::vector<std::string> out;
    if (c.d_model <= 0) out.push_back("d_model must be positive");
    if (c.n_heads <= 0) out.push_back("n_heads must be positive");
    if (c.head_dim <= 0) out.push_back("head_dim must be positive");
    if (c.mlp_hidden <= 0) out.push_back("mlp_hidden must be positive");
    if (c.n_layers < 0) out.push_back("n_layers must be non-negative");
    if (c.n_heads > 0 && c.head_dim > 0 && c.n_heads * c.head_dim != c.d_model)
        out.push_back("n_heads * head_dim must equal d_model");
    if (!(c.epsilon > 0.0) || !std::isfinite(c.epsilon)) out.push_back("epsilon must be positive and finite");
    return out;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{
        {"d_model", c.d_model},
        {"n_heads", c.n_heads},
        {"head_dim", c.head_dim},
        {"mlp_hidden", c.mlp_hidden},
        {"n_layers", c.n_layers},
        {"norm_kind", to_string(c.norm_kind)},
        {"residual_placement", to_string(c.residual_placement)},
        {"mlp_kind", to_string(c.mlp_kind)},
        {"nonlinearity", to_string(c.nonlinearity)},
        {"epsilon", c.epsilon},
        {"boundary_norm", c.boundary_norm},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        if (j.contains("d_model")) c.d_model = j.at("d_model").get<int>();
        if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<int>();
        if (j.contains("head_dim")) c.head_dim = j.at("head_dim").get<int>();
        if (j.contains("mlp_hidden")) c.mlp_hidden = j.at("mlp_hidden").get<int>();
        if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<int>();
        if (j.contains("norm_kind")) c.norm_kind = parse_norm_kind(j.at("norm_kind").get<std::string>());
        if (j.contains("residual_placement"))
            c.residual_placement = parse_residual_placement(j.at("residual_placement").get<std::string>());
        if (j.contains("mlp_kind")) c.mlp_kind = parse_mlp_kind(j.at("mlp_kind").get<std::string>());
        if (j.contains("nonlinearity")) c.nonlinearity = parse_nonlinearity(j.at("nonlinearity").get<std::string>());
        if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
        if (j.contains("boundary_norm")) c.boundary_norm = j.at("boundary_norm").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("model config: ") + e.what());
    }
    return c;
}

std::vector<NormSite> ModelGraph::norm_sites() const {
    std::vector<NormSite> sites;
    const bool post = config.residual_placement == ResidualPlacement::PostLN;
    const int n = static_cast<int>(layers.size());
    if (post && boundary) sites.push_back({"embedding_norm", -1, NormPosition::Boundary});
    for (int i = 0; i < n; ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        if (post) {
            sites.push_back({prefix + "post_attention_norm", i, NormPosition::AttentionSide});
            sites.push_back({prefix + "post_mlp_norm", i, NormPosition::MlpSide});
        } else {
            sites.push_back({prefix + "input_norm", i, NormPosition::AttentionSide});
            sites.push_back({prefix + "post_attention_norm", i, NormPosition::MlpSide});
        }
    }
    if (!post && boundary) sites.push_back({"final_norm", n, NormPosition::Boundary});
    return sites;
}

std::size_t ModelGraph::norm_count() const { return 2 * layers.size() + (boundary ? 1 : 0); }

const NormWeights ModelGraph::norm_weights(const NormSite& site) const {
    switch (site.position) {
    case NormPosition::Boundary:
        if (!boundary) throw Error("model has no boundary norm");
        return *boundary;
    case NormPosition::AttentionSide: {
        const auto& l = layers.at(static_cast<std::size_t>(site.layer));
        return {l.gamma1, l.beta1};
    }
    case NormPosition::MlpSide: {
        const auto& l = layers.at(static_cast<std::size_t>(site.layer));
        return {l.gamma2, l.beta2};
    }
    }
    throw Error("bad norm position");
}

namespace {

class Fnv1a {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= c[i];
            h_ *= 0x100000001b3ull;
        }
    }
    void str(const std::string& s) {
        const std::uint64_t n = s.size();
        bytes(&n, sizeof n);
        bytes(s.data(), s.size());
    }
    void values(std::span<const double> v) {
        const std::uint64_t n = v.size();
        bytes(&n, sizeof n);
        for (const double x : v) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &x, sizeof bits);
            unsigned char le[8];
            for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(bits >> (8 * i));
            bytes(le, 8);
        }
    }
    void matrix(const RealMatrix& m) {
        const std::uint64_t dims[2] = {m.rows(), m.cols()};
        bytes(dims, sizeof dims);
        values(m.data());
    }
    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h_ >> (4 * i)) & 0xF];
        return out;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

} // namespace

std::string fingerprint(const ModelGraph& g) {
    Fnv1a h;
    h.str(config_to_json(g.config).dump());
    for (const auto& l : g.layers) {
        h.values(l.gamma1);
        h.values(l.beta1);
        h.values(l.gamma2);
        h.values(l.beta2);
        for (const RealMatrix* m : {&l.w_q, &l.w_k, &l.w_v, &l.p, &l.e, &l.b, &l.g}) h.matrix(*m);
    }
    if (g.boundary) {
        h.values(g.boundary->gamma);
        h.values(g.boundary->beta);
    }
    return h.hex();
}

double mlp_overflow_threshold(const ModelConfig& c, const InitSpec& init) {
    const double d = c.d_model;
    const double m = c.mlp_hidden;
    const double se = init.mlp_in_std.value_or(1.0 / std::sqrt(d));
    const double sg = init.mlp_out_std.value_or(1.0 / std::sqrt(m));
    // Energy gain of the block per unit amplitude: sum of squares of the
    // block output for a unit-RMS input is 0.5 * d * base * a^4.
    double base = d * m * se * se * sg * sg;
    if (c.mlp_kind == MlpKind::LlamaGated) base *= d * se * se; // x*B shares the E std
    if (!(base > 0.0)) return std::numeric_limits<double>::infinity();
    return std::pow(4.0 * 65504.0 / (0.5 * d * base), 0.25);
}

namespace {

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

RealMatrix gaussian_matrix(DeterministicRng& rng, std::size_t r, std::size_t c, double std) {
    RealMatrix m(r, c);
    for (double& v : m.data()) v = to_float(std * rng.gaussian());
    return m;
}

RealVector gamma_vector(DeterministicRng& rng, std::size_t d, double jitter) {
    RealVector v(d);
    for (double& x : v) x = to_float(1.0 + jitter * rng.gaussian());
    return v;
}

RealVector beta_vector(DeterministicRng& rng, std::size_t d, double std) {
    RealVector v(d);
    for (double& x : v) x = to_float(std * rng.gaussian());
    return v;
}

RealMatrix* matrix_by_name(DecoderWeights& l, const std::string& name) {
    if (name == "q" || name == "w_q") return &l.w_q;
    if (name == "k" || name == "w_k") return &l.w_k;
    if (name == "v" || name == "w_v") return &l.w_v;
    if (name == "p") return &l.p;
    if (name == "e") return &l.e;
    if (name == "b") return &l.b;
    if (name == "g") return &l.g;
    throw Error("unknown matrix '" + name + "' in amplification");
}

} // namespace

ModelGraph generate_synthetic(const ModelConfig& c, const InitSpec& init, std::uint64_t seed) {
    if (const auto problems = check_config(c); !problems.empty()) {
        throw Error("invalid model config: " + problems.front());
    }
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto m = static_cast<std::size_t>(c.mlp_hidden);
    const double attn_std = init.attn_std.value_or(1.0 / std::sqrt(static_cast<double>(d)));
    const double in_std = init.mlp_in_std.value_or(1.0 / std::sqrt(static_cast<double>(d)));
    const double out_std = init.mlp_out_std.value_or(1.0 / std::sqrt(static_cast<double>(m)));
    const bool layer_norm = c.norm_kind == NormKind::LayerNorm;

    DeterministicRng rng(seed);
    auto make_norm = [&] {
        NormWeights n;
        n.gamma = gamma_vector(rng, d, init.gamma_jitter);
        if (layer_norm) n.beta = beta_vector(rng, d, init.beta_std);
        return n;
    };

    ModelGraph g;
    g.config = c;
    if (c.boundary_norm) g.boundary = make_norm();
    for (int i = 0; i < c.n_layers; ++i) {
        DecoderWeights l;
        NormWeights n1 = make_norm();
        NormWeights n2 = make_norm();
        l.gamma1 = std::move(n1.gamma);
        l.beta1 = std::move(n1.beta);
        l.gamma2 = std::move(n2.gamma);
        l.beta2 = std::move(n2.beta);
        l.w_q = gaussian_matrix(rng, d, d, attn_std);
        l.w_k = gaussian_matrix(rng, d, d, attn_std);
        l.w_v = gaussian_matrix(rng, d, d, attn_std);
        l.p = gaussian_matrix(rng, d, d, attn_std);
        l.e = gaussian_matrix(rng, d, m, in_std);
        if (c.mlp_kind == MlpKind::LlamaGated) l.b = gaussian_matrix(rng, d, m, in_std);
        l.g = gaussian_matrix(rng, m, d, out_std);
        g.layers.push_back(std::move(l));
    }

    for (const auto& amp : init.amplifications) {
        for (const int layer : amp.layers) {
            if (layer < 0 || layer >= c.n_layers) {
                throw Error("amplification targets layer " + std::to_string(layer) + " of a " +
                            std::to_string(c.n_layers) + "-layer model");
            }
            for (const auto& name : amp.matrices) {
                RealMatrix* target = matrix_by_name(g.layers[static_cast<std::size_t>(layer)], name);
                for (double& v : target->data()) v = to_float(v * amp.factor);
            }
        }
    }
    return g;
}

namespace {

void check_vector(std::vector<ValidationIssue>& out, const std::string& where, const RealVector& v,
                  std::size_t expected) {
    if (v.size() != expected) {
        out.push_back({where, "length " + std::to_string(v.size()) + ", expected " + std::to_string(expected)});
        return;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            std::ostringstream msg;
            msg << "non-finite value " << v[i];
            out.push_back({where + "[" + std::to_string(i) + "]", msg.str()});
        }
    }
}

void check_matrix(std::vector<ValidationIssue>& out, const std::string& where, const RealMatrix& m,
                  std::size_t rows, std::size_t cols) {
    if (m.rows() != rows || m.cols() != cols) {
        out.push_back({where, "shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                  ", expected " + std::to_string(rows) + "x" + std::to_string(cols)});
        return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (!std::isfinite(m(r, c))) {
                std::ostringstream msg;
                msg << "non-finite value " << m(r, c);
                out.push_back({where + "[" + std::to_string(r) + "," + std::to_string(c) + "]", msg.str()});
            }
        }
    }
}

void check_norm(std::vector<ValidationIssue>& out, const std::string& prefix, const RealVector& gamma,
                const RealVector& beta, std::size_t d, NormKind kind) {
    check_vector(out, prefix + "gamma", gamma, d);
    if (kind == NormKind::LayerNorm) {
        check_vector(out, prefix + "beta", beta, d);
    } else if (!beta.empty()) {
        out.push_back({prefix + "beta", "RMSNorm has no beta"});
    }
}

} // namespace

std::vector<ValidationIssue> validate(const ModelGraph& g) {
    std::vector<ValidationIssue> out;
    for (const auto& p : check_config(g.config)) out.push_back({"config", p});
    if (!out.empty()) return out;

    const auto& c = g.config;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto m = static_cast<std::size_t>(c.mlp_hidden);
    if (g.layers.size() != static_cast<std::size_t>(c.n_layers)) {
        out.push_back({"layers", "count " + std::to_string(g.layers.size()) + ", expected " +
                                     std::to_string(c.n_layers)});
    }
    if (c.boundary_norm != g.boundary.has_value()) {
        out.push_back({"boundary_norm", c.boundary_norm ? "missing" : "present but not configured"});
    }
    if (g.boundary) check_norm(out, "boundary_norm.", g.boundary->gamma, g.boundary->beta, d, c.norm_kind);

    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const auto& l = g.layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        check_norm(out, p + "norm1.", l.gamma1, l.beta1, d, c.norm_kind);
        check_norm(out, p + "norm2.", l.gamma2, l.beta2, d, c.norm_kind);
        check_matrix(out, p + "w_q", l.w_q, d, d);
        check_matrix(out, p + "w_k", l.w_k, d, d);
        check_matrix(out, p + "w_v", l.w_v, d, d);
        check_matrix(out, p + "p", l.p, d, d);
        check_matrix(out, p + "e", l.e, d, m);
        if (c.mlp_kind == MlpKind::LlamaGated) {
            check_matrix(out, p + "b", l.b, d, m);
        } else if (!l.b.empty()) {
            out.push_back({p + "b", "standard MLP has no up projection"});
        }
        check_matrix(out, p + "g", l.g, m, d);
    }
    return out;
}

} // namespace slanc::model
