#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slanc/linalg.hpp"

namespace slanc::model {

using linalg::RealMatrix;
using linalg::RealVector;

enum class NormKind { LayerNorm, RMSNorm };
enum class ResidualPlacement { PostLN, PreLN };
enum class MlpKind { Standard, LlamaGated };
enum class Nonlinearity { ReLU, GeLU, SiLU };

std::string to_string(NormKind k);
std::string to_string(ResidualPlacement p);
std::string to_string(MlpKind k);
std::string to_string(Nonlinearity n);
NormKind parse_norm_kind(const std::string& s);
ResidualPlacement parse_residual_placement(const std::string& s);
MlpKind parse_mlp_kind(const std::string& s);
Nonlinearity parse_nonlinearity(const std::string& s);

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int head_dim = 16;
    int mlp_hidden = 256;
    int n_layers = 2;
    NormKind norm_kind = NormKind::RMSNorm;
    ResidualPlacement residual_placement = ResidualPlacement::PostLN;
    MlpKind mlp_kind = MlpKind::LlamaGated;
    Nonlinearity nonlinearity = Nonlinearity::SiLU;
    double epsilon = 1e-5;
    // One extra norm outside the decoders: the embedding norm for PostLN,
    // the final norm for PreLN.
    bool boundary_norm = true;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Empty list of problems means the config is usable.
std::vector<std::string> check_config(const ModelConfig& c);

nlohmann::json config_to_json(const ModelConfig& c);
// Missing keys keep their defaults; unknown enum spellings throw.
ModelConfig config_from_json(const nlohmann::json& j);

struct NormWeights {
    RealVector gamma;
    RealVector beta; // empty for RMSNorm

    friend bool operator==(const NormWeights&, const NormWeights&) = default;
};

// All projections use the row-vector convention: y = x * W.
struct DecoderWeights {
    RealVector gamma1, beta1; // norm on the attention side
    RealVector gamma2, beta2; // norm on the MLP side
    RealMatrix w_q, w_k, w_v; // d x d
    RealMatrix p;             // d x d output projection
    RealMatrix e;             // d x mlp_hidden (gate_proj)
    RealMatrix b;             // d x mlp_hidden (up_proj), empty for Standard
    RealMatrix g;             // mlp_hidden x d (down_proj)

    friend bool operator==(const DecoderWeights&, const DecoderWeights&) = default;
};

enum class NormPosition { Boundary, AttentionSide, MlpSide };

struct NormSite {
    std::string id;
    int layer = 0; // -1 for the embedding norm, n_layers for the final norm
    NormPosition position = NormPosition::Boundary;
};

struct ModelGraph {
    ModelConfig config;
    std::vector<DecoderWeights> layers;
    std::optional<NormWeights> boundary;

    // Norm operators in execution order.
    std::vector<NormSite> norm_sites() const;
    std::size_t norm_count() const;

    const NormWeights norm_weights(const NormSite& site) const;

    friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

// FNV-1a over the config and every weight value; hex encoded.
std::string fingerprint(const ModelGraph& g);

struct Amplification {
    std::vector<std::string> matrices; // any of q, k, v, p, e, b, g
    double factor = 1.0;
    std::vector<int> layers{0};
};

struct InitSpec {
    // Gaussian std per matrix family; unset means 1/sqrt(fan_in).
    std::optional<double> attn_std;
    std::optional<double> mlp_in_std;
    std::optional<double> mlp_out_std;
    double gamma_jitter = 0.0; // gamma = 1 + N(0, jitter^2)
    double beta_std = 0.0;
    std::vector<Amplification> amplifications;

    static InitSpec uniform(double std) {
        InitSpec s;
        s.attn_std = s.mlp_in_std = s.mlp_out_std = std;
        return s;
    }
};

// Amplification factor, applied to both E and G of one layer, at or above
// which the sum of squares feeding the following norm is predicted to exceed
// 4 x 65504 for unit-RMS inputs (half-wave energy model of the nonlinearity).
double mlp_overflow_threshold(const ModelConfig& c, const InitSpec& init);

// Deterministic in (config, init, seed). Weights are rounded to float so the
// graph survives an F32 safetensors round trip unchanged.
ModelGraph generate_synthetic(const ModelConfig& c, const InitSpec& init, std::uint64_t seed);

struct ValidationIssue {
    std::string location; // e.g. "layers.0.e[3,5]"
    std::string message;
};

std::vector<ValidationIssue> validate(const ModelGraph& g);

} // namespace slanc::model
